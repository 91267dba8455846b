#include "physiolite/profile.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "physiolite/crc32.hpp"
#include "physiolite/posenc.hpp"
#include "physiolite/preprocess.hpp"

namespace physiolite {

const std::array<const char*, LatencyReport::kStages>& LatencyReport::stage_names() {
    static const std::array<const char*, kStages> names = {
        "Resampling", "Z-Norm/Quant", "Pos. Encoding", "Tile/Pack", "Inference"};
    return names;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

double LatencyReport::stage_mean(int s) const { return mean_of(stage_ms[static_cast<size_t>(s)]); }
double LatencyReport::stage_std(int s) const { return std_of(stage_ms[static_cast<size_t>(s)]); }
double LatencyReport::end_to_end_mean() const { return mean_of(end_to_end_ms); }
double LatencyReport::end_to_end_std() const { return std_of(end_to_end_ms); }

bool LatencyReport::operator==(const LatencyReport& other) const {
    return repeats == other.repeats && stage_ms == other.stage_ms &&
           end_to_end_ms == other.end_to_end_ms;
}

LatencyReport profile_pipeline(const MultiChannelSignal& input, const QuantizedModel& qmodel,
                               int repeats, int tile_width) {
    if (repeats < 1) throw DataError("profile needs at least one repeat");
    input.validate();
    const ModelConfig& cfg = qmodel.config;

    PosEncodingTable table = build_pe_tables(cfg.window_len, cfg.pe_frequencies, cfg.pe_alpha);
    const double target_rate = input.sample_rate_hz;  // stage runs even at identity rate

    using clock = std::chrono::steady_clock;
    LatencyReport report;
    report.repeats = repeats;

    for (int pass = -1; pass < repeats; ++pass) {  // pass -1 is the warmup
        const auto t0 = clock::now();

        // stage 1: resample (plus channel padding when required)
        SignalWindow w;
        w.channels = input.channels;
        w.window_len = input.samples_per_channel;
        w.sample_rate_hz = input.sample_rate_hz;
        w.data = input.data;
        w = resample_linear(w, target_rate);
        if (w.window_len < cfg.window_len) throw DataError("profile input shorter than model window");
        if (w.window_len > cfg.window_len) {
            SignalWindow cut;
            cut.channels = w.channels;
            cut.window_len = cfg.window_len;
            cut.sample_rate_hz = w.sample_rate_hz;
            cut.data.resize(static_cast<size_t>(w.channels) * cfg.window_len);
            for (int c = 0; c < w.channels; ++c)
                std::copy_n(&w.data[static_cast<size_t>(c) * w.window_len], cfg.window_len,
                            &cut.data[static_cast<size_t>(c) * cfg.window_len]);
            w = std::move(cut);
        }
        if (w.channels < cfg.signal_channels) w = zero_pad_channels(w, cfg.signal_channels);
        if (w.channels != cfg.signal_channels)
            throw DataError("profile input channel count exceeds model config");
        const auto t1 = clock::now();

        // stage 2: z-score + Q7 quantization
        auto [z, stats] = zscore_streaming(w);
        Q7Tensor q = quantize_q7(z);
        const auto t2 = clock::now();

        // stage 3: positional encoding concat
        AugmentedWindow aug = encode_positions(table, q, w.sample_rate_hz);
        const auto t3 = clock::now();

        // stage 4: tile pack
        std::vector<int8_t> packed = tile_pack(aug.qdata, tile_width);
        const auto t4 = clock::now();

        // stage 5: int8 inference
        std::vector<double> logits = infer_int8(qmodel, aug);
        const auto t5 = clock::now();
        (void)packed;
        (void)logits;

        if (pass < 0) continue;
        const std::array<clock::time_point, 6> ts = {t0, t1, t2, t3, t4, t5};
        for (int s = 0; s < LatencyReport::kStages; ++s) {
            const double ms =
                std::chrono::duration<double, std::milli>(ts[static_cast<size_t>(s + 1)] -
                                                          ts[static_cast<size_t>(s)])
                    .count();
            report.stage_ms[static_cast<size_t>(s)].push_back(ms);
        }
        report.end_to_end_ms.push_back(
            std::chrono::duration<double, std::milli>(t5 - t0).count());
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

std::string emit_report(const LatencyReport& report, ReportFormat format) {
    if (format == ReportFormat::json_lines) {
        std::string out;
        nlohmann::json meta;
        meta["record"] = "meta";
        meta["repeats"] = report.repeats;
        meta["warmup_excluded"] = true;
        meta["host_measurement"] = true;
        out += meta.dump() + "\n";
        for (int s = 0; s < LatencyReport::kStages; ++s) {
            nlohmann::json row;
            row["record"] = "stage";
            row["stage"] = LatencyReport::stage_names()[static_cast<size_t>(s)];
            row["mean_ms"] = report.stage_mean(s);
            row["std_ms"] = report.stage_std(s);
            row["samples_ms"] = report.stage_ms[static_cast<size_t>(s)];
            out += row.dump() + "\n";
        }
        nlohmann::json tot;
        tot["record"] = "stage";
        tot["stage"] = "End-to-End";
        tot["mean_ms"] = report.end_to_end_mean();
        tot["std_ms"] = report.end_to_end_std();
        tot["samples_ms"] = report.end_to_end_ms;
        out += tot.dump() + "\n";
        return out;
    }

    std::ostringstream os;
    os << "Stage          Mean (ms)    Std (ms)\n";
    char buf[96];
    for (int s = 0; s < LatencyReport::kStages; ++s) {
        std::snprintf(buf, sizeof(buf), "%-14s %9.4f  %9.4f\n",
                      LatencyReport::stage_names()[static_cast<size_t>(s)], report.stage_mean(s),
                      report.stage_std(s));
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-14s %9.4f  %9.4f\n", "End-to-End",
                  report.end_to_end_mean(), report.end_to_end_std());
    os << buf;
    os << "repeats=" << report.repeats << ", one warmup pass excluded\n";
    os << "Host wall-clock measurement; times are platform-relative, not device timings.\n";
    return os.str();
}

LatencyReport parse_report(const std::string& json_lines) {
    LatencyReport report;
    std::istringstream is(json_lines);
    std::string line;
    int stage_index = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("bad report line: ") + e.what());
        }
        const std::string kind = row.value("record", "");
        if (kind == "meta") {
            report.repeats = row.at("repeats").get<int>();
        } else if (kind == "stage") {
            const std::string name = row.at("stage").get<std::string>();
            const auto samples = row.at("samples_ms").get<std::vector<double>>();
            if (name == "End-to-End") {
                report.end_to_end_ms = samples;
            } else {
                if (stage_index >= LatencyReport::kStages ||
                    name != LatencyReport::stage_names()[static_cast<size_t>(stage_index)])
                    throw DataError("unexpected stage name in report: " + name);
                report.stage_ms[static_cast<size_t>(stage_index++)] = samples;
            }
        } else {
            throw DataError("unknown report record kind");
        }
    }
    if (stage_index != LatencyReport::kStages) throw DataError("report is missing stages");
    return report;
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

void write_manifest(const RunManifest& manifest, const std::string& path) {
    nlohmann::json j;
    j["command"] = manifest.command;
    j["config"] = manifest.config_json.empty()
                      ? nlohmann::json::object()
                      : nlohmann::json::parse(manifest.config_json);
    j["seed"] = manifest.seed;
    j["inputs"] = manifest.inputs;
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& [p, crc] : manifest.artifacts) {
        char hex[16];
        std::snprintf(hex, sizeof(hex), "%08x", crc);
        arts.push_back({{"path", p}, {"crc32", hex}});
    }
    j["artifacts"] = arts;
    j["timestamp"] = manifest.timestamp;
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << j.dump(2) << "\n";
}

}  // namespace physiolite
