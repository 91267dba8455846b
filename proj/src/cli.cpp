#include "physiolite/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "physiolite/conditioning.hpp"
#include "physiolite/crc32.hpp"
#include "physiolite/model.hpp"
#include "physiolite/posenc.hpp"
#include "physiolite/preprocess.hpp"
#include "physiolite/profile.hpp"
#include "physiolite/signal.hpp"
#include "physiolite/training.hpp"

namespace physiolite {

namespace {

std::string iso_timestamp() {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

uint32_t file_crc(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot hash artifact " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return crc32(bytes.data(), bytes.size());
}

void emit_manifest(const std::string& command, const nlohmann::json& config, uint64_t seed,
                   const std::vector<std::string>& inputs,
                   const std::vector<std::string>& artifacts) {
    if (artifacts.empty()) return;
    RunManifest m;
    m.command = command;
    m.config_json = config.dump();
    m.seed = seed;
    m.inputs = inputs;
    for (const auto& a : artifacts) m.artifacts.emplace_back(a, file_crc(a));
    m.timestamp = iso_timestamp();
    write_manifest(m, artifacts.front() + ".manifest.json");
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    if (out.empty()) throw DataError("empty list: " + s);
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    if (out.empty()) throw DataError("empty list: " + s);
    return out;
}

std::vector<BandSpec> parse_bands(const std::string& s) {
    std::vector<BandSpec> bands;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        BandSpec b;
        if (std::sscanf(item.c_str(), "%lf:%lf:%lf", &b.center_hz, &b.bandwidth_hz, &b.amplitude) != 3)
            throw DataError("band format is center:bandwidth:amplitude");
        bands.push_back(b);
    }
    return bands;
}

std::vector<BandSpec> default_bands(int n_classes, double nyquist) {
    std::vector<BandSpec> bands;
    for (int i = 0; i < n_classes; ++i) {
        const double frac = 0.15 + 0.65 * (i + 0.5) / n_classes;
        bands.push_back({frac * nyquist, 0.1 * nyquist, 1.0});
    }
    return bands;
}

// ---------------------------------------------------------------------------
// Shared option bags
// ---------------------------------------------------------------------------

struct ModelFlags {
    std::string kernels = "3,5,7";
    int stem = 32, branch = 64, mix = 128, embed = 256, depth = 3, ratio = 2;
    int freqs = 0;  // 0 = pick by window length
    double alpha_pe = 0.1;
    bool no_pe = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--kernels", kernels, "branch kernel sizes, comma separated");
        cmd->add_option("--stem", stem, "stem channels");
        cmd->add_option("--branch", branch, "branch channels");
        cmd->add_option("--mix", mix, "mixing channels");
        cmd->add_option("--embed", embed, "embedding width");
        cmd->add_option("--depth", depth, "mixing block count");
        cmd->add_option("--ratio", ratio, "block expansion ratio");
        cmd->add_option("--freqs", freqs, "positional frequency pairs (0 = auto)");
        cmd->add_option("--alpha-pe", alpha_pe, "positional channel scale");
        cmd->add_flag("--no-pe", no_pe, "disable positional channels");
    }

    ModelConfig to_config(const LabeledDataset& ds) const {
        ModelConfig c;
        c.signal_channels = ds.windows.front().channels;
        c.window_len = static_cast<int>(ds.windows.front().window_len);
        c.n_classes = ds.n_classes;
        c.task_kind = ds.task_kind;
        c.kernel_set = parse_int_list(kernels);
        c.stem_channels = stem;
        c.branch_channels = branch;
        c.mix_channels = mix;
        c.embed_dim = embed;
        c.depth = depth;
        c.expansion_ratio = ratio;
        c.pe_frequencies = freqs > 0 ? freqs : (c.window_len >= 2048 ? 12 : 8);
        c.pe_alpha = alpha_pe;
        c.use_positional = !no_pe;
        return c;
    }

    nlohmann::json json() const {
        return {{"kernels", kernels}, {"stem", stem},   {"branch", branch}, {"mix", mix},
                {"embed", embed},     {"depth", depth}, {"ratio", ratio},   {"freqs", freqs},
                {"alpha_pe", alpha_pe}, {"no_pe", no_pe}};
    }
};

struct TrainFlags {
    int epochs = 30, batch = 16, warmup = 5;
    double lr = 1e-3, weight_decay = 1e-3, f1_weight = 0.1;
    std::string loss = "auto";
    uint64_t seed = 1;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--batch", batch, "batch size");
        cmd->add_option("--warmup", warmup, "linear warmup epochs");
        cmd->add_option("--lr", lr, "peak learning rate");
        cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay");
        cmd->add_option("--loss", loss, "ce | bce | ce+softf1 | auto");
        cmd->add_option("--f1-weight", f1_weight, "soft macro-F1 regularizer weight");
        cmd->add_option("--seed", seed, "run seed");
    }

    TrainConfig to_config(const LabeledDataset& ds) const {
        TrainConfig c;
        c.epochs = epochs;
        c.batch_size = batch;
        c.warmup_epochs = warmup;
        c.lr_max = lr;
        c.weight_decay = weight_decay;
        c.f1_reg_weight = f1_weight;
        c.seed = seed;
        if (loss == "ce") c.loss_kind = LossKind::ce;
        else if (loss == "bce") c.loss_kind = LossKind::bce;
        else if (loss == "ce+softf1") c.loss_kind = LossKind::ce_softf1;
        else if (loss == "auto")
            c.loss_kind = ds.task_kind == TaskKind::multi_label ? LossKind::bce : LossKind::ce;
        else throw DataError("unknown loss kind: " + loss);
        return c;
    }

    nlohmann::json json() const {
        return {{"epochs", epochs}, {"batch", batch},           {"warmup", warmup},
                {"lr", lr},         {"weight_decay", weight_decay}, {"loss", loss},
                {"f1_weight", f1_weight}, {"seed", seed}};
    }
};

void print_history(const History& h, const std::string& prefix = "") {
    for (const auto& r : h) std::cout << prefix << history_line(r) << "\n";
}

SignalWindow signal_as_window(const MultiChannelSignal& s) {
    SignalWindow w;
    w.channels = s.channels;
    w.window_len = s.samples_per_channel;
    w.sample_rate_hz = s.sample_rate_hz;
    w.data = s.data;
    return w;
}

MultiChannelSignal window_as_signal(const SignalWindow& w) {
    MultiChannelSignal s;
    s.channels = w.channels;
    s.samples_per_channel = w.window_len;
    s.sample_rate_hz = w.sample_rate_hz;
    s.data = w.data;
    return s;
}

std::string join_args(const std::vector<std::string>& args) {
    std::string s = "physiolite";
    for (const auto& a : args) s += " " + a;
    return s;
}

// Device-path input preparation for one raw window.
AugmentedWindow prepare_device_window(const SignalWindow& raw, const ModelConfig& cfg) {
    SignalWindow w = raw;
    if (w.channels < cfg.signal_channels) w = zero_pad_channels(w, cfg.signal_channels);
    if (w.channels != cfg.signal_channels)
        throw DataError("input channel count exceeds model config");
    if (w.window_len < cfg.window_len) throw DataError("input shorter than model window");
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
    auto [z, stats] = zscore_streaming(w);
    Q7Tensor q = quantize_q7(z);
    if (cfg.use_positional) {
        PosEncodingTable table = build_pe_tables(cfg.window_len, cfg.pe_frequencies, cfg.pe_alpha);
        return encode_positions(table, q, w.sample_rate_hz);
    }
    AugmentedWindow aw;
    aw.signal_channels = cfg.signal_channels;
    aw.frequency_pairs = 0;
    aw.window_len = cfg.window_len;
    aw.sample_rate_hz = w.sample_rate_hz;
    aw.domain = Domain::q7;
    aw.qdata = std::move(q);
    return aw;
}

std::string budget_text(const BudgetReport& r) {
    std::ostringstream os;
    auto row = [&](const char* name, int64_t used, int64_t limit, bool ok) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%-18s %10lld / %10lld  %s\n", name,
                      static_cast<long long>(used), static_cast<long long>(limit),
                      ok ? "pass" : "FAIL");
        os << buf;
    };
    os << "parameters         " << r.parameter_count << "\n";
    row("weight bytes", r.weight_bytes, r.weight_limit, r.weights_ok);
    row("bias bytes", r.bias_bytes, r.bias_limit, r.bias_ok);
    row("peak activation", r.peak_activation_bytes, r.activation_limit, r.activations_ok);
    os << (r.pass() ? "budget: pass" : "budget: FAIL") << "\n";
    return os.str();
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
    CLI::App app{"PhysioLite: biosignal preprocessing, training, quantization and profiling"};
    app.require_subcommand(1);
    const std::string command_line = join_args(args);

    // ---- gen ----
    struct {
        std::string out, bands;
        int classes = 3, channels = 2, windows = 150;
        int64_t window_len = 128;
        double rate = 128.0, noise = 0.3;
        uint64_t seed = 7;
        bool order_dependent = false, qrs = false;
    } gen;
    auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic labeled dataset");
    gen_cmd->add_option("--out", gen.out, "output dataset path (.phds)")->required();
    gen_cmd->add_option("--classes", gen.classes, "number of classes");
    gen_cmd->add_option("--channels", gen.channels, "signal channels");
    gen_cmd->add_option("--window-len", gen.window_len, "samples per window");
    gen_cmd->add_option("--rate", gen.rate, "sample rate (Hz)");
    gen_cmd->add_option("--windows", gen.windows, "total windows");
    gen_cmd->add_option("--noise", gen.noise, "additive noise sigma");
    gen_cmd->add_option("--seed", gen.seed, "generator seed");
    gen_cmd->add_option("--bands", gen.bands, "per-class bands center:bw:amp,...");
    gen_cmd->add_flag("--order-dependent", gen.order_dependent,
                      "classes differ only by burst order");
    gen_cmd->add_flag("--qrs", gen.qrs, "add QRS-like pulses");
    gen_cmd->callback([&] {
        SyntheticSpec spec;
        spec.n_classes = gen.classes;
        spec.channels = gen.channels;
        spec.window_len = gen.window_len;
        spec.sample_rate_hz = gen.rate;
        spec.noise_std = gen.noise;
        spec.order_dependent = gen.order_dependent;
        spec.qrs_pulses = gen.qrs;
        spec.seed = gen.seed;
        spec.n_windows = gen.windows;
        spec.class_bands = gen.bands.empty() ? default_bands(gen.classes, gen.rate / 2.0)
                                             : parse_bands(gen.bands);
        LabeledDataset ds = gen_synthetic(spec);
        write_dataset(ds, gen.out);
        nlohmann::json cfg = {{"classes", gen.classes}, {"channels", gen.channels},
                              {"window_len", gen.window_len}, {"rate", gen.rate},
                              {"windows", gen.windows},   {"noise", gen.noise},
                              {"order_dependent", gen.order_dependent}};
        emit_manifest(command_line, cfg, gen.seed, {}, {gen.out});
        std::cout << "wrote " << ds.size() << " windows to " << gen.out << "\n";
    });

    // ---- condition ----
    struct {
        std::string input, output, mode = "ecg", format = "phsig";
        double rate = 500.0;
    } cond;
    auto* cond_cmd = app.add_subcommand("condition", "ECG/EMG reference conditioning");
    cond_cmd->add_option("--input", cond.input)->required();
    cond_cmd->add_option("--output", cond.output)->required();
    cond_cmd->add_option("--mode", cond.mode, "ecg | emg");
    cond_cmd->add_option("--format", cond.format, "input format: phsig | csv");
    cond_cmd->add_option("--rate", cond.rate, "sample rate for csv input");
    cond_cmd->callback([&] {
        const SignalFormat fmt =
            cond.format == "csv" ? SignalFormat::csv : SignalFormat::phsig_binary;
        MultiChannelSignal sig = read_signal(cond.input, fmt, cond.rate);
        MultiChannelSignal out;
        if (cond.mode == "ecg") out = condition_ecg(sig);
        else if (cond.mode == "emg") out = condition_emg(sig);
        else throw DataError("mode must be ecg or emg");
        write_signal(out, cond.output, SignalFormat::phsig_binary);
        emit_manifest(command_line, {{"mode", cond.mode}}, 0, {cond.input}, {cond.output});
        std::cout << "conditioned " << cond.input << " -> " << cond.output << "\n";
    });

    // ---- preprocess ----
    struct {
        std::string input, prefix;
        double target_rate = 0.0;
        int target_channels = 0;
        int64_t window_len = 0, step = 0;
        bool keep_partial = false;
    } prep;
    auto* prep_cmd = app.add_subcommand("preprocess", "resample, pad, z-norm and Q7 quantize");
    prep_cmd->add_option("--input", prep.input)->required();
    prep_cmd->add_option("--output-prefix", prep.prefix)->required();
    prep_cmd->add_option("--target-rate", prep.target_rate, "resample target (0 = keep)");
    prep_cmd->add_option("--target-channels", prep.target_channels, "zero-pad channels (0 = keep)");
    prep_cmd->add_option("--window-len", prep.window_len, "window length (0 = whole signal)");
    prep_cmd->add_option("--step", prep.step, "window step (default = window length)");
    prep_cmd->add_flag("--keep-partial", prep.keep_partial, "keep zero-padded tail window");
    prep_cmd->callback([&] {
        MultiChannelSignal sig = read_signal(prep.input, SignalFormat::phsig_binary);
        WindowSpec ws;
        ws.window_len = prep.window_len > 0 ? prep.window_len : sig.samples_per_channel;
        ws.step = prep.step > 0 ? prep.step : ws.window_len;
        ws.drop_last_partial = !prep.keep_partial;
        std::vector<std::string> artifacts;
        int i = 0;
        for (auto& w : make_windows(sig, ws)) {
            SignalWindow stage = w;
            if (prep.target_rate > 0.0) stage = resample_linear(stage, prep.target_rate);
            if (prep.target_channels > 0) stage = zero_pad_channels(stage, prep.target_channels);
            auto [z, stats] = zscore_streaming(stage);
            Q7Tensor q = quantize_q7(z);
            SignalWindow out = stage;
            out.data = dequantize_q7(q);
            const std::string path = prep.prefix + std::to_string(i++) + ".phsig";
            write_signal(window_as_signal(out), path, SignalFormat::phsig_binary);
            artifacts.push_back(path);
        }
        nlohmann::json cfg = {{"target_rate", prep.target_rate},
                              {"target_channels", prep.target_channels},
                              {"window_len", ws.window_len},
                              {"step", ws.step}};
        emit_manifest(command_line, cfg, 0, {prep.input}, artifacts);
        std::cout << "wrote " << artifacts.size() << " preprocessed windows\n";
    });

    // ---- encode ----
    struct {
        std::string input, output, dump;
        int freqs = 8;
        double alpha = 0.1;
    } enc;
    auto* enc_cmd = app.add_subcommand("encode", "concatenate Q7 positional channels");
    enc_cmd->add_option("--input", enc.input)->required();
    enc_cmd->add_option("--output", enc.output)->required();
    enc_cmd->add_option("--freqs", enc.freqs, "frequency pairs F");
    enc_cmd->add_option("--alpha-pe", enc.alpha, "positional scale");
    enc_cmd->add_option("--dump-table", enc.dump, "write `k t sin cos` table dump");
    enc_cmd->callback([&] {
        MultiChannelSignal sig = read_signal(enc.input, SignalFormat::phsig_binary);
        SignalWindow w = signal_as_window(sig);
        PosEncodingTable table = build_pe_tables(w.window_len, enc.freqs, enc.alpha);
        AugmentedWindow aug = encode_positions(table, quantize_q7(w), w.sample_rate_hz);
        SignalWindow out;
        out.channels = aug.total_channels();
        out.window_len = aug.window_len;
        out.sample_rate_hz = w.sample_rate_hz;
        out.data = dequantize_q7(aug.qdata);
        write_signal(window_as_signal(out), enc.output, SignalFormat::phsig_binary);
        std::vector<std::string> artifacts{enc.output};
        if (!enc.dump.empty()) {
            std::ofstream df(enc.dump);
            dump_pe_table(table, df);
            artifacts.push_back(enc.dump);
        }
        emit_manifest(command_line, {{"freqs", enc.freqs}, {"alpha", enc.alpha}}, 0, {enc.input},
                      artifacts);
        std::cout << "encoded " << enc.input << " -> " << enc.output << " ("
                  << aug.total_channels() << " channels)\n";
    });

    // ---- train ----
    struct {
        std::string data, out;
        ModelFlags model;
        TrainFlags train;
    } tr;
    auto* tr_cmd = app.add_subcommand("train", "train a model from scratch");
    tr_cmd->add_option("--data", tr.data)->required();
    tr_cmd->add_option("--out", tr.out)->required();
    tr.model.add_to(tr_cmd);
    tr.train.add_to(tr_cmd);
    tr_cmd->callback([&] {
        LabeledDataset ds = read_dataset(tr.data);
        ModelConfig mc = tr.model.to_config(ds);
        TrainConfig tc = tr.train.to_config(ds);
        Model model = build_model(mc, tc.seed);
        if (model.budget_warning)
            std::cerr << "warning: weight bytes exceed the weight-SRAM limit\n";
        TrainResult res = train(std::move(model), ds, tc);
        print_history(res.history);
        save_weights(res.model, tr.out);
        nlohmann::json cfg = {{"model", tr.model.json()}, {"train", tr.train.json()}};
        emit_manifest(command_line, cfg, tc.seed, {tr.data}, {tr.out});
    });

    // ---- distill ----
    struct {
        std::string data, out, teacher;
        double alpha_kd = 0.3, temperature = 2.0;
        ModelFlags model;
        TrainFlags train;
    } di;
    auto* di_cmd = app.add_subcommand("distill", "train a student against a frozen teacher");
    di_cmd->add_option("--data", di.data)->required();
    di_cmd->add_option("--out", di.out)->required();
    di_cmd->add_option("--teacher", di.teacher)->required();
    di_cmd->add_option("--alpha-kd", di.alpha_kd, "distillation mixing weight");
    di_cmd->add_option("--temperature", di.temperature, "softening temperature");
    di.model.add_to(di_cmd);
    di.train.add_to(di_cmd);
    di_cmd->callback([&] {
        LabeledDataset ds = read_dataset(di.data);
        LoadedModel t = load_weights(di.teacher);
        if (t.quantized) throw DataError("teacher must be a float model");
        ModelConfig mc = di.model.to_config(ds);
        TrainConfig tc = di.train.to_config(ds);
        tc.alpha_kd = di.alpha_kd;
        tc.temperature = di.temperature;
        TrainResult res = distill(t.model, mc, ds, tc);
        print_history(res.history);
        save_weights(res.model, di.out);
        nlohmann::json cfg = {{"model", di.model.json()},
                              {"train", di.train.json()},
                              {"alpha_kd", di.alpha_kd},
                              {"temperature", di.temperature}};
        emit_manifest(command_line, cfg, tc.seed, {di.data, di.teacher}, {di.out});
    });

    // ---- quantize ----
    struct {
        std::string weights, data, out;
        int calib = 64;
    } qz;
    auto* qz_cmd = app.add_subcommand("quantize", "post-training int8 quantization");
    qz_cmd->add_option("--weights", qz.weights)->required();
    qz_cmd->add_option("--data", qz.data, "calibration dataset")->required();
    qz_cmd->add_option("--out", qz.out)->required();
    qz_cmd->add_option("--calib", qz.calib, "calibration window count");
    qz_cmd->callback([&] {
        LoadedModel lm = load_weights(qz.weights);
        if (lm.quantized) throw DataError("model is already quantized");
        LabeledDataset ds = read_dataset(qz.data);
        std::vector<Tensor> inputs = prepare_inputs(ds, lm.model.config);
        if (qz.calib < static_cast<int>(inputs.size()))
            inputs.resize(static_cast<size_t>(qz.calib));
        QuantizedModel qm = calibrate_and_quantize(lm.model, inputs);
        save_weights(qm, qz.out);
        emit_manifest(command_line, {{"calib", qz.calib}}, 0, {qz.weights, qz.data}, {qz.out});
        std::cout << "quantized " << qz.weights << " -> " << qz.out << "\n";
    });

    // ---- infer ----
    struct {
        std::string weights, input;
    } inf;
    auto* inf_cmd = app.add_subcommand("infer", "run one window through a model");
    inf_cmd->add_option("--weights", inf.weights)->required();
    inf_cmd->add_option("--input", inf.input, "raw window (.phsig)")->required();
    inf_cmd->callback([&] {
        LoadedModel lm = load_weights(inf.weights);
        const ModelConfig& cfg = lm.quantized ? lm.qmodel.config : lm.model.config;
        MultiChannelSignal sig = read_signal(inf.input, SignalFormat::phsig_binary);
        AugmentedWindow aug = prepare_device_window(signal_as_window(sig), cfg);
        std::vector<double> logits;
        if (lm.quantized) {
            logits = infer_int8(lm.qmodel, aug);
        } else {
            Tensor x = window_to_tensor(aug);
            logits = lm.model.forward(x);
        }
        std::cout << "logits:";
        for (double v : logits) std::cout << " " << v;
        std::cout << "\n";
        if (cfg.task_kind == TaskKind::single_label) {
            const int pred = static_cast<int>(
                std::max_element(logits.begin(), logits.end()) - logits.begin());
            std::cout << "pred: " << pred << "\n";
        } else {
            std::cout << "pred:";
            for (double v : logits) std::cout << " " << (v >= 0.0 ? 1 : 0);
            std::cout << "\n";
        }
    });

    // ---- profile ----
    struct {
        std::string weights, input, out, format = "text";
        int repeats = 10, tile_width = 64;
    } pf;
    auto* pf_cmd = app.add_subcommand("profile", "five-stage host latency breakdown");
    pf_cmd->add_option("--weights", pf.weights, "quantized model (.phlw)")->required();
    pf_cmd->add_option("--input", pf.input, "raw window (.phsig)")->required();
    pf_cmd->add_option("--repeats", pf.repeats, "timed passes (one extra warmup)");
    pf_cmd->add_option("--tile-width", pf.tile_width, "tile pack width");
    pf_cmd->add_option("--format", pf.format, "text | jsonl");
    pf_cmd->add_option("--out", pf.out, "write report to a file instead of stdout");
    pf_cmd->callback([&] {
        LoadedModel lm = load_weights(pf.weights);
        if (!lm.quantized) throw DataError("profile expects a quantized model");
        MultiChannelSignal sig = read_signal(pf.input, SignalFormat::phsig_binary);
        LatencyReport rep = profile_pipeline(sig, lm.qmodel, pf.repeats, pf.tile_width);
        const ReportFormat fmt =
            pf.format == "jsonl" ? ReportFormat::json_lines : ReportFormat::text_table;
        const std::string text = emit_report(rep, fmt);
        if (pf.out.empty()) {
            std::cout << text;
        } else {
            std::ofstream f(pf.out);
            if (!f) throw DataError("cannot write " + pf.out);
            f << text;
            emit_manifest(command_line, {{"repeats", pf.repeats}, {"format", pf.format}}, 0,
                          {pf.weights, pf.input}, {pf.out});
        }
    });

    // ---- budget ----
    struct {
        std::string weights, format = "text";
    } bd;
    auto* bd_cmd = app.add_subcommand("budget", "memory budget vs accelerator limits");
    bd_cmd->add_option("--weights", bd.weights)->required();
    bd_cmd->add_option("--format", bd.format, "text | jsonl");
    bd_cmd->callback([&] {
        LoadedModel lm = load_weights(bd.weights);
        const BudgetReport r =
            lm.quantized ? budget_report(lm.qmodel) : budget_report(lm.model.config);
        if (bd.format == "jsonl") {
            nlohmann::json j = {{"parameters", r.parameter_count},
                                {"weight_bytes", r.weight_bytes},
                                {"weight_limit", r.weight_limit},
                                {"bias_bytes", r.bias_bytes},
                                {"bias_limit", r.bias_limit},
                                {"peak_activation_bytes", r.peak_activation_bytes},
                                {"activation_limit", r.activation_limit},
                                {"pass", r.pass()}};
            std::cout << j.dump() << "\n";
        } else {
            std::cout << budget_text(r);
        }
    });

    // ---- ablate ----
    struct {
        std::string data, out_dir, mode = "pe", teacher, alpha_grid = "0.3,0.5,0.7";
        ModelFlags model;
        TrainFlags train;
    } ab;
    auto* ab_cmd = app.add_subcommand("ablate", "seed-matched ablation runs");
    ab_cmd->add_option("--data", ab.data)->required();
    ab_cmd->add_option("--out-dir", ab.out_dir)->required();
    ab_cmd->add_option("--mode", ab.mode, "pe | kernels | alpha");
    ab_cmd->add_option("--teacher", ab.teacher, "teacher weights (alpha mode)");
    ab_cmd->add_option("--alpha-grid", ab.alpha_grid, "alpha values for alpha mode");
    ab.model.add_to(ab_cmd);
    ab.train.add_to(ab_cmd);
    ab_cmd->callback([&] {
        LabeledDataset ds = read_dataset(ab.data);
        TrainConfig tc = ab.train.to_config(ds);
        auto run_variant = [&](const std::string& name, const ModelConfig& mc,
                               const Model* teacher, double alpha) {
            TrainConfig vtc = tc;
            vtc.alpha_kd = alpha;
            TrainResult res;
            if (teacher) res = distill(*teacher, mc, ds, vtc);
            else res = train(build_model(mc, vtc.seed), ds, vtc);
            print_history(res.history, name + " ");
            const std::string path = ab.out_dir + "/" + name + ".phlw";
            save_weights(res.model, path);
            nlohmann::json cfg = {{"variant", name},
                                  {"model", ab.model.json()},
                                  {"train", ab.train.json()}};
            emit_manifest(command_line, cfg, vtc.seed, {ab.data}, {path});
            std::cout << name << " final " << history_line(res.history.back()) << "\n";
        };
        if (ab.mode == "pe") {
            ModelFlags with = ab.model, without = ab.model;
            without.no_pe = true;
            run_variant("pe-on", with.to_config(ds), nullptr, 0.0);
            run_variant("pe-off", without.to_config(ds), nullptr, 0.0);
        } else if (ab.mode == "kernels") {
            run_variant("k-multi", ab.model.to_config(ds), nullptr, 0.0);
            for (int k : parse_int_list(ab.model.kernels)) {
                ModelFlags mf = ab.model;
                mf.kernels = std::to_string(k);
                run_variant("k" + std::to_string(k), mf.to_config(ds), nullptr, 0.0);
            }
        } else if (ab.mode == "alpha") {
            if (ab.teacher.empty()) throw DataError("alpha mode needs --teacher");
            LoadedModel t = load_weights(ab.teacher);
            if (t.quantized) throw DataError("teacher must be a float model");
            for (double a : parse_double_list(ab.alpha_grid)) {
                std::ostringstream name;
                name << "alpha" << a;
                run_variant(name.str(), ab.model.to_config(ds), &t.model, a);
            }
        } else {
            throw DataError("ablate mode must be pe, kernels or alpha");
        }
    });

    // ---- parse & dispatch ----
    std::vector<const char*> argv;
    argv.push_back("physiolite");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, returns 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << "run 'physiolite --help' or '<subcommand> --help' for usage\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace physiolite
