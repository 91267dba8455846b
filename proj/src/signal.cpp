#include "physiolite/signal.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "physiolite/rng.hpp"

namespace physiolite {

void MultiChannelSignal::validate() const {
    if (channels < 1) throw DataError("signal must have at least one channel");
    if (sample_rate_hz <= 0.0) throw DataError("sample rate must be positive");
    if (data.size() != static_cast<size_t>(channels) * static_cast<size_t>(samples_per_channel))
        throw DataError("signal data length does not match channels x samples");
    for (double v : data)
        if (!std::isfinite(v)) throw DataError("non-finite sample in signal");
}

// ---------------------------------------------------------------------------
// phsig binary format
// magic 'PHSG', version u16=1, channels u32, samples u64, sample_rate f64,
// then f32 little-endian samples, channel-major.
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("truncated file");
    return v;
}

MultiChannelSignal read_phsig(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "PHSG", 4) != 0) throw DataError("malformed phsig header (magic)");
    const auto version = get<uint16_t>(f);
    if (version != 1) throw DataError("unsupported phsig version");
    const auto channels = get<uint32_t>(f);
    const auto samples = get<uint64_t>(f);
    const auto rate = get<double>(f);
    if (channels == 0 || rate <= 0.0) throw DataError("malformed phsig header (fields)");

    MultiChannelSignal sig;
    sig.channels = static_cast<int>(channels);
    sig.samples_per_channel = static_cast<int64_t>(samples);
    sig.sample_rate_hz = rate;
    const size_t n = static_cast<size_t>(channels) * samples;
    std::vector<float> raw(n);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!f || static_cast<size_t>(f.gcount()) != n * sizeof(float))
        throw DataError("phsig payload does not match header channel/sample counts");
    // trailing bytes mean the header undercounts the payload
    f.peek();
    if (!f.eof()) throw DataError("phsig payload does not match header channel/sample counts");
    sig.data.assign(raw.begin(), raw.end());
    sig.validate();
    return sig;
}

void write_phsig(const MultiChannelSignal& sig, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write("PHSG", 4);
    put<uint16_t>(f, 1);
    put<uint32_t>(f, static_cast<uint32_t>(sig.channels));
    put<uint64_t>(f, static_cast<uint64_t>(sig.samples_per_channel));
    put<double>(f, sig.sample_rate_hz);
    std::vector<float> raw(sig.data.begin(), sig.data.end());
    f.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!f) throw DataError("write failed for " + path);
}

// CSV: one column per channel, one row per time step, optional single header row.
MultiChannelSignal read_csv(const std::string& path, double sample_rate_hz) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    size_t cols = 0;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool parse_failed = false;
        while (std::getline(ss, cell, ',')) {
            try {
                size_t pos = 0;
                const double v = std::stod(cell, &pos);
                while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
                if (pos != cell.size()) throw std::invalid_argument(cell);
                row.push_back(v);
            } catch (const std::exception&) {
                parse_failed = true;
                break;
            }
        }
        if (parse_failed) {
            if (first) {  // header row
                first = false;
                continue;
            }
            throw DataError("malformed CSV row: " + line);
        }
        if (cols == 0)
            cols = row.size();
        else if (row.size() != cols)
            throw DataError("CSV rows have inconsistent column counts");
        rows.push_back(std::move(row));
        first = false;
    }
    if (rows.empty() || cols == 0) throw DataError("CSV contains no samples");

    MultiChannelSignal sig;
    sig.channels = static_cast<int>(cols);
    sig.samples_per_channel = static_cast<int64_t>(rows.size());
    sig.sample_rate_hz = sample_rate_hz;
    sig.data.resize(cols * rows.size());
    for (size_t t = 0; t < rows.size(); ++t)
        for (size_t c = 0; c < cols; ++c) sig.data[c * rows.size() + t] = rows[t][c];
    sig.validate();
    return sig;
}

void write_csv(const MultiChannelSignal& sig, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f.precision(10);
    for (int64_t t = 0; t < sig.samples_per_channel; ++t) {
        for (int c = 0; c < sig.channels; ++c) {
            if (c) f << ',';
            f << sig.at(c, t);
        }
        f << '\n';
    }
}

}  // namespace

MultiChannelSignal read_signal(const std::string& path, SignalFormat format,
                               double csv_sample_rate_hz) {
    return format == SignalFormat::phsig_binary ? read_phsig(path)
                                                : read_csv(path, csv_sample_rate_hz);
}

void write_signal(const MultiChannelSignal& signal, const std::string& path, SignalFormat format) {
    signal.validate();
    if (format == SignalFormat::phsig_binary)
        write_phsig(signal, path);
    else
        write_csv(signal, path);
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

std::vector<SignalWindow> make_windows(const MultiChannelSignal& signal, const WindowSpec& spec) {
    if (spec.window_len < 1 || spec.step < 1 || spec.step > spec.window_len)
        throw DataError("window spec requires 1 <= step <= window_len");
    const int64_t n = signal.samples_per_channel;
    if (n < spec.window_len) throw DataError("signal shorter than window length");

    const int64_t full = (n - spec.window_len) / spec.step + 1;
    int64_t count = full;
    const bool tail = !spec.drop_last_partial && full * spec.step < n &&
                      full * spec.step + spec.window_len > n;
    if (tail) ++count;

    std::vector<SignalWindow> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const int64_t off = i * spec.step;
        SignalWindow w;
        w.channels = signal.channels;
        w.window_len = spec.window_len;
        w.sample_rate_hz = signal.sample_rate_hz;
        w.data.assign(static_cast<size_t>(signal.channels) * spec.window_len, 0.0);
        const int64_t avail = std::min<int64_t>(spec.window_len, n - off);
        for (int c = 0; c < signal.channels; ++c)
            for (int64_t t = 0; t < avail; ++t) w.at(c, t) = signal.at(c, off + t);
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace {

void add_band_burst(SignalWindow& w, int channel, const BandSpec& band, int64_t t0, int64_t t1,
                    bool hann_envelope, Rng& rng) {
    constexpr int kComponents = 6;
    const double fs = w.sample_rate_hz;
    const int64_t len = t1 - t0;
    for (int j = 0; j < kComponents; ++j) {
        const double f = rng.uniform(band.center_hz - band.bandwidth_hz / 2.0,
                                     band.center_hz + band.bandwidth_hz / 2.0);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const double a = band.amplitude / std::sqrt(static_cast<double>(kComponents));
        for (int64_t t = t0; t < t1; ++t) {
            double env = 1.0;
            if (hann_envelope) {
                const double u = static_cast<double>(t - t0) / static_cast<double>(len - 1);
                env = 0.5 * (1.0 - std::cos(2.0 * M_PI * u));
            }
            w.at(channel, t) += env * a * std::cos(2.0 * M_PI * f * static_cast<double>(t) / fs + phase);
        }
    }
}

void add_qrs_pulses(SignalWindow& w, int channel, double amplitude, Rng& rng) {
    const double fs = w.sample_rate_hz;
    const int64_t width = std::max<int64_t>(3, llround(0.08 * fs)) | 1;
    const int64_t period = llround(fs * rng.uniform(0.7, 1.1));
    int64_t peak = rng.uniform_int(0, std::max<int64_t>(1, period - 1));
    while (peak < w.window_len) {
        for (int64_t o = -width / 2; o <= width / 2; ++o) {
            const int64_t t = peak + o;
            if (t < 0 || t >= w.window_len) continue;
            const double tri = 1.0 - std::abs(static_cast<double>(o)) / (width / 2 + 1.0);
            w.at(channel, t) += amplitude * tri;
        }
        peak += period;
    }
}

SignalWindow synth_window(const SyntheticSpec& spec, int label, Rng& rng) {
    SignalWindow w;
    w.channels = spec.channels;
    w.window_len = spec.window_len;
    w.sample_rate_hz = spec.sample_rate_hz;
    w.data.assign(static_cast<size_t>(spec.channels) * spec.window_len, 0.0);

    const int64_t T = spec.window_len;
    for (int c = 0; c < spec.channels; ++c) {
        if (spec.order_dependent) {
            // Two bursts with identical spectra; the label only swaps their order.
            const int64_t s1a = llround(0.08 * T), s1b = llround(0.38 * T);
            const int64_t s2a = llround(0.62 * T), s2b = llround(0.92 * T);
            const BandSpec& first = spec.class_bands[label == 0 ? 0 : 1];
            const BandSpec& second = spec.class_bands[label == 0 ? 1 : 0];
            add_band_burst(w, c, first, s1a, s1b, true, rng);
            add_band_burst(w, c, second, s2a, s2b, true, rng);
        } else {
            add_band_burst(w, c, spec.class_bands[label], 0, T, false, rng);
            if (spec.qrs_pulses) add_qrs_pulses(w, c, 2.0 * spec.class_bands[label].amplitude, rng);
        }
        for (int64_t t = 0; t < T; ++t) w.at(c, t) += spec.noise_std * rng.normal();
    }
    return w;
}

}  // namespace

LabeledDataset gen_synthetic(const SyntheticSpec& spec) {
    if (spec.n_classes < 2) throw DataError("synthetic spec needs at least 2 classes");
    if (spec.channels < 1 || spec.window_len < 16) throw DataError("synthetic spec shape invalid");
    if (spec.n_windows < spec.n_classes) throw DataError("need at least one window per class");
    const double nyquist = spec.sample_rate_hz / 2.0;
    const size_t needed = spec.order_dependent ? 2 : static_cast<size_t>(spec.n_classes);
    if (spec.class_bands.size() < needed) throw DataError("missing per-class band descriptors");
    for (const auto& b : spec.class_bands) {
        if (b.center_hz <= 0.0 || b.center_hz >= nyquist || b.center_hz + b.bandwidth_hz / 2.0 >= nyquist)
            throw DataError("band exceeds Nyquist frequency");
    }
    if (spec.order_dependent && spec.n_classes != 2)
        throw DataError("order-dependent mode defines exactly 2 classes");

    Rng rng(spec.seed);
    LabeledDataset ds;
    ds.n_classes = spec.n_classes;
    ds.task_kind = TaskKind::single_label;
    ds.windows.reserve(spec.n_windows);
    ds.labels.reserve(spec.n_windows);
    for (int i = 0; i < spec.n_windows; ++i) {
        const int label = i % spec.n_classes;
        ds.windows.push_back(synth_window(spec, label, rng));
        ds.labels.push_back(label);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// PHDS dataset container
// magic 'PHDS', version u16=1, task u8, n_classes u32, n_windows u32,
// channels u32, window_len u64, rate f64, labels, then f32 window payloads.
// ---------------------------------------------------------------------------

void write_dataset(const LabeledDataset& ds, const std::string& path) {
    if (ds.windows.empty()) throw DataError("refusing to write empty dataset");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    const auto& w0 = ds.windows.front();
    f.write("PHDS", 4);
    put<uint16_t>(f, 1);
    put<uint8_t>(f, static_cast<uint8_t>(ds.task_kind));
    put<uint32_t>(f, static_cast<uint32_t>(ds.n_classes));
    put<uint32_t>(f, static_cast<uint32_t>(ds.windows.size()));
    put<uint32_t>(f, static_cast<uint32_t>(w0.channels));
    put<uint64_t>(f, static_cast<uint64_t>(w0.window_len));
    put<double>(f, w0.sample_rate_hz);
    for (size_t i = 0; i < ds.windows.size(); ++i) {
        if (ds.task_kind == TaskKind::single_label) {
            put<uint32_t>(f, static_cast<uint32_t>(ds.labels[i]));
        } else {
            for (int c = 0; c < ds.n_classes; ++c) put<uint8_t>(f, ds.multi_labels[i][c]);
        }
    }
    for (const auto& w : ds.windows) {
        if (w.channels != w0.channels || w.window_len != w0.window_len)
            throw DataError("dataset windows must share one shape");
        std::vector<float> raw(w.data.begin(), w.data.end());
        f.write(reinterpret_cast<const char*>(raw.data()),
                static_cast<std::streamsize>(raw.size() * sizeof(float)));
    }
    if (!f) throw DataError("write failed for " + path);
}

LabeledDataset read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "PHDS", 4) != 0) throw DataError("malformed dataset header");
    if (get<uint16_t>(f) != 1) throw DataError("unsupported dataset version");
    LabeledDataset ds;
    ds.task_kind = static_cast<TaskKind>(get<uint8_t>(f));
    ds.n_classes = static_cast<int>(get<uint32_t>(f));
    const auto n_windows = get<uint32_t>(f);
    const auto channels = get<uint32_t>(f);
    const auto window_len = get<uint64_t>(f);
    const double rate = get<double>(f);
    for (uint32_t i = 0; i < n_windows; ++i) {
        if (ds.task_kind == TaskKind::single_label) {
            const auto label = get<uint32_t>(f);
            if (label >= static_cast<uint32_t>(ds.n_classes))
                throw DataError("label index out of range");
            ds.labels.push_back(static_cast<int>(label));
        } else {
            std::vector<uint8_t> bits(ds.n_classes);
            for (int c = 0; c < ds.n_classes; ++c) bits[c] = get<uint8_t>(f);
            ds.multi_labels.push_back(std::move(bits));
        }
    }
    const size_t n = static_cast<size_t>(channels) * window_len;
    for (uint32_t i = 0; i < n_windows; ++i) {
        SignalWindow w;
        w.channels = static_cast<int>(channels);
        w.window_len = static_cast<int64_t>(window_len);
        w.sample_rate_hz = rate;
        std::vector<float> raw(n);
        f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!f) throw DataError("dataset payload truncated");
        w.data.assign(raw.begin(), raw.end());
        ds.windows.push_back(std::move(w));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Canonical benchmarks
// ---------------------------------------------------------------------------

SyntheticSpec standard_spectral_spec(int n_windows, uint64_t seed) {
    SyntheticSpec s;
    s.n_classes = 3;
    s.channels = 2;
    s.window_len = 128;
    s.sample_rate_hz = 128.0;
    s.class_bands = {{12.0, 8.0, 1.0}, {30.0, 8.0, 1.0}, {50.0, 10.0, 1.0}};
    s.noise_std = 0.3;
    s.seed = seed;
    s.n_windows = n_windows;
    return s;
}

SyntheticSpec order_dependent_spec(int n_windows, uint64_t seed) {
    SyntheticSpec s;
    s.n_classes = 2;
    s.channels = 2;
    s.window_len = 128;
    s.sample_rate_hz = 128.0;
    s.class_bands = {{10.0, 6.0, 1.2}, {42.0, 8.0, 1.2}};
    s.noise_std = 0.25;
    s.order_dependent = true;
    s.seed = seed;
    s.n_windows = n_windows;
    return s;
}

}  // namespace physiolite
