#include "physiolite/posenc.hpp"

#include <cmath>
#include <ostream>

namespace physiolite {

std::pair<double, double> pe_value(int64_t t, int k, int64_t T) {
    if (T < 2) throw DataError("window length must be >= 2");
    if (t < 0 || t >= T) throw DataError("position out of range");
    if (k < 0 || k > 40) throw DataError("frequency index out of range");
    const int64_t m = ((int64_t(1) << k) % T) * (t % T) % T;
    const double phase = 2.0 * M_PI * static_cast<double>(m) / static_cast<double>(T);
    return {std::sin(phase), std::cos(phase)};
}

PosEncodingTable build_pe_tables(int64_t T, int F, double alpha) {
    if (T < 2) throw DataError("window length must be >= 2");
    if (F < 1) throw DataError("need at least one frequency pair");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DataError("alpha must be in (0, 1]");

    PosEncodingTable table;
    table.window_len = T;
    table.frequency_pairs = F;
    table.alpha = alpha;
    table.luts.resize(static_cast<size_t>(F));
    for (int k = 0; k < F; ++k) {
        auto& lut = table.luts[static_cast<size_t>(k)];
        const int64_t pow2 = int64_t(1) << k;
        if (T % pow2 == 0) {
            lut.period = T / pow2;
        } else {
            lut.period = T;
            lut.fallback = true;
        }
        lut.sin_codes.resize(static_cast<size_t>(lut.period));
        lut.cos_codes.resize(static_cast<size_t>(lut.period));
        for (int64_t r = 0; r < lut.period; ++r) {
            const auto [s, c] = pe_value(r, k, T);
            lut.sin_codes[static_cast<size_t>(r)] = quantize_q7_value(alpha * s);
            lut.cos_codes[static_cast<size_t>(r)] = quantize_q7_value(alpha * c);
        }
    }
    return table;
}

AugmentedWindow encode_positions(const PosEncodingTable& table, const SignalWindow& window) {
    if (window.window_len != table.window_len)
        throw DataError("window length does not match encoding table");
    AugmentedWindow out;
    out.signal_channels = window.channels;
    out.frequency_pairs = table.frequency_pairs;
    out.window_len = table.window_len;
    out.sample_rate_hz = window.sample_rate_hz;
    out.domain = Domain::real_valued;
    const int64_t T = table.window_len;
    out.fdata.assign(static_cast<size_t>(out.total_channels()) * T, 0.0);
    std::copy(window.data.begin(), window.data.end(), out.fdata.begin());
    for (int k = 0; k < table.frequency_pairs; ++k) {
        double* srow = &out.fdata[static_cast<size_t>(window.channels + 2 * k) * T];
        double* crow = srow + T;
        for (int64_t t = 0; t < T; ++t) {
            const auto [s, c] = pe_value(t, k, T);
            srow[t] = table.alpha * s;
            crow[t] = table.alpha * c;
        }
    }
    return out;
}

AugmentedWindow encode_positions(const PosEncodingTable& table, const Q7Tensor& window,
                                 double sample_rate_hz) {
    if (window.shape.size() != 2) throw DataError("q7 window must be channels x length");
    if (window.shape[1] != table.window_len)
        throw DataError("window length does not match encoding table");
    const int channels = static_cast<int>(window.shape[0]);
    const int64_t T = table.window_len;

    AugmentedWindow out;
    out.signal_channels = channels;
    out.frequency_pairs = table.frequency_pairs;
    out.window_len = T;
    out.sample_rate_hz = sample_rate_hz;
    out.domain = Domain::q7;
    out.qdata.shape = {out.total_channels(), T};
    out.qdata.data.assign(static_cast<size_t>(out.total_channels()) * T, 0);
    std::copy(window.data.begin(), window.data.end(), out.qdata.data.begin());
    for (int k = 0; k < table.frequency_pairs; ++k) {
        const auto& lut = table.luts[static_cast<size_t>(k)];
        int8_t* srow = &out.qdata.data[static_cast<size_t>(channels + 2 * k) * T];
        int8_t* crow = srow + T;
        for (int64_t t = 0; t < T; ++t) {
            srow[t] = lut.sin_codes[static_cast<size_t>(t % lut.period)];
            crow[t] = lut.cos_codes[static_cast<size_t>(t % lut.period)];
        }
    }
    return out;
}

void dump_pe_table(const PosEncodingTable& table, std::ostream& os) {
    for (int k = 0; k < table.frequency_pairs; ++k) {
        const auto& lut = table.luts[static_cast<size_t>(k)];
        for (int64_t t = 0; t < lut.period; ++t)
            os << k << ' ' << t << ' ' << static_cast<int>(lut.sin_codes[static_cast<size_t>(t)])
               << ' ' << static_cast<int>(lut.cos_codes[static_cast<size_t>(t)]) << '\n';
    }
}

}  // namespace physiolite
