#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "physiolite/preprocess.hpp"
#include "physiolite/signal.hpp"

namespace physiolite {

// Precomputed Q7 sin/cos lookup tables over reusable base periods.
// Frequency k has period T / 2^k when 2^k divides T; otherwise the table
// falls back to the full window length.
struct PosEncodingTable {
    int64_t window_len = 0;  // T
    int frequency_pairs = 0;  // F
    double alpha = 0.1;

    struct Lut {
        int64_t period = 0;
        bool fallback = false;
        std::vector<int8_t> sin_codes;
        std::vector<int8_t> cos_codes;
    };
    std::vector<Lut> luts;

    int64_t total_bytes() const {
        int64_t n = 0;
        for (const auto& l : luts)
            n += static_cast<int64_t>(l.sin_codes.size() + l.cos_codes.size());
        return n;
    }
};

enum class Domain { real_valued, q7 };

// Window with 2F positional channels appended after the C signal channels,
// ordered (sin k=0, cos k=0, sin k=1, ...).
struct AugmentedWindow {
    int signal_channels = 0;
    int frequency_pairs = 0;
    int64_t window_len = 0;
    double sample_rate_hz = 0.0;
    Domain domain = Domain::real_valued;
    std::vector<double> fdata;  // real domain, (C+2F) x T
    Q7Tensor qdata;             // q7 domain

    int total_channels() const { return signal_channels + 2 * frequency_pairs; }
};

// (sin(2pi 2^k t / T), cos(2pi 2^k t / T)) with the phase reduced in exact
// integer arithmetic, so table entries and direct evaluation agree bit for bit.
std::pair<double, double> pe_value(int64_t t, int k, int64_t T);

PosEncodingTable build_pe_tables(int64_t T, int F, double alpha);

// Reference path: float signal, positional channels are alpha-scaled floats.
AugmentedWindow encode_positions(const PosEncodingTable& table, const SignalWindow& window);
// Device path: Q7 signal, positional channels streamed from the tables.
AugmentedWindow encode_positions(const PosEncodingTable& table, const Q7Tensor& window,
                                 double sample_rate_hz);

// Debug dump, one line per (k, t): "k t sin_code cos_code".
void dump_pe_table(const PosEncodingTable& table, std::ostream& os);

}  // namespace physiolite
