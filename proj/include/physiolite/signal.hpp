#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "physiolite/error.hpp"

namespace physiolite {

enum class TaskKind : uint32_t { single_label = 0, multi_label = 1 };

// Raw multi-channel recording, channel-major: data[c * samples_per_channel + t].
struct MultiChannelSignal {
    int channels = 0;
    int64_t samples_per_channel = 0;
    double sample_rate_hz = 0.0;
    std::vector<double> data;

    double& at(int c, int64_t t) { return data[static_cast<size_t>(c) * samples_per_channel + t]; }
    double at(int c, int64_t t) const { return data[static_cast<size_t>(c) * samples_per_channel + t]; }

    // Throws DataError if any invariant is violated (size, rate, finiteness).
    void validate() const;
};

struct WindowSpec {
    int64_t window_len = 0;
    int64_t step = 0;
    bool drop_last_partial = true;
};

// Fixed-length windowed slice, channel-major like its source signal.
struct SignalWindow {
    int channels = 0;
    int64_t window_len = 0;
    double sample_rate_hz = 0.0;
    std::vector<double> data;

    double& at(int c, int64_t t) { return data[static_cast<size_t>(c) * window_len + t]; }
    double at(int c, int64_t t) const { return data[static_cast<size_t>(c) * window_len + t]; }
};

struct BandSpec {
    double center_hz = 0.0;
    double bandwidth_hz = 0.0;
    double amplitude = 1.0;
};

// Recipe for deterministic synthetic datasets. Classes are band-limited
// noise bursts; in order_dependent mode two bursts share their spectra and
// classes differ only by which burst comes first.
struct SyntheticSpec {
    int n_classes = 3;
    int channels = 2;
    int64_t window_len = 128;
    double sample_rate_hz = 128.0;
    std::vector<BandSpec> class_bands;  // one per class (order mode: the two shared bursts)
    double noise_std = 0.3;
    bool order_dependent = false;
    bool qrs_pulses = false;  // add triangular QRS-like spikes on top
    uint64_t seed = 1;
    int n_windows = 150;
};

struct LabeledDataset {
    std::vector<SignalWindow> windows;
    std::vector<int> labels;                          // single-label class indices
    std::vector<std::vector<uint8_t>> multi_labels;   // multi-label bit vectors
    int n_classes = 0;
    TaskKind task_kind = TaskKind::single_label;

    size_t size() const { return windows.size(); }
};

enum class SignalFormat { csv, phsig_binary };

// CSV carries no rate field, so the caller supplies it for that format.
MultiChannelSignal read_signal(const std::string& path, SignalFormat format,
                               double csv_sample_rate_hz = 1.0);
void write_signal(const MultiChannelSignal& signal, const std::string& path, SignalFormat format);

std::vector<SignalWindow> make_windows(const MultiChannelSignal& signal, const WindowSpec& spec);

LabeledDataset gen_synthetic(const SyntheticSpec& spec);

// Dataset container (PHDS binary, see README).
void write_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset read_dataset(const std::string& path);

// Canonical desk-scale benchmarks used by tests and the CLI defaults.
SyntheticSpec standard_spectral_spec(int n_windows = 150, uint64_t seed = 7);
SyntheticSpec order_dependent_spec(int n_windows = 120, uint64_t seed = 7);

}  // namespace physiolite
