#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "physiolite/model.hpp"
#include "physiolite/signal.hpp"

namespace physiolite {

// Five-stage host-side latency breakdown. Stage boundaries are shared
// timestamps of one pass, so the per-pass end-to-end time equals the sum of
// the stage times exactly.
struct LatencyReport {
    static constexpr int kStages = 5;
    static const std::array<const char*, kStages>& stage_names();  // fixed order

    int repeats = 0;
    std::array<std::vector<double>, kStages> stage_ms;  // per-repeat samples
    std::vector<double> end_to_end_ms;

    double stage_mean(int s) const;
    double stage_std(int s) const;
    double end_to_end_mean() const;
    double end_to_end_std() const;

    bool operator==(const LatencyReport& other) const;
};

enum class ReportFormat { text_table, json_lines };

// Runs resample -> z-norm/quantize -> positional encoding -> tile pack ->
// int8 inference on the host, one warmup pass excluded from statistics.
LatencyReport profile_pipeline(const MultiChannelSignal& input, const QuantizedModel& qmodel,
                               int repeats = 10, int tile_width = 64);

std::string emit_report(const LatencyReport& report, ReportFormat format);
LatencyReport parse_report(const std::string& json_lines);

// Sidecar written next to every artifact a CLI run produces.
struct RunManifest {
    std::string command;
    std::string config_json;
    uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::pair<std::string, uint32_t>> artifacts;  // path, crc32
    std::string timestamp;
};
void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace physiolite
