#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "physiolite/signal.hpp"

namespace physiolite {

// Signed 8-bit fixed point with 7 fractional bits: value = code / 128.
struct Q7Tensor {
    std::vector<int64_t> shape;
    std::vector<int8_t> data;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
};

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> variance;  // population (/N)
    int64_t count = 0;
};

// Endpoint-preserving linear interpolation onto round(len * target/source) samples.
SignalWindow resample_linear(const SignalWindow& window, double target_rate_hz);

SignalWindow zero_pad_channels(const SignalWindow& window, int target_channels);

// Single Welford pass per channel; returned stats are pre-normalization.
std::pair<SignalWindow, ChannelStats> zscore_streaming(const SignalWindow& window,
                                                       double epsilon = 1e-6);

SignalWindow minmax_normalize(const SignalWindow& window);

int8_t quantize_q7_value(double x);
Q7Tensor quantize_q7(const std::vector<double>& values, std::vector<int64_t> shape = {});
Q7Tensor quantize_q7(const SignalWindow& window);
std::vector<double> dequantize_q7(const Q7Tensor& q);

}  // namespace physiolite
