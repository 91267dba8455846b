#include "physiolite/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace physiolite {

SignalWindow resample_linear(const SignalWindow& window, double target_rate_hz) {
    if (target_rate_hz <= 0.0) throw DataError("target rate must be positive");
    const int64_t n_in = window.window_len;
    const int64_t n_out = llround(static_cast<double>(n_in) * target_rate_hz / window.sample_rate_hz);
    if (n_out < 2) throw DataError("resampled window would have fewer than 2 samples");

    SignalWindow out;
    out.channels = window.channels;
    out.window_len = n_out;
    out.sample_rate_hz = target_rate_hz;
    out.data.resize(static_cast<size_t>(window.channels) * n_out);

    // one scratch row reused across channels keeps peak extra memory at one channel
    std::vector<double> scratch(static_cast<size_t>(n_out));
    const double ratio = n_in > 1 ? static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1) : 0.0;
    for (int c = 0; c < window.channels; ++c) {
        const double* src = &window.data[static_cast<size_t>(c) * n_in];
        for (int64_t j = 0; j < n_out; ++j) {
            const double pos = static_cast<double>(j) * ratio;
            const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(pos), n_in - 1);
            const int64_t i1 = std::min<int64_t>(i0 + 1, n_in - 1);
            const double frac = pos - static_cast<double>(i0);
            scratch[j] = frac == 0.0 ? src[i0] : src[i0] * (1.0 - frac) + src[i1] * frac;
        }
        std::copy(scratch.begin(), scratch.end(), out.data.begin() + static_cast<size_t>(c) * n_out);
    }
    return out;
}

SignalWindow zero_pad_channels(const SignalWindow& window, int target_channels) {
    if (target_channels < window.channels)
        throw DataError("cannot pad to fewer channels than present");
    SignalWindow out;
    out.channels = target_channels;
    out.window_len = window.window_len;
    out.sample_rate_hz = window.sample_rate_hz;
    out.data.assign(static_cast<size_t>(target_channels) * window.window_len, 0.0);
    std::copy(window.data.begin(), window.data.end(), out.data.begin());
    return out;
}

std::pair<SignalWindow, ChannelStats> zscore_streaming(const SignalWindow& window, double epsilon) {
    if (window.window_len < 2) throw DataError("z-score needs at least 2 samples per channel");
    SignalWindow out = window;
    ChannelStats stats;
    stats.count = window.window_len;
    stats.mean.resize(window.channels);
    stats.variance.resize(window.channels);

    for (int c = 0; c < window.channels; ++c) {
        const double* x = &window.data[static_cast<size_t>(c) * window.window_len];
        // first-sample shift keeps the recurrence accurate for channels with
        // large offsets and tiny deviations
        const double shift = x[0];
        double mean = 0.0, m2 = 0.0;
        for (int64_t t = 0; t < window.window_len; ++t) {
            const double v = x[t] - shift;
            const double delta = v - mean;
            mean += delta / static_cast<double>(t + 1);
            m2 += delta * (v - mean);
        }
        const double var = m2 / static_cast<double>(window.window_len);
        stats.mean[c] = shift + mean;
        stats.variance[c] = var;
        const double inv = 1.0 / std::sqrt(var + epsilon);
        double* y = &out.data[static_cast<size_t>(c) * window.window_len];
        for (int64_t t = 0; t < window.window_len; ++t) y[t] = (x[t] - shift - mean) * inv;
    }
    return {std::move(out), std::move(stats)};
}

SignalWindow minmax_normalize(const SignalWindow& window) {
    if (window.window_len < 1) throw DataError("empty window");
    SignalWindow out = window;
    for (int c = 0; c < window.channels; ++c) {
        const double* x = &window.data[static_cast<size_t>(c) * window.window_len];
        double lo = x[0], hi = x[0];
        for (int64_t t = 1; t < window.window_len; ++t) {
            lo = std::min(lo, x[t]);
            hi = std::max(hi, x[t]);
        }
        double* y = &out.data[static_cast<size_t>(c) * window.window_len];
        if (hi == lo) {
            std::fill(y, y + window.window_len, 0.5);
        } else {
            const double inv = 1.0 / (hi - lo);
            for (int64_t t = 0; t < window.window_len; ++t) y[t] = (x[t] - lo) * inv;
        }
    }
    return out;
}

int8_t quantize_q7_value(double x) {
    if (!std::isfinite(x)) throw DataError("cannot quantize non-finite value");
    const double r = std::round(x * 128.0);  // half away from zero
    return static_cast<int8_t>(std::clamp(r, -128.0, 127.0));
}

Q7Tensor quantize_q7(const std::vector<double>& values, std::vector<int64_t> shape) {
    Q7Tensor q;
    q.shape = shape.empty() ? std::vector<int64_t>{static_cast<int64_t>(values.size())}
                            : std::move(shape);
    if (q.numel() != static_cast<int64_t>(values.size()))
        throw DataError("quantize_q7 shape does not match value count");
    q.data.resize(values.size());
    for (size_t i = 0; i < values.size(); ++i) q.data[i] = quantize_q7_value(values[i]);
    return q;
}

Q7Tensor quantize_q7(const SignalWindow& window) {
    return quantize_q7(window.data, {window.channels, window.window_len});
}

std::vector<double> dequantize_q7(const Q7Tensor& q) {
    std::vector<double> out(q.data.size());
    for (size_t i = 0; i < q.data.size(); ++i)
        out[i] = static_cast<double>(q.data[i]) / 128.0;
    return out;
}

}  // namespace physiolite
