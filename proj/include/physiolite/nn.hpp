#pragma once

#include <cstdint>
#include <vector>

#include "physiolite/error.hpp"

namespace physiolite {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(size_t i) const { return shape[i]; }
};

enum class PadMode { same, valid, explicit_pad };

struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_size = 1;
    int stride = 1;
    PadMode pad_mode = PadMode::same;
    int pad = 0;  // symmetric, used with explicit_pad
    int groups = 1;

    int pad_amount() const {
        switch (pad_mode) {
            case PadMode::same: return (kernel_size - 1) / 2;
            case PadMode::valid: return 0;
            default: return pad;
        }
    }
    int out_len(int in_len) const {
        return (in_len + 2 * pad_amount() - kernel_size) / stride + 1;
    }
    void validate() const;
};

// x: C_in x L, w: C_out x (C_in/groups) x K, bias: C_out (may be empty).
Tensor conv1d_forward(const Tensor& x, const Tensor& w, const std::vector<double>& bias,
                      const ConvSpec& spec);

struct ConvGrads {
    Tensor input;
    Tensor weights;
    std::vector<double> bias;
};
ConvGrads conv1d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w,
                          const ConvSpec& spec, bool has_bias);

Tensor relu_forward(const Tensor& x);
// `ref` may be either the pre-activation or the ReLU output; they share sign.
Tensor relu_backward(const Tensor& grad_out, const Tensor& ref);

Tensor global_avg_pool_forward(const Tensor& x);                 // C x L -> C
Tensor global_avg_pool_backward(const Tensor& grad_out, int length);

// y = W x + b with x,y flat vectors; w: O x I.
Tensor dense_forward(const Tensor& x, const Tensor& w, const std::vector<double>& bias);
struct DenseGrads {
    Tensor input;
    Tensor weights;
    std::vector<double> bias;
};
DenseGrads dense_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w);

// ---------------------------------------------------------------------------
// int8 path
// ---------------------------------------------------------------------------

struct QuantParams {
    double scale = 1.0;
    int32_t zero_point = 0;
};

struct I8Tensor {
    std::vector<int> shape;
    std::vector<int8_t> data;

    I8Tensor() = default;
    explicit I8Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(Tensor::numel_of(shape)), 0);
    }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

// Requantization multiplier m * 2^-shift with an int32 mantissa, so the
// integer path is bit-reproducible across platforms.
struct FixedPointMultiplier {
    int32_t mantissa = 0;
    int shift = 0;
};
FixedPointMultiplier make_fixed_point(double multiplier);
int32_t fixed_point_rescale(int64_t value, const FixedPointMultiplier& m);  // round half up

// int32 accumulation of (q_in - zp_in) * q_w plus int32 bias at scale
// in_scale*w_scale, then fixed-point requantization into out_qp.
I8Tensor conv1d_int8(const I8Tensor& x, const I8Tensor& w, const std::vector<int32_t>& bias,
                     const ConvSpec& spec, QuantParams in_qp, QuantParams w_qp, QuantParams out_qp,
                     bool fuse_relu = false);

I8Tensor add_int8(const I8Tensor& a, QuantParams a_qp, const I8Tensor& b, QuantParams b_qp,
                  QuantParams out_qp);

I8Tensor global_avg_pool_int8(const I8Tensor& x, QuantParams in_qp, QuantParams out_qp);

// Head path: int32 accumulators dequantized directly to real logits.
std::vector<double> dense_int8_dequant(const I8Tensor& x, const I8Tensor& w,
                                       const std::vector<int32_t>& bias, QuantParams in_qp,
                                       QuantParams w_qp);

// Worst-case |accumulator| for the overflow check at model build time.
int64_t conv_acc_bound(const ConvSpec& spec, const std::vector<int32_t>& bias);

}  // namespace physiolite
