#include "physiolite/nn.hpp"

#include <algorithm>
#include <cmath>

namespace physiolite {

void ConvSpec::validate() const {
    if (in_channels < 1 || out_channels < 1) throw DataError("conv needs positive channel counts");
    if (kernel_size < 1 || stride < 1) throw DataError("conv kernel and stride must be >= 1");
    if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0)
        throw DataError("conv channels must be divisible by groups");
    if (pad_mode == PadMode::explicit_pad && pad < 0) throw DataError("negative padding");
}

namespace {

void check_conv_shapes(const Tensor& x, const Tensor& w, const ConvSpec& s) {
    s.validate();
    if (x.shape.size() != 2 || x.shape[0] != s.in_channels)
        throw DataError("conv input shape mismatch");
    if (w.shape.size() != 3 || w.shape[0] != s.out_channels ||
        w.shape[1] != s.in_channels / s.groups || w.shape[2] != s.kernel_size)
        throw DataError("conv weight shape mismatch");
    if (x.shape[1] + 2 * s.pad_amount() < s.kernel_size)
        throw DataError("conv input shorter than kernel");
}

// valid output range for tap k: 0 <= t*stride - pad + k <= L-1
inline void tap_range(int L, int pad, int k, int stride, int out_len, int& t0, int& t1) {
    t0 = pad > k ? (pad - k + stride - 1) / stride : 0;
    const int hi = L - 1 + pad - k;
    t1 = hi < 0 ? -1 : std::min(hi / stride, out_len - 1);
}

}  // namespace

Tensor conv1d_forward(const Tensor& x, const Tensor& w, const std::vector<double>& bias,
                      const ConvSpec& spec) {
    check_conv_shapes(x, w, spec);
    if (!bias.empty() && static_cast<int>(bias.size()) != spec.out_channels)
        throw DataError("conv bias size mismatch");

    const int L = x.shape[1];
    const int Lout = spec.out_len(L);
    const int pad = spec.pad_amount();
    const int icg = spec.in_channels / spec.groups;
    const int ocg = spec.out_channels / spec.groups;
    const int K = spec.kernel_size;
    const int s = spec.stride;

    Tensor y({spec.out_channels, Lout});
    for (int oc = 0; oc < spec.out_channels; ++oc) {
        double* yrow = &y.data[static_cast<size_t>(oc) * Lout];
        if (!bias.empty()) std::fill(yrow, yrow + Lout, bias[static_cast<size_t>(oc)]);
        const int gi = oc / ocg;
        for (int icl = 0; icl < icg; ++icl) {
            const double* xrow = &x.data[static_cast<size_t>(gi * icg + icl) * L];
            const double* wrow = &w.data[(static_cast<size_t>(oc) * icg + icl) * K];
            for (int k = 0; k < K; ++k) {
                const double wv = wrow[k];
                int t0, t1;
                tap_range(L, pad, k, s, Lout, t0, t1);
                const double* xp = xrow + static_cast<int64_t>(t0) * s - pad + k;
                if (s == 1) {
                    for (int t = t0; t <= t1; ++t) yrow[t] += wv * xp[t - t0];
                } else {
                    for (int t = t0; t <= t1; ++t) yrow[t] += wv * xp[static_cast<int64_t>(t - t0) * s];
                }
            }
        }
    }
    return y;
}

ConvGrads conv1d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w,
                          const ConvSpec& spec, bool has_bias) {
    check_conv_shapes(x, w, spec);
    const int L = x.shape[1];
    const int Lout = spec.out_len(L);
    if (grad_out.shape.size() != 2 || grad_out.shape[0] != spec.out_channels ||
        grad_out.shape[1] != Lout)
        throw DataError("conv grad_out shape mismatch");

    const int pad = spec.pad_amount();
    const int icg = spec.in_channels / spec.groups;
    const int ocg = spec.out_channels / spec.groups;
    const int K = spec.kernel_size;
    const int s = spec.stride;

    ConvGrads g;
    g.input = Tensor(x.shape);
    g.weights = Tensor(w.shape);
    if (has_bias) g.bias.assign(static_cast<size_t>(spec.out_channels), 0.0);

    for (int oc = 0; oc < spec.out_channels; ++oc) {
        const double* go = &grad_out.data[static_cast<size_t>(oc) * Lout];
        if (has_bias) {
            double acc = 0.0;
            for (int t = 0; t < Lout; ++t) acc += go[t];
            g.bias[static_cast<size_t>(oc)] = acc;
        }
        const int gi = oc / ocg;
        for (int icl = 0; icl < icg; ++icl) {
            const int ic = gi * icg + icl;
            const double* xrow = &x.data[static_cast<size_t>(ic) * L];
            const double* wrow = &w.data[(static_cast<size_t>(oc) * icg + icl) * K];
            double* gxrow = &g.input.data[static_cast<size_t>(ic) * L];
            double* gwrow = &g.weights.data[(static_cast<size_t>(oc) * icg + icl) * K];
            for (int k = 0; k < K; ++k) {
                int t0, t1;
                tap_range(L, pad, k, s, Lout, t0, t1);
                const int64_t off = static_cast<int64_t>(t0) * s - pad + k;
                const double* xp = xrow + off;
                double* gxp = gxrow + off;
                double acc = 0.0;
                const double wv = wrow[k];
                if (s == 1) {
                    for (int t = t0; t <= t1; ++t) {
                        acc += go[t] * xp[t - t0];
                        gxp[t - t0] += wv * go[t];
                    }
                } else {
                    for (int t = t0; t <= t1; ++t) {
                        acc += go[t] * xp[static_cast<int64_t>(t - t0) * s];
                        gxp[static_cast<int64_t>(t - t0) * s] += wv * go[t];
                    }
                }
                gwrow[k] += acc;
            }
        }
    }
    return g;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& ref) {
    if (grad_out.data.size() != ref.data.size()) throw DataError("relu gradient shape mismatch");
    Tensor g = grad_out;
    for (size_t i = 0; i < g.data.size(); ++i)
        if (!(ref.data[i] > 0.0)) g.data[i] = 0.0;
    return g;
}

Tensor global_avg_pool_forward(const Tensor& x) {
    if (x.shape.size() != 2 || x.shape[1] < 1) throw DataError("pool input must be C x L");
    const int C = x.shape[0], L = x.shape[1];
    Tensor y({C});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* row = &x.data[static_cast<size_t>(c) * L];
        for (int t = 0; t < L; ++t) acc += row[t];
        y.data[static_cast<size_t>(c)] = acc / L;
    }
    return y;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, int length) {
    const int C = grad_out.shape[0];
    Tensor g({C, length});
    for (int c = 0; c < C; ++c) {
        const double v = grad_out.data[static_cast<size_t>(c)] / length;
        std::fill_n(&g.data[static_cast<size_t>(c) * length], length, v);
    }
    return g;
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const std::vector<double>& bias) {
    if (w.shape.size() != 2 || x.numel() != w.shape[1]) throw DataError("dense shape mismatch");
    const int O = w.shape[0], I = w.shape[1];
    Tensor y({O});
    for (int o = 0; o < O; ++o) {
        double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(o)];
        const double* wrow = &w.data[static_cast<size_t>(o) * I];
        for (int i = 0; i < I; ++i) acc += wrow[i] * x.data[static_cast<size_t>(i)];
        y.data[static_cast<size_t>(o)] = acc;
    }
    return y;
}

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w) {
    const int O = w.shape[0], I = w.shape[1];
    if (grad_out.numel() != O || x.numel() != I) throw DataError("dense gradient shape mismatch");
    DenseGrads g;
    g.input = Tensor({I});
    g.weights = Tensor(w.shape);
    g.bias.assign(static_cast<size_t>(O), 0.0);
    for (int o = 0; o < O; ++o) {
        const double go = grad_out.data[static_cast<size_t>(o)];
        g.bias[static_cast<size_t>(o)] = go;
        const double* wrow = &w.data[static_cast<size_t>(o) * I];
        double* gwrow = &g.weights.data[static_cast<size_t>(o) * I];
        for (int i = 0; i < I; ++i) {
            gwrow[i] = go * x.data[static_cast<size_t>(i)];
            g.input.data[static_cast<size_t>(i)] += go * wrow[i];
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// int8 path
// ---------------------------------------------------------------------------

FixedPointMultiplier make_fixed_point(double multiplier) {
    if (!(multiplier > 0.0) || !std::isfinite(multiplier))
        throw DataError("requant multiplier must be positive and finite");
    int exp = 0;
    const double frac = std::frexp(multiplier, &exp);  // multiplier = frac * 2^exp
    int64_t mant = llround(frac * 2147483648.0);       // frac in [0.5, 1) -> [2^30, 2^31]
    if (mant == (int64_t(1) << 31)) {
        mant >>= 1;
        ++exp;
    }
    FixedPointMultiplier m;
    m.mantissa = static_cast<int32_t>(mant);
    m.shift = 31 - exp;
    if (m.shift < 1) throw DataError("requant multiplier too large");
    return m;
}

int32_t fixed_point_rescale(int64_t value, const FixedPointMultiplier& m) {
    if (m.shift > 62) return 0;
    const int64_t prod = value * static_cast<int64_t>(m.mantissa);
    const int64_t half = int64_t(1) << (m.shift - 1);
    return static_cast<int32_t>((prod + half) >> m.shift);
}

namespace {

inline int8_t saturate_i8(int32_t v) {
    return static_cast<int8_t>(std::clamp(v, -128, 127));
}

void check_conv_shapes_i8(const I8Tensor& x, const I8Tensor& w, const ConvSpec& s) {
    s.validate();
    if (x.shape.size() != 2 || x.shape[0] != s.in_channels)
        throw DataError("int8 conv input shape mismatch");
    if (w.shape.size() != 3 || w.shape[0] != s.out_channels ||
        w.shape[1] != s.in_channels / s.groups || w.shape[2] != s.kernel_size)
        throw DataError("int8 conv weight shape mismatch");
}

}  // namespace

I8Tensor conv1d_int8(const I8Tensor& x, const I8Tensor& w, const std::vector<int32_t>& bias,
                     const ConvSpec& spec, QuantParams in_qp, QuantParams w_qp, QuantParams out_qp,
                     bool fuse_relu) {
    check_conv_shapes_i8(x, w, spec);
    const int L = x.shape[1];
    const int Lout = spec.out_len(L);
    const int pad = spec.pad_amount();
    const int icg = spec.in_channels / spec.groups;
    const int ocg = spec.out_channels / spec.groups;
    const int K = spec.kernel_size;
    const int s = spec.stride;
    const FixedPointMultiplier m = make_fixed_point(in_qp.scale * w_qp.scale / out_qp.scale);

    I8Tensor y({spec.out_channels, Lout});
    std::vector<int32_t> acc(static_cast<size_t>(Lout));
    for (int oc = 0; oc < spec.out_channels; ++oc) {
        std::fill(acc.begin(), acc.end(), bias.empty() ? 0 : bias[static_cast<size_t>(oc)]);
        const int gi = oc / ocg;
        for (int icl = 0; icl < icg; ++icl) {
            const int8_t* xrow = &x.data[static_cast<size_t>(gi * icg + icl) * L];
            const int8_t* wrow = &w.data[(static_cast<size_t>(oc) * icg + icl) * K];
            for (int k = 0; k < K; ++k) {
                const int32_t wv = wrow[k];
                int t0, t1;
                tap_range(L, pad, k, s, Lout, t0, t1);
                const int8_t* xp = xrow + static_cast<int64_t>(t0) * s - pad + k;
                for (int t = t0; t <= t1; ++t)
                    acc[static_cast<size_t>(t)] +=
                        (static_cast<int32_t>(xp[static_cast<int64_t>(t - t0) * s]) - in_qp.zero_point) * wv;
                // out-of-range taps read the zero point, contributing nothing
            }
        }
        int8_t* yrow = &y.data[static_cast<size_t>(oc) * Lout];
        for (int t = 0; t < Lout; ++t) {
            int32_t q = fixed_point_rescale(acc[static_cast<size_t>(t)], m) + out_qp.zero_point;
            if (fuse_relu) q = std::max(q, out_qp.zero_point);
            yrow[t] = saturate_i8(q);
        }
    }
    return y;
}

I8Tensor add_int8(const I8Tensor& a, QuantParams a_qp, const I8Tensor& b, QuantParams b_qp,
                  QuantParams out_qp) {
    if (a.shape != b.shape) throw DataError("int8 add shape mismatch");
    const FixedPointMultiplier ma = make_fixed_point(a_qp.scale / out_qp.scale);
    const FixedPointMultiplier mb = make_fixed_point(b_qp.scale / out_qp.scale);
    I8Tensor y(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) {
        const int32_t ra = fixed_point_rescale(a.data[i] - a_qp.zero_point, ma);
        const int32_t rb = fixed_point_rescale(b.data[i] - b_qp.zero_point, mb);
        y.data[i] = saturate_i8(ra + rb + out_qp.zero_point);
    }
    return y;
}

I8Tensor global_avg_pool_int8(const I8Tensor& x, QuantParams in_qp, QuantParams out_qp) {
    if (x.shape.size() != 2 || x.shape[1] < 1) throw DataError("int8 pool input must be C x L");
    const int C = x.shape[0], L = x.shape[1];
    const FixedPointMultiplier m = make_fixed_point(in_qp.scale / (L * out_qp.scale));
    I8Tensor y({C});
    for (int c = 0; c < C; ++c) {
        int32_t acc = 0;
        const int8_t* row = &x.data[static_cast<size_t>(c) * L];
        for (int t = 0; t < L; ++t) acc += static_cast<int32_t>(row[t]) - in_qp.zero_point;
        y.data[static_cast<size_t>(c)] = saturate_i8(fixed_point_rescale(acc, m) + out_qp.zero_point);
    }
    return y;
}

std::vector<double> dense_int8_dequant(const I8Tensor& x, const I8Tensor& w,
                                       const std::vector<int32_t>& bias, QuantParams in_qp,
                                       QuantParams w_qp) {
    if (w.shape.size() != 2 || x.numel() != w.shape[1]) throw DataError("int8 dense shape mismatch");
    const int O = w.shape[0], I = w.shape[1];
    std::vector<double> logits(static_cast<size_t>(O));
    for (int o = 0; o < O; ++o) {
        int32_t acc = bias.empty() ? 0 : bias[static_cast<size_t>(o)];
        const int8_t* wrow = &w.data[static_cast<size_t>(o) * I];
        for (int i = 0; i < I; ++i)
            acc += (static_cast<int32_t>(x.data[static_cast<size_t>(i)]) - in_qp.zero_point) * wrow[i];
        logits[static_cast<size_t>(o)] = static_cast<double>(acc) * in_qp.scale * w_qp.scale;
    }
    return logits;
}

int64_t conv_acc_bound(const ConvSpec& spec, const std::vector<int32_t>& bias) {
    int64_t max_bias = 0;
    for (int32_t b : bias) max_bias = std::max<int64_t>(max_bias, std::abs(static_cast<int64_t>(b)));
    return static_cast<int64_t>(spec.kernel_size) * (spec.in_channels / spec.groups) * 255 * 127 +
           max_bias;
}

}  // namespace physiolite
