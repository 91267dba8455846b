#include "physiolite/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "physiolite/crc32.hpp"
#include "physiolite/rng.hpp"

namespace physiolite {

void ModelConfig::validate() const {
    if (signal_channels < 1) throw DataError("model needs at least one signal channel");
    if (pe_frequencies < 1) throw DataError("model needs at least one positional frequency pair");
    if (window_len < 4) throw DataError("window length too small");
    if (n_classes < 2) throw DataError("model needs at least two classes");
    if (kernel_set.empty()) throw DataError("kernel set must be nonempty");
    for (int k : kernel_set)
        if (k < 1 || k % 2 == 0) throw DataError("kernel sizes must be odd and positive");
    if (stem_channels < 1 || branch_channels < 1 || mix_channels < 1 || embed_dim < 1)
        throw DataError("channel widths must be positive");
    if (depth < 1) throw DataError("depth must be at least 1");
    if (expansion_ratio < 1) throw DataError("expansion ratio must be at least 1");
    if (!(pe_alpha > 0.0 && pe_alpha <= 1.0)) throw DataError("pe_alpha must be in (0, 1]");
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

ConvSpec pointwise(int in_c, int out_c) {
    ConvSpec s;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel_size = 1;
    s.pad_mode = PadMode::valid;
    return s;
}

ConvSpec branch_spec(int in_c, int out_c, int k) {
    ConvSpec s;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel_size = k;
    s.stride = 2;
    s.pad_mode = PadMode::same;
    return s;
}

ConvSpec depthwise3(int channels) {
    ConvSpec s;
    s.in_channels = channels;
    s.out_channels = channels;
    s.kernel_size = 3;
    s.pad_mode = PadMode::same;
    s.groups = channels;
    return s;
}

void init_conv(Model::ConvLayer& layer, bool with_bias, bool relu, Rng& rng) {
    const auto& s = layer.spec;
    layer.w = Tensor({s.out_channels, s.in_channels / s.groups, s.kernel_size});
    const double fan_in = static_cast<double>(s.in_channels / s.groups) * s.kernel_size;
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& v : layer.w.data) v = rng.uniform(-bound, bound);
    if (with_bias) layer.b.assign(static_cast<size_t>(s.out_channels), 0.0);
    layer.relu = relu;
}

int64_t weight_element_count(const ModelConfig& c) {
    int64_t n = static_cast<int64_t>(c.in_channels()) * c.stem_channels;
    for (int k : c.kernel_set) n += static_cast<int64_t>(c.stem_channels) * c.branch_channels * k;
    n += static_cast<int64_t>(c.kernel_set.size()) * c.branch_channels * c.mix_channels;
    const int64_t e = static_cast<int64_t>(c.mix_channels) * c.expansion_ratio;
    n += c.depth * (static_cast<int64_t>(c.mix_channels) * e + e * 3 + e * c.mix_channels);
    n += static_cast<int64_t>(c.mix_channels) * c.embed_dim;
    n += static_cast<int64_t>(c.embed_dim) * c.n_classes;
    return n;
}

}  // namespace

Model build_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    Rng rng(seed);

    m.stem.name = "stem";
    m.stem.spec = pointwise(config.in_channels(), config.stem_channels);
    init_conv(m.stem, true, true, rng);

    for (size_t i = 0; i < config.kernel_set.size(); ++i) {
        Model::ConvLayer br;
        br.name = "branch" + std::to_string(i);
        br.spec = branch_spec(config.stem_channels, config.branch_channels, config.kernel_set[i]);
        init_conv(br, true, true, rng);
        m.branches.push_back(std::move(br));
    }

    const int cat_channels = static_cast<int>(config.kernel_set.size()) * config.branch_channels;
    m.proj.name = "proj";
    m.proj.spec = pointwise(cat_channels, config.mix_channels);
    init_conv(m.proj, true, true, rng);

    const int expanded = config.mix_channels * config.expansion_ratio;
    for (int d = 0; d < config.depth; ++d) {
        Model::Block blk;
        const std::string base = "block" + std::to_string(d) + ".";
        blk.expand.name = base + "expand";
        blk.expand.spec = pointwise(config.mix_channels, expanded);
        init_conv(blk.expand, false, false, rng);
        blk.dw.name = base + "dw";
        blk.dw.spec = depthwise3(expanded);
        init_conv(blk.dw, false, true, rng);
        blk.project.name = base + "project";
        blk.project.spec = pointwise(expanded, config.mix_channels);
        init_conv(blk.project, false, false, rng);
        m.blocks.push_back(std::move(blk));
    }

    m.embed.name = "embed";
    m.embed.spec = pointwise(config.mix_channels, config.embed_dim);
    init_conv(m.embed, true, true, rng);

    m.head_w = Tensor({config.n_classes, config.embed_dim});
    const double bound = std::sqrt(6.0 / config.embed_dim);
    for (double& v : m.head_w.data) v = rng.uniform(-bound, bound);
    m.head_b.assign(static_cast<size_t>(config.n_classes), 0.0);

    snap_params_f32(m);
    m.budget_warning = weight_element_count(config) > 442 * 1024;
    return m;
}

std::vector<ParamRef> param_refs(Model& m) {
    std::vector<ParamRef> refs;
    auto add_layer = [&](Model::ConvLayer& l) {
        refs.push_back({l.name + ".w", &l.w.data});
        if (!l.b.empty()) refs.push_back({l.name + ".b", &l.b});
    };
    add_layer(m.stem);
    for (auto& br : m.branches) add_layer(br);
    add_layer(m.proj);
    for (auto& blk : m.blocks) {
        add_layer(blk.expand);
        add_layer(blk.dw);
        add_layer(blk.project);
    }
    add_layer(m.embed);
    refs.push_back({"head.w", &m.head_w.data});
    refs.push_back({"head.b", &m.head_b});
    return refs;
}

std::vector<std::vector<double>> zero_grads(const Model& m) {
    auto refs = param_refs(const_cast<Model&>(m));
    std::vector<std::vector<double>> grads(refs.size());
    for (size_t i = 0; i < refs.size(); ++i) grads[i].assign(refs[i].values->size(), 0.0);
    return grads;
}

int64_t count_params(const Model& m) {
    int64_t n = 0;
    for (const auto& r : param_refs(const_cast<Model&>(m))) n += static_cast<int64_t>(r.values->size());
    return n;
}

void snap_params_f32(Model& m) {
    for (auto& r : param_refs(m))
        for (double& v : *r.values) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

std::vector<double> Model::forward(const Tensor& input, Cache* cache) const {
    if (input.shape.size() != 2 || input.shape[0] != config.in_channels() ||
        input.shape[1] != config.window_len)
        throw DataError("model input shape mismatch");

    Tensor a = relu_forward(conv1d_forward(input, stem.w, stem.b, stem.spec));
    if (cache) {
        cache->input = input;
        cache->stem_out = a;
    }

    const int t2 = branches.front().spec.out_len(config.window_len);
    Tensor cat({static_cast<int>(branches.size()) * config.branch_channels, t2});
    for (size_t i = 0; i < branches.size(); ++i) {
        Tensor b = relu_forward(conv1d_forward(a, branches[i].w, branches[i].b, branches[i].spec));
        std::copy(b.data.begin(), b.data.end(),
                  cat.data.begin() + static_cast<int64_t>(i) * config.branch_channels * t2);
    }
    if (cache) cache->concat = cat;

    Tensor h = relu_forward(conv1d_forward(cat, proj.w, proj.b, proj.spec));
    if (cache) cache->proj_out = h;

    if (cache) cache->blocks.resize(blocks.size());
    for (size_t d = 0; d < blocks.size(); ++d) {
        const auto& blk = blocks[d];
        Tensor e = conv1d_forward(h, blk.expand.w, blk.expand.b, blk.expand.spec);
        Tensor dw = relu_forward(conv1d_forward(e, blk.dw.w, blk.dw.b, blk.dw.spec));
        Tensor p = conv1d_forward(dw, blk.project.w, blk.project.b, blk.project.spec);
        Tensor sum = p;
        for (size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += h.data[i];
        if (cache) {
            auto& bc = cache->blocks[d];
            bc.input = h;
            bc.expand_out = std::move(e);
            bc.dw_out = std::move(dw);
            bc.project_out = std::move(p);
            bc.add_out = sum;
        }
        h = std::move(sum);
    }

    Tensor em = relu_forward(conv1d_forward(h, embed.w, embed.b, embed.spec));
    Tensor g = global_avg_pool_forward(em);
    Tensor logits_t = dense_forward(g, head_w, head_b);
    if (cache) {
        cache->embed_out = std::move(em);
        cache->gap_out = std::move(g);
        cache->logits = logits_t.data;
    }
    return logits_t.data;
}

void Model::backward(const Cache& cache, const std::vector<double>& grad_logits,
                     std::vector<std::vector<double>>& grads) const {
    std::map<std::string, size_t> index;
    {
        size_t i = 0;
        auto names = param_refs(const_cast<Model&>(*this));
        for (auto& r : names) index[r.name] = i++;
    }
    auto acc = [&](const std::string& name, const std::vector<double>& g) {
        auto& dst = grads[index.at(name)];
        for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };

    // head
    Tensor glog({static_cast<int>(grad_logits.size())},
                std::vector<double>(grad_logits.begin(), grad_logits.end()));
    DenseGrads dg = dense_backward(glog, cache.gap_out, head_w);
    acc("head.w", dg.weights.data);
    acc("head.b", dg.bias);

    // pool + embed
    const int t2 = cache.embed_out.shape[1];
    Tensor dem = global_avg_pool_backward(dg.input, t2);
    dem = relu_backward(dem, cache.embed_out);
    const Tensor& embed_in = blocks.empty() ? cache.proj_out : cache.blocks.back().add_out;
    ConvGrads ge = conv1d_backward(dem, embed_in, embed.w, embed.spec, !embed.b.empty());
    acc("embed.w", ge.weights.data);
    acc("embed.b", ge.bias);

    Tensor dh = std::move(ge.input);
    for (size_t d = blocks.size(); d-- > 0;) {
        const auto& blk = blocks[d];
        const auto& bc = cache.blocks[d];
        // residual: grad flows into project output and straight through
        ConvGrads gp = conv1d_backward(dh, bc.dw_out, blk.project.w, blk.project.spec, false);
        acc(blk.project.name + ".w", gp.weights.data);
        Tensor dd = relu_backward(gp.input, bc.dw_out);
        ConvGrads gdw = conv1d_backward(dd, bc.expand_out, blk.dw.w, blk.dw.spec, false);
        acc(blk.dw.name + ".w", gdw.weights.data);
        ConvGrads gex = conv1d_backward(gdw.input, bc.input, blk.expand.w, blk.expand.spec, false);
        acc(blk.expand.name + ".w", gex.weights.data);
        for (size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += gex.input.data[i];
    }

    Tensor da2 = relu_backward(dh, cache.proj_out);
    ConvGrads gproj = conv1d_backward(da2, cache.concat, proj.w, proj.spec, true);
    acc("proj.w", gproj.weights.data);
    acc("proj.b", gproj.bias);

    // split concat gradient back into branches
    Tensor da1(cache.stem_out.shape);
    const int bt2 = gproj.input.shape[1];
    for (size_t i = 0; i < branches.size(); ++i) {
        Tensor db({config.branch_channels, bt2});
        Tensor bref({config.branch_channels, bt2});
        const int64_t off = static_cast<int64_t>(i) * config.branch_channels * bt2;
        std::copy_n(gproj.input.data.begin() + off, db.data.size(), db.data.begin());
        std::copy_n(cache.concat.data.begin() + off, bref.data.size(), bref.data.begin());
        db = relu_backward(db, bref);
        ConvGrads gb = conv1d_backward(db, cache.stem_out, branches[i].w, branches[i].spec, true);
        acc(branches[i].name + ".w", gb.weights.data);
        acc(branches[i].name + ".b", gb.bias);
        for (size_t j = 0; j < da1.data.size(); ++j) da1.data[j] += gb.input.data[j];
    }

    da1 = relu_backward(da1, cache.stem_out);
    ConvGrads gs = conv1d_backward(da1, cache.input, stem.w, stem.spec, true);
    acc("stem.w", gs.weights.data);
    acc("stem.b", gs.bias);
}

Tensor window_to_tensor(const AugmentedWindow& window) {
    const int c = window.total_channels();
    const int t = static_cast<int>(window.window_len);
    if (window.domain == Domain::real_valued)
        return Tensor({c, t}, window.fdata);
    std::vector<double> deq = dequantize_q7(window.qdata);
    return Tensor({c, t}, std::move(deq));
}

std::vector<double> infer_float(const Model& m, const AugmentedWindow& window) {
    return m.forward(window_to_tensor(window));
}

std::vector<std::vector<double>> infer_float_batch(const Model& m,
                                                   const std::vector<Tensor>& inputs) {
    std::vector<std::vector<double>> out;
    out.reserve(inputs.size());
    for (const auto& x : inputs) out.push_back(m.forward(x));
    return out;
}

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

namespace {

struct MinMax {
    double lo = 0.0, hi = 0.0;
    bool seen = false;
    void update(const std::vector<double>& v) {
        for (double x : v) {
            if (!seen) {
                lo = hi = x;
                seen = true;
            } else {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        }
    }
    QuantParams to_qp() const {
        // range always spans zero so the zero point is representable
        const double mn = std::min(lo, 0.0), mx = std::max(hi, 0.0);
        double scale = (mx - mn) / 255.0;
        if (scale < 1e-8) scale = 1e-8;
        const int32_t zp = static_cast<int32_t>(
            std::clamp(std::lround(-128.0 - mn / scale), long(-128), long(127)));
        return {scale, zp};
    }
};

struct WeightQuant {
    I8Tensor q;
    QuantParams qp;
};

WeightQuant quantize_weights(const Tensor& w) {
    double peak = 0.0;
    for (double v : w.data) peak = std::max(peak, std::abs(v));
    double scale = peak / 127.0;
    if (scale < 1e-8) scale = 1e-8;  // degenerate all-zero tensor
    WeightQuant out;
    out.qp = {scale, 0};
    out.q.shape = w.shape;
    out.q.data.resize(w.data.size());
    for (size_t i = 0; i < w.data.size(); ++i)
        out.q.data[i] = static_cast<int8_t>(
            std::clamp(std::round(w.data[i] / scale), -128.0, 127.0));
    return out;
}

std::vector<int32_t> quantize_bias(const std::vector<double>& b, double in_scale, double w_scale) {
    std::vector<int32_t> out(b.size());
    const double s = in_scale * w_scale;
    for (size_t i = 0; i < b.size(); ++i) {
        const double q = std::round(b[i] / s);
        out[i] = static_cast<int32_t>(std::clamp(q, -2147483648.0, 2147483647.0));
    }
    return out;
}

QuantizedModel::QLayer quantize_layer(const Model::ConvLayer& l, double in_scale,
                                      QuantParams out_qp) {
    QuantizedModel::QLayer q;
    q.name = l.name;
    q.spec = l.spec;
    auto wq = quantize_weights(l.w);
    q.w = std::move(wq.q);
    q.w_qp = wq.qp;
    if (!l.b.empty()) q.bias = quantize_bias(l.b, in_scale, wq.qp.scale);
    q.out_qp = out_qp;
    q.relu = l.relu;
    if (conv_acc_bound(q.spec, q.bias) >= (int64_t(1) << 31))
        throw DataError("int8 accumulator bound exceeded for layer " + l.name);
    return q;
}

}  // namespace

QuantizedModel calibrate_and_quantize(const Model& m, const std::vector<Tensor>& calibration) {
    if (calibration.empty()) throw DataError("calibration set must not be empty");

    // running min/max over calibration forward passes
    MinMax stem_mm, concat_mm, proj_mm, embed_mm, gap_mm, head_mm;
    std::vector<MinMax> expand_mm(m.blocks.size()), dw_mm(m.blocks.size()),
        project_mm(m.blocks.size()), add_mm(m.blocks.size());
    for (const auto& x : calibration) {
        Model::Cache cache;
        m.forward(x, &cache);
        stem_mm.update(cache.stem_out.data);
        concat_mm.update(cache.concat.data);
        proj_mm.update(cache.proj_out.data);
        for (size_t d = 0; d < m.blocks.size(); ++d) {
            expand_mm[d].update(cache.blocks[d].expand_out.data);
            dw_mm[d].update(cache.blocks[d].dw_out.data);
            project_mm[d].update(cache.blocks[d].project_out.data);
            add_mm[d].update(cache.blocks[d].add_out.data);
        }
        embed_mm.update(cache.embed_out.data);
        gap_mm.update(cache.gap_out.data);
        head_mm.update(cache.logits);
    }

    QuantizedModel qm;
    qm.config = m.config;
    qm.stem = quantize_layer(m.stem, qm.input_qp.scale, stem_mm.to_qp());
    const QuantParams concat_qp = concat_mm.to_qp();
    for (const auto& br : m.branches)
        qm.branches.push_back(quantize_layer(br, qm.stem.out_qp.scale, concat_qp));
    qm.proj = quantize_layer(m.proj, concat_qp.scale, proj_mm.to_qp());

    QuantParams h_qp = qm.proj.out_qp;
    for (size_t d = 0; d < m.blocks.size(); ++d) {
        QuantizedModel::QBlock qb;
        qb.expand = quantize_layer(m.blocks[d].expand, h_qp.scale, expand_mm[d].to_qp());
        qb.dw = quantize_layer(m.blocks[d].dw, qb.expand.out_qp.scale, dw_mm[d].to_qp());
        qb.project = quantize_layer(m.blocks[d].project, qb.dw.out_qp.scale, project_mm[d].to_qp());
        qb.add_qp = add_mm[d].to_qp();
        h_qp = qb.add_qp;
        qm.blocks.push_back(std::move(qb));
    }

    qm.embed = quantize_layer(m.embed, h_qp.scale, embed_mm.to_qp());
    qm.gap_qp = gap_mm.to_qp();
    auto hw = quantize_weights(m.head_w);
    qm.head_w = std::move(hw.q);
    qm.head_w_qp = hw.qp;
    qm.head_bias = quantize_bias(m.head_b, qm.gap_qp.scale, hw.qp.scale);
    qm.head_out_qp = head_mm.to_qp();
    return qm;
}

std::vector<double> infer_int8(const QuantizedModel& qm, const I8Tensor& input) {
    if (input.shape.size() != 2 || input.shape[0] != qm.config.in_channels() ||
        input.shape[1] != qm.config.window_len)
        throw DataError("quantized model input shape mismatch");

    I8Tensor a = conv1d_int8(input, qm.stem.w, qm.stem.bias, qm.stem.spec, qm.input_qp,
                             qm.stem.w_qp, qm.stem.out_qp, true);

    const int t2 = qm.branches.front().spec.out_len(qm.config.window_len);
    I8Tensor cat({static_cast<int>(qm.branches.size()) * qm.config.branch_channels, t2});
    for (size_t i = 0; i < qm.branches.size(); ++i) {
        const auto& br = qm.branches[i];
        I8Tensor b = conv1d_int8(a, br.w, br.bias, br.spec, qm.stem.out_qp, br.w_qp, br.out_qp, true);
        std::copy(b.data.begin(), b.data.end(),
                  cat.data.begin() + static_cast<int64_t>(i) * qm.config.branch_channels * t2);
    }

    QuantParams h_qp = qm.proj.out_qp;
    I8Tensor h = conv1d_int8(cat, qm.proj.w, qm.proj.bias, qm.proj.spec, qm.branches.front().out_qp,
                             qm.proj.w_qp, qm.proj.out_qp, true);

    for (const auto& qb : qm.blocks) {
        I8Tensor e = conv1d_int8(h, qb.expand.w, qb.expand.bias, qb.expand.spec, h_qp,
                                 qb.expand.w_qp, qb.expand.out_qp, false);
        I8Tensor d = conv1d_int8(e, qb.dw.w, qb.dw.bias, qb.dw.spec, qb.expand.out_qp, qb.dw.w_qp,
                                 qb.dw.out_qp, true);
        I8Tensor p = conv1d_int8(d, qb.project.w, qb.project.bias, qb.project.spec, qb.dw.out_qp,
                                 qb.project.w_qp, qb.project.out_qp, false);
        h = add_int8(h, h_qp, p, qb.project.out_qp, qb.add_qp);
        h_qp = qb.add_qp;
    }

    I8Tensor em = conv1d_int8(h, qm.embed.w, qm.embed.bias, qm.embed.spec, h_qp, qm.embed.w_qp,
                              qm.embed.out_qp, true);
    I8Tensor g = global_avg_pool_int8(em, qm.embed.out_qp, qm.gap_qp);
    return dense_int8_dequant(g, qm.head_w, qm.head_bias, qm.gap_qp, qm.head_w_qp);
}

std::vector<double> infer_int8(const QuantizedModel& qm, const AugmentedWindow& q7_window) {
    if (q7_window.domain != Domain::q7) throw DataError("int8 inference needs a q7 window");
    I8Tensor input;
    input.shape = {static_cast<int>(q7_window.qdata.shape[0]),
                   static_cast<int>(q7_window.qdata.shape[1])};
    input.data = q7_window.qdata.data;
    return infer_int8(qm, input);
}

// ---------------------------------------------------------------------------
// Budget
// ---------------------------------------------------------------------------

BudgetReport budget_report(const ModelConfig& config) {
    config.validate();
    const int64_t T = config.window_len;
    ConvSpec bs = branch_spec(config.stem_channels, config.branch_channels, config.kernel_set[0]);
    const int64_t T2 = bs.out_len(static_cast<int>(T));
    const int64_t nk = static_cast<int64_t>(config.kernel_set.size());
    const int64_t E = static_cast<int64_t>(config.mix_channels) * config.expansion_ratio;
    const int64_t M = config.mix_channels, D = config.embed_dim;
    const int64_t Cin = config.in_channels(), S = config.stem_channels, B = config.branch_channels;

    struct Layer {
        int64_t w, b, in, out;
    };
    std::vector<Layer> layers;
    layers.push_back({Cin * S, S, Cin * T, S * T});                        // stem
    int64_t branch_w = 0;
    for (int k : config.kernel_set) branch_w += S * B * k;
    layers.push_back({branch_w, nk * B, S * T, nk * B * T2});              // branches + concat
    layers.push_back({nk * B * M, M, nk * B * T2, M * T2});                // proj
    for (int d = 0; d < config.depth; ++d) {
        layers.push_back({M * E, 0, M * T2, E * T2});                      // expand
        layers.push_back({E * 3, 0, E * T2, E * T2});                      // depthwise
        layers.push_back({E * M, 0, E * T2, M * T2});                      // project
        layers.push_back({0, 0, 2 * M * T2, M * T2});                      // residual add
    }
    layers.push_back({M * D, D, M * T2, D * T2});                          // embed
    layers.push_back({0, 0, D * T2, D});                                   // pool
    layers.push_back({D * config.n_classes, config.n_classes, D, config.n_classes});  // head

    BudgetReport r;
    for (const auto& l : layers) {
        r.weight_bytes += l.w;
        r.bias_bytes += l.b;
        r.parameter_count += l.w + l.b;
        r.peak_activation_bytes = std::max(r.peak_activation_bytes, l.in + l.out);
    }
    r.weights_ok = r.weight_bytes <= r.weight_limit;
    r.bias_ok = r.bias_bytes <= r.bias_limit;
    r.activations_ok = r.peak_activation_bytes <= r.activation_limit;
    return r;
}

BudgetReport budget_report(const QuantizedModel& qm) { return budget_report(qm.config); }

// ---------------------------------------------------------------------------
// PHLW weight files
// ---------------------------------------------------------------------------

namespace {

constexpr uint8_t kDtypeF32 = 0, kDtypeI8 = 1, kDtypeI32 = 2;

struct TensorRecord {
    std::string name;
    uint8_t dtype = kDtypeF32;
    std::vector<uint32_t> dims;
    double scale = 1.0;
    int32_t zero_point = 0;
    std::vector<uint8_t> raw;
};

template <typename T>
void append(std::string& buf, T v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void append_record(std::string& buf, const TensorRecord& r) {
    append<uint16_t>(buf, static_cast<uint16_t>(r.name.size()));
    buf.append(r.name);
    append<uint8_t>(buf, r.dtype);
    append<uint8_t>(buf, static_cast<uint8_t>(r.dims.size()));
    for (uint32_t d : r.dims) append<uint32_t>(buf, d);
    append<double>(buf, r.scale);
    append<int32_t>(buf, r.zero_point);
    buf.append(reinterpret_cast<const char*>(r.raw.data()), r.raw.size());
}

TensorRecord f32_record(const std::string& name, const std::vector<int>& shape,
                        const std::vector<double>& values) {
    TensorRecord r;
    r.name = name;
    r.dtype = kDtypeF32;
    for (int d : shape) r.dims.push_back(static_cast<uint32_t>(d));
    r.raw.resize(values.size() * 4);
    for (size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::memcpy(&r.raw[i * 4], &f, 4);
    }
    return r;
}

TensorRecord i8_record(const std::string& name, const I8Tensor& t, QuantParams qp) {
    TensorRecord r;
    r.name = name;
    r.dtype = kDtypeI8;
    for (int d : t.shape) r.dims.push_back(static_cast<uint32_t>(d));
    r.scale = qp.scale;
    r.zero_point = qp.zero_point;
    r.raw.assign(t.data.begin(), t.data.end());
    return r;
}

TensorRecord i32_record(const std::string& name, const std::vector<int32_t>& v, double scale) {
    TensorRecord r;
    r.name = name;
    r.dtype = kDtypeI32;
    r.dims.push_back(static_cast<uint32_t>(v.size()));
    r.scale = scale;
    r.raw.resize(v.size() * 4);
    std::memcpy(r.raw.data(), v.data(), r.raw.size());
    return r;
}

TensorRecord qp_record(const std::string& name, QuantParams qp) {
    TensorRecord r;
    r.name = name;
    r.dtype = kDtypeI32;
    r.scale = qp.scale;
    r.zero_point = qp.zero_point;
    return r;
}

void append_config(std::string& buf, const ModelConfig& c) {
    const uint32_t fields[] = {
        static_cast<uint32_t>(c.signal_channels), static_cast<uint32_t>(c.pe_frequencies),
        c.use_positional ? 1u : 0u,               static_cast<uint32_t>(c.window_len),
        static_cast<uint32_t>(c.n_classes),       static_cast<uint32_t>(c.task_kind),
        static_cast<uint32_t>(c.stem_channels),   static_cast<uint32_t>(c.branch_channels),
        static_cast<uint32_t>(c.mix_channels),    static_cast<uint32_t>(c.embed_dim),
        static_cast<uint32_t>(c.depth),           static_cast<uint32_t>(c.expansion_ratio),
        static_cast<uint32_t>(llround(c.pe_alpha * 1e6)),
        static_cast<uint32_t>(c.kernel_set.size())};
    for (uint32_t f : fields) append<uint32_t>(buf, f);
    for (int k : c.kernel_set) append<uint32_t>(buf, static_cast<uint32_t>(k));
}

void write_phlw(const std::string& path, const ModelConfig& config, bool quantized,
                const std::vector<TensorRecord>& records) {
    std::string buf;
    buf.append("PHLW");
    append<uint16_t>(buf, 1);
    append<uint16_t>(buf, quantized ? 1 : 0);
    append_config(buf, config);
    append<uint32_t>(buf, static_cast<uint32_t>(records.size()));
    for (const auto& r : records) append_record(buf, r);
    const uint32_t crc = crc32(buf.data(), buf.size());
    append<uint32_t>(buf, crc);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed for " + path);
}

struct Reader {
    const uint8_t* p;
    const uint8_t* end;
    template <typename T>
    T get() {
        if (p + sizeof(T) > end) throw DataError("truncated weight file");
        T v;
        std::memcpy(&v, p, sizeof(T));
        p += sizeof(T);
        return v;
    }
    std::string get_string(size_t n) {
        if (p + n > end) throw DataError("truncated weight file");
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        return s;
    }
    std::vector<uint8_t> get_bytes(size_t n) {
        if (p + n > end) throw DataError("truncated weight file");
        std::vector<uint8_t> v(p, p + n);
        p += n;
        return v;
    }
};

size_t dtype_size(uint8_t dtype) {
    switch (dtype) {
        case kDtypeF32: return 4;
        case kDtypeI8: return 1;
        case kDtypeI32: return 4;
        default: throw DataError("unknown tensor dtype in weight file");
    }
}

std::vector<double> record_to_f64(const TensorRecord& r) {
    std::vector<double> out(r.raw.size() / 4);
    for (size_t i = 0; i < out.size(); ++i) {
        float f;
        std::memcpy(&f, &r.raw[i * 4], 4);
        out[i] = f;
    }
    return out;
}

I8Tensor record_to_i8(const TensorRecord& r) {
    I8Tensor t;
    for (uint32_t d : r.dims) t.shape.push_back(static_cast<int>(d));
    t.data.resize(r.raw.size());
    std::memcpy(t.data.data(), r.raw.data(), r.raw.size());
    return t;
}

std::vector<int32_t> record_to_i32(const TensorRecord& r) {
    std::vector<int32_t> v(r.raw.size() / 4);
    std::memcpy(v.data(), r.raw.data(), r.raw.size());
    return v;
}

}  // namespace

void save_weights(const Model& m, const std::string& path) {
    std::vector<TensorRecord> recs;
    auto add_layer = [&](const Model::ConvLayer& l) {
        recs.push_back(f32_record(l.name + ".w", l.w.shape, l.w.data));
        if (!l.b.empty())
            recs.push_back(f32_record(l.name + ".b", {static_cast<int>(l.b.size())}, l.b));
    };
    add_layer(m.stem);
    for (const auto& br : m.branches) add_layer(br);
    add_layer(m.proj);
    for (const auto& blk : m.blocks) {
        add_layer(blk.expand);
        add_layer(blk.dw);
        add_layer(blk.project);
    }
    add_layer(m.embed);
    recs.push_back(f32_record("head.w", m.head_w.shape, m.head_w.data));
    recs.push_back(f32_record("head.b", {static_cast<int>(m.head_b.size())}, m.head_b));
    write_phlw(path, m.config, false, recs);
}

void save_weights(const QuantizedModel& qm, const std::string& path) {
    std::vector<TensorRecord> recs;
    auto add_layer = [&](const QuantizedModel::QLayer& l, double in_scale) {
        recs.push_back(i8_record(l.name + ".w", l.w, l.w_qp));
        if (!l.bias.empty())
            recs.push_back(i32_record(l.name + ".b", l.bias, in_scale * l.w_qp.scale));
        recs.push_back(qp_record("act." + l.name, l.out_qp));
    };
    add_layer(qm.stem, qm.input_qp.scale);
    for (const auto& br : qm.branches) add_layer(br, qm.stem.out_qp.scale);
    double concat_scale = qm.branches.front().out_qp.scale;
    add_layer(qm.proj, concat_scale);
    QuantParams h_qp = qm.proj.out_qp;
    for (const auto& qb : qm.blocks) {
        add_layer(qb.expand, h_qp.scale);
        add_layer(qb.dw, qb.expand.out_qp.scale);
        add_layer(qb.project, qb.dw.out_qp.scale);
        std::string base = qb.expand.name.substr(0, qb.expand.name.find('.'));
        recs.push_back(qp_record("act." + base + ".add", qb.add_qp));
        h_qp = qb.add_qp;
    }
    add_layer(qm.embed, h_qp.scale);
    recs.push_back(qp_record("act.gap", qm.gap_qp));
    recs.push_back(i8_record("head.w", qm.head_w, qm.head_w_qp));
    recs.push_back(i32_record("head.b", qm.head_bias, qm.gap_qp.scale * qm.head_w_qp.scale));
    recs.push_back(qp_record("act.head", qm.head_out_qp));
    write_phlw(path, qm.config, true, recs);
}

LoadedModel load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw DataError("truncated weight file");
    const uint32_t stored_crc = [&] {
        uint32_t c;
        std::memcpy(&c, buf.data() + buf.size() - 4, 4);
        return c;
    }();
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw DataError("weight file checksum failure");

    Reader rd{reinterpret_cast<const uint8_t*>(buf.data()),
              reinterpret_cast<const uint8_t*>(buf.data()) + buf.size() - 4};
    if (rd.get_string(4) != "PHLW") throw DataError("bad weight file magic");
    if (rd.get<uint16_t>() != 1) throw DataError("unsupported weight file version");
    const uint16_t flags = rd.get<uint16_t>();

    ModelConfig c;
    c.signal_channels = static_cast<int>(rd.get<uint32_t>());
    c.pe_frequencies = static_cast<int>(rd.get<uint32_t>());
    c.use_positional = rd.get<uint32_t>() != 0;
    c.window_len = static_cast<int>(rd.get<uint32_t>());
    c.n_classes = static_cast<int>(rd.get<uint32_t>());
    c.task_kind = static_cast<TaskKind>(rd.get<uint32_t>());
    c.stem_channels = static_cast<int>(rd.get<uint32_t>());
    c.branch_channels = static_cast<int>(rd.get<uint32_t>());
    c.mix_channels = static_cast<int>(rd.get<uint32_t>());
    c.embed_dim = static_cast<int>(rd.get<uint32_t>());
    c.depth = static_cast<int>(rd.get<uint32_t>());
    c.expansion_ratio = static_cast<int>(rd.get<uint32_t>());
    c.pe_alpha = static_cast<double>(rd.get<uint32_t>()) / 1e6;
    const uint32_t nk = rd.get<uint32_t>();
    c.kernel_set.clear();
    for (uint32_t i = 0; i < nk; ++i) c.kernel_set.push_back(static_cast<int>(rd.get<uint32_t>()));

    const uint32_t n_tensors = rd.get<uint32_t>();
    std::map<std::string, TensorRecord> recs;
    for (uint32_t i = 0; i < n_tensors; ++i) {
        TensorRecord r;
        const uint16_t name_len = rd.get<uint16_t>();
        r.name = rd.get_string(name_len);
        r.dtype = rd.get<uint8_t>();
        const uint8_t rank = rd.get<uint8_t>();
        size_t n = rank == 0 ? 0 : 1;
        for (uint8_t d = 0; d < rank; ++d) {
            r.dims.push_back(rd.get<uint32_t>());
            n *= r.dims.back();
        }
        r.scale = rd.get<double>();
        r.zero_point = rd.get<int32_t>();
        r.raw = rd.get_bytes(n * dtype_size(r.dtype));
        recs[r.name] = std::move(r);
    }

    auto want = [&](const std::string& name) -> const TensorRecord& {
        auto it = recs.find(name);
        if (it == recs.end()) throw DataError("weight file missing tensor " + name);
        return it->second;
    };

    LoadedModel out;
    out.quantized = (flags & 1) != 0;
    if (!out.quantized) {
        Model m = build_model(c, 1);
        for (auto& ref : param_refs(m)) {
            const auto& r = want(ref.name);
            auto vals = record_to_f64(r);
            if (vals.size() != ref.values->size())
                throw DataError("tensor size mismatch for " + ref.name);
            *ref.values = std::move(vals);
        }
        out.model = std::move(m);
    } else {
        QuantizedModel qm;
        qm.config = c;
        Model skeleton = build_model(c, 1);  // reuse specs/names
        auto load_layer = [&](const Model::ConvLayer& l) {
            QuantizedModel::QLayer q;
            q.name = l.name;
            q.spec = l.spec;
            const auto& wr = want(l.name + ".w");
            q.w = record_to_i8(wr);
            q.w_qp = {wr.scale, wr.zero_point};
            if (!l.b.empty()) q.bias = record_to_i32(want(l.name + ".b"));
            const auto& ar = want("act." + l.name);
            q.out_qp = {ar.scale, ar.zero_point};
            q.relu = l.relu;
            return q;
        };
        qm.stem = load_layer(skeleton.stem);
        for (const auto& br : skeleton.branches) qm.branches.push_back(load_layer(br));
        qm.proj = load_layer(skeleton.proj);
        for (size_t d = 0; d < skeleton.blocks.size(); ++d) {
            QuantizedModel::QBlock qb;
            qb.expand = load_layer(skeleton.blocks[d].expand);
            qb.dw = load_layer(skeleton.blocks[d].dw);
            qb.project = load_layer(skeleton.blocks[d].project);
            const auto& ar = want("act.block" + std::to_string(d) + ".add");
            qb.add_qp = {ar.scale, ar.zero_point};
            qm.blocks.push_back(std::move(qb));
        }
        qm.embed = load_layer(skeleton.embed);
        const auto& gr = want("act.gap");
        qm.gap_qp = {gr.scale, gr.zero_point};
        const auto& hw = want("head.w");
        qm.head_w = record_to_i8(hw);
        qm.head_w_qp = {hw.scale, hw.zero_point};
        qm.head_bias = record_to_i32(want("head.b"));
        const auto& hr = want("act.head");
        qm.head_out_qp = {hr.scale, hr.zero_point};
        out.qmodel = std::move(qm);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tile packing
// ---------------------------------------------------------------------------

std::vector<int8_t> tile_pack(const Q7Tensor& t, int tile_width) {
    if (tile_width < 1) throw DataError("tile width must be >= 1");
    const int64_t channels = t.shape.empty() ? 1 : t.shape[0];
    const int64_t length = t.shape.size() < 2 ? t.numel() / std::max<int64_t>(channels, 1)
                                              : t.numel() / channels;
    const int64_t tiles = (length + tile_width - 1) / tile_width;
    std::vector<int8_t> out(static_cast<size_t>(channels * tiles * tile_width), 0);
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t i = 0; i < length; ++i)
            out[static_cast<size_t>(c * tiles * tile_width + i)] =
                t.data[static_cast<size_t>(c * length + i)];
    return out;
}

Q7Tensor tile_unpack(const std::vector<int8_t>& packed, const std::vector<int64_t>& shape,
                     int tile_width) {
    if (tile_width < 1) throw DataError("tile width must be >= 1");
    Q7Tensor t;
    t.shape = shape;
    const int64_t channels = shape.empty() ? 1 : shape[0];
    const int64_t length = t.numel() / std::max<int64_t>(channels, 1);
    const int64_t tiles = (length + tile_width - 1) / tile_width;
    if (packed.size() != static_cast<size_t>(channels * tiles * tile_width))
        throw DataError("packed buffer size does not match shape");
    t.data.resize(static_cast<size_t>(t.numel()));
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t i = 0; i < length; ++i)
            t.data[static_cast<size_t>(c * length + i)] =
                packed[static_cast<size_t>(c * tiles * tile_width + i)];
    return t;
}

}  // namespace physiolite
