#include "physiolite/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "physiolite/preprocess.hpp"
#include "physiolite/rng.hpp"

namespace physiolite {

void TrainConfig::validate() const {
    if (!(alpha_kd >= 0.0 && alpha_kd <= 1.0)) throw DataError("alpha_kd must be in [0, 1]");
    if (temperature <= 0.0) throw DataError("temperature must be positive");
    if (epochs < 1 || batch_size < 1) throw DataError("epochs and batch size must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
        throw DataError("warmup_epochs must be <= epochs");
    if (f1_reg_weight < 0.0) throw DataError("f1_reg_weight must be >= 0");
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

std::vector<double> softmax(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

inline double softplus(double x) {  // log(1 + e^x), stable
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

LossGrad cross_entropy(const std::vector<double>& logits, int class_index) {
    if (class_index < 0 || class_index >= static_cast<int>(logits.size()))
        throw DataError("class index out of range");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - m);
    const double lse = m + std::log(sum);
    LossGrad out;
    out.loss = lse - logits[static_cast<size_t>(class_index)];
    out.grad = softmax(logits);
    out.grad[static_cast<size_t>(class_index)] -= 1.0;
    return out;
}

LossGrad bce_with_logits(const std::vector<double>& logits, const std::vector<uint8_t>& labels) {
    if (logits.size() != labels.size()) throw DataError("bce label length mismatch");
    const double n = static_cast<double>(logits.size());
    LossGrad out;
    out.grad.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i];
        const double y = labels[i] ? 1.0 : 0.0;
        out.loss += softplus(z) - z * y;  // = max(z,0) - z*y + log(1+e^-|z|)
        out.grad[i] = (sigmoid(z) - y) / n;
    }
    out.loss /= n;
    return out;
}

BatchLossGrad soft_macro_f1_loss(const std::vector<std::vector<double>>& probs,
                                 const std::vector<std::vector<uint8_t>>& labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw DataError("soft F1 batch shape mismatch");
    constexpr double eps = 1e-7;
    const size_t n = probs.size(), C = probs[0].size();
    BatchLossGrad out;
    out.grad.assign(n, std::vector<double>(C, 0.0));
    double mean_f1 = 0.0;
    for (size_t c = 0; c < C; ++c) {
        double sum_py = 0.0, sum_p = 0.0, sum_y = 0.0;
        for (size_t i = 0; i < n; ++i) {
            sum_py += probs[i][c] * (labels[i][c] ? 1.0 : 0.0);
            sum_p += probs[i][c];
            sum_y += labels[i][c] ? 1.0 : 0.0;
        }
        const double A = 2.0 * sum_py + eps;
        const double B = sum_p + sum_y + eps;
        mean_f1 += (A / B) / static_cast<double>(C);
        for (size_t i = 0; i < n; ++i) {
            const double y = labels[i][c] ? 1.0 : 0.0;
            out.grad[i][c] = -(2.0 * y * B - A) / (B * B) / static_cast<double>(C);
        }
    }
    out.loss = 1.0 - mean_f1;
    return out;
}

LossGrad kd_loss(const std::vector<double>& student_logits,
                 const std::vector<double>& teacher_logits, double temperature, TaskKind kind) {
    if (student_logits.size() != teacher_logits.size())
        throw DataError("teacher/student logit length mismatch");
    if (temperature <= 0.0) throw DataError("temperature must be positive");
    const double T = temperature;
    LossGrad out;
    out.grad.resize(student_logits.size());
    if (kind == TaskKind::single_label) {
        std::vector<double> at(teacher_logits.size()), as(student_logits.size());
        for (size_t i = 0; i < at.size(); ++i) {
            at[i] = teacher_logits[i] / T;
            as[i] = student_logits[i] / T;
        }
        const std::vector<double> pt = softmax(at), ps = softmax(as);
        double kl = 0.0;
        for (size_t i = 0; i < pt.size(); ++i) {
            if (pt[i] > 0.0) kl += pt[i] * (std::log(pt[i]) - std::log(ps[i]));
            out.grad[i] = T * (ps[i] - pt[i]);
        }
        out.loss = T * T * kl;
    } else {
        // per-class binary KL on temperature-scaled sigmoids, summed
        double total = 0.0;
        for (size_t i = 0; i < student_logits.size(); ++i) {
            const double at = teacher_logits[i] / T, as = student_logits[i] / T;
            const double pt = sigmoid(at), ps = sigmoid(as);
            const double log_pt = -softplus(-at), log_1mpt = -softplus(at);
            const double log_ps = -softplus(-as), log_1mps = -softplus(as);
            total += pt * (log_pt - log_ps) + (1.0 - pt) * (log_1mpt - log_1mps);
            out.grad[i] = T * (ps - pt);
        }
        out.loss = T * T * total;
    }
    return out;
}

double combined_loss(double hard, double kd, double alpha_kd) {
    if (!(alpha_kd >= 0.0 && alpha_kd <= 1.0)) throw DataError("alpha_kd must be in [0, 1]");
    return (1.0 - alpha_kd) * hard + alpha_kd * kd;
}

double lr_schedule(int epoch, const TrainConfig& config) {
    if (epoch < 0 || epoch >= config.epochs) throw DataError("epoch out of schedule range");
    if (epoch < config.warmup_epochs)
        return config.lr_max * static_cast<double>(epoch + 1) / config.warmup_epochs;
    const int span = config.epochs - config.warmup_epochs;
    if (span <= 0) return config.lr_max;
    const double u = static_cast<double>(epoch - config.warmup_epochs) / span;
    return config.lr_max * 0.5 * (1.0 + std::cos(M_PI * u));
}

void adamw_step(std::vector<double>& params, const std::vector<double>& grads, AdamWState& state,
                double lr, double weight_decay, double beta1, double beta2, double eps) {
    if (params.size() != grads.size()) throw DataError("adamw gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mh = state.m[i] / bc1;
        const double vh = state.v[i] / bc2;
        params[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * params[i]);
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace {

// Mann-Whitney AUROC with average ranks (ties count half).
double rank_auroc(const std::vector<double>& scores, const std::vector<uint8_t>& positive,
                  bool& defined) {
    int64_t npos = 0;
    for (uint8_t p : positive) npos += p ? 1 : 0;
    const int64_t nneg = static_cast<int64_t>(positive.size()) - npos;
    if (npos == 0 || nneg == 0) {
        defined = false;
        return 0.0;
    }
    defined = true;
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (positive[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(npos) * (npos + 1) / 2.0;
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

Metrics finish_counts(const std::vector<int64_t>& tp, const std::vector<int64_t>& fp,
                      const std::vector<int64_t>& fn) {
    Metrics m;
    const size_t C = tp.size();
    m.per_class_f1.resize(C);
    int64_t stp = 0, sfp = 0, sfn = 0;
    for (size_t c = 0; c < C; ++c) {
        const int64_t denom = 2 * tp[c] + fp[c] + fn[c];
        m.per_class_f1[c] = denom == 0 ? 0.0 : 2.0 * tp[c] / static_cast<double>(denom);
        m.macro_f1 += m.per_class_f1[c] / static_cast<double>(C);
        stp += tp[c];
        sfp += fp[c];
        sfn += fn[c];
    }
    const int64_t mdenom = 2 * stp + sfp + sfn;
    m.micro_f1 = mdenom == 0 ? 0.0 : 2.0 * stp / static_cast<double>(mdenom);
    return m;
}

}  // namespace

Metrics evaluate(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels,
                 int n_classes) {
    if (logits.size() != labels.size() || logits.empty())
        throw DataError("metrics shape mismatch");
    const size_t n = logits.size(), C = static_cast<size_t>(n_classes);
    std::vector<int64_t> tp(C, 0), fp(C, 0), fn(C, 0);
    int64_t correct = 0;
    std::vector<std::vector<double>> probs(n);
    for (size_t i = 0; i < n; ++i) {
        probs[i] = softmax(logits[i]);
        const int pred = static_cast<int>(
            std::max_element(logits[i].begin(), logits[i].end()) - logits[i].begin());
        const int y = labels[i];
        if (y < 0 || y >= n_classes) throw DataError("label out of range");
        if (pred == y) {
            ++correct;
            ++tp[static_cast<size_t>(y)];
        } else {
            ++fp[static_cast<size_t>(pred)];
            ++fn[static_cast<size_t>(y)];
        }
    }
    Metrics m = finish_counts(tp, fp, fn);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    m.per_class_auroc.resize(C, 0.0);
    m.auroc_defined.resize(C, 0);
    double auc_sum = 0.0;
    int defined = 0;
    for (size_t c = 0; c < C; ++c) {
        std::vector<double> scores(n);
        std::vector<uint8_t> pos(n);
        for (size_t i = 0; i < n; ++i) {
            scores[i] = probs[i][c];
            pos[i] = labels[i] == static_cast<int>(c);
        }
        bool ok = false;
        m.per_class_auroc[c] = rank_auroc(scores, pos, ok);
        m.auroc_defined[c] = ok ? 1 : 0;
        if (ok) {
            auc_sum += m.per_class_auroc[c];
            ++defined;
        }
    }
    m.auroc = defined > 0 ? auc_sum / defined : 0.0;
    return m;
}

Metrics evaluate(const std::vector<std::vector<double>>& logits,
                 const std::vector<std::vector<uint8_t>>& labels, double threshold) {
    if (logits.size() != labels.size() || logits.empty())
        throw DataError("metrics shape mismatch");
    if (!(threshold > 0.0 && threshold < 1.0)) throw DataError("threshold must be in (0, 1)");
    const size_t n = logits.size(), C = logits[0].size();
    std::vector<int64_t> tp(C, 0), fp(C, 0), fn(C, 0);
    int64_t agree = 0;
    for (size_t i = 0; i < n; ++i) {
        if (labels[i].size() != C) throw DataError("multi-label width mismatch");
        for (size_t c = 0; c < C; ++c) {
            const bool pred = sigmoid(logits[i][c]) >= threshold;
            const bool y = labels[i][c] != 0;
            if (pred == y) ++agree;
            if (pred && y) ++tp[c];
            else if (pred && !y) ++fp[c];
            else if (!pred && y) ++fn[c];
        }
    }
    Metrics m = finish_counts(tp, fp, fn);
    m.accuracy = static_cast<double>(agree) / static_cast<double>(n * C);
    m.per_class_auroc.resize(C, 0.0);
    m.auroc_defined.resize(C, 0);
    double auc_sum = 0.0;
    int defined = 0;
    for (size_t c = 0; c < C; ++c) {
        std::vector<double> scores(n);
        std::vector<uint8_t> pos(n);
        for (size_t i = 0; i < n; ++i) {
            scores[i] = sigmoid(logits[i][c]);
            pos[i] = labels[i][c];
        }
        bool ok = false;
        m.per_class_auroc[c] = rank_auroc(scores, pos, ok);
        m.auroc_defined[c] = ok ? 1 : 0;
        if (ok) {
            auc_sum += m.per_class_auroc[c];
            ++defined;
        }
    }
    m.auroc = defined > 0 ? auc_sum / defined : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

std::string history_line(const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d %.6f %.4f %.4f %.4f %.6g", r.epoch, r.loss, r.val_accuracy,
                  r.val_macro_f1, r.val_auroc, r.lr);
    return buf;
}

std::vector<Tensor> prepare_inputs(const LabeledDataset& ds, const ModelConfig& config) {
    if (ds.windows.empty()) throw DataError("dataset is empty");
    PosEncodingTable table;
    if (config.use_positional)
        table = build_pe_tables(config.window_len, config.pe_frequencies, config.pe_alpha);
    std::vector<Tensor> inputs;
    inputs.reserve(ds.windows.size());
    for (const auto& w : ds.windows) {
        if (w.channels != config.signal_channels || w.window_len != config.window_len)
            throw DataError("dataset window shape does not match model config");
        auto [z, stats] = zscore_streaming(w);
        Q7Tensor q = quantize_q7(z);
        if (config.use_positional) {
            AugmentedWindow aw = encode_positions(table, q, w.sample_rate_hz);
            inputs.push_back(window_to_tensor(aw));
        } else {
            inputs.emplace_back(std::vector<int>{config.signal_channels,
                                                 static_cast<int>(config.window_len)},
                                dequantize_q7(q));
        }
    }
    return inputs;
}

namespace {

int env_thread_cap() {
    const char* s = std::getenv("PHYSIOLITE_THREADS");
    if (!s) return 1;
    const int v = std::atoi(s);
    return v > 1 ? v : 1;
}

void one_hot(int label, size_t n, std::vector<uint8_t>& out) {
    out.assign(n, 0);
    out[static_cast<size_t>(label)] = 1;
}

// dL/dz for softmax probabilities p given dL/dp
std::vector<double> softmax_chain(const std::vector<double>& p, const std::vector<double>& gp) {
    double dot = 0.0;
    for (size_t i = 0; i < p.size(); ++i) dot += p[i] * gp[i];
    std::vector<double> gz(p.size());
    for (size_t i = 0; i < p.size(); ++i) gz[i] = p[i] * (gp[i] - dot);
    return gz;
}

struct SampleRefs {
    const std::vector<Tensor>* inputs;
    const LabeledDataset* ds;
};

TrainResult train_impl(Model model, const LabeledDataset& dataset, const TrainConfig& config,
                       const Model* teacher) {
    config.validate();
    if (dataset.windows.empty()) throw DataError("dataset is empty");
    if (teacher && teacher->config.n_classes != model.config.n_classes)
        throw DataError("teacher and student class counts differ");
    const bool multi = dataset.task_kind == TaskKind::multi_label;
    if (multi && config.loss_kind == LossKind::ce)
        throw DataError("multi-label dataset needs bce loss");

    const std::vector<Tensor> inputs = prepare_inputs(dataset, model.config);
    const size_t n = inputs.size();

    // deterministic 80/20 split
    Rng rng(config.seed);
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);
    const size_t n_val = std::max<size_t>(1, static_cast<size_t>(llround(0.2 * n)));
    if (n_val >= n) throw DataError("dataset too small to split");
    std::vector<size_t> train_idx(idx.begin(), idx.end() - static_cast<ptrdiff_t>(n_val));
    std::vector<size_t> val_idx(idx.end() - static_cast<ptrdiff_t>(n_val), idx.end());

    auto refs = param_refs(model);
    auto grads = zero_grads(model);
    std::vector<AdamWState> states(refs.size());
    const int threads = env_thread_cap();
    const double alpha = teacher ? config.alpha_kd : 0.0;

    History history;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, config);
        for (size_t i = train_idx.size(); i > 1; --i)
            std::swap(train_idx[i - 1],
                      train_idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i - 1)))]);

        double epoch_loss = 0.0;
        for (size_t start = 0; start < train_idx.size(); start += config.batch_size) {
            const size_t bsz = std::min<size_t>(config.batch_size, train_idx.size() - start);
            std::vector<Model::Cache> caches(bsz);
            std::vector<std::vector<double>> teacher_logits(bsz);

            auto forward_range = [&](size_t lo, size_t hi) {
                for (size_t b = lo; b < hi; ++b) {
                    const Tensor& x = inputs[train_idx[start + b]];
                    model.forward(x, &caches[b]);
                    if (teacher && alpha > 0.0) teacher_logits[b] = teacher->forward(x);
                }
            };
            if (threads > 1) {
                std::vector<std::thread> pool;
                const size_t per = (bsz + threads - 1) / threads;
                for (int t = 0; t < threads; ++t) {
                    const size_t lo = std::min(bsz, t * per), hi = std::min(bsz, lo + per);
                    if (lo < hi) pool.emplace_back(forward_range, lo, hi);
                }
                for (auto& th : pool) th.join();
            } else {
                forward_range(0, bsz);
            }

            // per-sample logit gradients
            std::vector<std::vector<double>> grad_logits(bsz);
            std::vector<std::vector<double>> batch_probs;
            std::vector<std::vector<uint8_t>> batch_labels;
            double batch_loss = 0.0;
            std::vector<double> hard_losses(bsz, 0.0);
            for (size_t b = 0; b < bsz; ++b) {
                const size_t si = train_idx[start + b];
                const auto& logits = caches[b].logits;
                LossGrad hard;
                if (config.loss_kind == LossKind::bce || multi) {
                    std::vector<uint8_t> bits;
                    if (multi)
                        bits = dataset.multi_labels[si];
                    else
                        one_hot(dataset.labels[si], logits.size(), bits);
                    hard = bce_with_logits(logits, bits);
                } else {
                    hard = cross_entropy(logits, dataset.labels[si]);
                }
                if (config.loss_kind == LossKind::ce_softf1 && !multi) {
                    batch_probs.push_back(softmax(logits));
                    std::vector<uint8_t> bits;
                    one_hot(dataset.labels[si], logits.size(), bits);
                    batch_labels.push_back(std::move(bits));
                }
                hard_losses[b] = hard.loss;
                grad_logits[b] = std::move(hard.grad);
            }

            if (config.loss_kind == LossKind::ce_softf1 && !multi) {
                const BatchLossGrad sf1 = soft_macro_f1_loss(batch_probs, batch_labels);
                const double w = config.f1_reg_weight;
                for (size_t b = 0; b < bsz; ++b) {
                    // batch objective is mean(hard) + w*sf1; gradients are summed
                    // then scaled by 1/bsz, so the batch term enters scaled by bsz
                    auto gz = softmax_chain(batch_probs[b], sf1.grad[b]);
                    for (size_t i = 0; i < gz.size(); ++i)
                        grad_logits[b][i] += w * static_cast<double>(bsz) * gz[i];
                    hard_losses[b] += w * sf1.loss;
                }
            }

            for (size_t b = 0; b < bsz; ++b) {
                double sample_loss = hard_losses[b];
                if (teacher && alpha > 0.0) {
                    const LossGrad kd = kd_loss(caches[b].logits, teacher_logits[b],
                                                config.temperature, dataset.task_kind);
                    sample_loss = combined_loss(hard_losses[b], kd.loss, alpha);
                    for (size_t i = 0; i < grad_logits[b].size(); ++i)
                        grad_logits[b][i] =
                            (1.0 - alpha) * grad_logits[b][i] + alpha * kd.grad[i];
                }
                batch_loss += sample_loss;
            }
            if (!std::isfinite(batch_loss))
                throw DataError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(start / config.batch_size));
            epoch_loss += batch_loss;

            for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
            if (threads > 1) {
                std::vector<std::vector<std::vector<double>>> tgrads(
                    static_cast<size_t>(threads));
                std::vector<std::thread> pool;
                const size_t per = (bsz + threads - 1) / threads;
                for (int t = 0; t < threads; ++t) {
                    const size_t lo = std::min(bsz, t * per), hi = std::min(bsz, lo + per);
                    if (lo >= hi) continue;
                    tgrads[static_cast<size_t>(t)] = zero_grads(model);
                    pool.emplace_back([&, t, lo, hi] {
                        for (size_t b = lo; b < hi; ++b)
                            model.backward(caches[b], grad_logits[b], tgrads[static_cast<size_t>(t)]);
                    });
                }
                for (auto& th : pool) th.join();
                for (const auto& tg : tgrads)  // fixed-order reduction
                    if (!tg.empty())
                        for (size_t p = 0; p < grads.size(); ++p)
                            for (size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += tg[p][i];
            } else {
                for (size_t b = 0; b < bsz; ++b) model.backward(caches[b], grad_logits[b], grads);
            }

            const double inv = 1.0 / static_cast<double>(bsz);
            for (auto& g : grads)
                for (double& v : g) v *= inv;
            for (size_t p = 0; p < refs.size(); ++p)
                adamw_step(*refs[p].values, grads[p], states[p], lr, config.weight_decay);
            snap_params_f32(model);
        }

        // validation
        std::vector<std::vector<double>> val_logits;
        val_logits.reserve(val_idx.size());
        for (size_t vi : val_idx) val_logits.push_back(model.forward(inputs[vi]));
        Metrics metrics;
        if (multi) {
            std::vector<std::vector<uint8_t>> bits;
            for (size_t vi : val_idx) bits.push_back(dataset.multi_labels[vi]);
            metrics = evaluate(val_logits, bits);
        } else {
            std::vector<int> ys;
            for (size_t vi : val_idx) ys.push_back(dataset.labels[vi]);
            metrics = evaluate(val_logits, ys, dataset.n_classes);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = epoch_loss / static_cast<double>(train_idx.size());
        rec.val_accuracy = metrics.accuracy;
        rec.val_macro_f1 = metrics.macro_f1;
        rec.val_auroc = metrics.auroc;
        rec.lr = lr;
        history.push_back(rec);
    }

    return {std::move(model), std::move(history)};
}

}  // namespace

TrainResult train(Model model, const LabeledDataset& dataset, const TrainConfig& config) {
    return train_impl(std::move(model), dataset, config, nullptr);
}

TrainResult distill(const Model& teacher, const ModelConfig& student_config,
                    const LabeledDataset& dataset, const TrainConfig& config) {
    if (teacher.config.n_classes != student_config.n_classes)
        throw DataError("teacher and student class counts differ");
    Model student = build_model(student_config, config.seed);
    return train_impl(std::move(student), dataset, config, &teacher);
}

}  // namespace physiolite
