#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "physiolite/model.hpp"
#include "physiolite/signal.hpp"

namespace physiolite {

enum class LossKind { ce, bce, ce_softf1 };

struct TrainConfig {
    double alpha_kd = 0.3;
    double temperature = 2.0;
    double lr_max = 1e-3;
    double weight_decay = 1e-3;
    int epochs = 30;
    int warmup_epochs = 5;
    int batch_size = 16;
    uint64_t seed = 1;
    double f1_reg_weight = 0.1;
    LossKind loss_kind = LossKind::ce;

    void validate() const;
};

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    double auroc = 0.0;  // macro one-vs-rest; classes without both outcomes excluded
    std::vector<double> per_class_f1;
    std::vector<double> per_class_auroc;
    std::vector<uint8_t> auroc_defined;
};

// ---------------------------------------------------------------------------
// Losses (loss value plus analytic gradient w.r.t. the first argument)
// ---------------------------------------------------------------------------

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

LossGrad cross_entropy(const std::vector<double>& logits, int class_index);
LossGrad bce_with_logits(const std::vector<double>& logits, const std::vector<uint8_t>& labels);

// Batch-level soft macro-F1 surrogate on probabilities in [0,1];
// grad is w.r.t. the probabilities.
struct BatchLossGrad {
    double loss = 0.0;
    std::vector<std::vector<double>> grad;
};
BatchLossGrad soft_macro_f1_loss(const std::vector<std::vector<double>>& probs,
                                 const std::vector<std::vector<uint8_t>>& labels);

// T^2-weighted KL between temperature-softened teacher and student.
// single_label: softmax form; multi_label: per-class binary KL, summed.
LossGrad kd_loss(const std::vector<double>& student_logits,
                 const std::vector<double>& teacher_logits, double temperature,
                 TaskKind kind = TaskKind::single_label);

double combined_loss(double hard, double kd, double alpha_kd);

double lr_schedule(int epoch, const TrainConfig& config);

// Decoupled weight decay update on one parameter vector.
struct AdamWState {
    std::vector<double> m, v;
    int64_t step = 0;
};
void adamw_step(std::vector<double>& params, const std::vector<double>& grads, AdamWState& state,
                double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Metrics evaluate(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels,
                 int n_classes);
Metrics evaluate(const std::vector<std::vector<double>>& logits,
                 const std::vector<std::vector<uint8_t>>& labels, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double val_accuracy = 0.0;
    double val_macro_f1 = 0.0;
    double val_auroc = 0.0;
    double lr = 0.0;
};
using History = std::vector<EpochRecord>;
std::string history_line(const EpochRecord& r);  // "epoch loss val_acc val_macro_f1 val_auroc lr"

struct TrainResult {
    Model model;
    History history;
};

// Pipeline inputs: z-score -> Q7 -> positional concat -> dequantized tensor,
// so training sees the same value grid the device path produces.
std::vector<Tensor> prepare_inputs(const LabeledDataset& ds, const ModelConfig& config);

TrainResult train(Model model, const LabeledDataset& dataset, const TrainConfig& config);
TrainResult distill(const Model& teacher, const ModelConfig& student_config,
                    const LabeledDataset& dataset, const TrainConfig& config);

}  // namespace physiolite
