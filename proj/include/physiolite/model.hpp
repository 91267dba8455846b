#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "physiolite/nn.hpp"
#include "physiolite/posenc.hpp"
#include "physiolite/signal.hpp"

namespace physiolite {

struct ModelConfig {
    int signal_channels = 16;
    int pe_frequencies = 12;  // F; positional channels add 2F inputs
    bool use_positional = true;
    int window_len = 2048;
    int n_classes = 5;
    TaskKind task_kind = TaskKind::single_label;
    std::vector<int> kernel_set{3, 5, 7};
    int stem_channels = 32;
    int branch_channels = 64;
    int mix_channels = 128;
    int embed_dim = 256;
    int depth = 3;
    int expansion_ratio = 2;
    double pe_alpha = 0.1;

    int in_channels() const {
        return signal_channels + (use_positional ? 2 * pe_frequencies : 0);
    }
    void validate() const;
};

// Layout: pointwise stem -> per-kernel branches (stride 2) -> concat ->
// pointwise projection -> depth x inverted-residual block -> pointwise to
// embed_dim -> global average pool -> dense head. Inverted-residual block
// convolutions carry no bias (see BudgetReport).
struct Model {
    struct ConvLayer {
        std::string name;
        ConvSpec spec;
        Tensor w;
        std::vector<double> b;  // empty = no bias
        bool relu = false;
    };
    struct Block {
        ConvLayer expand;   // pointwise, linear
        ConvLayer dw;       // depthwise k=3, ReLU after
        ConvLayer project;  // pointwise, linear, then residual add
    };

    ModelConfig config;
    ConvLayer stem;
    std::vector<ConvLayer> branches;
    ConvLayer proj;
    std::vector<Block> blocks;
    ConvLayer embed;
    Tensor head_w;
    std::vector<double> head_b;
    bool budget_warning = false;  // weight bytes would exceed the weight-SRAM limit

    struct Cache {
        Tensor input;
        Tensor stem_out;
        Tensor concat;  // branch outputs, post-ReLU
        Tensor proj_out;
        struct BlockCache {
            Tensor input;
            Tensor expand_out;
            Tensor dw_out;  // post-ReLU
            Tensor project_out;
            Tensor add_out;
        };
        std::vector<BlockCache> blocks;
        Tensor embed_out;
        Tensor gap_out;
        std::vector<double> logits;
    };

    std::vector<double> forward(const Tensor& input, Cache* cache = nullptr) const;
    // Accumulates parameter gradients (layout of param_refs) from d(loss)/d(logits).
    void backward(const Cache& cache, const std::vector<double>& grad_logits,
                  std::vector<std::vector<double>>& grads) const;
};

struct ParamRef {
    std::string name;
    std::vector<double>* values;
};
std::vector<ParamRef> param_refs(Model& m);
std::vector<std::vector<double>> zero_grads(const Model& m);

Model build_model(const ModelConfig& config, uint64_t seed = 1);
int64_t count_params(const Model& m);

// Clamp every parameter to the nearest float32 value; keeps in-memory
// parameters identical to their serialized form.
void snap_params_f32(Model& m);

std::vector<double> infer_float(const Model& m, const AugmentedWindow& window);
std::vector<std::vector<double>> infer_float_batch(const Model& m,
                                                   const std::vector<Tensor>& inputs);
Tensor window_to_tensor(const AugmentedWindow& window);

// ---------------------------------------------------------------------------
// Quantized twin
// ---------------------------------------------------------------------------

struct QuantizedModel {
    struct QLayer {
        std::string name;
        ConvSpec spec;
        I8Tensor w;
        QuantParams w_qp;
        std::vector<int32_t> bias;  // scale in_scale*w_scale
        QuantParams out_qp;
        bool relu = false;
    };
    struct QBlock {
        QLayer expand, dw, project;
        QuantParams add_qp;
    };

    ModelConfig config;
    QuantParams input_qp{1.0 / 128.0, 0};  // Q7 input
    QLayer stem;
    std::vector<QLayer> branches;  // all requantized to the concat scale
    QLayer proj;
    std::vector<QBlock> blocks;
    QLayer embed;
    QuantParams gap_qp;
    I8Tensor head_w;
    QuantParams head_w_qp;
    std::vector<int32_t> head_bias;
    QuantParams head_out_qp;  // calibrated, recorded for error bounds
};

QuantizedModel calibrate_and_quantize(const Model& m, const std::vector<Tensor>& calibration);
std::vector<double> infer_int8(const QuantizedModel& qm, const AugmentedWindow& q7_window);
std::vector<double> infer_int8(const QuantizedModel& qm, const I8Tensor& input);

struct BudgetReport {
    int64_t parameter_count = 0;
    int64_t weight_bytes = 0;           // one byte per int8 weight element
    int64_t bias_bytes = 0;             // one byte per bias (8-bit device bias memory)
    int64_t peak_activation_bytes = 0;  // max over layers of in+out int8 buffers
    int64_t weight_limit = 442 * 1024;
    int64_t bias_limit = 2 * 1024;
    int64_t activation_limit = 512 * 1024;
    bool weights_ok = false, bias_ok = false, activations_ok = false;
    bool pass() const { return weights_ok && bias_ok && activations_ok; }
};

BudgetReport budget_report(const QuantizedModel& qm);
BudgetReport budget_report(const ModelConfig& config);  // shapes only

// ---------------------------------------------------------------------------
// PHLW weight files
// ---------------------------------------------------------------------------

void save_weights(const Model& m, const std::string& path);
void save_weights(const QuantizedModel& qm, const std::string& path);

struct LoadedModel {
    bool quantized = false;
    Model model;
    QuantizedModel qmodel;
};
LoadedModel load_weights(const std::string& path);

// ---------------------------------------------------------------------------
// Tile packing
// ---------------------------------------------------------------------------

// Re-lays channel-major data into contiguous (channel, tile) blocks of
// tile_width samples; the last tile is zero padded.
std::vector<int8_t> tile_pack(const Q7Tensor& t, int tile_width);
Q7Tensor tile_unpack(const std::vector<int8_t>& packed, const std::vector<int64_t>& shape,
                     int tile_width);

}  // namespace physiolite
