#pragma once

#include <optional>
#include <string>
#include <vector>

#include "maskaug/nn/graph.hpp"

namespace maskaug::nn {

inline constexpr double kLayerNormEps = 1e-5;

// y = x * w + b with w stored input-major (in x out).
struct LinearParams {
    Tensor* w = nullptr;
    Tensor* b = nullptr;
};

struct LayerNormParams {
    Tensor* gain = nullptr;
    Tensor* bias = nullptr;
};

struct AttentionParams {
    LinearParams query, key, value, out;
};

struct FfnParams {
    LinearParams lin1, lin2;
};

// Post-layer-norm residual block: x = LN(x + Attn(x)); x = LN(x + FFN(x)).
struct EncoderLayerParams {
    AttentionParams attn;
    LayerNormParams ln_attn;
    FfnParams ffn;
    LayerNormParams ln_ffn;
};

struct DecoderLayerParams {
    AttentionParams self_attn;
    LayerNormParams ln_self;
    AttentionParams cross_attn;
    LayerNormParams ln_cross;
    FfnParams ffn;
    LayerNormParams ln_ffn;
};

// Parameter factories; weights get scaled-uniform init from `rng`,
// biases start at zero and layer-norm gains at one.
Tensor& create_weight(ParameterStore& ps, const std::string& name, int rows, int cols, Rng& rng);
Tensor& create_bias(ParameterStore& ps, const std::string& name, int cols);
Tensor& create_gain(ParameterStore& ps, const std::string& name, int cols);

LinearParams create_linear(ParameterStore& ps, const std::string& prefix, int in, int out, Rng& rng);
LayerNormParams create_layer_norm(ParameterStore& ps, const std::string& prefix, int dim);
AttentionParams create_attention(ParameterStore& ps, const std::string& prefix, int d_model, Rng& rng);
FfnParams create_ffn(ParameterStore& ps, const std::string& prefix, int d_model, int d_ff, Rng& rng);
EncoderLayerParams create_encoder_layer(ParameterStore& ps, const std::string& prefix, int d_model,
                                        int d_ff, Rng& rng);
DecoderLayerParams create_decoder_layer(ParameterStore& ps, const std::string& prefix, int d_model,
                                        int d_ff, Rng& rng);

// Sinusoidal table; row p holds the encoding of 1-based position p+1.
Mat sinusoidal_positions(int max_positions, int d_model);

// Strictly-upper-triangular -inf mask for causal self-attention.
Mat causal_mask(int n);

// ---- tape (training) path ----

Var linear(Graph& g, const LinearParams& p, Var x);
Var multi_head_attention(Graph& g, const AttentionParams& p, Var queries_in, Var memory,
                         int n_heads, const Mat* additive_mask = nullptr);
Var encoder_layer(Graph& g, const EncoderLayerParams& p, Var x, int n_heads,
                  const Mat* self_mask = nullptr, double dropout = 0.0, Rng* rng = nullptr);
Var decoder_layer(Graph& g, const DecoderLayerParams& p, Var x, Var memory, int n_heads,
                  const Mat* self_mask, double dropout = 0.0, Rng* rng = nullptr);

// ---- incremental (inference) path ----

struct LayerKv {
    Mat k;  // steps x d_model
    Mat v;
};

// Grows by one row per decoded step; cross-attention keys/values are
// projected from the encoder states once, at the first step.
struct StepCache {
    std::vector<LayerKv> self_kv;
    std::vector<LayerKv> cross_kv;
    bool cross_ready = false;
    int steps = 0;
};

Eigen::RowVectorXd linear_row(const LinearParams& p, const Eigen::RowVectorXd& x);
Eigen::RowVectorXd layer_norm_row(const LayerNormParams& p, const Eigen::RowVectorXd& x,
                                  double eps = kLayerNormEps);
Eigen::RowVectorXd attention_row(const Eigen::RowVectorXd& q, const Mat& keys, const Mat& values,
                                 int n_heads);
Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits);

// One decoder step over cached keys/values; appends this step's self K/V.
Eigen::RowVectorXd decoder_step_row(const std::vector<DecoderLayerParams>& layers,
                                    const Eigen::RowVectorXd& input, const Mat& memory,
                                    int n_heads, StepCache& cache);

// Full-matrix inference without a tape; used where gradients are not needed
// and parameters are shared read-only across workers.
Mat attention_infer(const AttentionParams& p, const Mat& queries_in, const Mat& memory, int n_heads,
                    const Mat* additive_mask = nullptr);
Mat encoder_layer_infer(const EncoderLayerParams& p, Mat x, int n_heads,
                        const Mat* self_mask = nullptr);
Mat stack_forward_infer(const std::vector<EncoderLayerParams>& layers, Mat x, int n_heads,
                        const Mat* self_mask = nullptr);

// Cache for decoder-only (causal) stacks built from encoder blocks.
struct CausalCache {
    std::vector<LayerKv> kv;
    int steps = 0;
};

Eigen::RowVectorXd causal_step_row(const std::vector<EncoderLayerParams>& layers,
                                   const Eigen::RowVectorXd& input, int n_heads, CausalCache& cache);

}  // namespace maskaug::nn
