#pragma once

#include <span>
#include <string>
#include <vector>

#include "maskaug/checkpoint.hpp"
#include "maskaug/corpus.hpp"
#include "maskaug/model.hpp"
#include "maskaug/nn/transformer.hpp"

namespace maskaug {

// One autoregressive training sequence; positions before `predict_from` are
// conditioning context and contribute no loss.
struct LmExample {
    std::vector<int> ids;
    std::size_t predict_from = 1;
};

// Decoder-only causal language model over the shared transformer blocks.
// Uses n_dec_layers of the config as its depth.
class LmModel {
public:
    explicit LmModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    // Next-token distribution after feeding `input` (appends to cache).
    Eigen::RowVectorXd step_probs(int input_id, int position, nn::CausalCache& cache) const;

    // Sum of -log p(ids[i] | ids[0..i-1]) for i >= predict_from.
    double sequence_nll(const LmExample& ex) const;

    double loss_and_gradients(std::span<const LmExample> batch);

    CheckpointData to_checkpoint(const Vocab& vocab, const std::string& kind) const;
    static LmModel from_checkpoint(const CheckpointData& data, const std::string& expected_kind);

private:
    ModelConfig cfg_;
    nn::ParameterStore params_;
    nn::Tensor* tok_emb_ = nullptr;
    nn::Tensor* out_w_ = nullptr;
    nn::Tensor* out_b_ = nullptr;
    std::vector<nn::EncoderLayerParams> layers_;
    nn::Mat pos_enc_;
};

struct LmTrainConfig {
    long total_iterations = 800;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double grad_clip_norm = 1.0;
    std::uint64_t rng_seed = 1;
};

LmModel train_lm(const std::vector<LmExample>& examples, const ModelConfig& model_config,
                 const LmTrainConfig& config);

// [BOS] t1 .. tn with loss over the n sentence tokens.
std::vector<LmExample> plain_lm_examples(const Vocab& vocab, const Corpus& corpus);

// Greedy-to-beam continuation: feeds `prefix_ids`, then decodes exactly
// `n_steps` tokens over `candidates` with the given beam width.
std::vector<int> lm_beam_continue(const LmModel& model, const std::vector<int>& prefix_ids,
                                  int n_steps, int beam_size, const std::vector<int>& candidates);

}  // namespace maskaug
