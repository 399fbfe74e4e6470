#pragma once

#include <span>
#include <string>
#include <vector>

#include "maskaug/checkpoint.hpp"
#include "maskaug/corpus.hpp"
#include "maskaug/masking.hpp"
#include "maskaug/nn/transformer.hpp"

namespace maskaug {

struct ModelConfig {
    int n_enc_layers = 2;
    int n_dec_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int d_ff = 128;
    int vocab_size = 0;
    int n_labels = kNumLabels;
    int max_positions = 256;
    double dropout_rate = 0.0;
    std::uint64_t param_seed = 1;
    bool label_conditioning = true;  // false zeroes and freezes the label table

    void validate() const;

    // Compact configuration sized so full runs finish in minutes on a CPU.
    static ModelConfig desk(int vocab_size);
    // 6/6 layers, 12 heads, 768 model width, 3072 feed-forward width.
    static ModelConfig paper(int vocab_size);
};

// Id-level view of a MaskedExample, ready for the model.
struct EncodedExample {
    std::vector<int> masked_ids;
    std::vector<Label> labels;
    std::vector<int> fragment_ids;
    int u = 0;
    int v = 0;

    int fragment_length() const { return v - u + 1; }
};

EncodedExample encode_example(const Vocab& vocab, const MaskedExample& ex);
std::vector<EncodedExample> encode_batch(const Vocab& vocab, const std::vector<MaskedExample>& batch);

// Label-conditioned encoder-decoder. The encoder reads the partially masked
// sentence with one label embedding added per position; every decoder step
// receives the previous fragment token and label, and the current label is
// added to the decoder state before the vocabulary projection.
class Seq2SeqModel {
public:
    explicit Seq2SeqModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    // Hidden states H, one row per input position. Thread-safe.
    nn::Mat encode(const std::vector<int>& masked_ids, const std::vector<Label>& labels) const;

    // Probability vector over the vocabulary for the fragment token at
    // `position` (the absolute 1-based source position being generated).
    // Appends to `cache`; steps must be fed in order. Thread-safe given a
    // per-thread cache.
    Eigen::RowVectorXd decode_step(int prev_token, Label prev_label, Label cur_label, int position,
                                   const nn::Mat& H, nn::StepCache& cache) const;

    // Sum over fragment positions of log P(y_t | y_<t, l_t, H); always <= 0.
    double sequence_log_prob(const EncodedExample& ex) const;
    double sequence_log_prob(const EncodedExample& ex, const nn::Mat& H) const;

    // Teacher-forced probabilities for all fragment steps at once (the
    // training-path computation); row t is the distribution for step t+1.
    nn::Mat teacher_forced_probs(const EncodedExample& ex);

    // Mean negative log-likelihood per fragment token over the batch, with
    // exact gradients accumulated into the parameter store.
    double loss_and_gradients(std::span<const EncodedExample> batch, Rng* dropout_rng = nullptr);

    CheckpointData to_checkpoint(const Vocab& vocab) const;
    static Seq2SeqModel from_checkpoint(const CheckpointData& data);
    std::string weights_hash(const Vocab& vocab) const;

    static constexpr const char* kCheckpointKind = "seq2seq";

private:
    nn::Var encode_on_graph(nn::Graph& g, const std::vector<int>& masked_ids,
                            const std::vector<Label>& labels, Rng* dropout_rng);
    Eigen::RowVectorXd decoder_input_row(int prev_token, Label prev_label, int position) const;
    void check_ids(const std::vector<int>& ids) const;
    void check_length(std::size_t n) const;

    ModelConfig cfg_;
    nn::ParameterStore params_;
    nn::Tensor* tok_emb_ = nullptr;
    nn::Tensor* label_emb_ = nullptr;
    nn::Tensor* out_w_ = nullptr;  // vocab_size x d_model
    nn::Tensor* out_b_ = nullptr;
    std::vector<nn::EncoderLayerParams> enc_layers_;
    std::vector<nn::DecoderLayerParams> dec_layers_;
    nn::Mat pos_enc_;
};

// Config fields shared by checkpoint writers of every model kind.
void store_model_config(CheckpointData& data, const ModelConfig& cfg);
ModelConfig read_model_config(const CheckpointData& data);

}  // namespace maskaug
