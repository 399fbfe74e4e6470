#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "maskaug/lm.hpp"

namespace maskaug {

// Case-insensitive word -> synonyms map loaded from a TSV file with lines
// "word<TAB>syn1,syn2,...".
class Thesaurus {
public:
    static Thesaurus parse(const std::string& text);
    static Thesaurus load_file(const std::string& path);

    const std::vector<std::string>* lookup(const std::string& word) const;
    std::size_t size() const { return by_word_.size(); }

private:
    std::unordered_map<std::string, std::vector<std::string>> by_word_;
};

// Replaces round(replace_fraction * n) O-labeled tokens that have thesaurus
// entries with a uniformly drawn synonym; labels and aspect tokens untouched.
LabeledSentence synonym_augment(const LabeledSentence& sentence, const Thesaurus& thesaurus,
                                double replace_fraction, Rng& rng);

// Encoder-only masked-token infill model: token + label + position input
// sum, per-position vocabulary head. Uses n_enc_layers of the config.
struct InfillExample {
    std::vector<int> masked_ids;
    std::vector<Label> labels;
    std::vector<int> positions;  // 0-based masked positions
    std::vector<int> targets;    // original ids at those positions
};

class InfillModel {
public:
    explicit InfillModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    // One joint forward; row i is the vocabulary distribution at position i.
    nn::Mat predict_probs(const std::vector<int>& ids, const std::vector<Label>& labels) const;

    double loss_and_gradients(std::span<const InfillExample> batch);

    CheckpointData to_checkpoint(const Vocab& vocab) const;
    static InfillModel from_checkpoint(const CheckpointData& data);
    static constexpr const char* kCheckpointKind = "infill";

private:
    ModelConfig cfg_;
    nn::ParameterStore params_;
    nn::Tensor* tok_emb_ = nullptr;
    nn::Tensor* label_emb_ = nullptr;
    nn::Tensor* out_w_ = nullptr;
    nn::Tensor* out_b_ = nullptr;
    std::vector<nn::EncoderLayerParams> layers_;
    nn::Mat pos_enc_;
};

// Selects masked positions for one sentence: round(fraction * n) O-labeled
// positions drawn uniformly without replacement, ascending.
std::vector<int> select_mask_positions(const LabeledSentence& sentence, double mask_fraction,
                                       Rng& rng);

struct InfillTrainConfig {
    long total_iterations = 800;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double grad_clip_norm = 1.0;
    double mask_fraction = 0.5;
    std::uint64_t rng_seed = 1;
};

InfillModel train_infill(const Corpus& corpus, const Vocab& vocab, const ModelConfig& model_config,
                         const InfillTrainConfig& config);

// Masks O-labeled positions individually and predicts every one from the
// same masked input, independently (no sequential refill).
LabeledSentence independent_mask_augment(const InfillModel& model, const Vocab& vocab,
                                         const LabeledSentence& sentence, double mask_fraction,
                                         Rng& rng);

// [ASP] a1... [ASP] a2... [BOS] (token ids) for the prefix language model.
std::vector<int> control_prefix_ids(const Vocab& vocab, const LabeledSentence& sentence);
std::vector<std::string> control_prefix_tokens(const LabeledSentence& sentence);

// Control prefix + full sentence + [EOS]; loss over sentence and EOS.
std::vector<LmExample> prefix_lm_examples(const Vocab& vocab, const Corpus& corpus);

LmModel train_prefix_lm(const Corpus& corpus, const Vocab& vocab, const ModelConfig& model_config,
                        const LmTrainConfig& config);

struct PrefixAugmentResult {
    LabeledSentence sentence;
    int control_tokens_replaced = 0;  // reserved ids emitted mid-sentence, rewritten to [UNK]
};

// Feeds the control prefix plus the first ceil(n/2) tokens and beam-decodes
// the remaining half. Original labels are attached unchanged; nothing forces
// the generated half to respect them.
PrefixAugmentResult prefix_augment(const LmModel& model, const Vocab& vocab,
                                   const LabeledSentence& sentence, int beam_size);

inline constexpr const char* kPrefixLmCheckpointKind = "prefix_lm";
inline constexpr const char* kFluencyLmCheckpointKind = "lm";

}  // namespace maskaug
