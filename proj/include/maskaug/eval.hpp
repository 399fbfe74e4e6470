#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "maskaug/augmenter.hpp"
#include "maskaug/baselines.hpp"
#include "maskaug/lm.hpp"

namespace maskaug {

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Exact-span matching: a predicted span counts iff (start, end) equals a
// gold span. Empty denominators score 0.
Prf span_f1(const Corpus& predicted, const Corpus& gold);

// Corpus-level BLEU in [0, 100]: clipped n-gram precision up to max_n with
// add-one smoothing for n >= 2 and the usual brevity penalty.
double corpus_bleu(const Corpus& candidates, const Corpus& references, int max_n = 4);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// Encoder-only tagger with a 3-way per-token head; greedy decoding with
// orphan-I coercion keeps outputs BIO-valid.
class TaggerModel {
public:
    explicit TaggerModel(ModelConfig cfg, const Vocab& vocab);

    const ModelConfig& config() const { return cfg_; }
    const Vocab& vocab() const { return vocab_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    std::vector<Label> predict(const std::vector<std::string>& tokens) const;
    Corpus predict_corpus(const Corpus& input) const;

    double loss_and_gradients(std::span<const LabeledSentence> batch);

private:
    ModelConfig cfg_;
    Vocab vocab_;
    nn::ParameterStore params_;
    nn::Tensor* tok_emb_ = nullptr;
    nn::Tensor* head_w_ = nullptr;  // n_labels x d_model
    nn::Tensor* head_b_ = nullptr;
    std::vector<nn::EncoderLayerParams> layers_;
    nn::Mat pos_enc_;
};

struct TaggerTrainConfig {
    long total_iterations = 500;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double grad_clip_norm = 1.0;
    long eval_interval = 100;  // dev F1 checks; the best state is kept
    std::uint64_t rng_seed = 1;
};

TaggerModel train_tagger(const Corpus& train, const Corpus& dev, const ModelConfig& model_config,
                         const TaggerTrainConfig& config);

// exp(mean per-token negative log-likelihood) under the language model.
double fluency_ppl(const LmModel& lm, const Vocab& vocab, const Corpus& corpus);

struct ReportRow {
    std::string strategy;
    int multiplier = 1;
    int seed = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double bleu = 0.0;
    double fluency = 0.0;
};

std::string report_csv(const std::vector<ReportRow>& rows);
std::string report_table(const std::vector<ReportRow>& rows);  // mean over seeds, human-readable

inline constexpr const char* kStrategySeq2seq = "seq2seq";
inline constexpr const char* kStrategySeq2seqNoLem = "seq2seq-no-lem";
inline constexpr const char* kStrategySynonym = "synonym";
inline constexpr const char* kStrategyIndepMask = "indep-mask";
inline constexpr const char* kStrategyPrefixLm = "prefix-lm";
inline constexpr const char* kStrategySource = "source";

struct StrategyArtifacts {
    const Seq2SeqModel* seq2seq = nullptr;
    const Seq2SeqModel* seq2seq_no_lem = nullptr;
    const Vocab* seq2seq_vocab = nullptr;
    const Thesaurus* thesaurus = nullptr;
    const InfillModel* infill = nullptr;
    const LmModel* prefix_lm = nullptr;
    const LmModel* fluency_lm = nullptr;  // trained on held-out in-domain text
    const Vocab* shared_vocab = nullptr;  // for baselines and the fluency LM
};

struct ExperimentConfig {
    std::vector<std::string> strategies;
    std::vector<int> multipliers = {1, 2};
    int n_seeds = 5;
    std::uint64_t seed_base = 1;
    AugmentationConfig aug;
    ModelConfig tagger_model;       // vocab_size filled per dataset
    TaggerTrainConfig tagger_train;
    double synonym_fraction = 0.5;
    double infill_fraction = 0.5;
};

// Generates k corpora for one strategy from the source corpus.
std::vector<Corpus> generate_for_strategy(const std::string& strategy, const Corpus& source,
                                          const StrategyArtifacts& art, const ExperimentConfig& cfg);

// Full grid: per (strategy, multiplier, seed) trains the tagger on every
// assembled dataset and averages span F1 on the test corpus. Generation
// quality columns (BLEU against the source, fluency under the held-out LM)
// are per strategy.
std::vector<ReportRow> run_experiment(const Corpus& train, const Corpus& dev, const Corpus& test,
                                      const StrategyArtifacts& art, const ExperimentConfig& cfg);

// Fraction of placed augmented sentences whose generated tokens at O-labeled
// span positions collide with a known aspect word.
double aspect_collision_fraction(const AugmentedCorpora& result, const Corpus& source,
                                 const std::set<std::string>& aspect_words);

// Aspect words of a corpus: every token occurring at a B or I position.
std::set<std::string> collect_aspect_words(const Corpus& corpus);

}  // namespace maskaug
