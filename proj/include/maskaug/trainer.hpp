#pragma once

#include <optional>
#include <string>
#include <vector>

#include "maskaug/model.hpp"

namespace maskaug {

struct TrainConfig {
    long total_iterations = 2000;  // K
    int batch_size = 8;            // B
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip_norm = 1.0;  // <= 0 disables clipping
    long validation_interval = 100;
    double mask_r = 0.5;
    int min_length_exclusive = 5;
    std::uint64_t rng_seed = 1;
    std::string checkpoint_path;  // best-validation checkpoint written here when set

    void validate() const;
};

struct TrainRecord {
    long iteration;
    double loss;      // mean training loss since the previous record
    double val_ppl;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    std::vector<double> iteration_losses;  // one entry per iteration

    std::string to_csv() const;  // header: iteration,loss,val_ppl
};

// Bias-corrected adaptive-moment optimizer over a parameter store.
class AdamOptimizer {
public:
    AdamOptimizer(nn::ParameterStore& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void step();
    long step_count() const { return step_count_; }

    // Moment state round-trips through checkpoints for exact resume.
    void save_state(CheckpointData& data) const;
    void load_state(const CheckpointData& data);

private:
    nn::ParameterStore& params_;
    double lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<nn::Mat> m_, v_;
};

struct TrainResult {
    Seq2SeqModel model;  // parameters after the final iteration
    Vocab vocab;
    TrainLog log;
    CheckpointData best_checkpoint;  // lowest validation perplexity seen
    double best_val_ppl = 0.0;
    CheckpointData resume_state;  // final parameters plus optimizer state
};

// Algorithm-style loop: every iteration draws a fresh masked batch (stream
// seeded per iteration), takes one optimizer step, and validates on the
// held-out corpus at a fixed interval. Aborts on a non-finite loss.
TrainResult train(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& config,
                  const Corpus& holdout);

// Exact continuation from a resume state: reproduces the tail of an
// uninterrupted run with the same seeds.
TrainResult resume_train(const CheckpointData& resume_state, const Corpus& corpus,
                         const TrainConfig& config, const Corpus& holdout);

// exp(mean NLL per fragment token) under deterministic per-sentence masking.
double validation_perplexity(const Seq2SeqModel& model, const Vocab& vocab, const Corpus& holdout,
                             double r, std::uint64_t seed);

// Deterministic split helper: the last `holdout_count` sentences become the
// holdout, the rest the training corpus.
std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, int holdout_count);

}  // namespace maskaug
