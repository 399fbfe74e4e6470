#pragma once

#include <memory>
#include <string>
#include <vector>

#include "maskaug/model.hpp"

namespace maskaug {

enum class StartPolicy { EvenlySpaced, SeededRandom, ExplicitList };

StartPolicy start_policy_from_string(const std::string& name);
std::string to_string(StartPolicy policy);

struct AugmentationConfig {
    double r = 0.5;
    int beam_size = 5;
    int variants_per_sentence = 4;  // k
    StartPolicy start_policy = StartPolicy::EvenlySpaced;
    std::vector<int> explicit_starts;
    bool dedup = true;             // drop duplicate variants within a sentence
    bool forbid_identical = false; // drop variants equal to the source
    std::uint64_t rng_seed = 0;
    int jobs = 1;

    void validate() const;
};

// Partial fragment during beam decoding; the cache covers exactly the
// inputs consumed so far and is shared between siblings.
struct Hypothesis {
    std::vector<int> tokens;
    double log_prob = 0.0;
    std::shared_ptr<nn::StepCache> cache;
};

struct BeamResult {
    std::vector<int> tokens;  // fragment ids, length m
    double log_prob = 0.0;
};

// Highest-scoring fragment subject to the copy constraint: every span
// position with a B/I label emits exactly the original token. Free (O)
// positions range over `candidates`.
BeamResult constrained_beam_search(const Seq2SeqModel& model, const EncodedExample& ex,
                                   int beam_size, const std::vector<int>& candidates);
BeamResult constrained_beam_search(const Seq2SeqModel& model, const Vocab& vocab,
                                   const EncodedExample& ex, int beam_size);

struct VariantMeta {
    std::size_t source_index = 0;
    int variant = 0;       // 0-based index within the sentence's variant list
    int placed_corpus = -1;  // generated-corpus index, -1 while unplaced
    int u = 0;
    int v = 0;
    double r = 0.0;
    int beam_size = 0;
    double log_prob = 0.0;
    std::string checkpoint_hash;
    bool dropped_duplicate = false;
    bool dropped_identical = false;
    bool fallback_source = false;  // source sentence reused for a missing variant
};

struct SentenceVariant {
    LabeledSentence sentence;
    VariantMeta meta;
};

// Distinct start positions for k variants over the valid range
// [1, n - m + 1] under the configured policy.
std::vector<int> variant_start_positions(int sentence_length, const AugmentationConfig& config,
                                         std::uint64_t seed);

// Up to k variants of one sentence; every variant keeps the original label
// sequence and the original tokens at non-O positions. Dropped variants are
// returned too, flagged in their metadata.
std::vector<SentenceVariant> augment_sentence(const Seq2SeqModel& model, const Vocab& vocab,
                                              const LabeledSentence& sentence,
                                              const AugmentationConfig& config, std::uint64_t seed,
                                              const std::string& checkpoint_hash = "");
std::vector<SentenceVariant> augment_sentence(const Seq2SeqModel& model, const Vocab& vocab,
                                              const LabeledSentence& sentence,
                                              const AugmentationConfig& config);

struct AugmentedCorpora {
    std::vector<Corpus> corpora;       // k corpora; the j-th holds each sentence's j-th variant
    std::vector<VariantMeta> records;  // every produced variant plus fallback rows
};

AugmentedCorpora augment_corpus(const Seq2SeqModel& model, const Vocab& vocab, const Corpus& corpus,
                                const AugmentationConfig& config);

// Source unioned with every (multiplier - 1)-subset of the generated
// corpora, in lexicographic subset order. multiplier = 1 yields the source.
std::vector<Corpus> assemble_training_sets(const Corpus& source, const std::vector<Corpus>& generated,
                                           int multiplier);

void write_metadata_jsonl(const std::vector<VariantMeta>& records, const std::string& path);

}  // namespace maskaug
