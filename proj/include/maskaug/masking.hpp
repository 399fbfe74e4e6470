#pragma once

#include <cstdint>
#include <vector>

#include "maskaug/corpus.hpp"
#include "maskaug/rng.hpp"

namespace maskaug {

// A sentence with one contiguous fragment selected for reconstruction.
// Positions u..v (1-based inclusive) form the fragment; inside it the
// O-labeled tokens are replaced by [MASK] while B/I tokens stay visible.
// The target fragment keeps the original tokens at every span position.
struct MaskedExample {
    std::vector<std::string> masked_tokens;
    std::vector<Label> labels;
    std::vector<std::string> fragment;
    int u = 0;
    int v = 0;

    int fragment_length() const { return v - u + 1; }
};

struct SamplerConfig {
    int min_length_exclusive = 5;   // sentences of length <= this are never sampled
    double mask_proportion = 0.5;   // r in (0, 1]
    int batch_size = 8;             // B
    std::uint64_t rng_seed = 0;

    void validate() const;
};

// Length-based sampling weight: sqrt(length) above the exclusion cutoff,
// zero otherwise.
double sample_weight(int length, int min_length_exclusive = 5);

// Index of a sentence drawn with replacement, probability proportional to
// sample_weight. Throws when no sentence is sampleable.
std::size_t sample_example(const Corpus& corpus, Rng& rng, int min_length_exclusive = 5);

// Fragment length under proportion r: max(1, round-half-up(r * length)).
int fragment_length(int length, double r);

// Uniform start position u in [1, length - m + 1].
int sample_start(int length, double r, Rng& rng);

MaskedExample mask_fragment(const LabeledSentence& sentence, int u, double r);

// B masked examples via sample_example -> sample_start -> mask_fragment,
// seeded by config.rng_seed.
std::vector<MaskedExample> build_batch(const Corpus& corpus, const SamplerConfig& config);
std::vector<MaskedExample> build_batch(const Corpus& corpus, const SamplerConfig& config, Rng& rng);

}  // namespace maskaug
