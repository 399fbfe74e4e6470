#include "maskaug/masking.hpp"

#include <cmath>
#include <stdexcept>

namespace maskaug {

void SamplerConfig::validate() const {
    if (!(mask_proportion > 0.0 && mask_proportion <= 1.0))
        throw std::invalid_argument("mask proportion r must be in (0, 1]");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (min_length_exclusive < 0) throw std::invalid_argument("min length must be >= 0");
}

double sample_weight(int length, int min_length_exclusive) {
    if (length < 1) throw std::invalid_argument("sample_weight: length must be positive");
    return length > min_length_exclusive ? std::sqrt(static_cast<double>(length)) : 0.0;
}

std::size_t sample_example(const Corpus& corpus, Rng& rng, int min_length_exclusive) {
    std::vector<double> weights;
    weights.reserve(corpus.sentences.size());
    double total = 0.0;
    for (const auto& sent : corpus.sentences) {
        double w = sample_weight(sent.size(), min_length_exclusive);
        weights.push_back(w);
        total += w;
    }
    if (!(total > 0.0))
        throw std::runtime_error("no sampleable sentence: all lengths <= " +
                                 std::to_string(min_length_exclusive));
    return rng.weighted_index(weights, total);
}

int fragment_length(int length, double r) {
    if (length < 1) throw std::invalid_argument("fragment_length: length must be positive");
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("fragment_length: r must be in (0, 1]");
    int m = static_cast<int>(std::floor(r * static_cast<double>(length) + 0.5));
    if (m < 1) m = 1;
    if (m > length) m = length;
    return m;
}

int sample_start(int length, double r, Rng& rng) {
    int m = fragment_length(length, r);
    int max_start = length - m + 1;
    return 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_start)));
}

MaskedExample mask_fragment(const LabeledSentence& sentence, int u, double r) {
    const int n = sentence.size();
    const int m = fragment_length(n, r);
    const int v = u + m - 1;
    if (u < 1 || v > n)
        throw std::out_of_range("mask span [" + std::to_string(u) + ", " + std::to_string(v) +
                                "] out of bounds for sentence of length " + std::to_string(n));

    MaskedExample ex;
    ex.masked_tokens = sentence.tokens();
    ex.labels = sentence.labels();
    ex.u = u;
    ex.v = v;
    ex.fragment.reserve(static_cast<std::size_t>(m));
    for (int p = u; p <= v; ++p) {
        ex.fragment.push_back(sentence.tokens()[p - 1]);
        if (sentence.labels()[p - 1] == Label::O)
            ex.masked_tokens[p - 1] = Vocab::special_tokens()[Vocab::kMask];
    }
    return ex;
}

std::vector<MaskedExample> build_batch(const Corpus& corpus, const SamplerConfig& config, Rng& rng) {
    config.validate();
    std::vector<MaskedExample> batch;
    batch.reserve(static_cast<std::size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
        const auto& sent =
            corpus.sentences[sample_example(corpus, rng, config.min_length_exclusive)];
        int u = sample_start(sent.size(), config.mask_proportion, rng);
        batch.push_back(mask_fragment(sent, u, config.mask_proportion));
    }
    return batch;
}

std::vector<MaskedExample> build_batch(const Corpus& corpus, const SamplerConfig& config) {
    Rng rng(config.rng_seed);
    return build_batch(corpus, config, rng);
}

}  // namespace maskaug
