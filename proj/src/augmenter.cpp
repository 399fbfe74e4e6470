#include "maskaug/augmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace maskaug {

StartPolicy start_policy_from_string(const std::string& name) {
    if (name == "evenly-spaced") return StartPolicy::EvenlySpaced;
    if (name == "seeded-random") return StartPolicy::SeededRandom;
    if (name == "explicit") return StartPolicy::ExplicitList;
    throw std::invalid_argument("unknown start policy: " + name);
}

std::string to_string(StartPolicy policy) {
    switch (policy) {
        case StartPolicy::EvenlySpaced: return "evenly-spaced";
        case StartPolicy::SeededRandom: return "seeded-random";
        case StartPolicy::ExplicitList: return "explicit";
    }
    throw std::logic_error("bad start policy");
}

void AugmentationConfig::validate() const {
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("r must be in (0, 1]");
    if (beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
    if (variants_per_sentence < 1) throw std::invalid_argument("variants_per_sentence must be >= 1");
    if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    if (start_policy == StartPolicy::ExplicitList && explicit_starts.empty())
        throw std::invalid_argument("explicit start policy needs a start list");
}

BeamResult constrained_beam_search(const Seq2SeqModel& model, const EncodedExample& ex,
                                   int beam_size, const std::vector<int>& candidates) {
    if (beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
    const int m = ex.fragment_length();
    if (m < 1 || static_cast<int>(ex.fragment_ids.size()) != m)
        throw std::invalid_argument("invalid fragment span");

    nn::Mat H = model.encode(ex.masked_ids, ex.labels);

    std::vector<Hypothesis> beam(1);
    beam[0].cache = std::make_shared<nn::StepCache>();

    for (int t = 1; t <= m; ++t) {
        const int pos = ex.u + t - 1;
        const Label prev_label =
            pos - 1 >= 1 ? ex.labels[static_cast<std::size_t>(pos - 2)] : Label::O;
        const Label cur_label = ex.labels[static_cast<std::size_t>(pos - 1)];
        const bool forced = cur_label != Label::O;
        if (!forced && candidates.empty())
            throw std::invalid_argument("no candidate tokens for a free position");

        std::vector<Hypothesis> expanded;
        expanded.reserve(beam.size() * (forced ? 1 : candidates.size()));
        for (const Hypothesis& hyp : beam) {
            const int prev_token = t == 1 ? Vocab::kBos : hyp.tokens.back();
            auto cache = std::make_shared<nn::StepCache>(*hyp.cache);
            Eigen::RowVectorXd probs =
                model.decode_step(prev_token, prev_label, cur_label, pos, H, *cache);
            auto extend = [&](int token) {
                Hypothesis child;
                child.tokens = hyp.tokens;
                child.tokens.push_back(token);
                child.log_prob = hyp.log_prob + std::log(probs(token));
                child.cache = cache;
                expanded.push_back(std::move(child));
            };
            if (forced) {
                extend(ex.fragment_ids[static_cast<std::size_t>(t - 1)]);
            } else {
                for (int c : candidates) extend(c);
            }
        }
        // stable sort keeps (parent order, candidate order) on ties
        std::stable_sort(expanded.begin(), expanded.end(),
                         [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
        if (static_cast<int>(expanded.size()) > beam_size) expanded.resize(static_cast<std::size_t>(beam_size));
        beam = std::move(expanded);
        if (beam.empty()) throw std::logic_error("beam collapsed");  // unreachable by construction
    }
    return {beam.front().tokens, beam.front().log_prob};
}

BeamResult constrained_beam_search(const Seq2SeqModel& model, const Vocab& vocab,
                                   const EncodedExample& ex, int beam_size) {
    return constrained_beam_search(model, ex, beam_size, vocab.content_ids());
}

std::vector<int> variant_start_positions(int sentence_length, const AugmentationConfig& config,
                                         std::uint64_t seed) {
    const int m = fragment_length(sentence_length, config.r);
    const int max_start = sentence_length - m + 1;
    const int k = config.variants_per_sentence;

    std::vector<int> starts;
    switch (config.start_policy) {
        case StartPolicy::EvenlySpaced: {
            if (k == 1) {
                starts.push_back(1);
            } else {
                for (int j = 0; j < k; ++j) {
                    double x = 1.0 + static_cast<double>(max_start - 1) * j /
                                         static_cast<double>(k - 1);
                    starts.push_back(static_cast<int>(std::floor(x + 0.5)));
                }
            }
            break;
        }
        case StartPolicy::SeededRandom: {
            Rng rng(seed);
            auto picks = rng.sample_without_replacement(
                static_cast<std::size_t>(max_start),
                static_cast<std::size_t>(std::min(k, max_start)));
            for (auto p : picks) starts.push_back(static_cast<int>(p) + 1);
            std::sort(starts.begin(), starts.end());
            break;
        }
        case StartPolicy::ExplicitList: {
            for (int u : config.explicit_starts) {
                if (u < 1 || u > max_start)
                    throw std::invalid_argument("explicit start " + std::to_string(u) +
                                                " outside valid range [1, " +
                                                std::to_string(max_start) + "]");
                starts.push_back(u);
            }
            break;
        }
    }
    // keep first occurrence of each start, preserving order
    std::vector<int> unique;
    for (int u : starts)
        if (std::find(unique.begin(), unique.end(), u) == unique.end()) unique.push_back(u);
    if (static_cast<int>(unique.size()) > k) unique.resize(static_cast<std::size_t>(k));
    return unique;
}

std::vector<SentenceVariant> augment_sentence(const Seq2SeqModel& model, const Vocab& vocab,
                                              const LabeledSentence& sentence,
                                              const AugmentationConfig& config, std::uint64_t seed,
                                              const std::string& checkpoint_hash) {
    config.validate();
    const std::vector<int> candidates = vocab.content_ids();
    const auto starts = variant_start_positions(sentence.size(), config, seed);

    std::vector<SentenceVariant> variants;
    variants.reserve(starts.size());
    std::vector<const std::vector<std::string>*> kept_tokens;
    int index = 0;
    for (int u : starts) {
        EncodedExample ex = encode_example(vocab, mask_fragment(sentence, u, config.r));
        BeamResult beam = constrained_beam_search(model, ex, config.beam_size, candidates);

        std::vector<std::string> tokens = sentence.tokens();
        for (int t = 0; t < ex.fragment_length(); ++t) {
            const std::size_t pos = static_cast<std::size_t>(ex.u + t - 1);
            if (sentence.labels()[pos] == Label::O)
                tokens[pos] = vocab.token(beam.tokens[static_cast<std::size_t>(t)]);
            // non-O positions keep the original surface form (copy constraint)
        }

        SentenceVariant var{LabeledSentence(std::move(tokens), sentence.labels()), {}};
        var.meta.variant = index++;
        var.meta.u = ex.u;
        var.meta.v = ex.v;
        var.meta.r = config.r;
        var.meta.beam_size = config.beam_size;
        var.meta.log_prob = beam.log_prob;
        var.meta.checkpoint_hash = checkpoint_hash;

        if (config.forbid_identical && var.sentence.tokens() == sentence.tokens())
            var.meta.dropped_identical = true;
        if (config.dedup && !var.meta.dropped_identical) {
            for (const auto* seen : kept_tokens) {
                if (*seen == var.sentence.tokens()) {
                    var.meta.dropped_duplicate = true;
                    break;
                }
            }
        }
        variants.push_back(std::move(var));
        if (!variants.back().meta.dropped_duplicate && !variants.back().meta.dropped_identical)
            kept_tokens.push_back(&variants.back().sentence.tokens());
    }
    return variants;
}

std::vector<SentenceVariant> augment_sentence(const Seq2SeqModel& model, const Vocab& vocab,
                                              const LabeledSentence& sentence,
                                              const AugmentationConfig& config) {
    return augment_sentence(model, vocab, sentence, config, config.rng_seed);
}

AugmentedCorpora augment_corpus(const Seq2SeqModel& model, const Vocab& vocab, const Corpus& corpus,
                                const AugmentationConfig& config) {
    config.validate();
    const std::string hash = model.weights_hash(vocab);
    const std::size_t n = corpus.sentences.size();

    std::vector<std::vector<SentenceVariant>> per_sentence(n);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            per_sentence[i] = augment_sentence(model, vocab, corpus.sentences[i], config,
                                               mix_seed(config.rng_seed, i), hash);
    };
    if (config.jobs <= 1 || n < 2) {
        work(0, n);
    } else {
        const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), n);
        std::vector<std::thread> threads;
        const std::size_t chunk = (n + n_threads - 1) / n_threads;
        for (std::size_t t = 0; t < n_threads; ++t) {
            std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
            if (begin < end) threads.emplace_back(work, begin, end);
        }
        for (auto& th : threads) th.join();
    }

    AugmentedCorpora out;
    out.corpora.resize(static_cast<std::size_t>(config.variants_per_sentence));
    for (int j = 0; j < config.variants_per_sentence; ++j)
        out.corpora[static_cast<std::size_t>(j)].name =
            corpus.name + ".gen" + std::to_string(j + 1);

    for (std::size_t i = 0; i < n; ++i) {
        std::vector<SentenceVariant*> usable;
        for (auto& var : per_sentence[i]) {
            var.meta.source_index = i;
            if (!var.meta.dropped_duplicate && !var.meta.dropped_identical)
                usable.push_back(&var);
        }
        for (int j = 0; j < config.variants_per_sentence; ++j) {
            auto& corpus_j = out.corpora[static_cast<std::size_t>(j)];
            if (static_cast<std::size_t>(j) < usable.size()) {
                usable[static_cast<std::size_t>(j)]->meta.placed_corpus = j;
                corpus_j.sentences.push_back(usable[static_cast<std::size_t>(j)]->sentence);
            } else {
                corpus_j.sentences.push_back(corpus.sentences[i]);
                VariantMeta fallback;
                fallback.source_index = i;
                fallback.variant = -1;
                fallback.placed_corpus = j;
                fallback.r = config.r;
                fallback.beam_size = config.beam_size;
                fallback.checkpoint_hash = hash;
                fallback.fallback_source = true;
                out.records.push_back(fallback);
            }
        }
        for (const auto& var : per_sentence[i]) out.records.push_back(var.meta);
    }

    std::stable_sort(out.records.begin(), out.records.end(),
                     [](const VariantMeta& a, const VariantMeta& b) {
                         if (a.source_index != b.source_index) return a.source_index < b.source_index;
                         return a.variant < b.variant;
                     });
    return out;
}

std::vector<Corpus> assemble_training_sets(const Corpus& source, const std::vector<Corpus>& generated,
                                           int multiplier) {
    const int k = static_cast<int>(generated.size());
    if (multiplier < 1 || multiplier - 1 > k)
        throw std::invalid_argument("multiplier must be in [1, " + std::to_string(k + 1) + "]");

    const int choose = multiplier - 1;
    std::vector<Corpus> out;
    std::vector<int> combo(static_cast<std::size_t>(choose));
    for (int i = 0; i < choose; ++i) combo[static_cast<std::size_t>(i)] = i;

    auto emit = [&]() {
        Corpus dataset;
        dataset.name = source.name;
        dataset.sentences = source.sentences;
        for (int idx : combo) {
            dataset.name += "+gen" + std::to_string(idx + 1);
            const auto& gen = generated[static_cast<std::size_t>(idx)].sentences;
            dataset.sentences.insert(dataset.sentences.end(), gen.begin(), gen.end());
        }
        out.push_back(std::move(dataset));
    };

    if (choose == 0) {
        emit();
        return out;
    }
    while (true) {
        emit();
        int i = choose - 1;
        while (i >= 0 && combo[static_cast<std::size_t>(i)] == k - choose + i) --i;
        if (i < 0) break;
        ++combo[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < choose; ++j)
            combo[static_cast<std::size_t>(j)] = combo[static_cast<std::size_t>(j - 1)] + 1;
    }
    return out;
}

void write_metadata_jsonl(const std::vector<VariantMeta>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write metadata file: " + path);
    for (const auto& rec : records) {
        nlohmann::ordered_json j;
        j["source_index"] = rec.source_index;
        j["variant"] = rec.variant;
        j["corpus"] = rec.placed_corpus;
        j["u"] = rec.u;
        j["v"] = rec.v;
        j["r"] = rec.r;
        j["beam_size"] = rec.beam_size;
        j["log_prob"] = rec.log_prob;
        j["checkpoint"] = rec.checkpoint_hash;
        j["dropped_duplicate"] = rec.dropped_duplicate;
        j["dropped_identical"] = rec.dropped_identical;
        j["fallback_source"] = rec.fallback_source;
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("error writing metadata file: " + path);
}

}  // namespace maskaug
