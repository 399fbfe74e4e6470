#include "maskaug/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

namespace maskaug {

namespace {

void check_aligned(const Corpus& a, const Corpus& b) {
    if (a.sentences.size() != b.sentences.size())
        throw std::invalid_argument("corpora have different sentence counts");
    for (std::size_t i = 0; i < a.sentences.size(); ++i)
        if (a.sentences[i].size() != b.sentences[i].size())
            throw std::invalid_argument("sentence " + std::to_string(i + 1) +
                                        " lengths differ between corpora");
}

}  // namespace

Prf span_f1(const Corpus& predicted, const Corpus& gold) {
    check_aligned(predicted, gold);
    long matches = 0, n_pred = 0, n_gold = 0;
    for (std::size_t i = 0; i < gold.sentences.size(); ++i) {
        auto pred_spans = spans_from_bio(predicted.sentences[i].labels());
        auto gold_spans = spans_from_bio(gold.sentences[i].labels());
        n_pred += static_cast<long>(pred_spans.size());
        n_gold += static_cast<long>(gold_spans.size());
        for (const Span& p : pred_spans)
            if (std::find(gold_spans.begin(), gold_spans.end(), p) != gold_spans.end()) ++matches;
    }
    Prf out;
    out.precision = n_pred == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(n_pred);
    out.recall = n_gold == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(n_gold);
    out.f1 = (out.precision > 0.0 && out.recall > 0.0)
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts ngram_counts(const std::vector<std::string>& tokens, int n) {
    NgramCounts counts;
    if (static_cast<int>(tokens.size()) >= n)
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
            ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                              tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return counts;
}

}  // namespace

double corpus_bleu(const Corpus& candidates, const Corpus& references, int max_n) {
    if (max_n < 1) throw std::invalid_argument("max_n must be >= 1");
    if (candidates.sentences.size() != references.sentences.size())
        throw std::invalid_argument("corpora have different sentence counts");

    std::vector<long> matched(static_cast<std::size_t>(max_n), 0);
    std::vector<long> total(static_cast<std::size_t>(max_n), 0);
    long cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.sentences.size(); ++i) {
        const auto& cand = candidates.sentences[i].tokens();
        const auto& ref = references.sentences[i].tokens();
        cand_len += static_cast<long>(cand.size());
        ref_len += static_cast<long>(ref.size());
        for (int n = 1; n <= max_n; ++n) {
            NgramCounts c = ngram_counts(cand, n);
            NgramCounts r = ngram_counts(ref, n);
            for (const auto& [gram, count] : c) {
                total[static_cast<std::size_t>(n - 1)] += count;
                auto it = r.find(gram);
                if (it != r.end())
                    matched[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
            }
        }
    }

    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const double smooth = n >= 2 ? 1.0 : 0.0;  // add-one for higher orders
        double num = static_cast<double>(matched[static_cast<std::size_t>(n - 1)]) + smooth;
        double den = static_cast<double>(total[static_cast<std::size_t>(n - 1)]) + smooth;
        if (num <= 0.0 || den <= 0.0) return 0.0;
        log_sum += std::log(num / den);
    }
    double bp = cand_len >= ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("spearman needs two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> rank(v.size());
        std::size_t i = 0;
        while (i < order.size()) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
            i = j + 1;
        }
        return rank;
    };
    auto rx = ranks(xs), ry = ranks(ys);
    double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
    double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) return 0.0;
    return cov / std::sqrt(vx * vy);
}

TaggerModel::TaggerModel(ModelConfig cfg, const Vocab& vocab) : cfg_(cfg), vocab_(vocab) {
    cfg_.vocab_size = vocab_.size();
    cfg_.validate();
    Rng rng(cfg_.param_seed);
    tok_emb_ = &nn::create_weight(params_, "tok_emb", cfg_.vocab_size, cfg_.d_model, rng);
    for (int l = 0; l < cfg_.n_enc_layers; ++l)
        layers_.push_back(nn::create_encoder_layer(params_, "enc." + std::to_string(l), cfg_.d_model,
                                                   cfg_.d_ff, rng));
    head_w_ = &nn::create_weight(params_, "head.w", cfg_.n_labels, cfg_.d_model, rng);
    head_b_ = &nn::create_bias(params_, "head.b", cfg_.n_labels);
    pos_enc_ = nn::sinusoidal_positions(cfg_.max_positions, cfg_.d_model);
}

std::vector<Label> TaggerModel::predict(const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("empty sentence");
    if (tokens.size() > static_cast<std::size_t>(cfg_.max_positions))
        throw std::invalid_argument("sentence exceeds max_positions");
    const int n = static_cast<int>(tokens.size());
    nn::Mat x(n, cfg_.d_model);
    for (int i = 0; i < n; ++i)
        x.row(i) = tok_emb_->value.row(vocab_.lookup(tokens[static_cast<std::size_t>(i)])) +
                   pos_enc_.row(i);
    nn::Mat h = nn::stack_forward_infer(layers_, std::move(x), cfg_.n_heads);
    std::vector<Label> labels(static_cast<std::size_t>(n), Label::O);
    for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd logits = h.row(i) * head_w_->value.transpose() + head_b_->value.row(0);
        int best = 0;
        for (int c = 1; c < cfg_.n_labels; ++c)
            if (logits(c) > logits(best)) best = c;
        labels[static_cast<std::size_t>(i)] = static_cast<Label>(best);
    }
    // orphan I -> B keeps the output BIO-valid
    for (int i = 0; i < n; ++i)
        if (labels[static_cast<std::size_t>(i)] == Label::I &&
            (i == 0 || labels[static_cast<std::size_t>(i - 1)] == Label::O))
            labels[static_cast<std::size_t>(i)] = Label::B;
    return labels;
}

Corpus TaggerModel::predict_corpus(const Corpus& input) const {
    Corpus out;
    out.name = input.name + ".pred";
    out.sentences.reserve(input.sentences.size());
    for (const auto& sent : input.sentences)
        out.sentences.emplace_back(sent.tokens(), predict(sent.tokens()));
    return out;
}

double TaggerModel::loss_and_gradients(std::span<const LabeledSentence> batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    nn::Graph g;
    nn::Var total;
    long total_tokens = 0;
    for (const LabeledSentence& sent : batch) {
        const int n = sent.size();
        std::vector<int> ids = vocab_.encode(sent.tokens());
        nn::Var x = g.add(g.rows(g.param(*tok_emb_), ids), g.leaf(pos_enc_.topRows(n)));
        for (const auto& layer : layers_) x = nn::encoder_layer(g, layer, x, cfg_.n_heads);
        nn::Var logits = g.add_rowvec(g.matmul_nt(x, g.param(*head_w_)), g.param(*head_b_));
        std::vector<int> targets(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            targets[static_cast<std::size_t>(i)] = label_index(sent.labels()[static_cast<std::size_t>(i)]);
        total_tokens += n;
        nn::Var nll = g.nll_rows(logits, targets);
        total = total ? g.add(total, nll) : nll;
    }
    nn::Var loss = g.scale(total, 1.0 / static_cast<double>(total_tokens));
    g.backward(loss);
    return loss->value(0, 0);
}

TaggerModel train_tagger(const Corpus& train, const Corpus& dev, const ModelConfig& model_config,
                         const TaggerTrainConfig& config) {
    if (train.sentences.empty()) throw std::invalid_argument("training corpus is empty");
    if (dev.sentences.empty()) throw std::invalid_argument("dev corpus is empty");

    Vocab vocab = build_vocab(train);
    ModelConfig cfg = model_config;
    for (const auto& s : train.sentences) cfg.max_positions = std::max(cfg.max_positions, s.size());
    for (const auto& s : dev.sentences) cfg.max_positions = std::max(cfg.max_positions, s.size());

    TaggerModel model(cfg, vocab);
    AdamOptimizer opt(model.params(), config.learning_rate);

    double best_f1 = -1.0;
    std::vector<nn::Mat> best_values;
    auto snapshot = [&]() {
        best_values.clear();
        for (const nn::Tensor* t : model.params().all()) best_values.push_back(t->value);
    };
    auto evaluate = [&]() { return span_f1(model.predict_corpus(dev), dev).f1; };

    for (long i = 1; i <= config.total_iterations; ++i) {
        Rng rng(mix_seed(config.rng_seed, static_cast<std::uint64_t>(i)));
        std::vector<LabeledSentence> batch;
        batch.reserve(static_cast<std::size_t>(config.batch_size));
        for (int b = 0; b < config.batch_size; ++b)
            batch.push_back(train.sentences[rng.uniform_index(train.sentences.size())]);
        model.params().zero_grads();
        double loss = model.loss_and_gradients(batch);
        if (!std::isfinite(loss))
            throw std::runtime_error("tagger training diverged at iteration " + std::to_string(i));
        auto tensors = model.params().all();
        nn::clip_global_norm(tensors, config.grad_clip_norm);
        opt.step();

        if (i % config.eval_interval == 0 || i == config.total_iterations) {
            double f1 = evaluate();
            if (f1 > best_f1) {
                best_f1 = f1;
                snapshot();
            }
        }
    }
    if (!best_values.empty()) {
        auto tensors = model.params().all();
        for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i]->value = best_values[i];
    }
    return model;
}

double fluency_ppl(const LmModel& lm, const Vocab& vocab, const Corpus& corpus) {
    if (corpus.sentences.empty()) throw std::invalid_argument("empty corpus");
    double nll = 0.0;
    long tokens = 0;
    for (const auto& ex : plain_lm_examples(vocab, corpus)) {
        nll += lm.sequence_nll(ex);
        tokens += static_cast<long>(ex.ids.size() - ex.predict_from);
    }
    return std::exp(nll / static_cast<double>(tokens));
}

std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string out = "strategy,multiplier,seed,precision,recall,f1,bleu,fluency\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.6f,%.6f,%.6f,%.4f,%.4f\n", r.strategy.c_str(),
                      r.multiplier, r.seed, r.precision, r.recall, r.f1, r.bleu, r.fluency);
        out += buf;
    }
    return out;
}

std::string report_table(const std::vector<ReportRow>& rows) {
    struct Agg {
        double p = 0, r = 0, f = 0, bleu = 0, fluency = 0;
        int n = 0;
    };
    std::map<std::pair<std::string, int>, Agg> cells;
    std::vector<std::pair<std::string, int>> order;
    for (const auto& row : rows) {
        auto key = std::make_pair(row.strategy, row.multiplier);
        if (!cells.count(key)) order.push_back(key);
        Agg& a = cells[key];
        a.p += row.precision;
        a.r += row.recall;
        a.f += row.f1;
        a.bleu += row.bleu;
        a.fluency += row.fluency;
        ++a.n;
    }
    std::string out = "strategy        mult  seeds  precision  recall     f1        bleu      fluency\n";
    char buf[256];
    for (const auto& key : order) {
        const Agg& a = cells[key];
        const double n = static_cast<double>(a.n);
        std::snprintf(buf, sizeof(buf), "%-15s %-5d %-6d %-10.4f %-10.4f %-9.4f %-9.2f %-9.2f\n",
                      key.first.c_str(), key.second, a.n, a.p / n, a.r / n, a.f / n, a.bleu / n,
                      a.fluency / n);
        out += buf;
    }
    return out;
}

std::vector<Corpus> generate_for_strategy(const std::string& strategy, const Corpus& source,
                                          const StrategyArtifacts& art, const ExperimentConfig& cfg) {
    const int k = cfg.aug.variants_per_sentence;
    if (strategy == kStrategySeq2seq || strategy == kStrategySeq2seqNoLem) {
        const Seq2SeqModel* model =
            strategy == kStrategySeq2seq ? art.seq2seq : art.seq2seq_no_lem;
        if (!model || !art.seq2seq_vocab)
            throw std::invalid_argument("strategy " + strategy + " needs a trained checkpoint");
        return augment_corpus(*model, *art.seq2seq_vocab, source, cfg.aug).corpora;
    }
    if (!art.shared_vocab && strategy != kStrategySynonym)
        throw std::invalid_argument("strategy " + strategy + " needs a vocabulary");

    std::vector<Corpus> out(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        out[static_cast<std::size_t>(j)].name = source.name + "." + strategy + std::to_string(j + 1);
        for (std::size_t i = 0; i < source.sentences.size(); ++i) {
            const auto& sent = source.sentences[i];
            Rng rng(mix_seed(cfg.aug.rng_seed, i * 1000003ULL + static_cast<std::uint64_t>(j)));
            if (strategy == kStrategySynonym) {
                if (!art.thesaurus) throw std::invalid_argument("synonym strategy needs a thesaurus");
                out[static_cast<std::size_t>(j)].sentences.push_back(
                    synonym_augment(sent, *art.thesaurus, cfg.synonym_fraction, rng));
            } else if (strategy == kStrategyIndepMask) {
                if (!art.infill) throw std::invalid_argument("indep-mask strategy needs a trained infill model");
                out[static_cast<std::size_t>(j)].sentences.push_back(independent_mask_augment(
                    *art.infill, *art.shared_vocab, sent, cfg.infill_fraction, rng));
            } else if (strategy == kStrategyPrefixLm) {
                if (!art.prefix_lm) throw std::invalid_argument("prefix-lm strategy needs a trained LM");
                out[static_cast<std::size_t>(j)].sentences.push_back(
                    prefix_augment(*art.prefix_lm, *art.shared_vocab, sent, cfg.aug.beam_size)
                        .sentence);
            } else {
                throw std::invalid_argument("unknown strategy: " + strategy);
            }
        }
    }
    return out;
}

namespace {

Corpus concat_corpora(const std::vector<Corpus>& parts, const std::string& name) {
    Corpus out;
    out.name = name;
    for (const auto& c : parts)
        out.sentences.insert(out.sentences.end(), c.sentences.begin(), c.sentences.end());
    return out;
}

Corpus repeat_corpus(const Corpus& corpus, int times) {
    Corpus out;
    out.name = corpus.name;
    for (int i = 0; i < times; ++i)
        out.sentences.insert(out.sentences.end(), corpus.sentences.begin(), corpus.sentences.end());
    return out;
}

}  // namespace

std::vector<ReportRow> run_experiment(const Corpus& train, const Corpus& dev, const Corpus& test,
                                      const StrategyArtifacts& art, const ExperimentConfig& cfg) {
    if (cfg.strategies.empty()) throw std::invalid_argument("no strategies selected");
    if (cfg.n_seeds < 1) throw std::invalid_argument("n_seeds must be >= 1");

    std::vector<ReportRow> rows;
    const Vocab* fluency_vocab = art.shared_vocab ? art.shared_vocab : art.seq2seq_vocab;
    auto fluency_of = [&](const Corpus& c) {
        return (art.fluency_lm && fluency_vocab) ? fluency_ppl(*art.fluency_lm, *fluency_vocab, c)
                                                 : 0.0;
    };

    auto tagger_f1 = [&](const Corpus& dataset, int seed_index) {
        ModelConfig mc = cfg.tagger_model;
        mc.param_seed = mix_seed(cfg.seed_base, 7700 + static_cast<std::uint64_t>(seed_index));
        TaggerTrainConfig tc = cfg.tagger_train;
        tc.rng_seed = mix_seed(cfg.seed_base, 8800 + static_cast<std::uint64_t>(seed_index));
        TaggerModel tagger = train_tagger(dataset, dev, mc, tc);
        return span_f1(tagger.predict_corpus(test), test);
    };

    bool source_rows_done = false;
    const double source_fluency = fluency_of(train);

    for (const std::string& strategy : cfg.strategies) {
        std::vector<Corpus> generated;
        double strategy_bleu = 100.0, strategy_fluency = source_fluency;
        bool need_generation =
            std::any_of(cfg.multipliers.begin(), cfg.multipliers.end(), [](int m) { return m > 1; });
        if (need_generation) {
            generated = generate_for_strategy(strategy, train, art, cfg);
            Corpus all_generated = concat_corpora(generated, strategy);
            Corpus repeated_source = repeat_corpus(train, static_cast<int>(generated.size()));
            strategy_bleu = corpus_bleu(all_generated, repeated_source);
            strategy_fluency = fluency_of(all_generated);
        }

        for (int multiplier : cfg.multipliers) {
            if (multiplier == 1) {
                if (source_rows_done) continue;
                for (int s = 0; s < cfg.n_seeds; ++s) {
                    Prf prf = tagger_f1(train, s);
                    rows.push_back({kStrategySource, 1, s, prf.precision, prf.recall, prf.f1, 100.0,
                                    source_fluency});
                }
                source_rows_done = true;
                continue;
            }
            auto datasets = assemble_training_sets(train, generated, multiplier);
            for (int s = 0; s < cfg.n_seeds; ++s) {
                Prf mean{};
                for (const Corpus& dataset : datasets) {
                    Prf prf = tagger_f1(dataset, s);
                    mean.precision += prf.precision;
                    mean.recall += prf.recall;
                    mean.f1 += prf.f1;
                }
                const double nd = static_cast<double>(datasets.size());
                rows.push_back({strategy, multiplier, s, mean.precision / nd, mean.recall / nd,
                                mean.f1 / nd, strategy_bleu, strategy_fluency});
            }
        }
    }
    return rows;
}

std::set<std::string> collect_aspect_words(const Corpus& corpus) {
    std::set<std::string> words;
    for (const auto& sent : corpus.sentences)
        for (int i = 0; i < sent.size(); ++i)
            if (sent.labels()[static_cast<std::size_t>(i)] != Label::O)
                words.insert(sent.tokens()[static_cast<std::size_t>(i)]);
    return words;
}

double aspect_collision_fraction(const AugmentedCorpora& result, const Corpus& source,
                                 const std::set<std::string>& aspect_words) {
    long placed = 0, collided = 0;
    for (const VariantMeta& rec : result.records) {
        if (rec.placed_corpus < 0 || rec.fallback_source) continue;
        ++placed;
        const auto& sent =
            result.corpora[static_cast<std::size_t>(rec.placed_corpus)].sentences[rec.source_index];
        const auto& labels = source.sentences[rec.source_index].labels();
        for (int p = rec.u; p <= rec.v; ++p) {
            if (labels[static_cast<std::size_t>(p - 1)] != Label::O) continue;
            if (aspect_words.count(sent.tokens()[static_cast<std::size_t>(p - 1)])) {
                ++collided;
                break;
            }
        }
    }
    return placed == 0 ? 0.0 : static_cast<double>(collided) / static_cast<double>(placed);
}

}  // namespace maskaug
