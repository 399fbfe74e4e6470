#include "maskaug/baselines.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "maskaug/trainer.hpp"

namespace maskaug {

namespace {

std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace

Thesaurus Thesaurus::parse(const std::string& text) {
    Thesaurus t;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        if (raw.empty() || raw[0] == '#') continue;
        auto tab = raw.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= raw.size())
            throw ParseError("expected 'word<TAB>syn1,syn2,...'", line_no);
        std::string word = lowercase(raw.substr(0, tab));
        std::vector<std::string> syns;
        std::string item;
        std::istringstream list(raw.substr(tab + 1));
        while (std::getline(list, item, ',')) {
            if (!item.empty()) syns.push_back(item);
        }
        if (syns.empty()) throw ParseError("word '" + word + "' has no synonyms", line_no);
        t.by_word_[word] = std::move(syns);
    }
    return t;
}

Thesaurus Thesaurus::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open thesaurus file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const std::vector<std::string>* Thesaurus::lookup(const std::string& word) const {
    auto it = by_word_.find(lowercase(word));
    return it == by_word_.end() ? nullptr : &it->second;
}

LabeledSentence synonym_augment(const LabeledSentence& sentence, const Thesaurus& thesaurus,
                                double replace_fraction, Rng& rng) {
    if (!(replace_fraction >= 0.0 && replace_fraction <= 1.0))
        throw std::invalid_argument("replace_fraction must be in [0, 1]");
    const int n = sentence.size();
    const int target = round_half_up(replace_fraction * n);

    std::vector<int> eligible;
    for (int i = 0; i < n; ++i)
        if (sentence.labels()[static_cast<std::size_t>(i)] == Label::O &&
            thesaurus.lookup(sentence.tokens()[static_cast<std::size_t>(i)]))
            eligible.push_back(i);

    const int count = std::min<int>(target, static_cast<int>(eligible.size()));
    std::vector<std::string> tokens = sentence.tokens();
    if (count > 0) {
        auto picks = rng.sample_without_replacement(eligible.size(), static_cast<std::size_t>(count));
        std::sort(picks.begin(), picks.end());
        for (std::size_t p : picks) {
            const int pos = eligible[p];
            const auto& syns = *thesaurus.lookup(tokens[static_cast<std::size_t>(pos)]);
            tokens[static_cast<std::size_t>(pos)] = syns[rng.uniform_index(syns.size())];
        }
    }
    return LabeledSentence(std::move(tokens), sentence.labels());
}

InfillModel::InfillModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.param_seed);
    tok_emb_ = &nn::create_weight(params_, "tok_emb", cfg_.vocab_size, cfg_.d_model, rng);
    label_emb_ = &params_.create("label_emb", cfg_.n_labels, cfg_.d_model);
    for (int l = 0; l < cfg_.n_enc_layers; ++l)
        layers_.push_back(nn::create_encoder_layer(params_, "enc." + std::to_string(l), cfg_.d_model,
                                                   cfg_.d_ff, rng));
    out_w_ = &nn::create_weight(params_, "out.w", cfg_.vocab_size, cfg_.d_model, rng);
    out_b_ = &nn::create_bias(params_, "out.b", cfg_.vocab_size);
    pos_enc_ = nn::sinusoidal_positions(cfg_.max_positions, cfg_.d_model);
}

nn::Mat InfillModel::predict_probs(const std::vector<int>& ids,
                                   const std::vector<Label>& labels) const {
    if (ids.size() != labels.size()) throw std::invalid_argument("token/label length mismatch");
    if (ids.empty() || ids.size() > static_cast<std::size_t>(cfg_.max_positions))
        throw std::invalid_argument("bad input length");
    const int n = static_cast<int>(ids.size());
    nn::Mat x(n, cfg_.d_model);
    for (int i = 0; i < n; ++i) {
        const int id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("bad token id");
        x.row(i) = tok_emb_->value.row(id) +
                   label_emb_->value.row(label_index(labels[static_cast<std::size_t>(i)])) +
                   pos_enc_.row(i);
    }
    nn::Mat h = nn::stack_forward_infer(layers_, std::move(x), cfg_.n_heads);
    nn::Mat probs(n, cfg_.vocab_size);
    for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd logits = h.row(i) * out_w_->value.transpose() + out_b_->value.row(0);
        probs.row(i) = nn::softmax_row(logits);
    }
    return probs;
}

double InfillModel::loss_and_gradients(std::span<const InfillExample> batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    nn::Graph g;
    nn::Var total;
    long total_targets = 0;
    for (const InfillExample& ex : batch) {
        if (ex.positions.empty()) continue;
        const int n = static_cast<int>(ex.masked_ids.size());
        std::vector<int> lab_ids(ex.labels.size());
        for (std::size_t i = 0; i < ex.labels.size(); ++i) lab_ids[i] = label_index(ex.labels[i]);

        nn::Var x = g.add(g.rows(g.param(*tok_emb_), ex.masked_ids),
                          g.rows(g.param(*label_emb_), lab_ids));
        x = g.add(x, g.leaf(pos_enc_.topRows(n)));
        for (const auto& layer : layers_) x = nn::encoder_layer(g, layer, x, cfg_.n_heads);

        nn::Var picked = g.rows(x, ex.positions);
        nn::Var logits = g.add_rowvec(g.matmul_nt(picked, g.param(*out_w_)), g.param(*out_b_));
        nn::Var nll = g.nll_rows(logits, ex.targets);
        total_targets += static_cast<long>(ex.targets.size());
        total = total ? g.add(total, nll) : nll;
    }
    if (!total) throw std::invalid_argument("batch has no masked positions");
    nn::Var loss = g.scale(total, 1.0 / static_cast<double>(total_targets));
    g.backward(loss);
    return loss->value(0, 0);
}

CheckpointData InfillModel::to_checkpoint(const Vocab& vocab) const {
    if (vocab.size() != cfg_.vocab_size)
        throw std::invalid_argument("vocab size disagrees with model config");
    CheckpointData data;
    data.kind = kCheckpointKind;
    store_model_config(data, cfg_);
    data.vocab_tokens = vocab.tokens();
    append_tensors(data, params_);
    return data;
}

InfillModel InfillModel::from_checkpoint(const CheckpointData& data) {
    if (data.kind != kCheckpointKind)
        throw std::runtime_error("expected an infill checkpoint, found '" + data.kind + "'");
    InfillModel model(read_model_config(data));
    restore_tensors(data, model.params_);
    return model;
}

std::vector<int> select_mask_positions(const LabeledSentence& sentence, double mask_fraction,
                                       Rng& rng) {
    if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0))
        throw std::invalid_argument("mask_fraction must be in [0, 1]");
    const int n = sentence.size();
    const int target = round_half_up(mask_fraction * n);
    std::vector<int> eligible;
    for (int i = 0; i < n; ++i)
        if (sentence.labels()[static_cast<std::size_t>(i)] == Label::O) eligible.push_back(i);
    const int count = std::min<int>(target, static_cast<int>(eligible.size()));
    if (count == 0) return {};
    auto picks = rng.sample_without_replacement(eligible.size(), static_cast<std::size_t>(count));
    std::vector<int> positions;
    positions.reserve(picks.size());
    for (std::size_t p : picks) positions.push_back(eligible[p]);
    std::sort(positions.begin(), positions.end());
    return positions;
}

namespace {

InfillExample make_infill_example(const Vocab& vocab, const LabeledSentence& sentence,
                                  const std::vector<int>& positions) {
    InfillExample ex;
    ex.masked_ids = vocab.encode(sentence.tokens());
    ex.labels = sentence.labels();
    for (int p : positions) {
        ex.positions.push_back(p);
        ex.targets.push_back(ex.masked_ids[static_cast<std::size_t>(p)]);
        ex.masked_ids[static_cast<std::size_t>(p)] = Vocab::kMask;
    }
    return ex;
}

}  // namespace

InfillModel train_infill(const Corpus& corpus, const Vocab& vocab, const ModelConfig& model_config,
                         const InfillTrainConfig& config) {
    if (corpus.sentences.empty()) throw std::invalid_argument("empty corpus");
    ModelConfig cfg = model_config;
    cfg.vocab_size = vocab.size();
    for (const auto& s : corpus.sentences) cfg.max_positions = std::max(cfg.max_positions, s.size());

    InfillModel model(cfg);
    AdamOptimizer opt(model.params(), config.learning_rate);
    for (long i = 1; i <= config.total_iterations; ++i) {
        Rng rng(mix_seed(config.rng_seed, static_cast<std::uint64_t>(i)));
        std::vector<InfillExample> batch;
        long total_targets = 0;
        int guard = 0;
        while (static_cast<int>(batch.size()) < config.batch_size) {
            const auto& sent = corpus.sentences[rng.uniform_index(corpus.sentences.size())];
            auto positions = select_mask_positions(sent, config.mask_fraction, rng);
            if (positions.empty() && total_targets == 0 &&
                static_cast<int>(batch.size()) + 1 == config.batch_size) {
                // keep drawing until the batch carries at least one target
                if (++guard > 1000)
                    throw std::runtime_error("corpus has no maskable O positions");
                continue;
            }
            total_targets += static_cast<long>(positions.size());
            batch.push_back(make_infill_example(vocab, sent, positions));
        }
        model.params().zero_grads();
        double loss = model.loss_and_gradients(batch);
        if (!std::isfinite(loss))
            throw std::runtime_error("infill training diverged at iteration " + std::to_string(i));
        auto tensors = model.params().all();
        nn::clip_global_norm(tensors, config.grad_clip_norm);
        opt.step();
    }
    return model;
}

LabeledSentence independent_mask_augment(const InfillModel& model, const Vocab& vocab,
                                         const LabeledSentence& sentence, double mask_fraction,
                                         Rng& rng) {
    auto positions = select_mask_positions(sentence, mask_fraction, rng);
    if (positions.empty()) return sentence;

    std::vector<int> masked_ids = vocab.encode(sentence.tokens());
    for (int p : positions) masked_ids[static_cast<std::size_t>(p)] = Vocab::kMask;
    nn::Mat probs = model.predict_probs(masked_ids, sentence.labels());

    const auto candidates = vocab.content_ids();
    std::vector<std::string> tokens = sentence.tokens();
    for (int p : positions) {
        int best = candidates.front();
        double best_p = -1.0;
        for (int c : candidates) {
            if (probs(p, c) > best_p) {
                best_p = probs(p, c);
                best = c;
            }
        }
        tokens[static_cast<std::size_t>(p)] = vocab.token(best);
    }
    return LabeledSentence(std::move(tokens), sentence.labels());
}

std::vector<std::string> control_prefix_tokens(const LabeledSentence& sentence) {
    std::vector<std::string> out;
    const auto& specials = Vocab::special_tokens();
    for (const Span& span : spans_from_bio(sentence.labels())) {
        out.push_back(specials[Vocab::kAsp]);
        for (int p = span.start; p <= span.end; ++p)
            out.push_back(sentence.tokens()[static_cast<std::size_t>(p - 1)]);
    }
    out.push_back(specials[Vocab::kBos]);
    return out;
}

std::vector<int> control_prefix_ids(const Vocab& vocab, const LabeledSentence& sentence) {
    return vocab.encode(control_prefix_tokens(sentence));
}

std::vector<LmExample> prefix_lm_examples(const Vocab& vocab, const Corpus& corpus) {
    std::vector<LmExample> out;
    out.reserve(corpus.sentences.size());
    for (const auto& sent : corpus.sentences) {
        LmExample ex;
        ex.ids = control_prefix_ids(vocab, sent);
        ex.predict_from = ex.ids.size();  // first sentence token
        for (int id : vocab.encode(sent.tokens())) ex.ids.push_back(id);
        ex.ids.push_back(Vocab::kEos);
        out.push_back(std::move(ex));
    }
    return out;
}

LmModel train_prefix_lm(const Corpus& corpus, const Vocab& vocab, const ModelConfig& model_config,
                        const LmTrainConfig& config) {
    ModelConfig cfg = model_config;
    cfg.vocab_size = vocab.size();
    return train_lm(prefix_lm_examples(vocab, corpus), cfg, config);
}

PrefixAugmentResult prefix_augment(const LmModel& model, const Vocab& vocab,
                                   const LabeledSentence& sentence, int beam_size) {
    const int n = sentence.size();
    const int first_half = (n + 1) / 2;
    const int gen_count = n - first_half;
    if (gen_count == 0) return {sentence, 0};

    std::vector<int> prefix = control_prefix_ids(vocab, sentence);
    std::vector<int> sent_ids = vocab.encode(sentence.tokens());
    prefix.insert(prefix.end(), sent_ids.begin(), sent_ids.begin() + first_half);

    // [PAD] and [MASK] never occur in LM data; everything else may be
    // emitted, including control tokens, which get rewritten below.
    std::vector<int> candidates;
    for (int id = 0; id < vocab.size(); ++id)
        if (id != Vocab::kPad && id != Vocab::kMask) candidates.push_back(id);

    std::vector<int> generated = lm_beam_continue(model, prefix, gen_count, beam_size, candidates);

    PrefixAugmentResult result{sentence, 0};
    std::vector<std::string> tokens = sentence.tokens();
    for (int t = 0; t < gen_count; ++t) {
        int id = generated[static_cast<std::size_t>(t)];
        if (Vocab::is_special(id)) {
            id = Vocab::kUnk;
            ++result.control_tokens_replaced;
        }
        tokens[static_cast<std::size_t>(first_half + t)] = vocab.token(id);
    }
    result.sentence = LabeledSentence(std::move(tokens), sentence.labels());
    return result;
}

}  // namespace maskaug
