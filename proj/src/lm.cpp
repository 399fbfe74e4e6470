#include "maskaug/lm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "maskaug/trainer.hpp"

namespace maskaug {

LmModel::LmModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.param_seed);
    tok_emb_ = &nn::create_weight(params_, "tok_emb", cfg_.vocab_size, cfg_.d_model, rng);
    for (int l = 0; l < cfg_.n_dec_layers; ++l)
        layers_.push_back(nn::create_encoder_layer(params_, "blk." + std::to_string(l), cfg_.d_model,
                                                   cfg_.d_ff, rng));
    out_w_ = &nn::create_weight(params_, "out.w", cfg_.vocab_size, cfg_.d_model, rng);
    out_b_ = &nn::create_bias(params_, "out.b", cfg_.vocab_size);
    pos_enc_ = nn::sinusoidal_positions(cfg_.max_positions, cfg_.d_model);
}

Eigen::RowVectorXd LmModel::step_probs(int input_id, int position, nn::CausalCache& cache) const {
    if (input_id < 0 || input_id >= cfg_.vocab_size) throw std::out_of_range("bad token id");
    if (position < 1 || position > cfg_.max_positions)
        throw std::out_of_range("position out of range");
    Eigen::RowVectorXd x = tok_emb_->value.row(input_id) + pos_enc_.row(position - 1);
    Eigen::RowVectorXd h = nn::causal_step_row(layers_, x, cfg_.n_heads, cache);
    Eigen::RowVectorXd logits = h * out_w_->value.transpose() + out_b_->value.row(0);
    return nn::softmax_row(logits);
}

double LmModel::sequence_nll(const LmExample& ex) const {
    if (ex.predict_from < 1 || ex.predict_from >= ex.ids.size())
        throw std::invalid_argument("predict_from must leave at least one target");
    nn::CausalCache cache;
    double nll = 0.0;
    for (std::size_t i = 0; i + 1 < ex.ids.size(); ++i) {
        Eigen::RowVectorXd probs = step_probs(ex.ids[i], static_cast<int>(i) + 1, cache);
        if (i + 1 >= ex.predict_from) nll -= std::log(probs(ex.ids[i + 1]));
    }
    return nll;
}

double LmModel::loss_and_gradients(std::span<const LmExample> batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    nn::Graph g;
    nn::Var total;
    long total_tokens = 0;
    for (const LmExample& ex : batch) {
        if (ex.ids.size() < 2 || ex.predict_from < 1 || ex.predict_from >= ex.ids.size())
            throw std::invalid_argument("LM example needs context plus at least one target");
        if (ex.ids.size() > static_cast<std::size_t>(cfg_.max_positions))
            throw std::invalid_argument("sequence exceeds max_positions");
        const int len = static_cast<int>(ex.ids.size()) - 1;  // inputs

        std::vector<int> inputs(ex.ids.begin(), ex.ids.end() - 1);
        nn::Var x = g.add(g.rows(g.param(*tok_emb_), inputs), g.leaf(pos_enc_.topRows(len)));
        nn::Mat mask = nn::causal_mask(len);
        for (const auto& layer : layers_) x = nn::encoder_layer(g, layer, x, cfg_.n_heads, &mask);

        // keep only the predicted steps
        std::vector<int> rows_wanted;
        std::vector<int> targets;
        for (std::size_t i = ex.predict_from; i < ex.ids.size(); ++i) {
            rows_wanted.push_back(static_cast<int>(i) - 1);
            targets.push_back(ex.ids[i]);
        }
        nn::Var picked = g.rows(x, rows_wanted);
        nn::Var logits = g.add_rowvec(g.matmul_nt(picked, g.param(*out_w_)), g.param(*out_b_));
        nn::Var nll = g.nll_rows(logits, targets);
        total_tokens += static_cast<long>(targets.size());
        total = total ? g.add(total, nll) : nll;
    }
    nn::Var loss = g.scale(total, 1.0 / static_cast<double>(total_tokens));
    g.backward(loss);
    return loss->value(0, 0);
}

CheckpointData LmModel::to_checkpoint(const Vocab& vocab, const std::string& kind) const {
    if (vocab.size() != cfg_.vocab_size)
        throw std::invalid_argument("vocab size disagrees with model config");
    CheckpointData data;
    data.kind = kind;
    store_model_config(data, cfg_);
    data.vocab_tokens = vocab.tokens();
    append_tensors(data, params_);
    return data;
}

LmModel LmModel::from_checkpoint(const CheckpointData& data, const std::string& expected_kind) {
    if (data.kind != expected_kind)
        throw std::runtime_error("expected a " + expected_kind + " checkpoint, found '" + data.kind +
                                 "'");
    LmModel model(read_model_config(data));
    restore_tensors(data, model.params_);
    return model;
}

LmModel train_lm(const std::vector<LmExample>& examples, const ModelConfig& model_config,
                 const LmTrainConfig& config) {
    if (examples.empty()) throw std::invalid_argument("no LM training examples");
    ModelConfig cfg = model_config;
    for (const auto& ex : examples)
        cfg.max_positions = std::max(cfg.max_positions, static_cast<int>(ex.ids.size()));

    LmModel model(cfg);
    AdamOptimizer opt(model.params(), config.learning_rate);
    for (long i = 1; i <= config.total_iterations; ++i) {
        Rng rng(mix_seed(config.rng_seed, static_cast<std::uint64_t>(i)));
        std::vector<LmExample> batch;
        batch.reserve(static_cast<std::size_t>(config.batch_size));
        for (int b = 0; b < config.batch_size; ++b)
            batch.push_back(examples[rng.uniform_index(examples.size())]);
        model.params().zero_grads();
        double loss = model.loss_and_gradients(batch);
        if (!std::isfinite(loss))
            throw std::runtime_error("LM training diverged at iteration " + std::to_string(i));
        auto tensors = model.params().all();
        nn::clip_global_norm(tensors, config.grad_clip_norm);
        opt.step();
    }
    return model;
}

std::vector<LmExample> plain_lm_examples(const Vocab& vocab, const Corpus& corpus) {
    std::vector<LmExample> out;
    out.reserve(corpus.sentences.size());
    for (const auto& sent : corpus.sentences) {
        LmExample ex;
        ex.ids.push_back(Vocab::kBos);
        for (int id : vocab.encode(sent.tokens())) ex.ids.push_back(id);
        ex.predict_from = 1;
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<int> lm_beam_continue(const LmModel& model, const std::vector<int>& prefix_ids,
                                  int n_steps, int beam_size, const std::vector<int>& candidates) {
    if (prefix_ids.empty()) throw std::invalid_argument("empty prefix");
    if (n_steps == 0) return {};
    if (candidates.empty()) throw std::invalid_argument("no candidates");

    struct Hyp {
        std::vector<int> tokens;
        double log_prob = 0.0;
        std::shared_ptr<nn::CausalCache> cache;
    };

    // feed the shared prefix once
    auto base_cache = std::make_shared<nn::CausalCache>();
    Eigen::RowVectorXd probs;
    for (std::size_t i = 0; i < prefix_ids.size(); ++i)
        probs = model.step_probs(prefix_ids[i], static_cast<int>(i) + 1, *base_cache);

    std::vector<Hyp> beam(1);
    beam[0].cache = base_cache;
    const int base_len = static_cast<int>(prefix_ids.size());

    for (int t = 0; t < n_steps; ++t) {
        std::vector<Hyp> expanded;
        for (Hyp& hyp : beam) {
            Eigen::RowVectorXd step;
            std::shared_ptr<nn::CausalCache> cache;
            if (t == 0) {
                step = probs;  // distribution after the prefix
                cache = hyp.cache;
            } else {
                cache = std::make_shared<nn::CausalCache>(*hyp.cache);
                step = model.step_probs(hyp.tokens.back(), base_len + t, *cache);
            }
            for (int c : candidates) {
                Hyp child;
                child.tokens = hyp.tokens;
                child.tokens.push_back(c);
                child.log_prob = hyp.log_prob + std::log(step(c));
                child.cache = cache;
                expanded.push_back(std::move(child));
            }
        }
        std::stable_sort(expanded.begin(), expanded.end(),
                         [](const Hyp& a, const Hyp& b) { return a.log_prob > b.log_prob; });
        if (static_cast<int>(expanded.size()) > beam_size)
            expanded.resize(static_cast<std::size_t>(beam_size));
        beam = std::move(expanded);
    }
    return beam.front().tokens;
}

}  // namespace maskaug
