#include "maskaug/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace maskaug {

void TrainConfig::validate() const {
    if (total_iterations < 0) throw std::invalid_argument("total_iterations must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (validation_interval < 1) throw std::invalid_argument("validation_interval must be >= 1");
    if (!(mask_r > 0.0 && mask_r <= 1.0)) throw std::invalid_argument("mask r must be in (0, 1]");
}

std::string TrainLog::to_csv() const {
    std::string out = "iteration,loss,val_ppl\n";
    char buf[128];
    for (const auto& rec : records) {
        if (std::isnan(rec.loss))
            std::snprintf(buf, sizeof(buf), "%ld,,%.10g\n", rec.iteration, rec.val_ppl);
        else
            std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g\n", rec.iteration, rec.loss,
                          rec.val_ppl);
        out += buf;
    }
    return out;
}

AdamOptimizer::AdamOptimizer(nn::ParameterStore& params, double lr, double beta1, double beta2,
                             double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (nn::Tensor* t : params_.all()) {
        m_.push_back(nn::Mat::Zero(t->value.rows(), t->value.cols()));
        v_.push_back(nn::Mat::Zero(t->value.rows(), t->value.cols()));
    }
}

void AdamOptimizer::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    auto tensors = params_.all();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        nn::Tensor* t = tensors[i];
        if (!t->trainable) continue;
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * t->grad;
        v_[i] = beta2_ * v_[i].array() + (1.0 - beta2_) * t->grad.array().square();
        t->value.array() -=
            lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
    }
}

void AdamOptimizer::save_state(CheckpointData& data) const {
    auto tensors = params_.all();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        data.tensors.emplace_back("opt.m." + tensors[i]->name, m_[i]);
        data.tensors.emplace_back("opt.v." + tensors[i]->name, v_[i]);
    }
    data.ints["opt_step"] = step_count_;
}

void AdamOptimizer::load_state(const CheckpointData& data) {
    auto tensors = params_.all();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        bool found_m = false, found_v = false;
        for (const auto& [name, mat] : data.tensors) {
            if (name == "opt.m." + tensors[i]->name) {
                m_[i] = mat;
                found_m = true;
            } else if (name == "opt.v." + tensors[i]->name) {
                v_[i] = mat;
                found_v = true;
            }
        }
        if (!found_m || !found_v)
            throw std::runtime_error("resume state missing optimizer moments for " +
                                     tensors[i]->name);
    }
    step_count_ = data.get_int("opt_step");
}

double validation_perplexity(const Seq2SeqModel& model, const Vocab& vocab, const Corpus& holdout,
                             double r, std::uint64_t seed) {
    if (holdout.sentences.empty()) throw std::invalid_argument("holdout corpus is empty");
    double total_nll = 0.0;
    long total_tokens = 0;
    for (std::size_t i = 0; i < holdout.sentences.size(); ++i) {
        const auto& sent = holdout.sentences[i];
        Rng rng(mix_seed(seed, i));
        int u = sample_start(sent.size(), r, rng);
        EncodedExample ex = encode_example(vocab, mask_fragment(sent, u, r));
        total_nll -= model.sequence_log_prob(ex);
        total_tokens += ex.fragment_length();
    }
    return std::exp(total_nll / static_cast<double>(total_tokens));
}

std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, int holdout_count) {
    if (holdout_count < 1) throw std::invalid_argument("holdout count must be >= 1");
    if (static_cast<std::size_t>(holdout_count) >= corpus.sentences.size())
        throw std::invalid_argument("holdout larger than corpus");
    Corpus train, holdout;
    train.name = corpus.name;
    holdout.name = corpus.name + ".holdout";
    std::size_t cut = corpus.sentences.size() - static_cast<std::size_t>(holdout_count);
    train.sentences.assign(corpus.sentences.begin(), corpus.sentences.begin() + cut);
    holdout.sentences.assign(corpus.sentences.begin() + cut, corpus.sentences.end());
    return {std::move(train), std::move(holdout)};
}

namespace {

CheckpointData build_resume_state(const Seq2SeqModel& model, const Vocab& vocab,
                                  const AdamOptimizer& opt, long iteration) {
    CheckpointData data;
    data.kind = "seq2seq.resume";
    store_model_config(data, model.config());
    data.vocab_tokens = vocab.tokens();
    append_tensors(data, model.params());
    opt.save_state(data);
    data.ints["iteration"] = iteration;
    return data;
}

TrainResult run_loop(Seq2SeqModel model, Vocab vocab, AdamOptimizer& opt, long start_iteration,
                     const Corpus& corpus, const TrainConfig& config, const Corpus& holdout) {
    const bool uses_dropout = model.config().dropout_rate > 0.0;
    SamplerConfig sampler;
    sampler.min_length_exclusive = config.min_length_exclusive;
    sampler.mask_proportion = config.mask_r;
    sampler.batch_size = config.batch_size;

    TrainLog log;
    CheckpointData best;
    double best_ppl = validation_perplexity(model, vocab, holdout, config.mask_r, config.rng_seed);
    best = model.to_checkpoint(vocab);
    log.records.push_back({start_iteration, std::nan(""), best_ppl});

    double interval_loss = 0.0;
    long interval_count = 0;
    for (long i = start_iteration + 1; i <= config.total_iterations; ++i) {
        Rng rng(mix_seed(config.rng_seed, static_cast<std::uint64_t>(i)));
        auto batch = build_batch(corpus, sampler, rng);
        auto encoded = encode_batch(vocab, batch);
        for (nn::Tensor* t : model.params().all()) t->zero_grad();
        double loss = model.loss_and_gradients(encoded, uses_dropout ? &rng : nullptr);
        if (!std::isfinite(loss))
            throw std::runtime_error("training diverged: non-finite loss at iteration " +
                                     std::to_string(i));
        auto tensors = model.params().all();
        nn::clip_global_norm(tensors, config.grad_clip_norm);
        opt.step();

        log.iteration_losses.push_back(loss);
        interval_loss += loss;
        ++interval_count;
        if (i % config.validation_interval == 0 || i == config.total_iterations) {
            double ppl = validation_perplexity(model, vocab, holdout, config.mask_r, config.rng_seed);
            log.records.push_back({i, interval_loss / static_cast<double>(interval_count), ppl});
            interval_loss = 0.0;
            interval_count = 0;
            if (ppl < best_ppl) {
                best_ppl = ppl;
                best = model.to_checkpoint(vocab);
            }
        }
    }

    TrainResult result{std::move(model), std::move(vocab), std::move(log), std::move(best), best_ppl,
                       CheckpointData{}};
    result.resume_state =
        build_resume_state(result.model, result.vocab, opt, config.total_iterations);
    if (!config.checkpoint_path.empty()) save_checkpoint_file(result.best_checkpoint, config.checkpoint_path);
    return result;
}

int longest_sentence(const Corpus& corpus) {
    int longest = 1;
    for (const auto& s : corpus.sentences) longest = std::max(longest, s.size());
    return longest;
}

}  // namespace

TrainResult train(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& config,
                  const Corpus& holdout) {
    config.validate();
    if (corpus.sentences.empty()) throw std::invalid_argument("training corpus is empty");
    if (holdout.sentences.empty()) throw std::invalid_argument("holdout corpus is empty");

    Vocab vocab = build_vocab(corpus);
    ModelConfig cfg = model_config;
    cfg.vocab_size = vocab.size();
    cfg.max_positions =
        std::max({cfg.max_positions, longest_sentence(corpus), longest_sentence(holdout)});

    Seq2SeqModel model(cfg);
    AdamOptimizer opt(model.params(), config.learning_rate, config.adam_beta1, config.adam_beta2,
                      config.adam_eps);
    return run_loop(std::move(model), std::move(vocab), opt, 0, corpus, config, holdout);
}

TrainResult resume_train(const CheckpointData& resume_state, const Corpus& corpus,
                         const TrainConfig& config, const Corpus& holdout) {
    config.validate();
    if (resume_state.kind != "seq2seq.resume")
        throw std::runtime_error("not a resume state: " + resume_state.kind);

    Seq2SeqModel model(read_model_config(resume_state));
    for (const auto& [name, mat] : resume_state.tensors) {
        if (name.rfind("opt.", 0) == 0) continue;
        nn::Tensor& t = model.params().get(name);
        if (t.value.rows() != mat.rows() || t.value.cols() != mat.cols())
            throw std::runtime_error("shape mismatch restoring " + name);
        t.value = mat;
    }
    Vocab vocab(resume_state.vocab_tokens);
    AdamOptimizer opt(model.params(), config.learning_rate, config.adam_beta1, config.adam_beta2,
                      config.adam_eps);
    opt.load_state(resume_state);
    long start = resume_state.get_int("iteration");
    return run_loop(std::move(model), std::move(vocab), opt, start, corpus, config, holdout);
}

}  // namespace maskaug
