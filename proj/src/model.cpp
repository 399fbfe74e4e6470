#include "maskaug/model.hpp"

#include <cmath>
#include <stdexcept>

namespace maskaug {

void ModelConfig::validate() const {
    if (n_enc_layers < 1 || n_dec_layers < 1) throw std::invalid_argument("need at least one layer");
    if (n_heads < 1) throw std::invalid_argument("n_heads must be positive");
    if (d_model < 1 || d_model % n_heads != 0)
        throw std::invalid_argument("d_model must be positive and divisible by n_heads");
    if (d_ff < 1) throw std::invalid_argument("d_ff must be positive");
    if (vocab_size < 1) throw std::invalid_argument("vocab_size must be positive");
    if (n_labels != kNumLabels) throw std::invalid_argument("n_labels must be 3");
    if (max_positions < 1) throw std::invalid_argument("max_positions must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw std::invalid_argument("dropout_rate must be in [0, 1)");
}

ModelConfig ModelConfig::desk(int vocab_size) {
    ModelConfig cfg;
    cfg.n_enc_layers = 2;
    cfg.n_dec_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 64;
    cfg.d_ff = 128;
    cfg.vocab_size = vocab_size;
    return cfg;
}

ModelConfig ModelConfig::paper(int vocab_size) {
    ModelConfig cfg;
    cfg.n_enc_layers = 6;
    cfg.n_dec_layers = 6;
    cfg.n_heads = 12;
    cfg.d_model = 768;
    cfg.d_ff = 3072;
    cfg.vocab_size = vocab_size;
    return cfg;
}

EncodedExample encode_example(const Vocab& vocab, const MaskedExample& ex) {
    EncodedExample out;
    out.masked_ids = vocab.encode(ex.masked_tokens);
    out.labels = ex.labels;
    out.fragment_ids = vocab.encode(ex.fragment);
    out.u = ex.u;
    out.v = ex.v;
    return out;
}

std::vector<EncodedExample> encode_batch(const Vocab& vocab, const std::vector<MaskedExample>& batch) {
    std::vector<EncodedExample> out;
    out.reserve(batch.size());
    for (const auto& ex : batch) out.push_back(encode_example(vocab, ex));
    return out;
}

Seq2SeqModel::Seq2SeqModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.param_seed);
    tok_emb_ = &nn::create_weight(params_, "tok_emb", cfg_.vocab_size, cfg_.d_model, rng);
    // Spans the label channel neutrally at step 0.
    label_emb_ = &params_.create("label_emb", cfg_.n_labels, cfg_.d_model);
    label_emb_->trainable = cfg_.label_conditioning;
    for (int l = 0; l < cfg_.n_enc_layers; ++l)
        enc_layers_.push_back(nn::create_encoder_layer(params_, "enc." + std::to_string(l),
                                                       cfg_.d_model, cfg_.d_ff, rng));
    for (int l = 0; l < cfg_.n_dec_layers; ++l)
        dec_layers_.push_back(nn::create_decoder_layer(params_, "dec." + std::to_string(l),
                                                       cfg_.d_model, cfg_.d_ff, rng));
    out_w_ = &nn::create_weight(params_, "out.w", cfg_.vocab_size, cfg_.d_model, rng);
    out_b_ = &nn::create_bias(params_, "out.b", cfg_.vocab_size);
    pos_enc_ = nn::sinusoidal_positions(cfg_.max_positions, cfg_.d_model);
}

void Seq2SeqModel::check_ids(const std::vector<int>& ids) const {
    for (int id : ids)
        if (id < 0 || id >= cfg_.vocab_size)
            throw std::out_of_range("token id " + std::to_string(id) + " outside vocab of size " +
                                    std::to_string(cfg_.vocab_size));
}

void Seq2SeqModel::check_length(std::size_t n) const {
    if (n == 0) throw std::invalid_argument("empty input");
    if (n > static_cast<std::size_t>(cfg_.max_positions))
        throw std::invalid_argument("input length " + std::to_string(n) + " exceeds max_positions " +
                                    std::to_string(cfg_.max_positions));
}

nn::Mat Seq2SeqModel::encode(const std::vector<int>& masked_ids,
                             const std::vector<Label>& labels) const {
    check_length(masked_ids.size());
    check_ids(masked_ids);
    if (masked_ids.size() != labels.size())
        throw std::invalid_argument("token/label length mismatch in encode");

    const int n = static_cast<int>(masked_ids.size());
    nn::Mat x(n, cfg_.d_model);
    for (int i = 0; i < n; ++i) {
        x.row(i) = tok_emb_->value.row(masked_ids[static_cast<std::size_t>(i)]) + pos_enc_.row(i);
        if (cfg_.label_conditioning)
            x.row(i) += label_emb_->value.row(label_index(labels[static_cast<std::size_t>(i)]));
    }
    return nn::stack_forward_infer(enc_layers_, std::move(x), cfg_.n_heads);
}

nn::Var Seq2SeqModel::encode_on_graph(nn::Graph& g, const std::vector<int>& masked_ids,
                                      const std::vector<Label>& labels, Rng* dropout_rng) {
    const int n = static_cast<int>(masked_ids.size());
    nn::Var x = g.rows(g.param(*tok_emb_), masked_ids);
    if (cfg_.label_conditioning) {
        std::vector<int> lab_ids(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) lab_ids[i] = label_index(labels[i]);
        x = g.add(x, g.rows(g.param(*label_emb_), std::move(lab_ids)));
    }
    x = g.add(x, g.leaf(pos_enc_.topRows(n)));
    for (const auto& layer : enc_layers_)
        x = nn::encoder_layer(g, layer, x, cfg_.n_heads, nullptr, cfg_.dropout_rate, dropout_rng);
    return x;
}

Eigen::RowVectorXd Seq2SeqModel::decoder_input_row(int prev_token, Label prev_label,
                                                   int position) const {
    Eigen::RowVectorXd x = tok_emb_->value.row(prev_token) + pos_enc_.row(position - 1);
    if (cfg_.label_conditioning) x += label_emb_->value.row(label_index(prev_label));
    return x;
}

Eigen::RowVectorXd Seq2SeqModel::decode_step(int prev_token, Label prev_label, Label cur_label,
                                             int position, const nn::Mat& H,
                                             nn::StepCache& cache) const {
    if (prev_token < 0 || prev_token >= cfg_.vocab_size)
        throw std::out_of_range("decode_step: bad previous token id");
    if (position < 1 || position > cfg_.max_positions)
        throw std::out_of_range("decode_step: position out of range");
    if (!cache.self_kv.empty() &&
        cache.self_kv[0].k.rows() != static_cast<Eigen::Index>(cache.steps))
        throw std::invalid_argument("decode_step: cache inconsistent with decoded prefix");

    Eigen::RowVectorXd z = nn::decoder_step_row(dec_layers_, decoder_input_row(prev_token, prev_label, position),
                                                H, cfg_.n_heads, cache);
    Eigen::RowVectorXd s = z;
    if (cfg_.label_conditioning) s += label_emb_->value.row(label_index(cur_label));
    Eigen::RowVectorXd logits = s * out_w_->value.transpose() + out_b_->value.row(0);
    return nn::softmax_row(logits);
}

double Seq2SeqModel::sequence_log_prob(const EncodedExample& ex) const {
    return sequence_log_prob(ex, encode(ex.masked_ids, ex.labels));
}

double Seq2SeqModel::sequence_log_prob(const EncodedExample& ex, const nn::Mat& H) const {
    if (ex.fragment_ids.empty()) throw std::invalid_argument("empty fragment");
    check_ids(ex.fragment_ids);
    const int m = ex.fragment_length();
    if (static_cast<int>(ex.fragment_ids.size()) != m)
        throw std::invalid_argument("fragment length disagrees with span");

    nn::StepCache cache;
    double log_prob = 0.0;
    for (int t = 1; t <= m; ++t) {
        const int pos = ex.u + t - 1;
        const int prev_token = t == 1 ? Vocab::kBos : ex.fragment_ids[static_cast<std::size_t>(t - 2)];
        const Label prev_label =
            pos - 1 >= 1 ? ex.labels[static_cast<std::size_t>(pos - 2)] : Label::O;
        const Label cur_label = ex.labels[static_cast<std::size_t>(pos - 1)];
        Eigen::RowVectorXd probs = decode_step(prev_token, prev_label, cur_label, pos, H, cache);
        log_prob += std::log(probs(ex.fragment_ids[static_cast<std::size_t>(t - 1)]));
    }
    return log_prob;
}

namespace {

struct DecoderInputs {
    std::vector<int> prev_tokens;
    std::vector<int> prev_label_ids;
    std::vector<int> cur_label_ids;
};

DecoderInputs teacher_inputs(const EncodedExample& ex) {
    const int m = ex.fragment_length();
    DecoderInputs in;
    in.prev_tokens.reserve(static_cast<std::size_t>(m));
    in.prev_label_ids.reserve(static_cast<std::size_t>(m));
    in.cur_label_ids.reserve(static_cast<std::size_t>(m));
    for (int t = 1; t <= m; ++t) {
        const int pos = ex.u + t - 1;
        in.prev_tokens.push_back(t == 1 ? Vocab::kBos
                                        : ex.fragment_ids[static_cast<std::size_t>(t - 2)]);
        in.prev_label_ids.push_back(
            pos - 1 >= 1 ? label_index(ex.labels[static_cast<std::size_t>(pos - 2)])
                         : label_index(Label::O));
        in.cur_label_ids.push_back(label_index(ex.labels[static_cast<std::size_t>(pos - 1)]));
    }
    return in;
}

}  // namespace

double Seq2SeqModel::loss_and_gradients(std::span<const EncodedExample> batch, Rng* dropout_rng) {
    if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");

    nn::Graph g;
    nn::Var total;
    long total_tokens = 0;
    for (const EncodedExample& ex : batch) {
        check_length(ex.masked_ids.size());
        check_ids(ex.masked_ids);
        check_ids(ex.fragment_ids);
        const int m = ex.fragment_length();
        if (m < 1 || static_cast<int>(ex.fragment_ids.size()) != m)
            throw std::invalid_argument("invalid fragment span");
        total_tokens += m;

        nn::Var H = encode_on_graph(g, ex.masked_ids, ex.labels, dropout_rng);

        DecoderInputs in = teacher_inputs(ex);
        nn::Var x = g.rows(g.param(*tok_emb_), in.prev_tokens);
        if (cfg_.label_conditioning)
            x = g.add(x, g.rows(g.param(*label_emb_), in.prev_label_ids));
        x = g.add(x, g.leaf(pos_enc_.middleRows(ex.u - 1, m)));

        nn::Mat mask = nn::causal_mask(m);
        for (const auto& layer : dec_layers_)
            x = nn::decoder_layer(g, layer, x, H, cfg_.n_heads, &mask, cfg_.dropout_rate,
                                  dropout_rng);

        nn::Var s = x;
        if (cfg_.label_conditioning)
            s = g.add(s, g.rows(g.param(*label_emb_), in.cur_label_ids));
        nn::Var logits = g.add_rowvec(g.matmul_nt(s, g.param(*out_w_)), g.param(*out_b_));
        nn::Var nll = g.nll_rows(logits, ex.fragment_ids);
        total = total ? g.add(total, nll) : nll;
    }

    nn::Var loss = g.scale(total, 1.0 / static_cast<double>(total_tokens));
    g.backward(loss);
    return loss->value(0, 0);
}

nn::Mat Seq2SeqModel::teacher_forced_probs(const EncodedExample& ex) {
    check_length(ex.masked_ids.size());
    check_ids(ex.masked_ids);
    check_ids(ex.fragment_ids);
    const int m = ex.fragment_length();

    nn::Graph g;
    nn::Var H = encode_on_graph(g, ex.masked_ids, ex.labels, nullptr);
    DecoderInputs in = teacher_inputs(ex);
    nn::Var x = g.rows(g.param(*tok_emb_), in.prev_tokens);
    if (cfg_.label_conditioning) x = g.add(x, g.rows(g.param(*label_emb_), in.prev_label_ids));
    x = g.add(x, g.leaf(pos_enc_.middleRows(ex.u - 1, m)));
    nn::Mat mask = nn::causal_mask(m);
    for (const auto& layer : dec_layers_)
        x = nn::decoder_layer(g, layer, x, H, cfg_.n_heads, &mask);
    nn::Var s = x;
    if (cfg_.label_conditioning) s = g.add(s, g.rows(g.param(*label_emb_), in.cur_label_ids));
    nn::Var logits = g.add_rowvec(g.matmul_nt(s, g.param(*out_w_)), g.param(*out_b_));
    nn::Var probs = g.softmax_rows(logits);
    return probs->value;
}

void store_model_config(CheckpointData& data, const ModelConfig& cfg) {
    data.ints["n_enc_layers"] = cfg.n_enc_layers;
    data.ints["n_dec_layers"] = cfg.n_dec_layers;
    data.ints["n_heads"] = cfg.n_heads;
    data.ints["d_model"] = cfg.d_model;
    data.ints["d_ff"] = cfg.d_ff;
    data.ints["vocab_size"] = cfg.vocab_size;
    data.ints["n_labels"] = cfg.n_labels;
    data.ints["max_positions"] = cfg.max_positions;
    data.ints["label_conditioning"] = cfg.label_conditioning ? 1 : 0;
    data.ints["param_seed"] = static_cast<std::int64_t>(cfg.param_seed);
    data.reals["dropout_rate"] = cfg.dropout_rate;
}

ModelConfig read_model_config(const CheckpointData& data) {
    ModelConfig cfg;
    cfg.n_enc_layers = static_cast<int>(data.get_int("n_enc_layers"));
    cfg.n_dec_layers = static_cast<int>(data.get_int("n_dec_layers"));
    cfg.n_heads = static_cast<int>(data.get_int("n_heads"));
    cfg.d_model = static_cast<int>(data.get_int("d_model"));
    cfg.d_ff = static_cast<int>(data.get_int("d_ff"));
    cfg.vocab_size = static_cast<int>(data.get_int("vocab_size"));
    cfg.n_labels = static_cast<int>(data.get_int("n_labels"));
    cfg.max_positions = static_cast<int>(data.get_int("max_positions"));
    cfg.label_conditioning = data.get_int("label_conditioning") != 0;
    cfg.param_seed = static_cast<std::uint64_t>(data.get_int("param_seed"));
    cfg.dropout_rate = data.get_real("dropout_rate");
    return cfg;
}

CheckpointData Seq2SeqModel::to_checkpoint(const Vocab& vocab) const {
    if (vocab.size() != cfg_.vocab_size)
        throw std::invalid_argument("vocab size disagrees with model config");
    CheckpointData data;
    data.kind = kCheckpointKind;
    store_model_config(data, cfg_);
    data.vocab_tokens = vocab.tokens();
    append_tensors(data, params_);
    return data;
}

Seq2SeqModel Seq2SeqModel::from_checkpoint(const CheckpointData& data) {
    if (data.kind != kCheckpointKind)
        throw std::runtime_error("expected a " + std::string(kCheckpointKind) +
                                 " checkpoint, found '" + data.kind + "'");
    Seq2SeqModel model(read_model_config(data));
    restore_tensors(data, model.params_);
    return model;
}

std::string Seq2SeqModel::weights_hash(const Vocab& vocab) const {
    return checkpoint_hash(to_checkpoint(vocab));
}

}  // namespace maskaug
