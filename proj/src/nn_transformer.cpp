#include "maskaug/nn/transformer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace maskaug::nn {

Tensor& create_weight(ParameterStore& ps, const std::string& name, int rows, int cols, Rng& rng) {
    Tensor& t = ps.create(name, rows, cols);
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < t.value.rows(); ++i)
        for (Eigen::Index j = 0; j < t.value.cols(); ++j) t.value(i, j) = rng.uniform_real(-a, a);
    return t;
}

Tensor& create_bias(ParameterStore& ps, const std::string& name, int cols) {
    return ps.create(name, 1, cols);
}

Tensor& create_gain(ParameterStore& ps, const std::string& name, int cols) {
    Tensor& t = ps.create(name, 1, cols);
    t.value.setOnes();
    return t;
}

LinearParams create_linear(ParameterStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
    return {&create_weight(ps, prefix + ".w", in, out, rng), &create_bias(ps, prefix + ".b", out)};
}

LayerNormParams create_layer_norm(ParameterStore& ps, const std::string& prefix, int dim) {
    return {&create_gain(ps, prefix + ".g", dim), &create_bias(ps, prefix + ".b", dim)};
}

AttentionParams create_attention(ParameterStore& ps, const std::string& prefix, int d_model, Rng& rng) {
    AttentionParams p;
    p.query = create_linear(ps, prefix + ".q", d_model, d_model, rng);
    p.key = create_linear(ps, prefix + ".k", d_model, d_model, rng);
    p.value = create_linear(ps, prefix + ".v", d_model, d_model, rng);
    p.out = create_linear(ps, prefix + ".o", d_model, d_model, rng);
    return p;
}

FfnParams create_ffn(ParameterStore& ps, const std::string& prefix, int d_model, int d_ff, Rng& rng) {
    FfnParams p;
    p.lin1 = create_linear(ps, prefix + ".1", d_model, d_ff, rng);
    p.lin2 = create_linear(ps, prefix + ".2", d_ff, d_model, rng);
    return p;
}

EncoderLayerParams create_encoder_layer(ParameterStore& ps, const std::string& prefix, int d_model,
                                        int d_ff, Rng& rng) {
    EncoderLayerParams p;
    p.attn = create_attention(ps, prefix + ".attn", d_model, rng);
    p.ln_attn = create_layer_norm(ps, prefix + ".ln_attn", d_model);
    p.ffn = create_ffn(ps, prefix + ".ffn", d_model, d_ff, rng);
    p.ln_ffn = create_layer_norm(ps, prefix + ".ln_ffn", d_model);
    return p;
}

DecoderLayerParams create_decoder_layer(ParameterStore& ps, const std::string& prefix, int d_model,
                                        int d_ff, Rng& rng) {
    DecoderLayerParams p;
    p.self_attn = create_attention(ps, prefix + ".self", d_model, rng);
    p.ln_self = create_layer_norm(ps, prefix + ".ln_self", d_model);
    p.cross_attn = create_attention(ps, prefix + ".cross", d_model, rng);
    p.ln_cross = create_layer_norm(ps, prefix + ".ln_cross", d_model);
    p.ffn = create_ffn(ps, prefix + ".ffn", d_model, d_ff, rng);
    p.ln_ffn = create_layer_norm(ps, prefix + ".ln_ffn", d_model);
    return p;
}

Mat sinusoidal_positions(int max_positions, int d_model) {
    Mat pe(max_positions, d_model);
    for (int p = 0; p < max_positions; ++p) {
        for (int j = 0; j < d_model; ++j) {
            const int pair = j / 2;
            const double rate = std::pow(10000.0, 2.0 * pair / static_cast<double>(d_model));
            const double angle = static_cast<double>(p) / rate;
            pe(p, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

Mat causal_mask(int n) {
    Mat mask = Mat::Zero(n, n);
    const double ninf = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) mask(i, j) = ninf;
    return mask;
}

Var linear(Graph& g, const LinearParams& p, Var x) {
    return g.add_rowvec(g.matmul(x, g.param(*p.w)), g.param(*p.b));
}

Var multi_head_attention(Graph& g, const AttentionParams& p, Var queries_in, Var memory, int n_heads,
                         const Mat* additive_mask) {
    const int d_model = static_cast<int>(p.query.w->value.cols());
    if (d_model % n_heads != 0) throw std::logic_error("d_model not divisible by n_heads");
    const int d_head = d_model / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));

    Var q = linear(g, p.query, queries_in);
    Var k = linear(g, p.key, memory);
    Var v = linear(g, p.value, memory);

    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        Var qh = g.cols(q, h * d_head, d_head);
        Var kh = g.cols(k, h * d_head, d_head);
        Var vh = g.cols(v, h * d_head, d_head);
        Var scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
        Var attn = g.softmax_rows(scores, additive_mask);
        heads.push_back(g.matmul(attn, vh));
    }
    return linear(g, p.out, g.concat_cols(heads));
}

namespace {

Var maybe_dropout(Graph& g, Var x, double rate, Rng* rng) {
    if (rate > 0.0 && rng) return g.dropout(x, rate, *rng);
    return x;
}

Var ffn_forward(Graph& g, const FfnParams& p, Var x) {
    return linear(g, p.lin2, g.relu(linear(g, p.lin1, x)));
}

}  // namespace

Var encoder_layer(Graph& g, const EncoderLayerParams& p, Var x, int n_heads, const Mat* self_mask,
                  double dropout, Rng* rng) {
    Var attn = maybe_dropout(g, multi_head_attention(g, p.attn, x, x, n_heads, self_mask), dropout, rng);
    x = g.layer_norm(g.add(x, attn), g.param(*p.ln_attn.gain), g.param(*p.ln_attn.bias), kLayerNormEps);
    Var ff = maybe_dropout(g, ffn_forward(g, p.ffn, x), dropout, rng);
    return g.layer_norm(g.add(x, ff), g.param(*p.ln_ffn.gain), g.param(*p.ln_ffn.bias), kLayerNormEps);
}

Var decoder_layer(Graph& g, const DecoderLayerParams& p, Var x, Var memory, int n_heads,
                  const Mat* self_mask, double dropout, Rng* rng) {
    Var self =
        maybe_dropout(g, multi_head_attention(g, p.self_attn, x, x, n_heads, self_mask), dropout, rng);
    x = g.layer_norm(g.add(x, self), g.param(*p.ln_self.gain), g.param(*p.ln_self.bias), kLayerNormEps);
    Var cross =
        maybe_dropout(g, multi_head_attention(g, p.cross_attn, x, memory, n_heads), dropout, rng);
    x = g.layer_norm(g.add(x, cross), g.param(*p.ln_cross.gain), g.param(*p.ln_cross.bias),
                     kLayerNormEps);
    Var ff = maybe_dropout(g, ffn_forward(g, p.ffn, x), dropout, rng);
    return g.layer_norm(g.add(x, ff), g.param(*p.ln_ffn.gain), g.param(*p.ln_ffn.bias), kLayerNormEps);
}

Eigen::RowVectorXd linear_row(const LinearParams& p, const Eigen::RowVectorXd& x) {
    return x * p.w->value + p.b->value.row(0);
}

Eigen::RowVectorXd layer_norm_row(const LayerNormParams& p, const Eigen::RowVectorXd& x, double eps) {
    double mu = x.mean();
    Eigen::ArrayXd centered = x.transpose().array() - mu;
    double var = centered.square().mean();
    Eigen::ArrayXd xhat = centered / std::sqrt(var + eps);
    return ((xhat * p.gain->value.row(0).transpose().array()) +
            p.bias->value.row(0).transpose().array())
        .matrix()
        .transpose();
}

Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits) {
    double mx = logits.maxCoeff();
    Eigen::ArrayXd e = (logits.transpose().array() - mx).exp();
    return (e / e.sum()).matrix().transpose();
}

Eigen::RowVectorXd attention_row(const Eigen::RowVectorXd& q, const Mat& keys, const Mat& values,
                                 int n_heads) {
    const int d_model = static_cast<int>(q.cols());
    const int d_head = d_model / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
    Eigen::RowVectorXd out(d_model);
    for (int h = 0; h < n_heads; ++h) {
        Eigen::RowVectorXd scores =
            inv_sqrt * q.segment(h * d_head, d_head) * keys.middleCols(h * d_head, d_head).transpose();
        Eigen::RowVectorXd attn = softmax_row(scores);
        out.segment(h * d_head, d_head) = attn * values.middleCols(h * d_head, d_head);
    }
    return out;
}

Eigen::RowVectorXd decoder_step_row(const std::vector<DecoderLayerParams>& layers,
                                    const Eigen::RowVectorXd& input, const Mat& memory, int n_heads,
                                    StepCache& cache) {
    const Eigen::Index d_model = input.cols();
    if (cache.self_kv.empty()) {
        cache.self_kv.resize(layers.size());
        cache.cross_kv.resize(layers.size());
    }
    if (!cache.cross_ready) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            Mat k(memory.rows(), d_model), v(memory.rows(), d_model);
            for (Eigen::Index i = 0; i < memory.rows(); ++i) {
                k.row(i) = linear_row(layers[l].cross_attn.key, memory.row(i));
                v.row(i) = linear_row(layers[l].cross_attn.value, memory.row(i));
            }
            cache.cross_kv[l].k = std::move(k);
            cache.cross_kv[l].v = std::move(v);
        }
        cache.cross_ready = true;
    }

    Eigen::RowVectorXd x = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const DecoderLayerParams& p = layers[l];
        LayerKv& kv = cache.self_kv[l];

        Eigen::RowVectorXd q = linear_row(p.self_attn.query, x);
        Eigen::RowVectorXd k_new = linear_row(p.self_attn.key, x);
        Eigen::RowVectorXd v_new = linear_row(p.self_attn.value, x);
        kv.k.conservativeResize(kv.k.rows() + 1, d_model);
        kv.v.conservativeResize(kv.v.rows() + 1, d_model);
        kv.k.row(kv.k.rows() - 1) = k_new;
        kv.v.row(kv.v.rows() - 1) = v_new;

        Eigen::RowVectorXd self_out =
            linear_row(p.self_attn.out, attention_row(q, kv.k, kv.v, n_heads));
        x = layer_norm_row(p.ln_self, x + self_out);

        Eigen::RowVectorXd q2 = linear_row(p.cross_attn.query, x);
        Eigen::RowVectorXd cross_out = linear_row(
            p.cross_attn.out, attention_row(q2, cache.cross_kv[l].k, cache.cross_kv[l].v, n_heads));
        x = layer_norm_row(p.ln_cross, x + cross_out);

        Eigen::RowVectorXd ff =
            linear_row(p.ffn.lin2, linear_row(p.ffn.lin1, x).cwiseMax(0.0));
        x = layer_norm_row(p.ln_ffn, x + ff);
    }
    ++cache.steps;
    return x;
}

Mat attention_infer(const AttentionParams& p, const Mat& queries_in, const Mat& memory, int n_heads,
                    const Mat* additive_mask) {
    const int d_model = static_cast<int>(p.query.w->value.cols());
    const int d_head = d_model / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));

    Mat q = (queries_in * p.query.w->value).rowwise() + p.query.b->value.row(0);
    Mat k = (memory * p.key.w->value).rowwise() + p.key.b->value.row(0);
    Mat v = (memory * p.value.w->value).rowwise() + p.value.b->value.row(0);

    Mat out(queries_in.rows(), d_model);
    for (int h = 0; h < n_heads; ++h) {
        Mat scores = inv_sqrt * q.middleCols(h * d_head, d_head) *
                     k.middleCols(h * d_head, d_head).transpose();
        if (additive_mask) scores += *additive_mask;
        for (Eigen::Index i = 0; i < scores.rows(); ++i)
            scores.row(i) = softmax_row(scores.row(i));
        out.middleCols(h * d_head, d_head) = scores * v.middleCols(h * d_head, d_head);
    }
    return (out * p.out.w->value).rowwise() + p.out.b->value.row(0);
}

namespace {

Mat layer_norm_infer(const LayerNormParams& p, const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = layer_norm_row(p, x.row(i));
    return out;
}

}  // namespace

Mat encoder_layer_infer(const EncoderLayerParams& p, Mat x, int n_heads, const Mat* self_mask) {
    Mat attn = attention_infer(p.attn, x, x, n_heads, self_mask);
    x = layer_norm_infer(p.ln_attn, x + attn);
    Mat hidden = ((x * p.ffn.lin1.w->value).rowwise() + p.ffn.lin1.b->value.row(0)).cwiseMax(0.0);
    Mat ff = (hidden * p.ffn.lin2.w->value).rowwise() + p.ffn.lin2.b->value.row(0);
    return layer_norm_infer(p.ln_ffn, x + ff);
}

Mat stack_forward_infer(const std::vector<EncoderLayerParams>& layers, Mat x, int n_heads,
                        const Mat* self_mask) {
    for (const auto& layer : layers) x = encoder_layer_infer(layer, std::move(x), n_heads, self_mask);
    return x;
}

Eigen::RowVectorXd causal_step_row(const std::vector<EncoderLayerParams>& layers,
                                   const Eigen::RowVectorXd& input, int n_heads, CausalCache& cache) {
    const Eigen::Index d_model = input.cols();
    if (cache.kv.empty()) cache.kv.resize(layers.size());

    Eigen::RowVectorXd x = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const EncoderLayerParams& p = layers[l];
        LayerKv& kv = cache.kv[l];

        Eigen::RowVectorXd q = linear_row(p.attn.query, x);
        Eigen::RowVectorXd k_new = linear_row(p.attn.key, x);
        Eigen::RowVectorXd v_new = linear_row(p.attn.value, x);
        kv.k.conservativeResize(kv.k.rows() + 1, d_model);
        kv.v.conservativeResize(kv.v.rows() + 1, d_model);
        kv.k.row(kv.k.rows() - 1) = k_new;
        kv.v.row(kv.v.rows() - 1) = v_new;

        Eigen::RowVectorXd attn_out = linear_row(p.attn.out, attention_row(q, kv.k, kv.v, n_heads));
        x = layer_norm_row(p.ln_attn, x + attn_out);

        Eigen::RowVectorXd ff = linear_row(p.ffn.lin2, linear_row(p.ffn.lin1, x).cwiseMax(0.0));
        x = layer_norm_row(p.ln_ffn, x + ff);
    }
    ++cache.steps;
    return x;
}

}  // namespace maskaug::nn
