#include "maskaug/nn/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace maskaug::nn {

Tensor& ParameterStore::create(const std::string& name, int rows, int cols) {
    if (by_name_.count(name)) throw std::logic_error("duplicate parameter: " + name);
    owned_.push_back(std::make_unique<Tensor>(name, rows, cols));
    Tensor* t = owned_.back().get();
    by_name_[name] = t;
    return *t;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("no parameter named " + name);
    return *it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("no parameter named " + name);
    return *it->second;
}

bool ParameterStore::contains(const std::string& name) const { return by_name_.count(name) > 0; }

std::vector<Tensor*> ParameterStore::all() {
    std::vector<Tensor*> out;
    out.reserve(owned_.size());
    for (auto& t : owned_) out.push_back(t.get());
    return out;
}

std::vector<const Tensor*> ParameterStore::all() const {
    std::vector<const Tensor*> out;
    out.reserve(owned_.size());
    for (const auto& t : owned_) out.push_back(t.get());
    return out;
}

void ParameterStore::zero_grads() {
    for (auto& t : owned_) t->zero_grad();
}

std::size_t ParameterStore::element_count() const {
    std::size_t n = 0;
    for (const auto& t : owned_) n += static_cast<std::size_t>(t->value.size());
    return n;
}

Var Graph::make(Mat value, bool needs_grad) {
    auto node = std::make_shared<Node>();
    node->grad = Mat::Zero(value.rows(), value.cols());
    node->value = std::move(value);
    node->needs_grad = needs_grad;
    tape_.push_back(node);
    return node;
}

Var Graph::leaf(Mat value) { return make(std::move(value), false); }

Var Graph::param(Tensor& t) {
    auto it = param_cache_.find(&t);
    if (it != param_cache_.end()) return it->second;
    Var node = make(t.value, true);
    node->bound_param = &t;
    param_cache_[&t] = node;
    return node;
}

Var Graph::matmul(Var a, Var b) {
    if (a->value.cols() != b->value.rows()) throw std::logic_error("matmul: shape mismatch");
    Var out = make(a->value * b->value, a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->backward = [a, b](Node& self) {
            if (a->needs_grad) a->grad.noalias() += self.grad * b->value.transpose();
            if (b->needs_grad) b->grad.noalias() += a->value.transpose() * self.grad;
        };
    return out;
}

Var Graph::matmul_nt(Var a, Var b) {
    if (a->value.cols() != b->value.cols()) throw std::logic_error("matmul_nt: shape mismatch");
    Var out = make(a->value * b->value.transpose(), a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->backward = [a, b](Node& self) {
            if (a->needs_grad) a->grad.noalias() += self.grad * b->value;
            if (b->needs_grad) b->grad.noalias() += self.grad.transpose() * a->value;
        };
    return out;
}

Var Graph::add(Var a, Var b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw std::logic_error("add: shape mismatch");
    Var out = make(a->value + b->value, a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->backward = [a, b](Node& self) {
            if (a->needs_grad) a->grad += self.grad;
            if (b->needs_grad) b->grad += self.grad;
        };
    return out;
}

Var Graph::add_rowvec(Var a, Var row) {
    if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
        throw std::logic_error("add_rowvec: shape mismatch");
    Mat value = a->value;
    value.rowwise() += row->value.row(0);
    Var out = make(std::move(value), a->needs_grad || row->needs_grad);
    if (out->needs_grad)
        out->backward = [a, row](Node& self) {
            if (a->needs_grad) a->grad += self.grad;
            if (row->needs_grad) row->grad.row(0) += self.grad.colwise().sum();
        };
    return out;
}

Var Graph::scale(Var a, double s) {
    Var out = make(a->value * s, a->needs_grad);
    if (out->needs_grad)
        out->backward = [a, s](Node& self) { a->grad += s * self.grad; };
    return out;
}

Var Graph::relu(Var a) {
    Var out = make(a->value.cwiseMax(0.0), a->needs_grad);
    if (out->needs_grad)
        out->backward = [a](Node& self) {
            a->grad.array() += self.grad.array() * (a->value.array() > 0.0).cast<double>();
        };
    return out;
}

Var Graph::rows(Var a, std::vector<int> ids) {
    Mat value(static_cast<Eigen::Index>(ids.size()), a->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= a->value.rows())
            throw std::out_of_range("rows: id " + std::to_string(ids[i]) + " out of range");
        value.row(static_cast<Eigen::Index>(i)) = a->value.row(ids[i]);
    }
    Var out = make(std::move(value), a->needs_grad);
    if (out->needs_grad)
        out->backward = [a, ids = std::move(ids)](Node& self) {
            for (std::size_t i = 0; i < ids.size(); ++i)
                a->grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
        };
    return out;
}

Var Graph::cols(Var a, int start, int n) {
    if (start < 0 || start + n > a->value.cols()) throw std::logic_error("cols: block out of range");
    Var out = make(a->value.middleCols(start, n), a->needs_grad);
    if (out->needs_grad)
        out->backward = [a, start, n](Node& self) {
            a->grad.middleCols(start, n) += self.grad;
        };
    return out;
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::logic_error("concat_cols: no parts");
    Eigen::Index rows = parts[0]->value.rows(), total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        if (p->value.rows() != rows) throw std::logic_error("concat_cols: row mismatch");
        total += p->value.cols();
        needs = needs || p->needs_grad;
    }
    Mat value(rows, total);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        value.middleCols(at, p->value.cols()) = p->value;
        at += p->value.cols();
    }
    Var out = make(std::move(value), needs);
    if (out->needs_grad)
        out->backward = [parts](Node& self) {
            Eigen::Index at = 0;
            for (const auto& p : parts) {
                if (p->needs_grad) p->grad += self.grad.middleCols(at, p->value.cols());
                at += p->value.cols();
            }
        };
    return out;
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::logic_error("concat_rows: no parts");
    Eigen::Index cols = parts[0]->value.cols(), total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        if (p->value.cols() != cols) throw std::logic_error("concat_rows: column mismatch");
        total += p->value.rows();
        needs = needs || p->needs_grad;
    }
    Mat value(total, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        value.middleRows(at, p->value.rows()) = p->value;
        at += p->value.rows();
    }
    Var out = make(std::move(value), needs);
    if (out->needs_grad)
        out->backward = [parts](Node& self) {
            Eigen::Index at = 0;
            for (const auto& p : parts) {
                if (p->needs_grad) p->grad += self.grad.middleRows(at, p->value.rows());
                at += p->value.rows();
            }
        };
    return out;
}

Var Graph::softmax_rows(Var a, const Mat* additive_mask) {
    Mat logits = a->value;
    if (additive_mask) {
        if (additive_mask->rows() != logits.rows() || additive_mask->cols() != logits.cols())
            throw std::logic_error("softmax_rows: mask shape mismatch");
        logits += *additive_mask;
    }
    Mat probs(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double mx = logits.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
        probs.row(i) = e / e.sum();
    }
    Var out = make(std::move(probs), a->needs_grad);
    if (out->needs_grad)
        out->backward = [a](Node& self) {
            for (Eigen::Index i = 0; i < self.value.rows(); ++i) {
                double dot = self.value.row(i).dot(self.grad.row(i));
                a->grad.row(i).array() +=
                    self.value.row(i).array() * (self.grad.row(i).array() - dot);
            }
        };
    return out;
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Eigen::Index rows = x->value.rows(), cols = x->value.cols();
    if (gain->value.rows() != 1 || gain->value.cols() != cols || bias->value.rows() != 1 ||
        bias->value.cols() != cols)
        throw std::logic_error("layer_norm: gain/bias shape mismatch");

    Mat xhat(rows, cols);
    Eigen::VectorXd inv_std(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        double mu = x->value.row(i).mean();
        Eigen::ArrayXd centered = x->value.row(i).array() - mu;
        double var = centered.square().mean();
        double s = 1.0 / std::sqrt(var + eps);
        inv_std(i) = s;
        xhat.row(i) = centered * s;
    }
    Mat value = (xhat.array().rowwise() * gain->value.row(0).array()).matrix();
    value.rowwise() += bias->value.row(0);

    Var out = make(std::move(value), x->needs_grad || gain->needs_grad || bias->needs_grad);
    if (out->needs_grad)
        out->backward = [x, gain, bias, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](Node& self) {
            const Eigen::Index cols = self.value.cols();
            if (gain->needs_grad)
                gain->grad.row(0) += (self.grad.array() * xhat.array()).colwise().sum().matrix();
            if (bias->needs_grad) bias->grad.row(0) += self.grad.colwise().sum();
            if (x->needs_grad) {
                for (Eigen::Index i = 0; i < self.value.rows(); ++i) {
                    Eigen::ArrayXd gy =
                        self.grad.row(i).array() * gain->value.row(0).array();
                    double mean_gy = gy.mean();
                    double mean_gy_xhat = (gy * xhat.row(i).transpose().array()).mean();
                    x->grad.row(i).array() +=
                        inv_std(i) *
                        (gy - mean_gy - xhat.row(i).transpose().array() * mean_gy_xhat);
                }
                (void)cols;
            }
        };
    return out;
}

Var Graph::nll_rows(Var logits, std::vector<int> targets) {
    const Eigen::Index rows = logits->value.rows();
    if (static_cast<Eigen::Index>(targets.size()) != rows)
        throw std::logic_error("nll_rows: target count mismatch");

    Mat probs(rows, logits->value.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= logits->value.cols()) throw std::out_of_range("nll_rows: bad target id");
        double mx = logits->value.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits->value.row(i).array() - mx).exp();
        double z = e.sum();
        probs.row(i) = e / z;
        total += std::log(z) + mx - logits->value(i, t);
    }
    Var out = make(Mat::Constant(1, 1, total), logits->needs_grad);
    if (out->needs_grad)
        out->backward = [logits, probs = std::move(probs), targets = std::move(targets)](Node& self) {
            double g = self.grad(0, 0);
            for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                logits->grad.row(i) += g * probs.row(i);
                logits->grad(i, targets[static_cast<std::size_t>(i)]) -= g;
            }
        };
    return out;
}

Var Graph::dropout(Var a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
    const double keep = 1.0 - rate;
    Mat mask(a->value.rows(), a->value.cols());
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
            mask(i, j) = rng.uniform_real() < keep ? 1.0 / keep : 0.0;
    Var out = make(a->value.cwiseProduct(mask), a->needs_grad);
    if (out->needs_grad)
        out->backward = [a, mask = std::move(mask)](Node& self) {
            a->grad += self.grad.cwiseProduct(mask);
        };
    return out;
}

void Graph::backward(const Var& loss) {
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
        throw std::logic_error("backward: loss must be a 1x1 node");
    loss->grad(0, 0) = 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        Node& node = **it;
        if (node.needs_grad && node.backward) node.backward(node);
    }
    for (auto& [tensor, var] : param_cache_) tensor->grad += var->grad;
}

double global_grad_norm(const std::vector<Tensor*>& params) {
    double sq = 0.0;
    for (const Tensor* t : params) sq += t->grad.squaredNorm();
    return std::sqrt(sq);
}

void clip_global_norm(std::vector<Tensor*>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double norm = global_grad_norm(params);
    if (norm > max_norm) {
        double s = max_norm / norm;
        for (Tensor* t : params) t->grad *= s;
    }
}

}  // namespace maskaug::nn
