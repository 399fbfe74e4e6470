#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "maskaug/rng.hpp"

namespace maskaug::nn {

using Mat = Eigen::MatrixXd;

// A named learnable tensor with persistent gradient storage.
struct Tensor {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;

    Tensor() = default;
    Tensor(std::string n, int rows, int cols)
        : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(); }
};

// Owns tensors at stable addresses and iterates them in registration order,
// which fixes the optimizer update order and the checkpoint layout.
class ParameterStore {
public:
    Tensor& create(const std::string& name, int rows, int cols);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<Tensor*> all();
    std::vector<const Tensor*> all() const;
    std::size_t size() const { return owned_.size(); }

    void zero_grads();
    std::size_t element_count() const;

private:
    std::vector<std::unique_ptr<Tensor>> owned_;
    std::unordered_map<std::string, Tensor*> by_name_;
};

struct Node;
using Var = std::shared_ptr<Node>;

// One entry of the backward tape.
struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Node&)> backward;  // accumulates into parents' grads
    Tensor* bound_param = nullptr;
};

// Records forward operations on a tape; creation order is a topological
// order, so reverse-mode differentiation is a single reverse sweep.
// One Graph per training step; parameters live outside in a ParameterStore.
class Graph {
public:
    Var leaf(Mat value);
    Var param(Tensor& t);  // cached per tensor so reuse accumulates in one node

    Var matmul(Var a, Var b);     // A * B
    Var matmul_nt(Var a, Var b);  // A * B^T
    Var add(Var a, Var b);
    Var add_rowvec(Var a, Var row);    // broadcast a 1xC row over all rows
    Var scale(Var a, double s);
    Var relu(Var a);
    Var rows(Var a, std::vector<int> ids);           // gather rows
    Var cols(Var a, int start, int n);               // contiguous column block
    Var concat_cols(const std::vector<Var>& parts);
    Var concat_rows(const std::vector<Var>& parts);
    // Row-wise softmax; `additive_mask` entries (0 or -inf) are added first.
    Var softmax_rows(Var a, const Mat* additive_mask = nullptr);
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    // Sum over rows of (logsumexp(row) - row[target]); a 1x1 node.
    Var nll_rows(Var logits, std::vector<int> targets);
    Var dropout(Var a, double rate, Rng& rng);

    // Seeds `loss` (1x1) with gradient 1, sweeps the tape backwards, then
    // adds accumulated leaf gradients into their bound parameters.
    void backward(const Var& loss);

    std::size_t size() const { return tape_.size(); }

private:
    Var make(Mat value, bool needs_grad);

    std::vector<Var> tape_;
    std::unordered_map<Tensor*, Var> param_cache_;
};

double global_grad_norm(const std::vector<Tensor*>& params);
void clip_global_norm(std::vector<Tensor*>& params, double max_norm);

}  // namespace maskaug::nn
