#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "facefill/tensor.hpp"

namespace facefill {

// Reverse-mode autodiff over Tensor. Graphs are built define-by-run: every
// op returns a Var whose node remembers its parents and a closure that
// scatters the incoming gradient to them. Nodes that cannot need gradients
// (no differentiable parent, or grad mode disabled) store neither parents
// nor closure, so inference frees activations as it goes.
struct Node {
    Tensor value;
    Tensor grad;  // lazily allocated; empty means "all zeros so far"
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }

    void zero_grad() {
        if (node_) node_->grad = Tensor();
    }

    // Runs reverse-mode accumulation from this (scalar) node.
    void backward() const;

    // Value copy detached from the graph.
    Var detach() const { return leaf(node_->value, false); }

    std::shared_ptr<Node> node() const { return node_; }
    real scalar() const;

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

private:
    bool prev_;
};

Var constant(Tensor t);

// Elementwise
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);  // Hadamard, same shape
Var affine(const Var& x, real scale, real shift);
Var scale(const Var& x, real s);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var abs_elem(const Var& x);
Var square(const Var& x);

// Reductions
Var sum_all(const Var& x);    // -> [1]
Var mean_all(const Var& x);   // -> [1]

// Linear algebra (2-D)
Var linear_op(const Var& x, const Var& w, const Var& b);  // x[B,in] w[out,in] b[out]?
Var matmul_nt(const Var& a, const Var& b);                // a[m,k] * b[n,k]^T -> [m,n]
Var rowwise_dot(const Var& a, const Var& b);              // [B,d],[B,d] -> [B,1]
Var concat_cols(const Var& a, const Var& b);              // [B,ca],[B,cb] -> [B,ca+cb]
Var l2_normalize_rows(const Var& x, real eps = 1e-12);

// Softmax cross-entropy with the positive always in column 0; mean over rows.
Var cross_entropy_target0(const Var& logits);

// Conv / spatial (4-D: [B,C,H,W])
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var global_avg_pool(const Var& x);                   // -> [B,C]
Var avg_pool(const Var& x, int k);                   // window == stride == k
Var upsample_nearest2x(const Var& x);
Var concat_channels(const std::vector<Var>& xs);
Var scale_channels(const Var& x, const Var& s);      // x[B,C,h,w] * s[B,C]
Var gram_batch(const Var& x);                        // [B,C,h,w] -> [B,C,C]

}  // namespace facefill
