#pragma once

#include <string>
#include <utility>
#include <vector>

#include "facefill/autograd.hpp"

namespace facefill {

// Ordered, named collection of parameter leaves. Order is construction
// order and is what optimizers and checkpoints key off, so model wiring
// must be deterministic.
class ParamStore {
public:
    Var create(const std::string& name, Tensor init, bool trainable = true);

    size_t size() const { return entries_.size(); }
    const std::string& name(size_t i) const { return entries_[i].first; }
    Var& var(size_t i) { return entries_[i].second; }
    const Var& var(size_t i) const { return entries_[i].second; }
    Var* find(const std::string& name);

    void zero_grad();
    std::int64_t numel() const;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<std::pair<std::string, Var>> entries_;
};

struct Conv2dLayer {
    Var weight;  // [out,in,k,k]
    Var bias;    // [out] or undefined
    int stride = 1;
    int pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& store, const std::string& name, int in_ch, int out_ch, int k,
                int stride, int pad, bool with_bias, Rng& rng, bool trainable = true);

    Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }
};

struct LinearLayer {
    Var weight;  // [out,in]
    Var bias;    // [out] or undefined

    LinearLayer() = default;
    LinearLayer(ParamStore& store, const std::string& name, int in_f, int out_f, bool with_bias,
                Rng& rng, bool trainable = true);

    Var operator()(const Var& x) const { return linear_op(x, weight, bias); }
};

// Plain SGD, no momentum.
class Sgd {
public:
    explicit Sgd(real lr) : lr_(lr) {}
    real lr() const { return lr_; }
    void step(ParamStore& params);

private:
    real lr_;
};

class Adam {
public:
    explicit Adam(real lr, real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    real lr() const { return lr_; }
    std::int64_t steps_taken() const { return t_; }
    void step(ParamStore& params);

    // State access for checkpointing; slot i corresponds to params entry i.
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t);

private:
    real lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// theta_k <- m * theta_k + (1 - m) * theta_q, elementwise, no gradients.
void momentum_blend(real m, const ParamStore& query, ParamStore& key);

}  // namespace facefill
