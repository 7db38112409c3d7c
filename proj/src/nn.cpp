#include "facefill/nn.hpp"

#include <cmath>

namespace facefill {

Var ParamStore::create(const std::string& name, Tensor init, bool trainable) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    Var v = Var::leaf(std::move(init), trainable);
    entries_.emplace_back(name, v);
    return v;
}

Var* ParamStore::find(const std::string& name) {
    for (auto& [n, v] : entries_)
        if (n == name) return &v;
    return nullptr;
}

void ParamStore::zero_grad() {
    for (auto& [n, v] : entries_) v.zero_grad();
}

std::int64_t ParamStore::numel() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : entries_) n += v.value().size();
    return n;
}

Conv2dLayer::Conv2dLayer(ParamStore& store, const std::string& name, int in_ch, int out_ch, int k,
                         int stride_, int pad_, bool with_bias, Rng& rng, bool trainable)
    : stride(stride_), pad(pad_) {
    // He-normal fan-in init.
    const real std = std::sqrt(2.0 / (static_cast<real>(in_ch) * k * k));
    weight = store.create(name + ".weight",
                          Tensor::random_normal(Shape{out_ch, in_ch, k, k}, rng, 0.0, std),
                          trainable);
    if (with_bias) bias = store.create(name + ".bias", Tensor(Shape{out_ch}), trainable);
}

LinearLayer::LinearLayer(ParamStore& store, const std::string& name, int in_f, int out_f,
                         bool with_bias, Rng& rng, bool trainable) {
    const real std = std::sqrt(2.0 / static_cast<real>(in_f));
    weight = store.create(name + ".weight",
                          Tensor::random_normal(Shape{out_f, in_f}, rng, 0.0, std), trainable);
    if (with_bias) bias = store.create(name + ".bias", Tensor(Shape{out_f}), trainable);
}

void Sgd::step(ParamStore& params) {
    for (auto& [name, v] : params) {
        if (!v.requires_grad() || v.grad().empty()) continue;
        Tensor& val = v.value();
        const Tensor& g = v.grad();
        for (std::int64_t i = 0; i < val.size(); ++i) val[i] -= lr_ * g[i];
    }
}

void Adam::step(ParamStore& params) {
    if (m_.size() < params.size()) {
        m_.resize(params.size());
        v_.resize(params.size());
    }
    ++t_;
    const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(t_));
    const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Var& p = params.var(i);
        if (!p.requires_grad() || p.grad().empty()) continue;
        Tensor& val = p.value();
        const Tensor& g = p.grad();
        if (m_[i].empty()) {
            m_[i] = Tensor(val.shape());
            v_[i] = Tensor(val.shape());
        }
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::int64_t j = 0; j < val.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const real mhat = m[j] / bc1;
            const real vhat = v[j] / bc2;
            val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

void momentum_blend(real m, const ParamStore& query, ParamStore& key) {
    if (query.size() != key.size())
        throw ShapeError("momentum_blend: parameter collections differ in size");
    for (size_t i = 0; i < query.size(); ++i) {
        const Tensor& q = query.var(i).value();
        Tensor& k = key.var(i).value();
        if (!q.same_shape(k))
            throw ShapeError("momentum_blend: shape mismatch at " + query.name(i));
        for (std::int64_t j = 0; j < q.size(); ++j) k[j] = m * k[j] + (1.0 - m) * q[j];
    }
}

}  // namespace facefill
