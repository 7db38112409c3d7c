#include "facefill/contrastive.hpp"

#include <algorithm>
#include <cmath>

namespace facefill {

int EncoderConfig::stage_width(int stage) const {
    std::int64_t w = base_width;
    for (int s = 1; s < stage; ++s) w = std::min<std::int64_t>(w * 2, max_width);
    return static_cast<int>(w);
}

void EncoderConfig::validate() const {
    if (num_stages < 1) throw ConfigError("num_stages must be >= 1");
    if (base_width < 1 || embed_dim < 1 || in_channels < 1)
        throw ConfigError("encoder widths must be positive");
    if (max_width < base_width) throw ConfigError("max_width must be >= base_width");
}

void EncoderConfig::check_input(int h, int w) const {
    const int div = 1 << num_stages;
    if (h % div != 0 || w % div != 0)
        throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by 2^" + std::to_string(num_stages));
}

ConvTrunk::ConvTrunk(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg_,
                     int in_channels_, Rng& rng)
    : cfg(cfg_), in_channels(in_channels_) {
    cfg.validate();
    int in_ch = in_channels_;
    for (int s = 1; s <= cfg.num_stages; ++s) {
        const int out_ch = cfg.stage_width(s);
        stages.emplace_back(store, prefix + ".stage" + std::to_string(s), in_ch, out_ch, 3, 2, 1,
                            true, rng);
        in_ch = out_ch;
    }
}

std::vector<Var> ConvTrunk::forward(const Var& x) const {
    if (x.value().rank() != 4 || x.value().dim(1) != in_channels)
        throw ShapeError("trunk input must be [B," + std::to_string(in_channels) + ",H,W], got " +
                         shape_str(x.shape()));
    cfg.check_input(x.value().dim(2), x.value().dim(3));
    std::vector<Var> features;
    Var h = x;
    for (const auto& stage : stages) {
        h = relu(stage(h));
        features.push_back(h);
    }
    return features;
}

Encoder::Encoder(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                 Rng& rng)
    : trunk(store, prefix + ".trunk", cfg, cfg.in_channels, rng),
      proj(store, prefix + ".proj", cfg.stage_width(cfg.num_stages), cfg.embed_dim, true, rng) {}

Var Encoder::encode(const Var& x) const {
    const auto features = trunk.forward(x);
    return l2_normalize_rows(proj(global_avg_pool(features.back())));
}

Var Encoder::encode(const Tensor& batch) const { return encode(constant(batch)); }

FeatureQueue::FeatureQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
    if (capacity < 1 || dim < 1) throw ConfigError("queue capacity and dim must be positive");
    entries_ = Tensor(Shape{capacity, dim});
}

void FeatureQueue::enqueue(const Tensor& keys) {
    if (keys.rank() != 2 || keys.dim(1) != dim_)
        throw ShapeError("enqueue expects [B," + std::to_string(dim_) + "]");
    const int B = keys.dim(0);
    if (B > capacity_)
        throw CapacityError("enqueue of " + std::to_string(B) + " keys into capacity " +
                            std::to_string(capacity_));
    for (int i = 0; i < B; ++i) {
        real n2 = 0.0;
        for (int j = 0; j < dim_; ++j) n2 += keys.at(i, j) * keys.at(i, j);
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-5)
            throw StateError("enqueue requires L2-normalized keys");
    }
    for (int i = 0; i < B; ++i) {
        const int slot = (head_ + i) % capacity_;
        for (int j = 0; j < dim_; ++j) entries_.at(slot, j) = keys.at(i, j);
    }
    head_ = (head_ + B) % capacity_;
    filled_ = std::min(filled_ + B, capacity_);
}

Tensor FeatureQueue::active() const {
    if (filled_ == 0) throw StateError("queue is empty");
    Tensor out(Shape{filled_, dim_});
    for (int i = 0; i < filled_; ++i)
        for (int j = 0; j < dim_; ++j) out.at(i, j) = entries_.at(i, j);
    return out;
}

void FeatureQueue::restore(Tensor entries, int head, int filled) {
    if (entries.rank() != 2) throw CheckpointError("queue entries must be rank-2");
    capacity_ = entries.dim(0);
    dim_ = entries.dim(1);
    if (head < 0 || head >= capacity_ || filled < 0 || filled > capacity_)
        throw CheckpointError("queue counters out of range");
    entries_ = std::move(entries);
    head_ = head;
    filled_ = filled;
}

void ContrastiveConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    if (queue_capacity < 1) throw ConfigError("queue capacity must be >= 1");
}

Var info_nce_loss(const Var& z_q, const Tensor& z_k_pos, const FeatureQueue& queue,
                  real temperature) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (queue.filled() < 1) throw StateError("InfoNCE needs a non-empty queue");
    if (z_q.value().rank() != 2 || !z_q.value().same_shape(z_k_pos))
        throw ShapeError("info_nce_loss: query/key shape mismatch");
    if (z_q.value().dim(1) != queue.dim())
        throw ShapeError("info_nce_loss: embedding dim differs from queue dim");

    const Var positive = rowwise_dot(z_q, constant(z_k_pos));      // [B,1]
    const Var negatives = matmul_nt(z_q, constant(queue.active()));  // [B,filled]
    const Var logits = scale(concat_cols(positive, negatives), 1.0 / temperature);
    return cross_entropy_target0(logits);
}

PretrainModel::PretrainModel(const EncoderConfig& ec, const ContrastiveConfig& cc, uint64_t seed)
    : enc_cfg(ec), ctr_cfg(cc), queue(cc.queue_capacity, ec.embed_dim) {
    ec.validate();
    cc.validate();
    Rng rng_q(Rng::derive(seed, 0x71ull));
    query_encoder = Encoder(query_params, "encoder_q", ec, rng_q);
    Rng rng_k(Rng::derive(seed, 0x72ull));
    key_encoder = Encoder(key_params, "encoder_k", ec, rng_k);
    // theta_k starts as an exact copy of theta_q; the momentum rule then
    // keeps it a smoothed trailing copy. Key params never receive gradients.
    for (size_t i = 0; i < query_params.size(); ++i)
        key_params.var(i).value() = query_params.var(i).value();
    for (size_t i = 0; i < key_params.size(); ++i) key_params.var(i).node()->requires_grad = false;
}

void PretrainModel::momentum_update() {
    momentum_blend(ctr_cfg.momentum, query_params, key_params);
}

real PretrainModel::pretrain_step(const std::vector<ContrastivePair>& batch, Sgd& optimizer) {
    if (batch.empty()) throw StateError("pretrain_step on empty batch");
    const int B = static_cast<int>(batch.size());
    const int H = batch[0].query.dim(1), W = batch[0].query.dim(2);
    Tensor queries(Shape{B, 3, H, W});
    Tensor keys(Shape{B, 3, H, W});
    const std::int64_t n = static_cast<std::int64_t>(3) * H * W;
    for (int b = 0; b < B; ++b) {
        std::copy(batch[b].query.data(), batch[b].query.data() + n, queries.data() + b * n);
        std::copy(batch[b].key.data(), batch[b].key.data() + n, keys.data() + b * n);
    }

    Var z_q = query_encoder.encode(queries);
    Tensor z_k;
    {
        NoGradGuard ng;
        z_k = key_encoder.encode(keys).value();
    }
    Var loss = info_nce_loss(z_q, z_k, queue, ctr_cfg.temperature);
    query_params.zero_grad();
    loss.backward();
    optimizer.step(query_params);
    momentum_update();
    queue.enqueue(z_k);
    return loss.scalar();
}

}  // namespace facefill
