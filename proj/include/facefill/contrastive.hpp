#pragma once

#include <string>
#include <vector>

#include "facefill/data_pipeline.hpp"
#include "facefill/nn.hpp"

namespace facefill {

struct EncoderConfig {
    int in_channels = 3;
    int base_width = 32;
    int num_stages = 6;
    int embed_dim = 128;
    int max_width = 256;  // channel growth cap, keeps deep stages desk-sized

    int stage_width(int stage) const;  // 1-indexed
    void validate() const;
    void check_input(int h, int w) const;
};

// Plain strided conv stack; stage s halves the spatial size and returns its
// feature map, so callers get the full pyramid for skip connections.
struct ConvTrunk {
    EncoderConfig cfg;
    int in_channels = 3;
    std::vector<Conv2dLayer> stages;

    ConvTrunk() = default;
    ConvTrunk(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
              int in_channels, Rng& rng);

    std::vector<Var> forward(const Var& x) const;
};

// Trunk plus projection head: global average pool, linear projection,
// L2 normalization.
struct Encoder {
    ConvTrunk trunk;
    LinearLayer proj;

    Encoder() = default;
    Encoder(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

    Var encode(const Var& x) const;           // [B, embed_dim], unit rows
    Var encode(const Tensor& batch) const;    // convenience wrapper
};

// Fixed-capacity FIFO dictionary of L2-normalized key embeddings.
class FeatureQueue {
public:
    FeatureQueue(int capacity, int dim);

    void enqueue(const Tensor& keys);  // [B,d], B <= capacity
    int capacity() const { return capacity_; }
    int dim() const { return dim_; }
    int filled() const { return filled_; }
    int head() const { return head_; }
    const Tensor& entries() const { return entries_; }
    Tensor active() const;  // [filled, d], storage order

    void restore(Tensor entries, int head, int filled);

private:
    Tensor entries_;  // [K, d]
    int capacity_ = 0;
    int dim_ = 0;
    int head_ = 0;
    int filled_ = 0;
};

struct ContrastiveConfig {
    real temperature = 0.07;
    real momentum = 0.9;
    int queue_capacity = 4096;

    void validate() const;
};

// InfoNCE against the positive key and the queue contents. The positive
// similarity appears in both numerator and denominator, so with tau = 1
// this is exactly softmax cross-entropy with target class 0.
Var info_nce_loss(const Var& z_q, const Tensor& z_k_pos, const FeatureQueue& queue,
                  real temperature);

// Stage-1 model: query/key Siamese encoders plus the queue dictionary. The
// key encoder starts as an exact copy of the query encoder and is only ever
// moved by the momentum rule.
struct PretrainModel {
    EncoderConfig enc_cfg;
    ContrastiveConfig ctr_cfg;
    ParamStore query_params;
    ParamStore key_params;
    Encoder query_encoder;
    Encoder key_encoder;
    FeatureQueue queue;

    PretrainModel(const EncoderConfig& ec, const ContrastiveConfig& cc, uint64_t seed);

    void momentum_update();  // theta_k <- m theta_k + (1-m) theta_q

    // One training step: encode query with gradients, key without, InfoNCE
    // against the queue, SGD on query params only, momentum update, enqueue.
    real pretrain_step(const std::vector<ContrastivePair>& batch, Sgd& optimizer);
};

}  // namespace facefill
