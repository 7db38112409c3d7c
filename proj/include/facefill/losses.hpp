#pragma once

#include <map>
#include <vector>

#include "facefill/data_pipeline.hpp"
#include "facefill/generator.hpp"

namespace facefill {

struct LossWeights {
    real rec = 6.0;
    real uv = 0.1;
    real style = 240.0;
    real ip = 0.1;
    std::vector<int> structure_scales{1, 2, 3, 4, 5, 6};  // P, 1 = full resolution
    std::vector<int> texture_scales{1, 2, 3};             // Q, subset of P

    void validate() const;
};

// Frozen, seeded conv stack with a tap after each stage. Stand-in for a
// pretrained perceptual backbone: parameters never train, but gradients
// flow through to the image. Tap activations are scaled by 1/sqrt(h*w) so
// Gram magnitudes are resolution-invariant.
struct FeatureExtractor {
    uint64_t seed = 0;
    ParamStore params;
    std::vector<Conv2dLayer> stages;
    std::vector<int> tap_channels;
    int min_input = 8;

    explicit FeatureExtractor(uint64_t seed, int in_channels = 3);
    std::vector<Var> taps(const Var& image) const;
    int num_taps() const { return static_cast<int>(stages.size()); }
};

// Frozen, seeded embedding network (conv stack, global pool, linear head).
struct IdentityEmbedder {
    uint64_t seed = 0;
    int embed_dim = 128;
    ParamStore params;
    std::vector<Conv2dLayer> stages;
    LinearLayer head;
    int min_input = 8;

    explicit IdentityEmbedder(uint64_t seed, int in_channels = 3, int embed_dim = 128);
    Var embed(const Var& image) const;  // [B, embed_dim]
    Tensor embed_value(const Tensor& image) const;  // no-grad convenience, [C,H,W] -> [d]
};

// Individual objectives. Targets are constants; predictions carry the graph.
Var rec_loss(const Var& pred, const Tensor& target);
Var uv_loss(const Var& pred_uv, const Tensor& gt_uv, const Tensor& validity);
Var style_loss(const Var& pred, const Tensor& target, const FeatureExtractor& phi);
Var ip_loss(const Var& pred, const Tensor& target, const IdentityEmbedder& psi);

// Ground truth pyramid for one batch, keyed by scale.
struct ScaleTargets {
    std::map<int, Tensor> image;     // [B,3,h_k,w_k]
    std::map<int, Tensor> uv;        // [B,2,h_k,w_k]
    std::map<int, Tensor> validity;  // [B,1,h_k,w_k]
};

ScaleTargets build_scale_targets(const std::vector<MaskedSample>& batch,
                                 const LossWeights& weights, bool need_uv);

struct LossBreakdown {
    real total = 0.0;
    std::map<int, real> rec;    // raw (unweighted) per-scale values
    std::map<int, real> uv;
    std::map<int, real> style;
    std::map<int, real> ip;

    // Recombines the logged terms with the weights; must equal `total`.
    real recombined(const LossWeights& w) const;
};

// Eq-style grouping: structure terms averaged over P, texture terms over Q.
std::pair<Var, LossBreakdown> total_loss(const MultiScaleOutput& outputs,
                                         const ScaleTargets& targets, const LossWeights& weights,
                                         const FeatureExtractor& phi,
                                         const IdentityEmbedder& psi);

}  // namespace facefill
