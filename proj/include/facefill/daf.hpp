#pragma once

#include <string>
#include <utility>

#include "facefill/nn.hpp"

namespace facefill {

// Dual attention fusion: squeeze-excitation style channel recalibration of
// the decoder feature map, then a learned spatial map that blends the
// projected features with the resized input image.
struct DafModule {
    int channels = 0;
    int reduction = 16;
    int hidden = 32;

    LinearLayer gate_reduce;   // C -> C/r, no bias
    LinearLayer gate_expand;   // C/r -> C, no bias
    Conv2dLayer input_proj;    // 1x1 on the raw input, 3 -> 3, identity init
    Conv2dLayer feature_proj;  // 1x1, C -> 3
    Conv2dLayer attn1, attn2, attn3;  // 3x3 stack on concat(projected, resized)

    DafModule() = default;
    DafModule(ParamStore& store, const std::string& prefix, int channels, int reduction,
              int hidden, Rng& rng);

    // Per-channel statistics gate: z = GAP(F); w = sigmoid(expand(relu(reduce(z))));
    // output = w_c * f_c.
    Var channel_attention(const Var& feature) const;

    // x' = area-downsample(input_proj(x)) to (target_h, target_w).
    Var resize_input(const Var& x_q, int target_h, int target_w) const;

    // alpha = sigmoid(attn(concat(proj(F_hat), x'))); out = alpha (.) proj(F_hat)
    // + (1-alpha) (.) x'. Returns (fused, alpha).
    std::pair<Var, Var> fuse(const Var& f_hat, const Var& x_resized) const;

    std::pair<Var, Var> forward(const Var& feature, const Var& x_q) const;
};

}  // namespace facefill
