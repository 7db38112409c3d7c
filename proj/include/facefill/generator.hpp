#pragma once

#include <map>
#include <string>
#include <vector>

#include "facefill/checkpoint_fwd.hpp"
#include "facefill/contrastive.hpp"
#include "facefill/daf.hpp"

namespace facefill {

struct DecoderConfig {
    int num_scales = 6;                                // must equal encoder stages
    std::vector<int> output_scales{1, 2, 3, 4, 5, 6};  // scales with heads; 1 is full res
    int daf_reduction = 16;
    int daf_hidden = 32;

    void validate(const EncoderConfig& enc) const;
    bool emits(int scale) const;
};

struct ScaleOutput {
    int scale = 0;
    Var fused;  // [B,3,h_k,w_k], unclamped during training
    Var alpha;  // [B,3,h_k,w_k] in [0,1]; undefined when DAF is ablated
    Var uv;     // [B,2,h_k,w_k] in [0,1]; undefined when UV is ablated
};

struct MultiScaleOutput {
    std::vector<ScaleOutput> scales;  // ordered coarse to fine
    const ScaleOutput& at_scale(int k) const;
    bool has_scale(int k) const;
};

// Stage-2 network: mask-aware encoder trunk, U-Net style decoder, and per
// scale DAF fusion plus a 2-channel sigmoid head for the correspondence
// field. Ablation flags swap DAF for a plain conv head / drop the UV heads.
struct Generator {
    EncoderConfig enc_cfg;
    DecoderConfig dec_cfg;
    bool use_daf = true;
    bool use_uv = true;

    ParamStore params;
    ConvTrunk trunk;                      // input channels: image + mask
    std::vector<Conv2dLayer> up_convs;    // one per decoder stage, coarse to fine
    std::map<int, DafModule> dafs;        // keyed by scale
    std::map<int, Conv2dLayer> uv_heads;  // keyed by scale
    std::map<int, Conv2dLayer> plain_heads;  // used when !use_daf

    Generator(const EncoderConfig& ec, const DecoderConfig& dc, bool use_daf, bool use_uv,
              uint64_t seed);

    int decoder_width(int scale) const;

    // Forward pass over a batch. x_q: [B,3,H,W] masked input, mask: [B,1,H,W].
    MultiScaleOutput generate(const Tensor& x_q, const Tensor& mask) const;
    MultiScaleOutput generate(const Var& x_q, const Var& mask) const;

    // Loads stage-1 query-encoder trunk weights. The projection head is
    // dropped; the first conv gains a zero-initialized mask channel so the
    // loaded function is unchanged on image channels.
    void load_pretrained_encoder(const Archive& checkpoint);
};

}  // namespace facefill
