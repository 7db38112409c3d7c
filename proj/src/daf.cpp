#include "facefill/daf.hpp"

namespace facefill {

DafModule::DafModule(ParamStore& store, const std::string& prefix, int channels_, int reduction_,
                     int hidden_, Rng& rng)
    : channels(channels_), reduction(reduction_), hidden(hidden_) {
    if (channels < 1) throw ConfigError("DAF channels must be positive");
    if (reduction < 1 || channels % reduction != 0)
        throw ConfigError("DAF channel count " + std::to_string(channels) +
                          " not divisible by reduction " + std::to_string(reduction));
    const int squeezed = channels / reduction;
    gate_reduce = LinearLayer(store, prefix + ".gate_reduce", channels, squeezed, false, rng);
    gate_expand = LinearLayer(store, prefix + ".gate_expand", squeezed, channels, false, rng);
    input_proj = Conv2dLayer(store, prefix + ".input_proj", 3, 3, 1, 1, 0, false, rng);
    feature_proj = Conv2dLayer(store, prefix + ".feature_proj", channels, 3, 1, 1, 0, false, rng);
    attn1 = Conv2dLayer(store, prefix + ".attn1", 6, hidden, 3, 1, 1, true, rng);
    attn2 = Conv2dLayer(store, prefix + ".attn2", hidden, hidden, 3, 1, 1, true, rng);
    attn3 = Conv2dLayer(store, prefix + ".attn3", hidden, 3, 3, 1, 1, true, rng);

    // Start the input projection at identity so the "copy the known pixels"
    // path is available from step zero.
    Tensor& w = input_proj.weight.value();
    w.fill(0.0);
    for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.0;
}

Var DafModule::channel_attention(const Var& feature) const {
    if (feature.value().rank() != 4 || feature.value().dim(1) != channels)
        throw ShapeError("channel_attention expects [B," + std::to_string(channels) + ",h,w]");
    const Var stats = global_avg_pool(feature);
    const Var gate = sigmoid(gate_expand(relu(gate_reduce(stats))));
    return scale_channels(feature, gate);
}

Var DafModule::resize_input(const Var& x_q, int target_h, int target_w) const {
    if (x_q.value().rank() != 4 || x_q.value().dim(1) != 3)
        throw ShapeError("resize_input expects [B,3,H,W]");
    const int H = x_q.value().dim(2), W = x_q.value().dim(3);
    if (target_h > H || target_w > W)
        throw ShapeError("resize_input target larger than input");
    if (H % target_h != 0 || W % target_w != 0 || H / target_h != W / target_w)
        throw ShapeError("resize_input target must divide input uniformly");
    return avg_pool(input_proj(x_q), H / target_h);
}

std::pair<Var, Var> DafModule::fuse(const Var& f_hat, const Var& x_resized) const {
    const Var projected = feature_proj(f_hat);
    if (projected.value().dim(2) != x_resized.value().dim(2) ||
        projected.value().dim(3) != x_resized.value().dim(3) ||
        projected.value().dim(0) != x_resized.value().dim(0))
        throw ShapeError("fuse: feature and resized input are not aligned");
    const Var attn_in = concat_channels({projected, x_resized});
    const Var logits = attn3(relu(attn2(relu(attn1(attn_in)))));
    const Var alpha = sigmoid(logits);
    const Var fused = alpha * projected + affine(alpha, -1.0, 1.0) * x_resized;
    return {fused, alpha};
}

std::pair<Var, Var> DafModule::forward(const Var& feature, const Var& x_q) const {
    const Var recalibrated = channel_attention(feature);
    const Var resized =
        resize_input(x_q, feature.value().dim(2), feature.value().dim(3));
    return fuse(recalibrated, resized);
}

}  // namespace facefill
