#include "facefill/losses.hpp"

#include <algorithm>
#include <cmath>

namespace facefill {

void LossWeights::validate() const {
    if (rec < 0 || uv < 0 || style < 0 || ip < 0)
        throw ConfigError("loss weights must be non-negative");
    if (structure_scales.empty()) throw ConfigError("structure scale set P must not be empty");
    for (int q : texture_scales)
        if (std::find(structure_scales.begin(), structure_scales.end(), q) ==
            structure_scales.end())
            throw ConfigError("texture scale " + std::to_string(q) + " not contained in P");
}

FeatureExtractor::FeatureExtractor(uint64_t seed_, int in_channels) : seed(seed_) {
    Rng rng(Rng::derive(seed_, 0xfea7ull));
    const int widths[3] = {12, 24, 32};
    int in_ch = in_channels;
    for (int s = 0; s < 3; ++s) {
        stages.emplace_back(params, "phi.stage" + std::to_string(s + 1), in_ch, widths[s], 3, 2,
                            1, true, rng, /*trainable=*/false);
        tap_channels.push_back(widths[s]);
        in_ch = widths[s];
    }
}

std::vector<Var> FeatureExtractor::taps(const Var& image) const {
    if (image.value().rank() != 4) throw ShapeError("extractor expects [B,C,H,W]");
    if (image.value().dim(2) < min_input || image.value().dim(3) < min_input)
        throw ConfigError("image below extractor minimum resolution " +
                          std::to_string(min_input));
    std::vector<Var> out;
    Var h = image;
    for (const auto& stage : stages) {
        h = relu(stage(h));
        const real inv = 1.0 / std::sqrt(static_cast<real>(h.value().dim(2)) *
                                         static_cast<real>(h.value().dim(3)));
        out.push_back(scale(h, inv));
    }
    return out;
}

IdentityEmbedder::IdentityEmbedder(uint64_t seed_, int in_channels, int embed_dim_)
    : seed(seed_), embed_dim(embed_dim_) {
    Rng rng(Rng::derive(seed_, 0x1dull));
    const int widths[3] = {16, 32, 48};
    int in_ch = in_channels;
    for (int s = 0; s < 3; ++s) {
        stages.emplace_back(params, "psi.stage" + std::to_string(s + 1), in_ch, widths[s], 3, 2,
                            1, true, rng, /*trainable=*/false);
        in_ch = widths[s];
    }
    head = LinearLayer(params, "psi.head", widths[2], embed_dim, true, rng, /*trainable=*/false);
}

Var IdentityEmbedder::embed(const Var& image) const {
    if (image.value().rank() != 4) throw ShapeError("embedder expects [B,C,H,W]");
    if (image.value().dim(2) < min_input || image.value().dim(3) < min_input)
        throw ConfigError("image below embedder minimum resolution");
    Var h = image;
    for (const auto& stage : stages) h = relu(stage(h));
    return head(global_avg_pool(h));
}

Tensor IdentityEmbedder::embed_value(const Tensor& image) const {
    NoGradGuard ng;
    Tensor batch = image.rank() == 3
                       ? image.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)})
                       : image;
    Tensor rows = embed(constant(batch)).value();
    return rows.reshaped(Shape{rows.dim(1)});
}

Var rec_loss(const Var& pred, const Tensor& target) {
    if (!pred.value().same_shape(target))
        throw ShapeError("rec_loss: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    return mean_all(abs_elem(pred - constant(target)));
}

Var uv_loss(const Var& pred_uv, const Tensor& gt_uv, const Tensor& validity) {
    if (!pred_uv.value().same_shape(gt_uv))
        throw ShapeError("uv_loss: prediction vs ground truth shape mismatch");
    if (pred_uv.value().rank() != 4 || pred_uv.value().dim(1) != 2)
        throw ShapeError("uv_loss expects [B,2,h,w]");
    if (validity.rank() != 4 || validity.dim(1) != 1 ||
        validity.dim(2) != pred_uv.value().dim(2) || validity.dim(3) != pred_uv.value().dim(3))
        throw ShapeError("uv_loss: validity not aligned");

    const real valid_count = validity.sum();
    if (valid_count == 0.0) return constant(Tensor(Shape{1}));

    // Expand validity over the two channels to weight the squared error.
    const int B = pred_uv.value().dim(0), h = pred_uv.value().dim(2),
              w = pred_uv.value().dim(3);
    Tensor weights(Shape{B, 2, h, w});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) weights.at(b, c, y, x) = validity.at(b, 0, y, x);

    const Var diff = pred_uv - constant(gt_uv);
    const Var weighted = square(diff) * constant(std::move(weights));
    return scale(sum_all(weighted), 1.0 / (2.0 * valid_count));
}

Var style_loss(const Var& pred, const Tensor& target, const FeatureExtractor& phi) {
    if (!pred.value().same_shape(target))
        throw ShapeError("style_loss: prediction vs target shape mismatch");
    const int B = pred.value().dim(0);
    const auto pred_taps = phi.taps(pred);
    std::vector<Tensor> target_grams;
    {
        NoGradGuard ng;
        for (const auto& t : phi.taps(constant(target)))
            target_grams.push_back(gram_batch(t).value());
    }
    Var acc;
    const int N = phi.num_taps();
    for (int i = 0; i < N; ++i) {
        const int C = phi.tap_channels[static_cast<size_t>(i)];
        const Var diff = gram_batch(pred_taps[static_cast<size_t>(i)]) -
                         constant(target_grams[static_cast<size_t>(i)]);
        const Var term = scale(sum_all(abs_elem(diff)),
                               1.0 / (static_cast<real>(C) * C * B));
        acc = acc.defined() ? acc + term : term;
    }
    return scale(acc, 1.0 / static_cast<real>(N));
}

Var ip_loss(const Var& pred, const Tensor& target, const IdentityEmbedder& psi) {
    if (!pred.value().same_shape(target))
        throw ShapeError("ip_loss: prediction vs target shape mismatch");
    Tensor target_embed;
    {
        NoGradGuard ng;
        target_embed = psi.embed(constant(target)).value();
    }
    return mean_all(square(psi.embed(pred) - constant(target_embed)));
}

ScaleTargets build_scale_targets(const std::vector<MaskedSample>& batch,
                                 const LossWeights& weights, bool need_uv) {
    if (batch.empty()) throw StateError("empty batch");
    const int B = static_cast<int>(batch.size());
    const int H = batch[0].target.dim(1), W = batch[0].target.dim(2);

    ScaleTargets out;
    for (int k : weights.structure_scales) {
        const int factor = 1 << (k - 1);
        const int h = H / factor, w = W / factor;
        Tensor img(Shape{B, 3, h, w});
        Tensor uvt(Shape{B, 2, h, w});
        Tensor val(Shape{B, 1, h, w});
        for (int b = 0; b < B; ++b) {
            const Tensor down = area_downsample(batch[static_cast<size_t>(b)].target, factor);
            std::copy(down.data(), down.data() + down.size(),
                      img.data() + static_cast<std::int64_t>(b) * 3 * h * w);
            if (need_uv && batch[static_cast<size_t>(b)].uv_gt) {
                const UVField f =
                    downsample_uv(*batch[static_cast<size_t>(b)].uv_gt, factor);
                const Tensor stacked = f.stacked();
                std::copy(stacked.data(), stacked.data() + stacked.size(),
                          uvt.data() + static_cast<std::int64_t>(b) * 2 * h * w);
                std::copy(f.validity.data(), f.validity.data() + f.validity.size(),
                          val.data() + static_cast<std::int64_t>(b) * h * w);
            }
        }
        out.image[k] = std::move(img);
        if (need_uv) {
            out.uv[k] = std::move(uvt);
            out.validity[k] = std::move(val);
        }
    }
    return out;
}

real LossBreakdown::recombined(const LossWeights& w) const {
    real structure = 0.0;
    for (int k : w.structure_scales)
        structure += w.rec * rec.at(k) + w.uv * (uv.count(k) ? uv.at(k) : 0.0);
    structure /= static_cast<real>(w.structure_scales.size());
    real texture = 0.0;
    if (!w.texture_scales.empty()) {
        for (int k : w.texture_scales)
            texture += w.style * style.at(k) + w.ip * ip.at(k);
        texture /= static_cast<real>(w.texture_scales.size());
    }
    return structure + texture;
}

std::pair<Var, LossBreakdown> total_loss(const MultiScaleOutput& outputs,
                                         const ScaleTargets& targets, const LossWeights& weights,
                                         const FeatureExtractor& phi,
                                         const IdentityEmbedder& psi) {
    weights.validate();
    LossBreakdown breakdown;

    const real inv_p = 1.0 / static_cast<real>(weights.structure_scales.size());
    Var total;
    auto accumulate = [&total](const Var& term) {
        total = total.defined() ? total + term : term;
    };

    for (int k : weights.structure_scales) {
        if (!outputs.has_scale(k))
            throw ContractError("loss requires an output at scale " + std::to_string(k));
        const ScaleOutput& so = outputs.at_scale(k);
        const Var rec = rec_loss(so.fused, targets.image.at(k));
        breakdown.rec[k] = rec.scalar();
        accumulate(scale(rec, weights.rec * inv_p));

        if (so.uv.defined() && targets.uv.count(k)) {
            const Var uv = uv_loss(so.uv, targets.uv.at(k), targets.validity.at(k));
            breakdown.uv[k] = uv.scalar();
            accumulate(scale(uv, weights.uv * inv_p));
        } else {
            breakdown.uv[k] = 0.0;
        }
    }

    if (!weights.texture_scales.empty()) {
        const real inv_q = 1.0 / static_cast<real>(weights.texture_scales.size());
        for (int k : weights.texture_scales) {
            const ScaleOutput& so = outputs.at_scale(k);
            const Var st = style_loss(so.fused, targets.image.at(k), phi);
            breakdown.style[k] = st.scalar();
            accumulate(scale(st, weights.style * inv_q));
            const Var ip = ip_loss(so.fused, targets.image.at(k), psi);
            breakdown.ip[k] = ip.scalar();
            accumulate(scale(ip, weights.ip * inv_q));
        }
    }

    breakdown.total = total.scalar();
    return {total, breakdown};
}

}  // namespace facefill
