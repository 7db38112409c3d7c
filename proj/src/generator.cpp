#include "facefill/generator.hpp"

#include <algorithm>

#include "facefill/checkpoint.hpp"

namespace facefill {

void DecoderConfig::validate(const EncoderConfig& enc) const {
    if (num_scales != enc.num_stages)
        throw ConfigError("decoder num_scales must equal encoder num_stages");
    if (output_scales.empty()) throw ConfigError("output_scales must not be empty");
    if (!emits(1)) throw ConfigError("scale 1 (full resolution) must be emitted");
    for (int k : output_scales)
        if (k < 1 || k > num_scales)
            throw ConfigError("output scale " + std::to_string(k) + " out of range");
    if (daf_reduction < 1 || daf_hidden < 1) throw ConfigError("DAF sizes must be positive");
}

bool DecoderConfig::emits(int scale) const {
    return std::find(output_scales.begin(), output_scales.end(), scale) != output_scales.end();
}

const ScaleOutput& MultiScaleOutput::at_scale(int k) const {
    for (const auto& s : scales)
        if (s.scale == k) return s;
    throw ContractError("no output emitted at scale " + std::to_string(k));
}

bool MultiScaleOutput::has_scale(int k) const {
    for (const auto& s : scales)
        if (s.scale == k) return true;
    return false;
}

int Generator::decoder_width(int scale) const {
    // Decoder widths mirror encoder widths at the same resolution; the full
    // resolution stage, which has no encoder counterpart, uses base_width.
    return scale >= 2 ? enc_cfg.stage_width(scale - 1) : enc_cfg.base_width;
}

Generator::Generator(const EncoderConfig& ec, const DecoderConfig& dc, bool use_daf_,
                     bool use_uv_, uint64_t seed)
    : enc_cfg(ec), dec_cfg(dc), use_daf(use_daf_), use_uv(use_uv_) {
    ec.validate();
    dc.validate(ec);
    Rng rng(Rng::derive(seed, 0x6e6ull));
    trunk = ConvTrunk(params, "encoder.trunk", ec, ec.in_channels + 1, rng);

    const int S = dc.num_scales;
    for (int k = S; k >= 1; --k) {
        const int in_width = (k == S) ? ec.stage_width(S) : decoder_width(k + 1);
        const int skip_width = (k >= 2) ? ec.stage_width(k - 1) : ec.in_channels + 1;
        up_convs.emplace_back(params, "decoder.up" + std::to_string(k), in_width + skip_width,
                              decoder_width(k), 3, 1, 1, true, rng);
    }
    for (int k : dc.output_scales) {
        const int width = decoder_width(k);
        if (use_daf) {
            dafs.emplace(k, DafModule(params, "daf.scale" + std::to_string(k), width,
                                      dc.daf_reduction, dc.daf_hidden, rng));
        } else {
            plain_heads.emplace(k, Conv2dLayer(params, "head.scale" + std::to_string(k), width, 3,
                                               3, 1, 1, true, rng));
        }
        if (use_uv) {
            uv_heads.emplace(k, Conv2dLayer(params, "uv.scale" + std::to_string(k), width, 2, 3, 1,
                                            1, true, rng));
        }
    }
}

MultiScaleOutput Generator::generate(const Tensor& x_q, const Tensor& mask) const {
    return generate(constant(x_q), constant(mask));
}

MultiScaleOutput Generator::generate(const Var& x_q, const Var& mask) const {
    if (x_q.value().rank() != 4 || x_q.value().dim(1) != enc_cfg.in_channels)
        throw ShapeError("generate expects x_q [B," + std::to_string(enc_cfg.in_channels) +
                         ",H,W], got " + shape_str(x_q.shape()));
    if (mask.value().rank() != 4 || mask.value().dim(1) != 1 ||
        mask.value().dim(0) != x_q.value().dim(0) || mask.value().dim(2) != x_q.value().dim(2) ||
        mask.value().dim(3) != x_q.value().dim(3))
        throw ShapeError("generate: mask not aligned with input");

    const Var net_in = concat_channels({x_q, mask});
    const auto features = trunk.forward(net_in);

    MultiScaleOutput out;
    const int S = dec_cfg.num_scales;
    Var d = features.back();
    for (int k = S; k >= 1; --k) {
        d = upsample_nearest2x(d);
        const Var skip = (k >= 2) ? features[static_cast<size_t>(k - 2)] : net_in;
        d = relu(up_convs[static_cast<size_t>(S - k)](concat_channels({d, skip})));
        if (!dec_cfg.emits(k)) continue;

        ScaleOutput so;
        so.scale = k;
        if (use_daf) {
            auto [fused, alpha] = dafs.at(k).forward(d, x_q);
            so.fused = fused;
            so.alpha = alpha;
        } else {
            so.fused = plain_heads.at(k)(d);
        }
        if (use_uv) so.uv = sigmoid(uv_heads.at(k)(d));
        out.scales.push_back(std::move(so));
    }
    return out;
}

void Generator::load_pretrained_encoder(const Archive& checkpoint) {
    for (int s = 1; s <= enc_cfg.num_stages; ++s) {
        const std::string src = "params.q.encoder_q.trunk.stage" + std::to_string(s);
        const std::string dst = "encoder.trunk.stage" + std::to_string(s);
        const Tensor& w_src = checkpoint.get(src + ".weight");
        const Tensor& b_src = checkpoint.get(src + ".bias");
        Var* w_dst = params.find(dst + ".weight");
        Var* b_dst = params.find(dst + ".bias");
        if (!w_dst || !b_dst) throw CheckpointError("generator missing trunk stage " + dst);

        Tensor& w = w_dst->value();
        if (s == 1) {
            // Pretrained first conv saw 3 channels; stage 2 adds the mask
            // channel, which starts at zero so behavior matches at load time.
            if (w_src.dim(0) != w.dim(0) || w_src.dim(1) + 1 != w.dim(1) ||
                w_src.dim(2) != w.dim(2) || w_src.dim(3) != w.dim(3))
                throw CheckpointError("first conv shape mismatch: checkpoint " +
                                      shape_str(w_src.shape()) + " vs generator " +
                                      shape_str(w.shape()));
            w.fill(0.0);
            for (int o = 0; o < w_src.dim(0); ++o)
                for (int i = 0; i < w_src.dim(1); ++i)
                    for (int y = 0; y < w_src.dim(2); ++y)
                        for (int x = 0; x < w_src.dim(3); ++x)
                            w.at(o, i, y, x) = w_src.at(o, i, y, x);
        } else {
            if (!(w_src.shape() == w.shape()))
                throw CheckpointError("trunk stage " + std::to_string(s) + " shape mismatch: " +
                                      shape_str(w_src.shape()) + " vs " + shape_str(w.shape()));
            w = w_src;
        }
        if (!(b_src.shape() == b_dst->value().shape()))
            throw CheckpointError("trunk stage " + std::to_string(s) + " bias shape mismatch");
        b_dst->value() = b_src;
    }
}

}  // namespace facefill
