#pragma once

#include <optional>
#include <string>
#include <vector>

#include "facefill/tensor.hpp"

namespace facefill {

// ---------------------------------------------------------------------------
// Mask synthesis
// ---------------------------------------------------------------------------

enum class MaskKind { Rect, Ellipse, PolygonLowerFace, FreeformStroke };

const char* to_string(MaskKind k);
MaskKind mask_kind_from_string(const std::string& s);

struct MaskSpec {
    MaskKind kind = MaskKind::Rect;
    real coverage = 0.25;  // fraction of pixels masked, in (0, 0.6]
    uint64_t seed = 0;
};

// Renders a binary {0,1} mask of shape [1,h,w]. Deterministic in
// (kind, coverage, seed); masked fraction tracks `coverage` within +-20%
// for images of practical size.
Tensor synthesize_mask(const MaskSpec& spec, int h, int w);

// target with masked pixels zeroed: target * (1 - mask).
Tensor apply_mask(const Tensor& target, const Tensor& mask);

// ---------------------------------------------------------------------------
// Dense correspondence fields
// ---------------------------------------------------------------------------

struct UVField {
    Tensor u;         // [H,W] in [0,1] on the face region
    Tensor v;         // [H,W]
    Tensor validity;  // [H,W] binary, 1 on the face region

    int height() const { return u.dim(0); }
    int width() const { return u.dim(1); }
    Tensor stacked() const;  // [2,H,W] (u then v)
};

// Binary little-endian container: magic "UVF1", u32 H, u32 W, then
// H*W float32 u row-major, H*W float32 v, H*W u8 validity.
UVField read_uvf(const std::string& path);
void write_uvf(const std::string& path, const UVField& field);

// Scale-k ground truth: u,v averaged over the valid pixels of each block,
// validity set where at least half the block was valid.
UVField downsample_uv(const UVField& field, int factor);

// ---------------------------------------------------------------------------
// Synthetic faces
// ---------------------------------------------------------------------------

// Shaded ellipsoid head on a dark background. The UV field is the analytic
// longitude/latitude parameterization of the visible hemisphere, so it is
// exact and needs no external fitting toolchain.
std::pair<Tensor, UVField> generate_synthetic_face(uint64_t seed, int h, int w);

// ---------------------------------------------------------------------------
// Samples and datasets
// ---------------------------------------------------------------------------

struct ContrastivePair {
    Tensor query;      // [3,H,W] target occluded by mask_q
    Tensor key;        // [3,H,W] target occluded by mask_k
    Tensor mask_query; // [1,H,W]
    Tensor mask_key;   // [1,H,W]
};

// Two views of the same target under independently seeded masks.
ContrastivePair make_contrastive_pair(const Tensor& target, uint64_t rng_seed);
ContrastivePair make_contrastive_pair(const Tensor& target, uint64_t rng_seed,
                                      const std::vector<MaskKind>& kinds, real cov_lo,
                                      real cov_hi);

struct MaskedSample {
    Tensor query;   // x_q, masked view used by the generator
    Tensor key;     // x_k, second view for contrastive training
    Tensor mask;    // mask of the query view, [1,H,W]
    Tensor target;  // Y
    std::optional<UVField> uv_gt;
};

struct DatasetOptions {
    uint64_t shuffle_seed = 0;
    uint64_t mask_seed = 1;
    std::vector<MaskKind> mask_kinds{MaskKind::Rect, MaskKind::Ellipse,
                                     MaskKind::PolygonLowerFace, MaskKind::FreeformStroke};
    real coverage_lo = 0.15;
    real coverage_hi = 0.45;
};

// In-memory dataset. sample(i) is a pure function of (i, seeds), so
// prefetching from multiple threads is safe; iteration order is fixed by
// the shuffle seed alone.
class Dataset {
public:
    static Dataset load(const std::string& root, const std::string& split,
                        DatasetOptions options = {});
    static Dataset synthetic(int count, int h, int w, uint64_t seed, DatasetOptions options = {});

    size_t size() const { return order_.size(); }
    MaskedSample sample(size_t i) const;
    // Same target, masks drawn from an independent stream; lets training
    // vary occlusions across epochs while staying a pure function of
    // (index, salt, seeds).
    MaskedSample sample_with_salt(size_t i, uint64_t salt) const;
    const Tensor& target(size_t i) const { return images_[order_[i]]; }
    bool has_uv(size_t i) const { return uvs_[order_[i]].has_value(); }
    int height() const { return images_.empty() ? 0 : images_[0].dim(1); }
    int width() const { return images_.empty() ? 0 : images_[0].dim(2); }

private:
    std::vector<Tensor> images_;
    std::vector<std::optional<UVField>> uvs_;
    std::vector<size_t> order_;
    DatasetOptions options_;

    void finalize_order();
};

// Writes `count` synthetic faces (images/ + uv/) under `dir`, making `dir`
// usable as one split of a dataset root.
void write_synthetic_split(const std::string& dir, int count, int h, int w, uint64_t seed);

}  // namespace facefill
