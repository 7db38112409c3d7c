#pragma once

#include <string>
#include <vector>

#include "facefill/losses.hpp"

namespace facefill {

// 10*log10(peak^2 / MSE); +infinity when the images are identical.
real psnr(const Tensor& a, const Tensor& b, real peak = 1.0);

// Gaussian-windowed SSIM (11 taps, sigma 1.5, valid padding), averaged over
// channels and window positions.
real ssim(const Tensor& a, const Tensor& b, int window = 11, real sigma = 1.5, real k1 = 0.01,
          real k2 = 0.03, real peak = 1.0);

struct GaussianStats {
    Tensor mean;        // [d]
    Tensor covariance;  // [d,d], symmetric PSD up to numerical noise
    std::int64_t count = 0;
};

// Single-owner accumulator; feed vectors in a fixed order for deterministic
// covariance, then finalize (unbiased, n-1 normalization).
class GaussianAccumulator {
public:
    explicit GaussianAccumulator(int dim);
    void add(const Tensor& v);  // [d]
    GaussianStats finalize() const;

private:
    int dim_;
    std::int64_t n_ = 0;
    Tensor sum_;
    Tensor outer_;
};

// Wasserstein-2 distance between Gaussians:
// |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), square root by
// eigendecomposition of the symmetrized product, negative eigenvalues
// clipped at zero.
real frechet_distance(const GaussianStats& s1, const GaussianStats& s2);

struct VerificationPair {
    Tensor embedding_a;
    Tensor embedding_b;
    bool same_identity = false;
};

struct RocResult {
    real auc = 0.0;
    real tpr_at_1pct = 0.0;
    real tpr_at_0p1pct = 0.0;
};

// Cosine-scored ROC. Ties collapse into single threshold steps (trapezoid
// across the block), which makes AUC equal the Mann-Whitney win rate with
// ties counted 1/2.
RocResult roc_auc(const std::vector<VerificationPair>& pairs);
real cosine_similarity(const Tensor& a, const Tensor& b);
real tpr_at_fpr(const std::vector<VerificationPair>& pairs, real fpr);

struct ImageRow {
    std::string id;
    real psnr_db = 0.0;
    real ssim_value = 0.0;
};

struct EvaluationReport {
    std::vector<ImageRow> rows;
    real psnr_mean = 0.0;  // over finite per-image values
    real ssim_mean = 0.0;
    real frechet = 0.0;
    real auc = 0.0;
    real tpr_at_1pct = 0.0;
    real tpr_at_0p1pct = 0.0;
};

// Runs the generator over every sample, compares against targets, pools
// embeddings of outputs vs targets for the Frechet distance, and scores a
// same/different-source verification sweep.
EvaluationReport evaluate_dataset(const Generator& generator, const Dataset& dataset,
                                  const IdentityEmbedder& embedder);

}  // namespace facefill
