#include "facefill/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace facefill {

real psnr(const Tensor& a, const Tensor& b, real peak) {
    if (!a.same_shape(b)) throw ShapeError("psnr: shape mismatch");
    real mse = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const real d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<real>(a.size());
    if (mse == 0.0) return std::numeric_limits<real>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<real> gaussian_window(int taps, real sigma) {
    std::vector<real> w(static_cast<size_t>(taps));
    const real c = (taps - 1) / 2.0;
    real total = 0.0;
    for (int i = 0; i < taps; ++i) {
        w[static_cast<size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
        total += w[static_cast<size_t>(i)];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Separable valid-mode Gaussian filter on one [H,W] plane.
void filter_valid(const std::vector<real>& src, int H, int W, const std::vector<real>& win,
                  std::vector<real>& tmp, std::vector<real>& dst) {
    const int t = static_cast<int>(win.size());
    const int Wv = W - t + 1, Hv = H - t + 1;
    tmp.assign(static_cast<size_t>(H) * Wv, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < Wv; ++x) {
            real acc = 0.0;
            for (int i = 0; i < t; ++i) acc += win[static_cast<size_t>(i)] * src[static_cast<size_t>(y) * W + x + i];
            tmp[static_cast<size_t>(y) * Wv + x] = acc;
        }
    dst.assign(static_cast<size_t>(Hv) * Wv, 0.0);
    for (int y = 0; y < Hv; ++y)
        for (int x = 0; x < Wv; ++x) {
            real acc = 0.0;
            for (int i = 0; i < t; ++i) acc += win[static_cast<size_t>(i)] * tmp[static_cast<size_t>(y + i) * Wv + x];
            dst[static_cast<size_t>(y) * Wv + x] = acc;
        }
}

}  // namespace

real ssim(const Tensor& a, const Tensor& b, int window, real sigma, real k1, real k2, real peak) {
    if (!a.same_shape(b)) throw ShapeError("ssim: shape mismatch");
    if (a.rank() != 3) throw ShapeError("ssim expects [C,H,W]");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (H < window || W < window) throw ShapeError("ssim: image smaller than window");

    const auto win = gaussian_window(window, sigma);
    const real c1 = (k1 * peak) * (k1 * peak);
    const real c2 = (k2 * peak) * (k2 * peak);

    const size_t plane = static_cast<size_t>(H) * W;
    std::vector<real> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    std::vector<real> tmp, mx, my, mxx, myy, mxy;

    real total = 0.0;
    std::int64_t n = 0;
    for (int c = 0; c < C; ++c) {
        const real* pa = a.data() + static_cast<std::int64_t>(c) * plane;
        const real* pb = b.data() + static_cast<std::int64_t>(c) * plane;
        for (size_t i = 0; i < plane; ++i) {
            x[i] = pa[i];
            y[i] = pb[i];
            xx[i] = pa[i] * pa[i];
            yy[i] = pb[i] * pb[i];
            xy[i] = pa[i] * pb[i];
        }
        filter_valid(x, H, W, win, tmp, mx);
        filter_valid(y, H, W, win, tmp, my);
        filter_valid(xx, H, W, win, tmp, mxx);
        filter_valid(yy, H, W, win, tmp, myy);
        filter_valid(xy, H, W, win, tmp, mxy);
        for (size_t i = 0; i < mx.size(); ++i) {
            const real mu_x = mx[i], mu_y = my[i];
            const real var_x = mxx[i] - mu_x * mu_x;
            const real var_y = myy[i] - mu_y * mu_y;
            const real cov = mxy[i] - mu_x * mu_y;
            const real num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
            const real den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            total += num / den;
            ++n;
        }
    }
    return total / static_cast<real>(n);
}

GaussianAccumulator::GaussianAccumulator(int dim) : dim_(dim) {
    if (dim < 1) throw ConfigError("GaussianAccumulator dim must be positive");
    sum_ = Tensor(Shape{dim});
    outer_ = Tensor(Shape{dim, dim});
}

void GaussianAccumulator::add(const Tensor& v) {
    if (v.size() != dim_) throw ShapeError("GaussianAccumulator: wrong dimension");
    for (int i = 0; i < dim_; ++i) sum_[i] += v[i];
    for (int i = 0; i < dim_; ++i)
        for (int j = 0; j < dim_; ++j) outer_.at(i, j) += v[i] * v[j];
    ++n_;
}

GaussianStats GaussianAccumulator::finalize() const {
    if (n_ < 2) throw StateError("need at least 2 samples for covariance");
    GaussianStats s;
    s.count = n_;
    s.mean = Tensor(Shape{dim_});
    s.covariance = Tensor(Shape{dim_, dim_});
    const real n = static_cast<real>(n_);
    for (int i = 0; i < dim_; ++i) s.mean[i] = sum_[i] / n;
    for (int i = 0; i < dim_; ++i)
        for (int j = 0; j < dim_; ++j)
            s.covariance.at(i, j) = (outer_.at(i, j) - n * s.mean[i] * s.mean[j]) / (n - 1.0);
    // Exact symmetrization; accumulation order can leave 1-ulp asymmetry.
    for (int i = 0; i < dim_; ++i)
        for (int j = i + 1; j < dim_; ++j) {
            const real v = 0.5 * (s.covariance.at(i, j) + s.covariance.at(j, i));
            s.covariance.at(i, j) = v;
            s.covariance.at(j, i) = v;
        }
    return s;
}

namespace {

using EMatrix = Eigen::MatrixXd;

EMatrix to_eigen(const Tensor& t) {
    EMatrix m(t.dim(0), t.dim(1));
    for (int i = 0; i < t.dim(0); ++i)
        for (int j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
    return m;
}

EMatrix psd_sqrt(const EMatrix& m) {
    Eigen::SelfAdjointEigenSolver<EMatrix> eig(m);
    Eigen::VectorXd vals = eig.eigenvalues();
    for (int i = 0; i < vals.size(); ++i) vals[i] = vals[i] > 0.0 ? std::sqrt(vals[i]) : 0.0;
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

real frechet_distance(const GaussianStats& s1, const GaussianStats& s2) {
    if (s1.mean.size() != s2.mean.size()) throw ShapeError("frechet_distance: dim mismatch");
    const int d = static_cast<int>(s1.mean.size());
    if (s1.covariance.rank() != 2 || s1.covariance.dim(0) != d || s1.covariance.dim(1) != d ||
        !s1.covariance.same_shape(s2.covariance))
        throw ShapeError("frechet_distance: covariance shape mismatch");

    real mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const real diff = s1.mean[i] - s2.mean[i];
        mean_term += diff * diff;
    }

    const EMatrix c1 = to_eigen(s1.covariance);
    const EMatrix c2 = to_eigen(s2.covariance);
    const EMatrix root1 = psd_sqrt(c1);
    EMatrix prod = root1 * c2 * root1;
    prod = (prod + prod.transpose()) / 2.0;
    Eigen::SelfAdjointEigenSolver<EMatrix> eig(prod);
    real trace_sqrt = 0.0;
    for (int i = 0; i < d; ++i) {
        const real v = eig.eigenvalues()[i];
        if (v > 0.0) trace_sqrt += std::sqrt(v);
    }
    const real result = mean_term + c1.trace() + c2.trace() - 2.0 * trace_sqrt;
    return result > 0.0 ? result : 0.0;
}

real cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: dim mismatch");
    real dot = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

struct RocCurve {
    std::vector<std::pair<std::int64_t, std::int64_t>> points;  // cumulative (fp, tp)
    std::int64_t pos = 0;
    std::int64_t neg = 0;
};

// Threshold sweep over descending scores, tie blocks collapsed into single
// steps. Counts stay integral so the AUC below is exact.
RocCurve roc_curve(const std::vector<VerificationPair>& pairs) {
    RocCurve curve;
    std::vector<std::pair<real, bool>> scored;
    scored.reserve(pairs.size());
    for (const auto& p : pairs) {
        scored.emplace_back(cosine_similarity(p.embedding_a, p.embedding_b), p.same_identity);
        (p.same_identity ? curve.pos : curve.neg)++;
    }
    if (curve.pos == 0 || curve.neg == 0)
        throw StateError("ROC needs both positive and negative pairs");
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    curve.points.emplace_back(0, 0);
    std::int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < scored.size()) {
        const real s = scored[i].first;
        while (i < scored.size() && scored[i].first == s) {
            (scored[i].second ? tp : fp)++;
            ++i;
        }
        curve.points.emplace_back(fp, tp);
    }
    return curve;
}

real tpr_interpolated(const RocCurve& curve, real fpr) {
    // Upper envelope at the exact abscissa, linear interpolation between
    // neighbouring threshold points otherwise.
    real best_at = -1.0;
    for (const auto& [fp, tp] : curve.points) {
        const real f = static_cast<real>(fp) / curve.neg;
        if (f == fpr) best_at = std::max(best_at, static_cast<real>(tp) / curve.pos);
    }
    if (best_at >= 0.0) return best_at;
    for (size_t i = 1; i < curve.points.size(); ++i) {
        const real f0 = static_cast<real>(curve.points[i - 1].first) / curve.neg;
        const real f1 = static_cast<real>(curve.points[i].first) / curve.neg;
        const real t0 = static_cast<real>(curve.points[i - 1].second) / curve.pos;
        const real t1 = static_cast<real>(curve.points[i].second) / curve.pos;
        if (f0 < fpr && fpr < f1) return t0 + (t1 - t0) * (fpr - f0) / (f1 - f0);
    }
    return 1.0;
}

}  // namespace

real tpr_at_fpr(const std::vector<VerificationPair>& pairs, real fpr) {
    return tpr_interpolated(roc_curve(pairs), fpr);
}

RocResult roc_auc(const std::vector<VerificationPair>& pairs) {
    const RocCurve curve = roc_curve(pairs);
    // Integer trapezoid numerator: sum of dFP * (TP0 + TP1). This equals
    // twice the Mann-Whitney win count with ties worth one half, so the
    // final division reproduces the brute-force win rate bit for bit.
    std::int64_t numerator = 0;
    for (size_t i = 1; i < curve.points.size(); ++i) {
        const std::int64_t dfp = curve.points[i].first - curve.points[i - 1].first;
        numerator += dfp * (curve.points[i].second + curve.points[i - 1].second);
    }
    RocResult r;
    r.auc = static_cast<real>(numerator) /
            (2.0 * static_cast<real>(curve.pos) * static_cast<real>(curve.neg));
    r.tpr_at_1pct = tpr_interpolated(curve, 0.01);
    r.tpr_at_0p1pct = tpr_interpolated(curve, 0.001);
    return r;
}

EvaluationReport evaluate_dataset(const Generator& generator, const Dataset& dataset,
                                  const IdentityEmbedder& embedder) {
    configure_threading();
    EvaluationReport report;
    const size_t n = dataset.size();
    if (n == 0) throw StateError("evaluate_dataset on empty dataset");

    std::vector<Tensor> out_embeds, target_embeds;
    real psnr_sum = 0.0, ssim_sum = 0.0;
    std::int64_t psnr_count = 0;

    NoGradGuard ng;
    for (size_t i = 0; i < n; ++i) {
        const MaskedSample s = dataset.sample(i);
        const int H = s.target.dim(1), W = s.target.dim(2);
        const Tensor xq = s.query.reshaped(Shape{1, 3, H, W});
        const Tensor mk = s.mask.reshaped(Shape{1, 1, H, W});
        const MultiScaleOutput out = generator.generate(xq, mk);
        const Tensor restored =
            clamp01(out.at_scale(1).fused.value().reshaped(Shape{3, H, W}));

        ImageRow row;
        row.id = "img_" + std::to_string(i);
        row.psnr_db = psnr(restored, s.target);
        row.ssim_value = ssim(restored, s.target);
        if (std::isfinite(row.psnr_db)) {
            psnr_sum += row.psnr_db;
            ++psnr_count;
        }
        ssim_sum += row.ssim_value;
        report.rows.push_back(row);

        out_embeds.push_back(embedder.embed_value(restored));
        target_embeds.push_back(embedder.embed_value(s.target));
    }

    report.psnr_mean = psnr_count ? psnr_sum / static_cast<real>(psnr_count)
                                  : std::numeric_limits<real>::infinity();
    report.ssim_mean = ssim_sum / static_cast<real>(n);

    if (n >= 2) {
        const int d = static_cast<int>(out_embeds[0].size());
        GaussianAccumulator acc_out(d), acc_target(d);
        for (const auto& e : out_embeds) acc_out.add(e);
        for (const auto& e : target_embeds) acc_target.add(e);
        report.frechet = frechet_distance(acc_out.finalize(), acc_target.finalize());

        std::vector<VerificationPair> pairs;
        for (size_t i = 0; i < n; ++i) {
            pairs.push_back({out_embeds[i], target_embeds[i], true});
            pairs.push_back({out_embeds[i], target_embeds[(i + 1) % n], false});
        }
        const RocResult roc = roc_auc(pairs);
        report.auc = roc.auc;
        report.tpr_at_1pct = roc.tpr_at_1pct;
        report.tpr_at_0p1pct = roc.tpr_at_0p1pct;
    }
    return report;
}

}  // namespace facefill
