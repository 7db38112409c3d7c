#include "facefill/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "facefill/image_io.hpp"

namespace fs = std::filesystem;

namespace facefill {

namespace {

constexpr real kPi = 3.14159265358979323846;

uint64_t coverage_bits(real coverage) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(coverage));
    std::memcpy(&bits, &coverage, sizeof(bits));
    return bits;
}

void validate_mask_args(const MaskSpec& spec, int h, int w) {
    if (!(spec.coverage > 0.0) || spec.coverage > 0.6)
        throw ConfigError("mask coverage must be in (0, 0.6], got " +
                          std::to_string(spec.coverage));
    if (h < 8 || w < 8) throw ConfigError("mask dimensions must be >= 8");
}

void render_rect(Tensor& mask, Rng& rng, real target, int h, int w) {
    const real aspect = rng.uniform(0.5, 2.0);
    int mw = std::clamp(static_cast<int>(std::lround(std::sqrt(target * aspect))), 1, w);
    int mh = std::clamp(static_cast<int>(std::lround(target / mw)), 1, h);
    const int y0 = rng.uniform_int(0, h - mh);
    const int x0 = rng.uniform_int(0, w - mw);
    for (int y = y0; y < y0 + mh; ++y)
        for (int x = x0; x < x0 + mw; ++x) mask.at(0, y, x) = 1.0;
}

void render_ellipse(Tensor& mask, Rng& rng, real target, int h, int w) {
    const real ratio = rng.uniform(0.6, 1.6);
    real a = std::sqrt(target * ratio / kPi);
    real b = target / (kPi * a);
    a = std::min(a, w / 2.0 - 0.5);
    b = std::min(b, h / 2.0 - 0.5);
    const real cx = rng.uniform(a, w - 1.0 - a > a ? w - 1.0 - a : a);
    const real cy = rng.uniform(b, h - 1.0 - b > b ? h - 1.0 - b : b);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const real dx = (x - cx) / a, dy = (y - cy) / b;
            if (dx * dx + dy * dy <= 1.0) mask.at(0, y, x) = 1.0;
        }
}

void render_polygon_lower_face(Tensor& mask, Rng& rng, real target, int h, int w) {
    // Convex polygon sampled around an ellipse sitting over the lower half,
    // then rescaled about its centroid to hit the target area.
    const int n = 10;
    std::vector<real> px(n), py(n);
    const real base_a = w * 0.3, base_b = h * 0.22;
    real cx = w * rng.uniform(0.42, 0.58);
    real cy = h * rng.uniform(0.62, 0.72);
    for (int i = 0; i < n; ++i) {
        const real ang = 2.0 * kPi * i / n;
        const real rad = rng.uniform(0.85, 1.15);
        px[i] = std::cos(ang) * base_a * rad;
        py[i] = std::sin(ang) * base_b * rad;
    }
    real area = 0.0;
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        area += px[i] * py[j] - px[j] * py[i];
    }
    area = std::abs(area) / 2.0;
    const real s = std::sqrt(target / area);
    for (int i = 0; i < n; ++i) {
        px[i] = px[i] * s + cx;
        py[i] = py[i] * s + cy;
    }
    // Keep the polygon inside the frame where possible (translate only).
    real min_x = px[0], max_x = px[0], min_y = py[0], max_y = py[0];
    for (int i = 1; i < n; ++i) {
        min_x = std::min(min_x, px[i]);
        max_x = std::max(max_x, px[i]);
        min_y = std::min(min_y, py[i]);
        max_y = std::max(max_y, py[i]);
    }
    real tx = 0.0, ty = 0.0;
    if (min_x < 0) tx = -min_x;
    if (max_x > w - 1) tx = std::min(tx, w - 1 - max_x);
    if (min_y < 0) ty = -min_y;
    if (max_y > h - 1) ty = std::min(ty, h - 1 - max_y);
    for (int i = 0; i < n; ++i) {
        px[i] += tx;
        py[i] += ty;
    }
    // Convex point-in-polygon test over the bounding box.
    const int y0 = std::max(0, static_cast<int>(std::floor(min_y + ty)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(max_y + ty)));
    const int x0 = std::max(0, static_cast<int>(std::floor(min_x + tx)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(max_x + tx)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            bool inside = true;
            for (int i = 0; i < n && inside; ++i) {
                const int j = (i + 1) % n;
                const real cross =
                    (px[j] - px[i]) * (y - py[i]) - (py[j] - py[i]) * (x - px[i]);
                if (cross < 0) inside = false;
            }
            if (inside) mask.at(0, y, x) = 1.0;
        }
}

void render_freeform(Tensor& mask, Rng& rng, real target, int h, int w) {
    const int radius = std::min(h, w) < 24 ? 0 : static_cast<int>(std::lround(0.035 * std::min(h, w)));
    std::int64_t painted = 0;
    const std::int64_t want = static_cast<std::int64_t>(std::lround(target));
    real x = rng.uniform(w * 0.2, w * 0.8);
    real y = rng.uniform(h * 0.2, h * 0.8);
    real heading = rng.uniform(0.0, 2.0 * kPi);
    const real step = std::max(1.0, radius * 0.9);
    int guard = 0;
    while (painted < want && guard++ < 100000) {
        const int cy = static_cast<int>(std::lround(y));
        const int cx = static_cast<int>(std::lround(x));
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx) {
                if (dx * dx + dy * dy > radius * radius) continue;
                const int yy = cy + dy, xx = cx + dx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                if (mask.at(0, yy, xx) == 0.0) {
                    mask.at(0, yy, xx) = 1.0;
                    ++painted;
                }
            }
        heading += rng.uniform(-0.6, 0.6);
        x += std::cos(heading) * step;
        y += std::sin(heading) * step;
        if (x < 1 || x > w - 2) {
            heading = kPi - heading;
            x = std::clamp(x, 1.0, w - 2.0);
        }
        if (y < 1 || y > h - 2) {
            heading = -heading;
            y = std::clamp(y, 1.0, h - 2.0);
        }
    }
}

}  // namespace

const char* to_string(MaskKind k) {
    switch (k) {
        case MaskKind::Rect: return "rect";
        case MaskKind::Ellipse: return "ellipse";
        case MaskKind::PolygonLowerFace: return "polygon_lower_face";
        case MaskKind::FreeformStroke: return "freeform_stroke";
    }
    return "rect";
}

MaskKind mask_kind_from_string(const std::string& s) {
    if (s == "rect") return MaskKind::Rect;
    if (s == "ellipse") return MaskKind::Ellipse;
    if (s == "polygon_lower_face") return MaskKind::PolygonLowerFace;
    if (s == "freeform_stroke") return MaskKind::FreeformStroke;
    throw ConfigError("unknown mask kind: " + s);
}

Tensor synthesize_mask(const MaskSpec& spec, int h, int w) {
    validate_mask_args(spec, h, w);
    Rng rng(Rng::derive(Rng::derive(spec.seed, static_cast<uint64_t>(spec.kind)),
                        coverage_bits(spec.coverage)));
    Tensor mask(Shape{1, h, w});
    const real target = spec.coverage * h * w;
    switch (spec.kind) {
        case MaskKind::Rect: render_rect(mask, rng, target, h, w); break;
        case MaskKind::Ellipse: render_ellipse(mask, rng, target, h, w); break;
        case MaskKind::PolygonLowerFace: render_polygon_lower_face(mask, rng, target, h, w); break;
        case MaskKind::FreeformStroke: render_freeform(mask, rng, target, h, w); break;
    }
    return mask;
}

Tensor apply_mask(const Tensor& target, const Tensor& mask) {
    if (target.rank() != 3 || mask.rank() != 3 || mask.dim(0) != 1 ||
        mask.dim(1) != target.dim(1) || mask.dim(2) != target.dim(2))
        throw ShapeError("apply_mask: target " + shape_str(target.shape()) + " mask " +
                         shape_str(mask.shape()));
    Tensor out = target;
    const int C = target.dim(0), H = target.dim(1), W = target.dim(2);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (mask.at(0, y, x) != 0.0) out.at(c, y, x) = 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// UV fields
// ---------------------------------------------------------------------------

Tensor UVField::stacked() const {
    const int H = height(), W = width();
    Tensor out(Shape{2, H, W});
    std::copy(u.data(), u.data() + u.size(), out.data());
    std::copy(v.data(), v.data() + v.size(), out.data() + u.size());
    return out;
}

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void write_uvf(const std::string& path, const UVField& field) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IngestionError("cannot write UV file " + path);
    os.write("UVF1", 4);
    const int H = field.height(), W = field.width();
    write_le<uint32_t>(os, static_cast<uint32_t>(H));
    write_le<uint32_t>(os, static_cast<uint32_t>(W));
    for (std::int64_t i = 0; i < field.u.size(); ++i)
        write_le<float>(os, static_cast<float>(field.u[i]));
    for (std::int64_t i = 0; i < field.v.size(); ++i)
        write_le<float>(os, static_cast<float>(field.v[i]));
    for (std::int64_t i = 0; i < field.validity.size(); ++i)
        os.put(field.validity[i] != 0.0 ? 1 : 0);
    if (!os) throw IngestionError("short write on UV file " + path);
}

UVField read_uvf(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError("cannot open UV file " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "UVF1", 4) != 0)
        throw IngestionError("bad magic in UV file " + path);
    const auto H = static_cast<int>(read_le<uint32_t>(is));
    const auto W = static_cast<int>(read_le<uint32_t>(is));
    if (H <= 0 || W <= 0 || H > 1 << 16 || W > 1 << 16)
        throw IngestionError("implausible dimensions in UV file " + path);
    UVField f;
    f.u = Tensor(Shape{H, W});
    f.v = Tensor(Shape{H, W});
    f.validity = Tensor(Shape{H, W});
    for (std::int64_t i = 0; i < f.u.size(); ++i) f.u[i] = read_le<float>(is);
    for (std::int64_t i = 0; i < f.v.size(); ++i) f.v[i] = read_le<float>(is);
    for (std::int64_t i = 0; i < f.validity.size(); ++i) f.validity[i] = is.get() ? 1.0 : 0.0;
    if (!is) throw IngestionError("truncated UV file " + path);
    for (std::int64_t i = 0; i < f.u.size(); ++i) {
        if (f.validity[i] == 0.0) {
            f.u[i] = 0.0;
            f.v[i] = 0.0;
        } else if (f.u[i] < -1e-6 || f.u[i] > 1.0 + 1e-6 || f.v[i] < -1e-6 ||
                   f.v[i] > 1.0 + 1e-6) {
            throw IngestionError("UV value out of [0,1] in " + path);
        } else {
            f.u[i] = std::clamp(f.u[i], 0.0, 1.0);
            f.v[i] = std::clamp(f.v[i], 0.0, 1.0);
        }
    }
    return f;
}

UVField downsample_uv(const UVField& field, int factor) {
    if (factor == 1) return field;
    const Tensor m = area_downsample(field.validity.reshaped(
                                         Shape{1, field.height(), field.width()}),
                                     factor);
    Tensor uw = field.u;
    Tensor vw = field.v;
    for (std::int64_t i = 0; i < uw.size(); ++i) {
        uw[i] *= field.validity[i];
        vw[i] *= field.validity[i];
    }
    const Tensor ud =
        area_downsample(uw.reshaped(Shape{1, field.height(), field.width()}), factor);
    const Tensor vd =
        area_downsample(vw.reshaped(Shape{1, field.height(), field.width()}), factor);
    const int h = ud.dim(1), w = ud.dim(2);
    UVField out;
    out.u = Tensor(Shape{h, w});
    out.v = Tensor(Shape{h, w});
    out.validity = Tensor(Shape{h, w});
    for (std::int64_t i = 0; i < out.u.size(); ++i) {
        const real mass = m[i];
        if (mass >= 0.5) {
            out.validity[i] = 1.0;
            out.u[i] = ud[i] / mass;
            out.v[i] = vd[i] / mass;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic faces
// ---------------------------------------------------------------------------

std::pair<Tensor, UVField> generate_synthetic_face(uint64_t seed, int h, int w) {
    if (h < 32 || w < 32) throw ConfigError("synthetic faces require h,w >= 32");
    Rng rng(Rng::derive(seed, 0xFACEull));

    const real cx = w * (0.5 + rng.uniform(-0.06, 0.06));
    const real cy = h * (0.5 + rng.uniform(-0.06, 0.06));
    const real a = w * rng.uniform(0.30, 0.38);
    const real b = h * rng.uniform(0.36, 0.46);

    const real base_r = rng.uniform(0.60, 0.85);
    const real base_g = base_r * rng.uniform(0.72, 0.88);
    const real base_b = base_g * rng.uniform(0.70, 0.90);

    real lx = rng.uniform(-0.5, 0.5), ly = rng.uniform(-0.5, 0.2), lz = 1.0;
    const real ln = std::sqrt(lx * lx + ly * ly + lz * lz);
    lx /= ln;
    ly /= ln;
    lz /= ln;

    const real bg_top = rng.uniform(0.05, 0.20);
    const real bg_bot = rng.uniform(0.10, 0.25);
    const real bg_tint = rng.uniform(-0.04, 0.04);

    Tensor img(Shape{3, h, w});
    UVField uv;
    uv.u = Tensor(Shape{h, w});
    uv.v = Tensor(Shape{h, w});
    uv.validity = Tensor(Shape{h, w});

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const real X = (x - cx) / a;
            const real Y = (y - cy) / b;
            const real rr = X * X + Y * Y;
            if (rr <= 1.0) {
                const real Z = std::sqrt(std::max(0.0, 1.0 - rr));
                const real uu = 0.5 + std::asin(std::clamp(X, -1.0, 1.0)) / kPi;
                const real vv = 0.5 + std::asin(std::clamp(Y, -1.0, 1.0)) / kPi;
                uv.u.at(y, x) = uu;
                uv.v.at(y, x) = vv;
                uv.validity.at(y, x) = 1.0;

                const real shade = 0.35 + 0.65 * std::max(0.0, X * lx + Y * ly + Z * lz);
                real tex = 1.0 + 0.12 * std::sin(2.0 * kPi * 3.0 * uu) *
                                     std::sin(2.0 * kPi * 2.0 * vv);
                // UV-anchored features so correspondence supervision has
                // visible structure to latch onto.
                const real de1 = std::hypot(uu - 0.36, vv - 0.42);
                const real de2 = std::hypot(uu - 0.64, vv - 0.42);
                if (de1 < 0.045 || de2 < 0.045) tex *= 0.35;
                if (std::abs(uu - 0.5) < 0.12 && std::abs(vv - 0.68) < 0.025) tex *= 0.5;

                img.at(0, y, x) = std::clamp(base_r * shade * tex, 0.0, 1.0);
                img.at(1, y, x) = std::clamp(base_g * shade * tex, 0.0, 1.0);
                img.at(2, y, x) = std::clamp(base_b * shade * tex, 0.0, 1.0);
            } else {
                const real t = static_cast<real>(y) / (h - 1);
                const real bg = bg_top + (bg_bot - bg_top) * t;
                img.at(0, y, x) = std::clamp(bg + bg_tint, 0.0, 1.0);
                img.at(1, y, x) = std::clamp(bg, 0.0, 1.0);
                img.at(2, y, x) = std::clamp(bg - bg_tint, 0.0, 1.0);
            }
        }
    }
    return {std::move(img), std::move(uv)};
}

// ---------------------------------------------------------------------------
// Pairs and datasets
// ---------------------------------------------------------------------------

ContrastivePair make_contrastive_pair(const Tensor& target, uint64_t rng_seed,
                                      const std::vector<MaskKind>& kinds, real cov_lo,
                                      real cov_hi) {
    if (target.rank() != 3) throw ShapeError("make_contrastive_pair expects [C,H,W]");
    if (kinds.empty()) throw ConfigError("make_contrastive_pair: empty mask kind list");
    const int h = target.dim(1), w = target.dim(2);
    Rng rng(Rng::derive(rng_seed, 0x9a12ull));
    const int last = static_cast<int>(kinds.size()) - 1;
    MaskSpec spec_q{kinds[static_cast<size_t>(rng.uniform_int(0, last))],
                    rng.uniform(cov_lo, cov_hi), Rng::derive(rng_seed, 1)};
    MaskSpec spec_k{kinds[static_cast<size_t>(rng.uniform_int(0, last))],
                    rng.uniform(cov_lo, cov_hi), Rng::derive(rng_seed, 2)};
    ContrastivePair pair;
    pair.mask_query = synthesize_mask(spec_q, h, w);
    pair.mask_key = synthesize_mask(spec_k, h, w);
    pair.query = apply_mask(target, pair.mask_query);
    pair.key = apply_mask(target, pair.mask_key);
    return pair;
}

ContrastivePair make_contrastive_pair(const Tensor& target, uint64_t rng_seed) {
    return make_contrastive_pair(target, rng_seed,
                                 {MaskKind::Rect, MaskKind::Ellipse, MaskKind::PolygonLowerFace,
                                  MaskKind::FreeformStroke},
                                 0.15, 0.45);
}

void Dataset::finalize_order() {
    order_.resize(images_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(Rng::derive(options_.shuffle_seed, 0x0d0eull));
    for (size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[rng.uniform_int(0, static_cast<int>(i) - 1)]);
}

Dataset Dataset::load(const std::string& root, const std::string& split, DatasetOptions options) {
    Dataset ds;
    ds.options_ = options;
    const fs::path image_dir = fs::path(root) / split / "images";
    if (!fs::is_directory(image_dir))
        throw IngestionError("missing dataset directory " + image_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(image_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IngestionError("no .png images under " + image_dir.string());

    const fs::path uv_dir = fs::path(root) / split / "uv";
    for (const auto& f : files) {
        Tensor img = read_png_rgb(f.string());
        std::optional<UVField> uv;
        const fs::path uv_path = uv_dir / (f.stem().string() + ".uvf");
        if (fs::exists(uv_path)) {
            UVField field = read_uvf(uv_path.string());
            if (field.height() != img.dim(1) || field.width() != img.dim(2))
                throw IngestionError("UV/image shape mismatch for " + uv_path.string());
            uv = std::move(field);
        }
        ds.images_.push_back(std::move(img));
        ds.uvs_.push_back(std::move(uv));
    }
    ds.finalize_order();
    return ds;
}

Dataset Dataset::synthetic(int count, int h, int w, uint64_t seed, DatasetOptions options) {
    Dataset ds;
    ds.options_ = options;
    for (int i = 0; i < count; ++i) {
        auto [img, uv] = generate_synthetic_face(Rng::derive(seed, static_cast<uint64_t>(i)), h, w);
        ds.images_.push_back(std::move(img));
        ds.uvs_.emplace_back(std::move(uv));
    }
    ds.finalize_order();
    return ds;
}

MaskedSample Dataset::sample(size_t i) const { return sample_with_salt(i, 0); }

MaskedSample Dataset::sample_with_salt(size_t i, uint64_t salt) const {
    if (i >= order_.size()) throw StateError("dataset index out of range");
    const size_t idx = order_[i];
    const Tensor& target = images_[idx];
    ContrastivePair pair = make_contrastive_pair(
        target, Rng::derive(Rng::derive(options_.mask_seed, salt), i), options_.mask_kinds,
        options_.coverage_lo, options_.coverage_hi);
    MaskedSample s;
    s.query = pair.query;
    s.key = pair.key;
    s.mask = pair.mask_query;
    s.target = target;
    s.uv_gt = uvs_[idx];
    return s;
}

void write_synthetic_split(const std::string& dir, int count, int h, int w, uint64_t seed) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "uv");
    char name[64];
    for (int i = 0; i < count; ++i) {
        auto [img, uv] = generate_synthetic_face(Rng::derive(seed, static_cast<uint64_t>(i)), h, w);
        std::snprintf(name, sizeof(name), "face_%05d", i);
        write_png_rgb((fs::path(dir) / "images" / (std::string(name) + ".png")).string(), img);
        write_uvf((fs::path(dir) / "uv" / (std::string(name) + ".uvf")).string(), uv);
    }
}

}  // namespace facefill
