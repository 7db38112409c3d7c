#include "facefill/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace facefill {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, real fill) : shape_(std::move(shape)) {
    for (int d : shape_) {
        if (d <= 0) throw ShapeError("nonpositive dimension in " + shape_str(shape_));
    }
    data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor Tensor::from_data(Shape shape, std::initializer_list<real> data) {
    return from_data(std::move(shape), DataVec(data.begin(), data.end()));
}

Tensor Tensor::from_data(Shape shape, DataVec data) {
    Tensor t;
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("data length does not match shape " + shape_str(shape));
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != size())
        throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
}

real Tensor::min() const {
    return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

real Tensor::max() const {
    return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

real Tensor::sum() const {
    real s = 0.0;
    for (real v : data_) s += v;
    return s;
}

Tensor Tensor::random_uniform(Shape shape, Rng& rng, real lo, real hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::random_normal(Shape shape, Rng& rng, real mean, real stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = rng.normal(mean, stddev);
    return t;
}

real max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff shape mismatch");
    real m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor clamp01(const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.vec()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Tensor area_downsample(const Tensor& img, int factor) {
    if (factor == 1) return img;
    if (factor < 1) throw ConfigError("downsample factor must be >= 1");
    const bool batched = img.rank() == 4;
    if (!batched && img.rank() != 3) throw ShapeError("area_downsample expects rank 3 or 4");
    const int B = batched ? img.dim(0) : 1;
    const int C = img.dim(batched ? 1 : 0);
    const int H = img.dim(batched ? 2 : 1);
    const int W = img.dim(batched ? 3 : 2);
    if (H % factor != 0 || W % factor != 0)
        throw ShapeError("spatial dims not divisible by downsample factor");
    const int h = H / factor, w = W / factor;
    Shape oshape = batched ? Shape{B, C, h, w} : Shape{C, h, w};
    Tensor out(oshape);
    const real inv = 1.0 / (static_cast<real>(factor) * factor);
    const real* src = img.data();
    real* dst = out.data();
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(B) * C; ++p) {
        const real* plane = src + p * H * W;
        real* oplane = dst + p * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                real acc = 0.0;
                for (int dy = 0; dy < factor; ++dy) {
                    const real* row = plane + (y * factor + dy) * W + x * factor;
                    for (int dx = 0; dx < factor; ++dx) acc += row[dx];
                }
                oplane[y * w + x] = acc * inv;
            }
        }
    }
    return out;
}

bool deterministic_mode() {
    const char* v = std::getenv("FACEFILL_DETERMINISTIC");
    return v == nullptr || std::string(v) != "0";
}

int worker_threads() {
    if (const char* v = std::getenv("FACEFILL_THREADS")) {
        int n = std::atoi(v);
        if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

void configure_threading() {
#ifdef _OPENMP
    if (deterministic_mode()) {
        omp_set_dynamic(0);
        omp_set_num_threads(worker_threads());
    }
#endif
}

}  // namespace facefill
