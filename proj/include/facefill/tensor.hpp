#pragma once

#include <initializer_list>
#include <vector>

#include "facefill/common.hpp"

namespace facefill {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// 64-byte-aligned storage. Vectorized kernels (Eigen redux, GEMM tails)
// choose code paths by pointer alignment; pinning the alignment makes every
// run take the same path, which is what keeps training bit-reproducible.
template <typename T, std::size_t Align>
struct AlignedAllocator {
    using value_type = T;
    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
    }
    void deallocate(T* p, std::size_t) noexcept {
        ::operator delete(p, std::align_val_t(Align));
    }
    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    bool operator==(const AlignedAllocator&) const noexcept { return true; }
    bool operator!=(const AlignedAllocator&) const noexcept { return false; }
};

using DataVec = std::vector<real, AlignedAllocator<real, 64>>;

// Dense row-major tensor of doubles. Value semantics, no views; all layout
// intelligence lives in the ops that consume it.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, real fill = 0.0);
    static Tensor from_data(Shape shape, std::initializer_list<real> data);
    static Tensor from_data(Shape shape, DataVec data);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    DataVec& vec() { return data_; }
    const DataVec& vec() const { return data_; }

    real& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    real operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Multi-index accessors for the common ranks.
    real& at(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
    real at(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }
    real& at(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    real at(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    real& at(int b, int c, int y, int x) {
        return data_[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }
    real at(int b, int c, int y, int x) const {
        return data_[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }

    void fill(real v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor reshaped(Shape new_shape) const;

    real min() const;
    real max() const;
    real sum() const;
    real mean() const { return size() ? sum() / static_cast<real>(size()) : 0.0; }

    static Tensor random_uniform(Shape shape, Rng& rng, real lo = 0.0, real hi = 1.0);
    static Tensor random_normal(Shape shape, Rng& rng, real mean = 0.0, real stddev = 1.0);

private:
    Shape shape_;
    DataVec data_;
};

std::int64_t shape_numel(const Shape& s);

// Elementwise helpers used by metric code and tests (no autograd).
real max_abs_diff(const Tensor& a, const Tensor& b);
Tensor clamp01(const Tensor& t);

// Area-average downsampling by an integer factor on [C,H,W] or [B,C,H,W]
// tensors. factor == 1 returns the input unchanged.
Tensor area_downsample(const Tensor& img, int factor);

}  // namespace facefill
