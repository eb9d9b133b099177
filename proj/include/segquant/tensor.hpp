#pragma once

#include <cstdint>
#include <vector>

#include "segquant/error.hpp"

namespace segquant {

/// Dense row-major FP32 tensor. Values are validated finite on construction
/// and treated as immutable once built; copies are cheap enough at the scales
/// this toolkit targets.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shp);  // zero-filled
    Tensor(std::vector<std::size_t> shp, std::vector<float> values);

    static Tensor scalar(float v) { return Tensor({1, 1}, {v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // rank-2 accessors; everything flowing through graphs is [rows x cols]
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    float at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

/// Integer payload for quantized codes (int32 storage regardless of the
/// scheme's bit width; the owning scheme's range is enforced when encoding).
struct IntTensor {
    std::vector<std::size_t> shape;
    std::vector<std::int32_t> data;

    IntTensor() = default;
    explicit IntTensor(std::vector<std::size_t> shp);

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    std::int32_t at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    std::int32_t& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
};

/// Nearest-integer rounding with halfway cases away from zero. This is the
/// single rounding rule used by every quantizer in the toolkit.
std::int64_t round_ties_away(double x);

/// min(max(x, lo), hi). lo must not exceed hi.
double clip(double x, double lo, double hi);

/// Fixed-order FP32 matmul: output rows left to right, inner sum over the
/// shared extent in ascending order. Bit-reproducible across runs.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Counter-style 64-bit generator (splitmix64) with Box-Muller gaussians.
/// Identical seed => identical stream; the exact update is documented in
/// docs/FORMATS.md so alternate implementations can reproduce it.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    double next_uniform();   // [0, 1)
    double next_gaussian();  // N(0, 1)

    /// Independent stream for parallel work; never share one Rng.
    Rng split(std::uint64_t stream) const;

  private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// i.i.d. standard normal tensor, filled in row-major order.
Tensor gaussian(Rng& rng, std::vector<std::size_t> shape);

}  // namespace segquant
