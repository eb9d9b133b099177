#include "segquant/tensor.hpp"

#include <cmath>
#include <cstdlib>

namespace segquant {

namespace {

std::size_t checked_size(const std::vector<std::size_t>& shape) {
    if (shape.empty())
        throw_validation("bad_shape", "tensor shape must have at least one extent");
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0)
            throw_validation("bad_shape", "tensor extents must be positive");
        n *= e;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shp) : shape(std::move(shp)) {
    data.assign(checked_size(shape), 0.0f);
}

Tensor::Tensor(std::vector<std::size_t> shp, std::vector<float> values)
    : shape(std::move(shp)), data(std::move(values)) {
    if (checked_size(shape) != data.size())
        throw_validation("bad_shape", "tensor data length does not match shape");
    for (float v : data) {
        if (!std::isfinite(v))
            throw_numeric("non_finite", "tensor values must be finite");
    }
}

IntTensor::IntTensor(std::vector<std::size_t> shp) : shape(std::move(shp)) {
    data.assign(checked_size(shape), 0);
}

std::int64_t round_ties_away(double x) {
    if (!std::isfinite(x))
        throw_numeric("non_finite", "round_ties_away requires finite input");
    // std::round implements ties-away-from-zero.
    return static_cast<std::int64_t>(std::round(x));
}

double clip(double x, double lo, double hi) {
    if (lo > hi)
        throw_validation("bad_range", "clip requires lo <= hi");
    return std::min(std::max(x, lo), hi);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw_validation("shape_mismatch", "matmul requires rank-2 tensors");
    if (a.cols() != b.rows())
        throw_validation("shape_mismatch", "matmul inner extents do not match");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor y({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (std::size_t l = 0; l < k; ++l)
                acc += a.data[i * k + l] * b.data[l * n + j];
            y.data[i * n + j] = acc;
        }
    }
    return y;
}

std::uint64_t Rng::next_u64() {
    // splitmix64 (Steele, Lea, Flood 2014)
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 shifted into (0,1] so log stays finite.
    const double u1 = 1.0 - next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

Rng Rng::split(std::uint64_t stream) const {
    // Derive a decorrelated child state; matches the documented scheme.
    Rng probe(state_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    return Rng(probe.next_u64());
}

Tensor gaussian(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(rng.next_gaussian());
    return t;
}

}  // namespace segquant
