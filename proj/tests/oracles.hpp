#pragma once

// Test-only reference implementations, kept independent of the library paths
// they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "segquant/quant.hpp"
#include "segquant/tensor.hpp"

namespace oracle {

using segquant::QuantizedTensor;
using segquant::SchemeKind;
using segquant::Tensor;

// k-outer triple loop; per-element addition order matches ascending k, the
// structure does not.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor y({m, n});
    for (std::size_t l = 0; l < k; ++l)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) y.at(i, j) += a.at(i, l) * b.at(l, j);
    return y;
}

// brute-force recovery: dequantize both operands, FP32 matmul
inline Tensor dequant_then_matmul(const QuantizedTensor& xq, const QuantizedTensor& wq) {
    return segquant::matmul(segquant::dequantize(xq), segquant::dequantize(wq));
}

// unexpanded asymmetric recovery s_x s_w (X^-z_x)(W^-z_w), integer domain,
// with the same scale application order as the library
inline Tensor asym_reference(const QuantizedTensor& xq, const QuantizedTensor& wq) {
    const std::size_t m = xq.rows(), k = xq.cols(), n = wq.cols();
    Tensor y({m, n});
    for (std::size_t b = 0; b < xq.groups.n_col_blocks(); ++b) {
        const std::size_t l0 = xq.groups.col_begin(b), l1 = xq.groups.col_end(b);
        for (std::size_t i = 0; i < m; ++i) {
            const auto& px = xq.params[xq.groups.row_block(i) * xq.groups.n_col_blocks() + b];
            for (std::size_t j = 0; j < n; ++j) {
                const auto& pw = wq.params[b * wq.groups.n_col_blocks() + wq.groups.col_block(j)];
                std::int64_t acc = 0;
                for (std::size_t l = l0; l < l1; ++l) {
                    const std::int64_t xs = xq.codes.at(i, l) - px.zero_point;
                    const std::int64_t ws =
                        wq.codes.at(l, j) -
                        (wq.scheme.kind == SchemeKind::int_asym ? pw.zero_point : 0);
                    acc += xs * ws;
                }
                y.at(i, j) += px.scale * (pw.scale * static_cast<float>(acc));
            }
        }
    }
    (void)k;
    return y;
}

// every finite non-negative e4m3 value with its mantissa code
// (OCP FN variant: exp=15/mant=7 is NaN, so 448 is the finite max)
struct E4m3Value {
    float value;
    int mant;
};

inline const std::vector<E4m3Value>& e4m3_values() {
    static const std::vector<E4m3Value> values = [] {
        std::vector<E4m3Value> v;
        for (int exp = 0; exp <= 15; ++exp) {
            for (int mant = 0; mant <= 7; ++mant) {
                if (exp == 15 && mant == 7) continue;
                const double val = exp == 0 ? (mant / 8.0) * std::pow(2.0, -6)
                                            : (1.0 + mant / 8.0) * std::pow(2.0, exp - 7);
                v.push_back({static_cast<float>(val), mant});
            }
        }
        std::sort(v.begin(), v.end(),
                  [](const E4m3Value& a, const E4m3Value& b) { return a.value < b.value; });
        return v;
    }();
    return values;
}

// nearest e4m3 by exhaustive search, ties to even mantissa; saturates at 448
inline float e4m3_nearest(float x) {
    const float a = std::fabs(x);
    if (a > 448.0f) return std::copysign(448.0f, x);
    const auto& vals = e4m3_values();
    float best = vals[0].value;
    int best_mant = vals[0].mant;
    double best_d = std::fabs(static_cast<double>(a) - vals[0].value);
    for (std::size_t i = 1; i < vals.size(); ++i) {
        const double d = std::fabs(static_cast<double>(a) - vals[i].value);
        if (d < best_d || (d == best_d && vals[i].mant % 2 == 0 && best_mant % 2 == 1)) {
            best_d = d;
            best = vals[i].value;
            best_mant = vals[i].mant;
        }
    }
    return std::copysign(best, x);
}

// eigenvalues of a symmetric matrix via cyclic Jacobi rotations (double)
inline std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a[i][i];
    std::sort(eig.begin(), eig.end(), std::greater<>());
    return eig;
}

// sqrt(sum of squared singular values beyond rank r) from the eigenvalues of
// w^T w — the oracle route for the low-rank residual norm
inline double tail_singular_norm(const Tensor& w, std::size_t r) {
    const std::size_t k = w.rows(), n = w.cols();
    std::vector<std::vector<double>> wtw(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l)
                acc += static_cast<double>(w.at(l, i)) * static_cast<double>(w.at(l, j));
            wtw[i][j] = acc;
        }
    std::vector<double> eig = jacobi_eigenvalues(std::move(wtw));
    double tail = 0.0;
    for (std::size_t i = r; i < eig.size(); ++i) tail += std::max(eig[i], 0.0);
    return std::sqrt(tail);
}

}  // namespace oracle
