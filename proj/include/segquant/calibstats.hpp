#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segquant/tensor.hpp"

namespace segquant {

/// Running per-channel statistics over calibration batches for one
/// collection point (a linear layer's input). Channels are the feature
/// (last-axis) columns. Polarity counters exclude exact zeros, so
/// neg_ratio + pos_ratio <= 1.
struct CalibStats {
    std::size_t channels = 0;
    std::size_t samples = 0;  // rows observed
    std::vector<float> ch_min, ch_max;
    std::vector<std::uint64_t> neg_count, pos_count;

    void observe(const Tensor& x);

    static CalibStats merge(const CalibStats& a, const CalibStats& b);

    float group_min(std::size_t c0, std::size_t c1) const;
    float group_max(std::size_t c0, std::size_t c1) const;
    float group_amax(std::size_t c0, std::size_t c1) const;
    float tensor_min() const { return group_min(0, channels); }
    float tensor_max() const { return group_max(0, channels); }
    float amax() const { return group_amax(0, channels); }

    double neg_ratio(std::size_t c) const;
    double pos_ratio(std::size_t c) const;
};

/// One row of the polarity table: channel count plus the channel-mean
/// negative/positive sample fractions.
struct PolarityRow {
    std::size_t channels = 0;
    double mean_neg = 0.0;
    double mean_pos = 0.0;
};

PolarityRow polarity_row(const CalibStats& stats);

// error metrics (shapes must match)
double frobenius(const Tensor& a, const Tensor& b);
double mse(const Tensor& a, const Tensor& b);

/// 10*log10(range^2/mse); returns +infinity when mse == 0 (the "identical"
/// sentinel, serialized as null in reports).
double psnr(const Tensor& a, const Tensor& b, double data_range);

/// Mean SSIM over sliding uniform windows (default 8x8, k1=0.01, k2=0.03).
/// Tensors are treated as single-channel images; windows shrink to the
/// tensor when it is smaller than the window.
double ssim(const Tensor& a, const Tensor& b, int window = 8, double k1 = 0.01, double k2 = 0.03,
            double data_range = 1.0);

}  // namespace segquant
