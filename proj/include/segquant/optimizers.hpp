#pragma once

#include <span>
#include <string>
#include <vector>

#include "segquant/quant.hpp"

namespace segquant {

struct SmoothConfig {
    std::vector<double> alpha_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    bool per_segment = true;  // sweep each input segment independently
};

struct LowRankConfig {
    int rank = 8;
    std::string precision = "float64";  // decomposition precision, echoed in reports
};

struct SmoothSegment {
    std::size_t begin = 0, end = 0;  // input-channel range
    double alpha = 0.0;
    std::vector<float> scale;  // s_j over the segment's channels
    double mse = 0.0;          // selected quantized-vs-fp output MSE
};

struct SmoothResult {
    std::vector<SmoothSegment> segments;
    std::vector<float> full_scale;  // all k channels, segments concatenated
    Tensor folded_weight;           // diag(s) * W
};

/// SmoothQuant migration factors: s_j = act_amax_j^alpha / w_amax_j^(1-alpha),
/// epsilon-guarded so the result stays positive.
std::vector<float> smooth_factors(std::span<const float> act_amax, std::span<const float> w_amax,
                                  double alpha);

/// Exhaustive per-segment alpha sweep. For each grid point the activations
/// are divided by s, the weights folded with s, both quantized under the
/// layer's schemes (honoring the plan and dual-scale eligibility), and the
/// candidate minimizing output MSE against the full-precision product wins;
/// ties break toward smaller alpha.
SmoothResult sweep_alpha(const Tensor& w, const std::vector<Tensor>& calib_inputs,
                         const SegmentPlan& plan, const Scheme& wscheme, const Scheme& ascheme,
                         const SmoothConfig& cfg);

struct LowRankResult {
    Tensor l1;        // [k x r]
    Tensor l2;        // [r x n]
    Tensor residual;  // w - l1*l2
    double residual_fnorm = 0.0;
};

/// Truncated SVD: l1*l2 is the best rank-r approximation of w; the residual
/// goes down the quantized path while l1*l2 stays full precision.
LowRankResult svd_lowrank(const Tensor& w, const LowRankConfig& cfg);

}  // namespace segquant
