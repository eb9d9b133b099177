#pragma once

#include <string>
#include <vector>

#include "segquant/calibstats.hpp"
#include "segquant/quant.hpp"

namespace segquant {

struct CalibConfig {
    int gptq_block = 16;        // columns processed per lazy-update batch
    double gptq_damping = 0.01;  // fraction of mean Hessian diagonal
};

/// The persisted per-layer artifact: quantized weight payload, activation
/// scheme with calibrated params (empty when dynamic), and the optimizer
/// state needed to replay the layer (smoothing vector, low-rank factors).
struct QuantizedLayer {
    std::string layer_id;
    SegmentPlan plan;

    QuantizedTensor weight;
    bool has_bias = false;
    Tensor bias;

    Scheme act_scheme;
    bool act_dual = false;           // activation side uses dual_scale
    std::vector<QParams> act_params;  // per input segment; empty = dynamic

    std::vector<float> smooth_scale;  // per input channel; empty = no smoothing
    std::vector<double> smooth_alpha;  // chosen alpha per input segment
    std::vector<double> smooth_mse;    // selected sweep MSE per input segment

    int lowrank_rank = 0;  // 0 = no low-rank path
    Tensor lowrank_l1, lowrank_l2;
    double lowrank_residual_fnorm = 0.0;
    bool lowrank_smoothed_input = false;  // l1*l2 consumes the smoothed activations

    std::string method;          // "amax" | "gptq"
    bool gptq_fallback = false;  // gptq hit a singular Hessian, fell back to amax
};

/// The activation scheme a plan-aware layer actually runs with: dual_scale
/// when the plan marks the layer eligible, otherwise the configured scheme.
Scheme effective_act_scheme(const Scheme& acts, const SegmentPlan& plan);

/// Calibrated activation params (one per input segment) from recorded stats;
/// empty for per_token_dynamic schemes.
std::vector<QParams> activation_params_from_stats(const CalibStats& stats,
                                                  const SegmentPlan& plan, const Scheme& acts);

/// Direct absolute-maximum calibration: segmented weight quantization plus
/// stats-derived activation params.
QuantizedLayer amax_calibrate(const Tensor& w, const Tensor* bias, const CalibStats& stats,
                              const SegmentPlan& plan, const Scheme& wscheme,
                              const Scheme& ascheme);

/// GPTQ-style sequential quantization with error feedback through the
/// inverse input Hessian. Output segments calibrate independently; input
/// segments partition the Hessian block structure. Falls back to amax (with
/// the flag set) if the damped Hessian is not positive definite.
QuantizedLayer gptq_calibrate(const Tensor& w, const Tensor* bias,
                              const std::vector<Tensor>& calib_inputs, const SegmentPlan& plan,
                              const Scheme& wscheme, const Scheme& ascheme,
                              const CalibConfig& cfg);

}  // namespace segquant
