#include "segquant/optimizers.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "segquant/calibrators.hpp"
#include "segquant/calibstats.hpp"

namespace segquant {

std::vector<float> smooth_factors(std::span<const float> act_amax, std::span<const float> w_amax,
                                  double alpha) {
    if (act_amax.size() != w_amax.size())
        throw_validation("shape_mismatch", "smooth_factors operand lengths differ");
    std::vector<float> s(act_amax.size());
    for (std::size_t j = 0; j < s.size(); ++j) {
        const double a = std::max(static_cast<double>(act_amax[j]),
                                  static_cast<double>(kScaleEps));
        const double w = std::max(static_cast<double>(w_amax[j]),
                                  static_cast<double>(kScaleEps));
        s[j] = static_cast<float>(std::pow(a, alpha) / std::pow(w, 1.0 - alpha));
        if (!(s[j] > 0.0f)) s[j] = kScaleEps;
    }
    return s;
}

SmoothResult sweep_alpha(const Tensor& w, const std::vector<Tensor>& calib_inputs,
                         const SegmentPlan& plan, const Scheme& wscheme, const Scheme& ascheme,
                         const SmoothConfig& cfg) {
    if (cfg.alpha_grid.empty())
        throw_validation("bad_config", "alpha grid must be non-empty");
    for (double a : cfg.alpha_grid)
        if (a < 0.0 || a > 1.0)
            throw_validation("bad_config", "alpha values must lie in [0, 1]");
    if (calib_inputs.empty())
        throw_validation("missing_stats", plan.layer_id + ": sweep needs calibration inputs");

    const std::size_t k = w.rows(), n = w.cols();
    std::size_t rows = 0;
    for (const Tensor& x : calib_inputs) {
        if (x.rank() != 2 || x.cols() != k)
            throw_validation("shape_mismatch", plan.layer_id + ": calib input width mismatch");
        rows += x.rows();
    }
    Tensor X({rows, k});
    std::size_t r0 = 0;
    for (const Tensor& x : calib_inputs) {
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < k; ++j) X.at(r0 + i, j) = x.at(i, j);
        r0 += x.rows();
    }

    const Scheme act_eff = effective_act_scheme(ascheme, plan);
    const std::vector<std::size_t> sweep_segs =
        cfg.per_segment ? plan.in_segments : std::vector<std::size_t>{k};

    SmoothResult result;
    result.full_scale.assign(k, 1.0f);
    result.folded_weight = w;

    std::size_t c0 = 0;
    for (std::size_t sw : sweep_segs) {
        const std::size_t c1 = c0 + sw;

        Tensor Xseg({rows, sw});
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < sw; ++j) Xseg.at(i, j) = X.at(i, c0 + j);
        Tensor Wseg({sw, n});
        for (std::size_t i = 0; i < sw; ++i)
            for (std::size_t j = 0; j < n; ++j) Wseg.at(i, j) = w.at(c0 + i, j);

        std::vector<float> act_amax(sw, 0.0f), w_amax(sw, 0.0f);
        for (std::size_t j = 0; j < sw; ++j) {
            for (std::size_t i = 0; i < rows; ++i)
                act_amax[j] = std::max(act_amax[j], std::fabs(Xseg.at(i, j)));
            for (std::size_t i = 0; i < n; ++i)
                w_amax[j] = std::max(w_amax[j], std::fabs(Wseg.at(j, i)));
        }

        // quantization grouping restricted to this slice of the layer
        SegmentPlan sub;
        sub.layer_id = plan.layer_id;
        sub.in_segments = cfg.per_segment ? std::vector<std::size_t>{sw} : plan.in_segments;
        sub.out_segments = plan.out_segments;
        sub.dualscale_eligible = plan.dualscale_eligible;
        const GroupMap wgm = weight_group_map(sw, n, sub, wscheme);
        const GroupMap agm = activation_group_map(rows, sw, sub, act_eff);

        const Tensor y_fp = matmul(Xseg, Wseg);

        SmoothSegment best;
        best.begin = c0;
        best.end = c1;
        bool first = true;
        for (double alpha : cfg.alpha_grid) {
            const std::vector<float> s = smooth_factors(act_amax, w_amax, alpha);
            Tensor xs = Xseg;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < sw; ++j) xs.at(i, j) /= s[j];
            Tensor ws = Wseg;
            for (std::size_t i = 0; i < sw; ++i)
                for (std::size_t j = 0; j < n; ++j) ws.at(i, j) *= s[i];

            const Tensor y_q = qgemm(quantize(xs, act_eff, agm), quantize(ws, wscheme, wgm));
            const double m = mse(y_q, y_fp);
            if (first || m < best.mse) {  // strict: ties keep the smaller alpha
                first = false;
                best.alpha = alpha;
                best.mse = m;
                best.scale = s;
            }
        }

        for (std::size_t j = 0; j < sw; ++j) {
            result.full_scale[c0 + j] = best.scale[j];
            for (std::size_t i = 0; i < n; ++i)
                result.folded_weight.at(c0 + j, i) = w.at(c0 + j, i) * best.scale[j];
        }
        result.segments.push_back(std::move(best));
        c0 = c1;
    }
    if (c0 != k)
        throw_validation("width_mismatch", plan.layer_id + ": plan widths do not cover the layer");
    return result;
}

LowRankResult svd_lowrank(const Tensor& w, const LowRankConfig& cfg) {
    if (w.rank() != 2)
        throw_validation("shape_mismatch", "svd_lowrank expects a rank-2 weight");
    const std::size_t k = w.rows(), n = w.cols();
    if (cfg.rank < 1 || static_cast<std::size_t>(cfg.rank) >= std::min(k, n))
        throw_validation("bad_rank", "low-rank r must satisfy 1 <= r < min(k, n)");

    Eigen::MatrixXd W(k, n);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < n; ++j) W(i, j) = w.at(i, j);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const std::size_t r = static_cast<std::size_t>(cfg.rank);
    Eigen::MatrixXd L1 = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
    Eigen::MatrixXd L2 = svd.matrixV().leftCols(r).transpose();
    Eigen::MatrixXd R = W - L1 * L2;
    if (!R.allFinite() || !L1.allFinite())
        throw_numeric("svd_failure", "singular value decomposition did not converge");

    LowRankResult out;
    out.l1 = Tensor({k, r});
    out.l2 = Tensor({r, n});
    out.residual = Tensor({k, n});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < r; ++j) out.l1.at(i, j) = static_cast<float>(L1(i, j));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) out.l2.at(i, j) = static_cast<float>(L2(i, j));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < n; ++j) out.residual.at(i, j) = static_cast<float>(R(i, j));
    out.residual_fnorm = R.norm();
    return out;
}

}  // namespace segquant
