#include "segquant/calibrators.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace segquant {

Scheme effective_act_scheme(const Scheme& acts, const SegmentPlan& plan) {
    Scheme s = acts;
    if (plan.dualscale_eligible && s.kind != SchemeKind::fp8_e4m3_sim)
        s.kind = SchemeKind::dual_scale;
    return s;
}

std::vector<QParams> activation_params_from_stats(const CalibStats& stats,
                                                  const SegmentPlan& plan, const Scheme& acts) {
    if (acts.granularity == Granularity::per_token_dynamic ||
        acts.kind == SchemeKind::fp8_e4m3_sim)
        return {};  // computed at run time / value-wise
    if (stats.samples == 0)
        throw_validation("missing_stats", plan.layer_id + ": no calibration statistics");

    std::vector<QParams> params;
    std::size_t c0 = 0;
    for (std::size_t w : plan.in_segments) {
        const std::size_t c1 = c0 + w;
        switch (acts.kind) {
            case SchemeKind::int_sym:
                params.push_back(qparams_symmetric(stats.group_amax(c0, c1), acts.bits));
                break;
            case SchemeKind::int_asym:
                params.push_back(qparams_asymmetric(stats.group_min(c0, c1),
                                                    stats.group_max(c0, c1), acts.bits));
                break;
            case SchemeKind::dual_scale:
                params.push_back(
                    qparams_dual(stats.group_min(c0, c1), stats.group_max(c0, c1), acts.bits));
                break;
            case SchemeKind::fp8_e4m3_sim:
                break;
        }
        c0 = c1;
    }
    return params;
}

QuantizedLayer amax_calibrate(const Tensor& w, const Tensor* bias, const CalibStats& stats,
                              const SegmentPlan& plan, const Scheme& wscheme,
                              const Scheme& ascheme) {
    QuantizedLayer layer;
    layer.layer_id = plan.layer_id;
    layer.plan = plan;
    layer.method = "amax";
    layer.weight = segmented_quantize_weight(w, plan, wscheme);
    if (bias) {
        layer.has_bias = true;
        layer.bias = *bias;
    }
    layer.act_scheme = effective_act_scheme(ascheme, plan);
    layer.act_dual = layer.act_scheme.kind == SchemeKind::dual_scale;
    layer.act_params = activation_params_from_stats(stats, plan, layer.act_scheme);
    return layer;
}

namespace {

// round one element onto the weight grid; returns the decoded value used for
// the error feedback
double quantize_element(double v, const QParams& p, SchemeKind kind, std::int32_t* code_out,
                        float* fp8_out) {
    if (kind == SchemeKind::fp8_e4m3_sim) {
        const float q = fp8_e4m3(static_cast<float>(v));
        *fp8_out = q;
        return static_cast<double>(q);
    }
    const std::int32_t zp = kind == SchemeKind::int_asym ? p.zero_point : 0;
    std::int64_t c = round_ties_away(v / static_cast<double>(p.scale)) + zp;
    c = static_cast<std::int64_t>(clip(static_cast<double>(c), p.qmin, p.qmax));
    *code_out = static_cast<std::int32_t>(c);
    return static_cast<double>(p.scale) * static_cast<double>(c - zp);
}

}  // namespace

QuantizedLayer gptq_calibrate(const Tensor& w, const Tensor* bias,
                              const std::vector<Tensor>& calib_inputs, const SegmentPlan& plan,
                              const Scheme& wscheme, const Scheme& ascheme,
                              const CalibConfig& cfg) {
    if (calib_inputs.empty())
        throw_validation("missing_stats", plan.layer_id + ": gptq needs calibration inputs");
    const std::size_t k = w.rows(), n = w.cols();

    CalibStats stats;
    for (const Tensor& x : calib_inputs) {
        if (x.rank() != 2 || x.cols() != k)
            throw_validation("shape_mismatch", plan.layer_id + ": calib input width mismatch");
        stats.observe(x);
    }

    // input Hessian with diagonal damping, shared across output segments
    // (it depends only on the inputs)
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(k, k);
    for (const Tensor& x : calib_inputs) {
        Eigen::MatrixXd X(x.rows(), k);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < k; ++j) X(i, j) = x.at(i, j);
        H += X.transpose() * X;
    }
    H += cfg.gptq_damping * (H.trace() / static_cast<double>(k)) *
         Eigen::MatrixXd::Identity(k, k);

    const GroupMap gm = weight_group_map(k, n, plan, wscheme);
    const std::vector<QParams> params = compute_qparams(w, wscheme, gm);

    QuantizedTensor qt;
    qt.scheme = wscheme;
    qt.shape = {k, n};
    qt.groups = gm;
    qt.params = params;
    if (wscheme.kind == SchemeKind::fp8_e4m3_sim)
        qt.fp8 = Tensor({k, n});
    else
        qt.codes = IntTensor({k, n});

    bool fallback = false;

    // input segments partition the Hessian block structure: error feedback
    // never crosses a segment boundary
    for (std::size_t rb = 0; rb < gm.n_row_blocks() && !fallback; ++rb) {
        const std::size_t r0 = gm.row_begin(rb), r1 = gm.row_end(rb);
        const std::size_t kb = r1 - r0;

        Eigen::MatrixXd Hsub = H.block(r0, r0, kb, kb);
        Eigen::LLT<Eigen::MatrixXd> llt(Hsub);
        if (llt.info() != Eigen::Success) {
            fallback = true;
            break;
        }
        Eigen::MatrixXd Hinv = llt.solve(Eigen::MatrixXd::Identity(kb, kb));
        Eigen::LLT<Eigen::MatrixXd> llt_inv(Hinv);
        if (llt_inv.info() != Eigen::Success) {
            fallback = true;
            break;
        }
        // upper factor with Hinv = U^T U; U(q,q) scales the feedback error
        Eigen::MatrixXd U = Eigen::MatrixXd(llt_inv.matrixL()).transpose();

        Eigen::MatrixXd Wc(kb, n);
        for (std::size_t r = 0; r < kb; ++r)
            for (std::size_t j = 0; j < n; ++j) Wc(r, j) = w.at(r0 + r, j);

        const std::size_t block =
            std::max<std::size_t>(1, static_cast<std::size_t>(cfg.gptq_block));
        for (std::size_t b0 = 0; b0 < kb && !fallback; b0 += block) {
            const std::size_t b1 = std::min(kb, b0 + block);
            Eigen::MatrixXd E = Eigen::MatrixXd::Zero(b1 - b0, n);
            for (std::size_t q = b0; q < b1; ++q) {
                const double d = U(q, q);
                if (!(d > 0.0) || !std::isfinite(d)) {
                    fallback = true;
                    break;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const QParams& p = params[rb * gm.n_col_blocks() + gm.col_block(j)];
                    std::int32_t code = 0;
                    float f8 = 0.0f;
                    const double dq = quantize_element(Wc(q, j), p, wscheme.kind, &code, &f8);
                    if (wscheme.kind == SchemeKind::fp8_e4m3_sim)
                        qt.fp8.at(r0 + q, j) = f8;
                    else
                        qt.codes.at(r0 + q, j) = code;
                    E(q - b0, j) = (Wc(q, j) - dq) / d;
                }
                if (q + 1 < b1)
                    Wc.block(q + 1, 0, b1 - q - 1, n) -=
                        U.block(q, q + 1, 1, b1 - q - 1).transpose() * E.row(q - b0);
            }
            if (!fallback && b1 < kb)
                Wc.block(b1, 0, kb - b1, n) -= U.block(b0, b1, b1 - b0, kb - b1).transpose() * E;
        }
    }

    if (fallback) {
        QuantizedLayer layer = amax_calibrate(w, bias, stats, plan, wscheme, ascheme);
        layer.method = "gptq";
        layer.gptq_fallback = true;
        return layer;
    }

    QuantizedLayer layer;
    layer.layer_id = plan.layer_id;
    layer.plan = plan;
    layer.method = "gptq";
    layer.weight = std::move(qt);
    if (bias) {
        layer.has_bias = true;
        layer.bias = *bias;
    }
    layer.act_scheme = effective_act_scheme(ascheme, plan);
    layer.act_dual = layer.act_scheme.kind == SchemeKind::dual_scale;
    layer.act_params = activation_params_from_stats(stats, plan, layer.act_scheme);
    return layer;
}

}  // namespace segquant
