#include "segquant/quant.hpp"

#include <algorithm>
#include <cmath>

namespace segquant {

const char* to_string(SchemeKind k) {
    switch (k) {
        case SchemeKind::int_sym: return "int_sym";
        case SchemeKind::int_asym: return "int_asym";
        case SchemeKind::dual_scale: return "dual_scale";
        case SchemeKind::fp8_e4m3_sim: return "fp8_e4m3_sim";
    }
    return "?";
}

const char* to_string(Granularity g) {
    switch (g) {
        case Granularity::per_tensor: return "per_tensor";
        case Granularity::per_channel: return "per_channel";
        case Granularity::per_token_dynamic: return "per_token_dynamic";
    }
    return "?";
}

SchemeKind scheme_kind_from_string(const std::string& s) {
    if (s == "int_sym") return SchemeKind::int_sym;
    if (s == "int_asym") return SchemeKind::int_asym;
    if (s == "dual_scale") return SchemeKind::dual_scale;
    if (s == "fp8_e4m3_sim") return SchemeKind::fp8_e4m3_sim;
    throw_parse("parse_failure", "unknown scheme kind: " + s);
}

Granularity granularity_from_string(const std::string& s) {
    if (s == "per_tensor") return Granularity::per_tensor;
    if (s == "per_channel") return Granularity::per_channel;
    if (s == "per_token_dynamic") return Granularity::per_token_dynamic;
    throw_parse("parse_failure", "unknown granularity: " + s);
}

namespace {

void check_bits(int bits) {
    if (bits != 4 && bits != 8)
        throw_validation("bad_bits", "supported bit widths are 4 and 8");
}

}  // namespace

QParams qparams_symmetric(float amax, int bits) {
    check_bits(bits);
    if (amax < 0.0f)
        throw_validation("bad_range", "amax must be non-negative");
    QParams p;
    p.qmax = (1 << (bits - 1)) - 1;
    p.qmin = -p.qmax;  // symmetric grid, exact zero
    p.scale = std::max(amax / static_cast<float>(p.qmax), kScaleEps);
    p.zero_point = 0;
    return p;
}

QParams qparams_asymmetric(float mn, float mx, int bits) {
    check_bits(bits);
    if (mn > mx)
        throw_validation("bad_range", "min must not exceed max");
    QParams p;
    p.qmin = -(1 << (bits - 1));
    p.qmax = (1 << (bits - 1)) - 1;
    p.scale = std::max((mx - mn) / static_cast<float>(p.qmax - p.qmin), kScaleEps);
    const std::int64_t z =
        p.qmin - round_ties_away(static_cast<double>(mn) / static_cast<double>(p.scale));
    p.zero_point = static_cast<std::int32_t>(clip(static_cast<double>(z), p.qmin, p.qmax));
    return p;
}

QParams qparams_dual(float mn, float mx, int bits) {
    check_bits(bits);
    if (mn > mx)
        throw_validation("bad_range", "min must not exceed max");
    // the piecewise rule presumes both polarities; clamp the range onto zero
    mn = std::min(mn, 0.0f);
    mx = std::max(mx, 0.0f);
    QParams p;
    p.qmin = -(1 << (bits - 1));
    p.qmax = (1 << (bits - 1)) - 1;
    p.scale = std::max(mx / static_cast<float>(p.qmax), kScaleEps);
    p.scale_neg = std::max(-mn / static_cast<float>(-p.qmin), kScaleEps);
    p.zero_point = 0;
    return p;
}

GroupMap GroupMap::whole(std::size_t rows, std::size_t cols) {
    return GroupMap{{rows}, {cols}};
}

GroupMap GroupMap::from_widths(const std::vector<std::size_t>& row_widths,
                               const std::vector<std::size_t>& col_widths) {
    GroupMap gm;
    std::size_t acc = 0;
    for (std::size_t w : row_widths) gm.row_bounds.push_back(acc += w);
    acc = 0;
    for (std::size_t w : col_widths) gm.col_bounds.push_back(acc += w);
    return gm;
}

std::size_t GroupMap::row_block(std::size_t r) const {
    return static_cast<std::size_t>(
        std::upper_bound(row_bounds.begin(), row_bounds.end(), r) - row_bounds.begin());
}

std::size_t GroupMap::col_block(std::size_t c) const {
    return static_cast<std::size_t>(
        std::upper_bound(col_bounds.begin(), col_bounds.end(), c) - col_bounds.begin());
}

namespace {

void check_group_map(const Tensor& x, const GroupMap& gm) {
    if (x.rank() != 2)
        throw_validation("shape_mismatch", "quantize expects rank-2 tensors");
    if (gm.row_bounds.empty() || gm.col_bounds.empty() || gm.row_bounds.back() != x.rows() ||
        gm.col_bounds.back() != x.cols())
        throw_validation("width_mismatch", "group map does not cover the tensor");
}

GroupMap default_group_map(const Tensor& x, const Scheme& s) {
    switch (s.granularity) {
        case Granularity::per_tensor:
            return GroupMap::whole(x.rows(), x.cols());
        case Granularity::per_channel:
            return GroupMap::from_widths({x.rows()},
                                         std::vector<std::size_t>(x.cols(), 1));
        case Granularity::per_token_dynamic:
            return GroupMap::from_widths(std::vector<std::size_t>(x.rows(), 1), {x.cols()});
    }
    return GroupMap::whole(x.rows(), x.cols());
}

std::vector<QParams> calibrate_groups(const Tensor& x, const Scheme& s, const GroupMap& gm) {
    std::vector<QParams> params(gm.n_groups());
    for (std::size_t rb = 0; rb < gm.n_row_blocks(); ++rb) {
        for (std::size_t cb = 0; cb < gm.n_col_blocks(); ++cb) {
            float mn = 0.0f, mx = 0.0f;
            bool first = true;
            for (std::size_t i = gm.row_begin(rb); i < gm.row_end(rb); ++i) {
                for (std::size_t j = gm.col_begin(cb); j < gm.col_end(cb); ++j) {
                    const float v = x.at(i, j);
                    mn = first ? v : std::min(mn, v);
                    mx = first ? v : std::max(mx, v);
                    first = false;
                }
            }
            QParams p;
            switch (s.kind) {
                case SchemeKind::int_sym:
                    p = qparams_symmetric(std::max(std::fabs(mn), std::fabs(mx)), s.bits);
                    break;
                case SchemeKind::int_asym:
                    p = qparams_asymmetric(mn, mx, s.bits);
                    break;
                case SchemeKind::dual_scale:
                    p = qparams_dual(mn, mx, s.bits);
                    break;
                case SchemeKind::fp8_e4m3_sim:
                    break;  // value-wise, no params
            }
            params[rb * gm.n_col_blocks() + cb] = p;
        }
    }
    return params;
}

std::int32_t encode(double v, float scale, std::int32_t zp, std::int32_t lo, std::int32_t hi) {
    const std::int64_t c = round_ties_away(v / static_cast<double>(scale)) + zp;
    return static_cast<std::int32_t>(clip(static_cast<double>(c), lo, hi));
}

}  // namespace

QuantizedTensor quantize(const Tensor& x, const Scheme& scheme) {
    return quantize(x, scheme, default_group_map(x, scheme));
}

std::vector<QParams> compute_qparams(const Tensor& x, const Scheme& scheme, const GroupMap& gm) {
    check_group_map(x, gm);
    return calibrate_groups(x, scheme, gm);
}

QuantizedTensor quantize(const Tensor& x, const Scheme& scheme, const GroupMap& gm) {
    check_group_map(x, gm);
    if (scheme.kind == SchemeKind::fp8_e4m3_sim) {
        QuantizedTensor q;
        q.scheme = scheme;
        q.shape = x.shape;
        q.groups = gm;
        q.fp8 = fp8_sim(x);
        return q;
    }
    return quantize_with_params(x, scheme, gm, calibrate_groups(x, scheme, gm));
}

QuantizedTensor quantize_with_params(const Tensor& x, const Scheme& scheme, const GroupMap& gm,
                                     std::vector<QParams> params) {
    check_group_map(x, gm);
    if (scheme.kind == SchemeKind::fp8_e4m3_sim)
        throw_validation("scheme_mismatch", "fp8 simulation carries no calibrated params");
    if (scheme.kind == SchemeKind::dual_scale && scheme.granularity == Granularity::per_channel)
        throw_validation("scheme_mismatch", "dual_scale is an activation scheme");
    if (params.size() != gm.n_groups())
        throw_validation("scheme_mismatch", "param count does not match group count");

    QuantizedTensor q;
    q.scheme = scheme;
    q.shape = x.shape;
    q.groups = gm;
    q.params = std::move(params);
    q.codes = IntTensor(x.shape);
    if (scheme.kind == SchemeKind::dual_scale) q.codes_neg = IntTensor(x.shape);

    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const QParams& p = q.params[gm.group(i, j)];
            const float v = x.at(i, j);
            switch (scheme.kind) {
                case SchemeKind::int_sym:
                    q.codes.at(i, j) = encode(v, p.scale, 0, p.qmin, p.qmax);
                    break;
                case SchemeKind::int_asym:
                    q.codes.at(i, j) = encode(v, p.scale, p.zero_point, p.qmin, p.qmax);
                    break;
                case SchemeKind::dual_scale: {
                    const float pos = v > 0.0f ? v : 0.0f;
                    const float neg = v < 0.0f ? v : 0.0f;
                    q.codes.at(i, j) = encode(pos, p.scale, 0, 0, p.qmax);
                    q.codes_neg.at(i, j) = encode(neg, p.scale_neg, 0, p.qmin, 0);
                    break;
                }
                case SchemeKind::fp8_e4m3_sim:
                    break;
            }
        }
    }
    return q;
}

Tensor dequantize(const QuantizedTensor& q) {
    if (q.scheme.kind == SchemeKind::fp8_e4m3_sim) return q.fp8;
    Tensor x({q.rows(), q.cols()});
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t j = 0; j < q.cols(); ++j) {
            const QParams& p = q.params[q.groups.group(i, j)];
            switch (q.scheme.kind) {
                case SchemeKind::int_sym:
                    x.at(i, j) = p.scale * static_cast<float>(q.codes.at(i, j));
                    break;
                case SchemeKind::int_asym:
                    x.at(i, j) =
                        p.scale * static_cast<float>(q.codes.at(i, j) - p.zero_point);
                    break;
                case SchemeKind::dual_scale:
                    x.at(i, j) = p.scale * static_cast<float>(q.codes.at(i, j)) +
                                 p.scale_neg * static_cast<float>(q.codes_neg.at(i, j));
                    break;
                case SchemeKind::fp8_e4m3_sim:
                    break;
            }
        }
    }
    return x;
}

namespace {

bool is_int_scheme(SchemeKind k) {
    return k == SchemeKind::int_sym || k == SchemeKind::int_asym;
}

}  // namespace

Tensor qgemm(const QuantizedTensor& xq, const QuantizedTensor& wq) {
    if (xq.cols() != wq.rows())
        throw_validation("shape_mismatch", "qgemm inner extents do not match");

    // fp8 has no integer recovery path: simulated rounding, FP32 GEMM
    if (xq.scheme.kind == SchemeKind::fp8_e4m3_sim || wq.scheme.kind == SchemeKind::fp8_e4m3_sim)
        return matmul(dequantize(xq), dequantize(wq));

    if (!is_int_scheme(wq.scheme.kind))
        throw_validation("incompatible_schemes", "weights must be int_sym or int_asym");
    if (xq.groups.col_bounds != wq.groups.row_bounds)
        throw_validation("segment_mismatch",
                         "activation segments do not match weight input segments");

    const std::size_t m = xq.rows(), n = wq.cols();
    const GroupMap& gx = xq.groups;
    const GroupMap& gw = wq.groups;
    Tensor y({m, n});

    const bool w_asym = wq.scheme.kind == SchemeKind::int_asym;

    for (std::size_t b = 0; b < gx.n_col_blocks(); ++b) {
        const std::size_t l0 = gx.col_begin(b), l1 = gx.col_end(b);
        const std::int64_t kb = static_cast<std::int64_t>(l1 - l0);

        // block-local code sums for the zero-point corrections
        std::vector<std::int64_t> colsum_w(n, 0);
        if (xq.scheme.kind == SchemeKind::int_asym) {
            for (std::size_t l = l0; l < l1; ++l)
                for (std::size_t j = 0; j < n; ++j) colsum_w[j] += wq.codes.at(l, j);
        }
        std::vector<std::int64_t> rowsum_x(m, 0), rowsum_xn(m, 0);
        if (w_asym) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t l = l0; l < l1; ++l) {
                    rowsum_x[i] += xq.codes.at(i, l);
                    if (xq.scheme.kind == SchemeKind::dual_scale)
                        rowsum_xn[i] += xq.codes_neg.at(i, l);
                }
            }
        }

        for (std::size_t i = 0; i < m; ++i) {
            const QParams& px = xq.params[gx.row_block(i) * gx.n_col_blocks() + b];
            for (std::size_t j = 0; j < n; ++j) {
                const QParams& pw = wq.params[b * gw.n_col_blocks() + gw.col_block(j)];
                float term = 0.0f;
                switch (xq.scheme.kind) {
                    case SchemeKind::int_sym: {
                        std::int64_t acc = 0;
                        for (std::size_t l = l0; l < l1; ++l)
                            acc += static_cast<std::int64_t>(xq.codes.at(i, l)) * wq.codes.at(l, j);
                        if (w_asym) acc -= static_cast<std::int64_t>(pw.zero_point) * rowsum_x[i];
                        term = px.scale * (pw.scale * static_cast<float>(acc));
                        break;
                    }
                    case SchemeKind::int_asym: {
                        // rowsum expansion of s_x(X^-z_x) s_w(W^-z_w); the
                        // shifted tensors are never materialized
                        std::int64_t acc = 0;
                        for (std::size_t l = l0; l < l1; ++l)
                            acc += static_cast<std::int64_t>(xq.codes.at(i, l)) * wq.codes.at(l, j);
                        std::int64_t corr = acc - static_cast<std::int64_t>(px.zero_point) * colsum_w[j];
                        if (w_asym)
                            corr += -static_cast<std::int64_t>(pw.zero_point) * rowsum_x[i] +
                                    kb * px.zero_point * pw.zero_point;
                        term = px.scale * (pw.scale * static_cast<float>(corr));
                        break;
                    }
                    case SchemeKind::dual_scale: {
                        std::int64_t accp = 0, accn = 0;
                        for (std::size_t l = l0; l < l1; ++l) {
                            accp += static_cast<std::int64_t>(xq.codes.at(i, l)) * wq.codes.at(l, j);
                            accn += static_cast<std::int64_t>(xq.codes_neg.at(i, l)) * wq.codes.at(l, j);
                        }
                        if (w_asym) {
                            accp -= static_cast<std::int64_t>(pw.zero_point) * rowsum_x[i];
                            accn -= static_cast<std::int64_t>(pw.zero_point) * rowsum_xn[i];
                        }
                        term = px.scale * (pw.scale * static_cast<float>(accp)) +
                               px.scale_neg * (pw.scale * static_cast<float>(accn));
                        break;
                    }
                    case SchemeKind::fp8_e4m3_sim:
                        break;
                }
                y.at(i, j) += term;
            }
        }
    }
    return y;
}

float fp8_e4m3(float v) {
    if (!std::isfinite(v))
        throw_numeric("non_finite", "fp8_e4m3 requires finite input");
    if (v == 0.0f) return v;
    const float a = std::fabs(v);
    if (a >= 448.0f) return std::copysign(448.0f, v);

    int exp2 = 0;
    std::frexp(a, &exp2);           // a = f * 2^exp2, f in [0.5, 1)
    const int unbiased = exp2 - 1;  // floor(log2(a))

    float step;
    if (unbiased < -6) {
        step = 0x1.0p-9f;  // subnormal grid
    } else {
        step = std::ldexp(1.0f, unbiased - 3);
    }
    // ratio is exact (power-of-two divisor); nearbyint gives ties-to-even
    float q = std::nearbyint(a / step);
    float val = q * step;
    if (val > 448.0f) val = 448.0f;
    return std::copysign(val, v);
}

Tensor fp8_sim(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data) v = fp8_e4m3(v);
    return y;
}

GroupMap weight_group_map(std::size_t k, std::size_t n, const SegmentPlan& plan,
                          const Scheme& scheme) {
    if (scheme.granularity == Granularity::per_token_dynamic)
        throw_validation("scheme_mismatch", "per_token_dynamic applies to activations only");
    std::size_t in_total = 0, out_total = 0;
    for (std::size_t w : plan.in_segments) in_total += w;
    for (std::size_t w : plan.out_segments) out_total += w;
    if (in_total != k || out_total != n)
        throw_validation("width_mismatch", "plan widths do not match weight shape");
    std::vector<std::size_t> cols = scheme.granularity == Granularity::per_channel
                                        ? std::vector<std::size_t>(n, 1)
                                        : plan.out_segments;
    return GroupMap::from_widths(plan.in_segments, cols);
}

GroupMap activation_group_map(std::size_t rows, std::size_t k, const SegmentPlan& plan,
                              const Scheme& scheme) {
    if (scheme.granularity == Granularity::per_channel)
        throw_validation("scheme_mismatch", "per_channel applies to weights only");
    std::size_t in_total = 0;
    for (std::size_t w : plan.in_segments) in_total += w;
    if (in_total != k)
        throw_validation("width_mismatch", "plan widths do not match activation shape");
    std::vector<std::size_t> r = scheme.granularity == Granularity::per_token_dynamic
                                     ? std::vector<std::size_t>(rows, 1)
                                     : std::vector<std::size_t>{rows};
    return GroupMap::from_widths(r, plan.in_segments);
}

QuantizedTensor segmented_quantize_weight(const Tensor& w, const SegmentPlan& plan,
                                          const Scheme& scheme) {
    if (scheme.kind == SchemeKind::dual_scale)
        throw_validation("scheme_mismatch", "dual_scale is an activation scheme");
    if (w.rank() != 2)
        throw_validation("shape_mismatch", "weights must be rank 2");
    return quantize(w, scheme, weight_group_map(w.rows(), w.cols(), plan, scheme));
}

}  // namespace segquant
