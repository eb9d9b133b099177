#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segquant/seginfer.hpp"
#include "segquant/tensor.hpp"

namespace segquant {

enum class SchemeKind { int_sym, int_asym, dual_scale, fp8_e4m3_sim };
enum class Granularity { per_tensor, per_channel, per_token_dynamic };

const char* to_string(SchemeKind k);
const char* to_string(Granularity g);
SchemeKind scheme_kind_from_string(const std::string& s);
Granularity granularity_from_string(const std::string& s);

struct Scheme {
    SchemeKind kind = SchemeKind::int_sym;
    int bits = 8;  // 4 or 8; ignored for fp8
    Granularity granularity = Granularity::per_tensor;
};

/// Affine parameters for one quantization group. For dual_scale, `scale` is
/// the positive step and `scale_neg` the negative one; zero_point is used by
/// int_asym only. Scales carry an epsilon floor so degenerate (constant or
/// zero) groups stay well defined.
struct QParams {
    float scale = 1.0f;
    float scale_neg = 0.0f;
    std::int32_t zero_point = 0;
    std::int32_t qmin = -127;
    std::int32_t qmax = 127;
};

inline constexpr float kScaleEps = 1e-8f;

QParams qparams_symmetric(float amax, int bits);
QParams qparams_asymmetric(float mn, float mx, int bits);
QParams qparams_dual(float mn, float mx, int bits);

/// Rectangular grouping of a [rows x cols] tensor: params are shared within
/// each (row block x column block) cell. Weight segmentation uses the plan's
/// in/out widths as blocks; per-channel and per-token granularities refine one
/// axis down to single rows/columns.
struct GroupMap {
    std::vector<std::size_t> row_bounds;  // cumulative, back() == rows
    std::vector<std::size_t> col_bounds;  // cumulative, back() == cols

    static GroupMap whole(std::size_t rows, std::size_t cols);
    static GroupMap from_widths(const std::vector<std::size_t>& row_widths,
                                const std::vector<std::size_t>& col_widths);

    std::size_t n_row_blocks() const { return row_bounds.size(); }
    std::size_t n_col_blocks() const { return col_bounds.size(); }
    std::size_t n_groups() const { return n_row_blocks() * n_col_blocks(); }
    std::size_t row_block(std::size_t r) const;
    std::size_t col_block(std::size_t c) const;
    std::size_t group(std::size_t r, std::size_t c) const {
        return row_block(r) * n_col_blocks() + col_block(c);
    }
    // block extents
    std::size_t row_begin(std::size_t rb) const { return rb == 0 ? 0 : row_bounds[rb - 1]; }
    std::size_t row_end(std::size_t rb) const { return row_bounds[rb]; }
    std::size_t col_begin(std::size_t cb) const { return cb == 0 ? 0 : col_bounds[cb - 1]; }
    std::size_t col_end(std::size_t cb) const { return col_bounds[cb]; }

    bool operator==(const GroupMap&) const = default;
};

struct QuantizedTensor {
    Scheme scheme;
    std::vector<std::size_t> shape;  // [rows, cols]
    GroupMap groups;
    std::vector<QParams> params;  // n_groups entries, row-block major
    IntTensor codes;              // int schemes; positive plane for dual_scale
    IntTensor codes_neg;          // dual_scale negative plane
    Tensor fp8;                   // fp8_e4m3_sim payload

    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
};

/// Self-calibrated quantization; the group map defaults to the scheme's
/// granularity over the whole tensor. For per_token_dynamic, params are
/// always computed here, per row.
QuantizedTensor quantize(const Tensor& x, const Scheme& scheme);
QuantizedTensor quantize(const Tensor& x, const Scheme& scheme, const GroupMap& groups);

/// Quantization against externally calibrated params (one per group).
QuantizedTensor quantize_with_params(const Tensor& x, const Scheme& scheme, const GroupMap& groups,
                                     std::vector<QParams> params);

/// Min/max-derived params per group, without encoding anything.
std::vector<QParams> compute_qparams(const Tensor& x, const Scheme& scheme, const GroupMap& groups);

Tensor dequantize(const QuantizedTensor& q);

/// Integer-domain GEMM with scheme-specific recovery:
///   sym:   s_x * (s_w * (X^ W^))
///   asym:  rowsum-expanded zero-point correction, no (x^-z) materialization
///   dual:  s+ s_w (X+^ W^) + s- s_w (X-^ W^)
/// fp8 operands fall back to payload matmul in FP32. Activation groups along
/// the shared axis must match the weight's row blocks.
Tensor qgemm(const QuantizedTensor& x, const QuantizedTensor& w);

/// Nearest e4m3 value (4 exponent bits, 3 mantissa bits, bias 7, no inf,
/// max 448), ties to even mantissa, saturating beyond the range.
float fp8_e4m3(float v);
Tensor fp8_sim(const Tensor& x);

/// Weight quantization with independent params per (in-segment x out-segment)
/// block; per_channel granularity refines columns within each row block.
QuantizedTensor segmented_quantize_weight(const Tensor& w, const SegmentPlan& plan,
                                          const Scheme& scheme);

/// The group map segmented_quantize_weight uses for a given plan/scheme.
GroupMap weight_group_map(std::size_t k, std::size_t n, const SegmentPlan& plan,
                          const Scheme& scheme);

/// Group map for the activation side of a layer: column blocks from the
/// plan's input segments, rows per token when dynamic.
GroupMap activation_group_map(std::size_t rows, std::size_t k, const SegmentPlan& plan,
                              const Scheme& scheme);

}  // namespace segquant
