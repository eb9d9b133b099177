#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "segquant/graph.hpp"

namespace segquant {

/// Per-linear-layer quantization plan inferred from the computation graph:
/// output/input segment widths plus whether the layer's input comes from a
/// polarity-asymmetric activation (dual-scale eligibility).
struct SegmentPlan {
    std::string layer_id;
    std::vector<std::size_t> out_segments;  // widths summing to n
    std::vector<std::size_t> in_segments;   // widths summing to k
    bool dualscale_eligible = false;

    // provenance: which pattern fired and where
    std::string out_pattern = "none";  // "chunk" | "split" | "none"
    std::string out_pattern_node;
    std::string in_pattern = "none";  // "concat" | "stack" | "none"
    std::string in_pattern_node;
    std::string dualscale_node;  // activation id when eligible
    bool grid = false;           // both input and output patterns fired

    bool out_segmented() const { return out_segments.size() > 1; }
    bool in_segmented() const { return in_segments.size() > 1; }
};

struct PlanToggles {
    bool seglinear = true;
    bool dualscale = true;
};

struct QuantPlan {
    std::map<std::string, SegmentPlan> layers;  // one entry per linear node
};

/// Output-side pattern: the sole consumer chain through shape-preserving
/// unary nodes ends in chunk/split on the feature axis. Falls back to the
/// singleton [n] on fan-out or no pattern.
std::vector<std::size_t> infer_output_segments(const Graph& g, const std::string& layer,
                                               SegmentPlan* prov = nullptr);

/// Input-side pattern: the producer chain through shape-preserving unary
/// nodes starts at concat/stack on the feature axis.
std::vector<std::size_t> infer_input_segments(const Graph& g, const std::string& layer,
                                              SegmentPlan* prov = nullptr);

/// (activation id, linear id) pairs where a silu/gelu/geglu output reaches the
/// linear input without polarity-destroying nodes in between. relu never
/// qualifies; layernorm blocks the path.
std::vector<std::pair<std::string, std::string>> find_act_to_linear(const Graph& g);

QuantPlan build_plan(const Graph& g, const PlanToggles& toggles);

}  // namespace segquant
