#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "segquant/calibrators.hpp"
#include "segquant/graph.hpp"
#include "segquant/optimizers.hpp"

namespace segquant {

inline constexpr const char* kToolVersion = "0.1.0";

struct EngineConfig {
    std::uint64_t seed = 0;
    Scheme weights{SchemeKind::int_sym, 8, Granularity::per_tensor};
    Scheme acts{SchemeKind::int_sym, 8, Granularity::per_tensor};
    bool seglinear = true;
    bool dualscale = true;
    bool passthrough = false;  // keep every layer full precision (no-op bundle)
    std::string optimizer = "none";   // none | smoothquant | svd | smooth_svd | svd_smooth
    std::string calibrator = "amax";  // amax | gptq
    SmoothConfig smooth;
    LowRankConfig lowrank;
    CalibConfig calib;
    std::vector<std::string> layer_filter;  // empty = quantize all linear layers
};

/// Rejects invalid combinations before any work (dual_scale weights, 4-bit
/// per-tensor weights, per-channel activations, ...).
void validate_config(const EngineConfig& cfg);

using Bindings = std::map<std::string, Tensor>;

struct QuantizedModel {
    QuantPlan plan;
    std::map<std::string, QuantizedLayer> layers;  // only the quantized ones
};

struct MetricRow {
    std::string output;
    std::string metric;  // mse | frobenius | psnr | ssim
    double value = 0.0;
};

/// Full pipeline: plan inference, optimizers, calibration, report assembly.
/// Deterministic for fixed (graph, calib, cfg).
std::pair<QuantizedModel, nlohmann::ordered_json> quantize_model(
    const Graph& g, const std::vector<Bindings>& calib, const EngineConfig& cfg);

/// Simulated quantized forward for one layer (smoothing divide, activation
/// quantization, integer GEMM recovery, low-rank bypass, bias).
Tensor quantized_layer_forward(const QuantizedLayer& layer, const Tensor& x);

/// Executes the graph with quantized linear layers simulated in place;
/// non-linear nodes run exactly as the reference executor.
Bindings execute_quantized(const Graph& g, const QuantizedModel& model, const Bindings& inputs);

/// Reference-vs-quantized metrics on the concatenated eval outputs.
std::vector<MetricRow> evaluate(const Graph& g, const QuantizedModel& model,
                                const std::vector<Bindings>& eval_inputs);

// bundle directory: qmodel.json + qweights.bin + report.json
void save_bundle(const QuantizedModel& model, const nlohmann::ordered_json& report,
                 const std::string& dir);
QuantizedModel load_bundle(const std::string& dir);

/// Config echo used in reports and for bundle round-trips.
nlohmann::ordered_json config_to_json(const EngineConfig& cfg);

}  // namespace segquant
