#pragma once

#include <string>
#include <utility>
#include <vector>

#include "segquant/engine.hpp"
#include "segquant/graph.hpp"

namespace segquant {

/// DDPM beta schedule and the derived alpha / alpha-bar products.
/// Linear schedule from beta_start to beta_end across T steps.
struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> beta;       // [t-1], t = 1..T
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s, strictly decreasing

    static NoiseSchedule linear(std::size_t T, double beta_start = 1e-4, double beta_end = 0.02);
};

/// Closed-form forward corruption x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) noise.
Tensor ddpm_forward(const Tensor& x0, std::size_t t, const NoiseSchedule& sched,
                    const Tensor& noise);

/// One reverse step; z == nullptr drops the sigma_t term (deterministic mode).
/// sigma_t = sqrt(beta_t).
Tensor ddpm_reverse_step(const Tensor& x_t, const Tensor& eps_hat, std::size_t t,
                         const NoiseSchedule& sched, const Tensor* z);

/// Standard sinusoidal embedding of an integer timestep (host-side; the toy
/// graph takes the embedded vector as its "temb" input).
Tensor sinusoidal_time_embedding(std::size_t t, std::size_t dim);

struct ToyModelSpec {
    std::size_t hidden = 16;  // h; must be even (sinusoidal embedding)
    std::size_t tokens = 16;
    std::size_t blocks = 1;
    std::uint64_t seed = 1;
};

/// Synthetic DiT-style graph: time embedding -> silu -> linear(6h) -> chunk(6)
/// modulating a layernormed latent trunk, a gelu FFN, a concat-fed projection
/// ([4,12] input segments), a relu side path, residual adds. Weights carry
/// per-segment magnitude heterogeneity so segmented quantization is
/// measurable. Inputs: "latent" [tokens x h], "temb" [1 x h].
struct ToyModel {
    Graph graph;
    std::vector<std::string> time_layers;    // linear ids on the timestep branch
    std::vector<std::string> latent_layers;  // remaining linear ids
};

ToyModel build_toy_dit(const ToyModelSpec& spec);

/// Runs the reference and quantized models stepwise from the same x_T in
/// deterministic mode and logs per-step ||eps_fp - eps_q||_F. Each model
/// denoises its own trajectory.
std::vector<std::pair<std::size_t, double>> timestep_error_curve(const Graph& g,
                                                                 const QuantizedModel& model,
                                                                 const NoiseSchedule& sched,
                                                                 const Tensor& x_T);

/// CSV with header "t,frobenius", one line per step (descending t).
void write_curve_csv(const std::vector<std::pair<std::size_t, double>>& curve,
                     const std::string& path);

// calibration bundles: batches of input bindings in the weights.bin container,
// names "<batch>/<input>"
void save_calib(const std::vector<Bindings>& batches, const std::string& path);
std::vector<Bindings> load_calib(const std::string& path);

}  // namespace segquant
