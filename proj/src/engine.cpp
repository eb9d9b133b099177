#include "segquant/engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "segquant/calibstats.hpp"

namespace segquant {

void validate_config(const EngineConfig& cfg) {
    auto bad = [](const std::string& msg) { throw_validation("bad_config", msg); };

    if (cfg.weights.kind == SchemeKind::dual_scale)
        bad("dual_scale is an activation scheme, not a weight scheme");
    if (cfg.weights.granularity == Granularity::per_token_dynamic)
        bad("per_token_dynamic applies to activations only");
    if (cfg.acts.granularity == Granularity::per_channel)
        bad("per_channel applies to weights only");
    if (cfg.weights.bits != 4 && cfg.weights.bits != 8) bad("weight bits must be 4 or 8");
    if (cfg.acts.bits != 4 && cfg.acts.bits != 8) bad("activation bits must be 4 or 8");
    if (cfg.weights.bits == 4 && cfg.weights.kind != SchemeKind::fp8_e4m3_sim &&
        cfg.weights.granularity != Granularity::per_channel)
        bad("4-bit weights require per_channel granularity");
    if (cfg.acts.bits == 4 && cfg.acts.kind != SchemeKind::fp8_e4m3_sim &&
        cfg.acts.granularity != Granularity::per_token_dynamic)
        bad("4-bit activations require per_token_dynamic granularity");
    if (cfg.acts.kind == SchemeKind::dual_scale && !cfg.dualscale)
        bad("dual_scale activations require the dualscale toggle");

    static const std::set<std::string> optimizers = {"none", "smoothquant", "svd", "smooth_svd",
                                                     "svd_smooth"};
    if (!optimizers.count(cfg.optimizer)) bad("unknown optimizer: " + cfg.optimizer);
    static const std::set<std::string> calibrators = {"amax", "gptq"};
    if (!calibrators.count(cfg.calibrator)) bad("unknown calibrator: " + cfg.calibrator);

    if (cfg.smooth.alpha_grid.empty()) bad("alpha grid must be non-empty");
    for (double a : cfg.smooth.alpha_grid)
        if (a < 0.0 || a > 1.0) bad("alpha values must lie in [0, 1]");
    if (cfg.optimizer == "svd" || cfg.optimizer == "smooth_svd" || cfg.optimizer == "svd_smooth")
        if (cfg.lowrank.rank < 1) bad("low-rank r must be positive");
    if (cfg.calib.gptq_block < 1) bad("gptq block size must be positive");
    if (!(cfg.calib.gptq_damping > 0.0)) bad("gptq damping must be positive");
}

Tensor quantized_layer_forward(const QuantizedLayer& layer, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != layer.weight.rows())
        throw_validation("shape_mismatch", layer.layer_id + ": input width mismatch");

    Tensor xs = x;
    if (!layer.smooth_scale.empty()) {
        if (layer.smooth_scale.size() != x.cols())
            throw_validation("shape_mismatch", layer.layer_id + ": smoothing vector width");
        for (std::size_t i = 0; i < xs.rows(); ++i)
            for (std::size_t j = 0; j < xs.cols(); ++j) xs.at(i, j) /= layer.smooth_scale[j];
    }

    const GroupMap agm =
        activation_group_map(xs.rows(), xs.cols(), layer.plan, layer.act_scheme);
    const QuantizedTensor xq =
        layer.act_params.empty()
            ? quantize(xs, layer.act_scheme, agm)
            : quantize_with_params(xs, layer.act_scheme, agm, layer.act_params);
    Tensor y = qgemm(xq, layer.weight);

    if (layer.lowrank_rank > 0) {
        const Tensor& xlr = layer.lowrank_smoothed_input ? xs : x;
        const Tensor lr = matmul(matmul(xlr, layer.lowrank_l1), layer.lowrank_l2);
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += lr.data[i];
    }
    if (layer.has_bias) {
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y.at(i, j) += layer.bias.data[j];
    }
    return y;
}

Bindings execute_quantized(const Graph& g, const QuantizedModel& model, const Bindings& inputs) {
    LinearHook hook = [&](const std::string& id, const Tensor& x) -> std::optional<Tensor> {
        auto it = model.layers.find(id);
        if (it == model.layers.end()) return std::nullopt;  // layer stays full precision
        return quantized_layer_forward(it->second, x);
    };
    return execute(g, inputs, nullptr, &hook);
}

namespace {

Tensor concat_rows(const std::vector<Tensor>& parts) {
    std::size_t rows = 0;
    for (const Tensor& t : parts) rows += t.rows();
    Tensor out({rows, parts.front().cols()});
    std::size_t r0 = 0;
    for (const Tensor& t : parts) {
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < t.cols(); ++j) out.at(r0 + i, j) = t.at(i, j);
        r0 += t.rows();
    }
    return out;
}

}  // namespace

std::vector<MetricRow> evaluate(const Graph& g, const QuantizedModel& model,
                                const std::vector<Bindings>& eval_inputs) {
    if (eval_inputs.empty())
        throw_validation("missing_stats", "evaluate needs at least one input binding");

    std::map<std::string, std::vector<Tensor>> fp_outs, q_outs;
    for (const Bindings& b : eval_inputs) {
        for (auto& [id, t] : execute(g, b)) fp_outs[id].push_back(t);
        for (auto& [id, t] : execute_quantized(g, model, b)) q_outs[id].push_back(t);
    }

    std::vector<MetricRow> rows;
    for (auto& [id, parts] : fp_outs) {
        const Tensor ref = concat_rows(parts);
        const Tensor got = concat_rows(q_outs.at(id));
        if (!ref.same_shape(got))
            throw_validation("shape_mismatch", id + ": quantized output shape drifted");
        float lo = ref.data[0], hi = ref.data[0];
        for (float v : ref.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double range = std::max(static_cast<double>(hi) - static_cast<double>(lo),
                                      static_cast<double>(kScaleEps));
        rows.push_back({id, "mse", mse(ref, got)});
        rows.push_back({id, "frobenius", frobenius(ref, got)});
        rows.push_back({id, "psnr", psnr(ref, got, range)});
        rows.push_back({id, "ssim", ssim(ref, got, 8, 0.01, 0.03, range)});
    }
    return rows;
}

namespace {

nlohmann::ordered_json plan_to_json(const SegmentPlan& sp) {
    nlohmann::ordered_json j;
    j["out_segments"] = sp.out_segments;
    j["in_segments"] = sp.in_segments;
    j["dualscale"] = sp.dualscale_eligible;
    j["out_pattern"] = sp.out_pattern;
    j["out_pattern_node"] = sp.out_pattern_node;
    j["in_pattern"] = sp.in_pattern;
    j["in_pattern_node"] = sp.in_pattern_node;
    j["dualscale_node"] = sp.dualscale_node;
    j["grid"] = sp.grid;
    return j;
}

double metric_or_null_value(double v) { return v; }

}  // namespace

nlohmann::ordered_json config_to_json(const EngineConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["weights"] = {{"kind", to_string(cfg.weights.kind)},
                    {"bits", cfg.weights.bits},
                    {"granularity", to_string(cfg.weights.granularity)}};
    j["acts"] = {{"kind", to_string(cfg.acts.kind)},
                 {"bits", cfg.acts.bits},
                 {"granularity", to_string(cfg.acts.granularity)}};
    j["seglinear"] = cfg.seglinear;
    j["dualscale"] = cfg.dualscale;
    j["passthrough"] = cfg.passthrough;
    j["optimizer"] = cfg.optimizer;
    j["calibrator"] = cfg.calibrator;
    j["smooth"] = {{"alpha_grid", cfg.smooth.alpha_grid}, {"per_segment", cfg.smooth.per_segment}};
    j["lowrank"] = {{"rank", cfg.lowrank.rank}, {"precision", cfg.lowrank.precision}};
    j["gptq"] = {{"block", cfg.calib.gptq_block}, {"damping", cfg.calib.gptq_damping}};
    j["layer_filter"] = cfg.layer_filter;
    return j;
}

std::pair<QuantizedModel, nlohmann::ordered_json> quantize_model(
    const Graph& g, const std::vector<Bindings>& calib, const EngineConfig& cfg) {
    validate_config(cfg);
    if (calib.empty())
        throw_validation("missing_stats", "calibration inputs required");
    std::set<std::string> filter(cfg.layer_filter.begin(), cfg.layer_filter.end());
    for (const std::string& id : filter) {
        if (!g.has_node(id) || g.node(id).kind != NodeKind::linear)
            throw_validation("bad_config", "layer_filter entry is not a linear node: " + id);
    }

    QuantizedModel model;
    model.plan = build_plan(g, PlanToggles{cfg.seglinear, cfg.dualscale});

    // capture each layer's calibration inputs with the reference executor
    std::map<std::string, std::vector<Tensor>> layer_inputs;
    for (const Bindings& b : calib) {
        std::map<std::string, Tensor> cap;
        execute(g, b, &cap);
        for (auto& [id, x] : cap) layer_inputs[id].push_back(std::move(x));
    }

    nlohmann::ordered_json layers_json = nlohmann::ordered_json::array();

    for (const std::string& id : topo_order(g)) {
        const Node& node = g.node(id);
        if (node.kind != NodeKind::linear) continue;
        const SegmentPlan& sp = model.plan.layers.at(id);

        nlohmann::ordered_json entry;
        entry["id"] = id;
        entry["plan"] = plan_to_json(sp);

        const bool selected = !cfg.passthrough && (filter.empty() || filter.count(id));
        entry["quantized"] = selected;
        if (!selected) {
            layers_json.push_back(std::move(entry));
            continue;
        }

        const Tensor& w = g.weights.at(node.weight);
        const Tensor* bias = node.bias.empty() ? nullptr : &g.weights.at(node.bias);
        const std::vector<Tensor>& raw_inputs = layer_inputs.at(id);

        // optimizer stage; the low-rank r is clamped per layer so narrow
        // layers keep a valid decomposition (or skip it entirely)
        LowRankConfig lr_cfg = cfg.lowrank;
        lr_cfg.rank = std::min<int>(lr_cfg.rank,
                                    static_cast<int>(std::min(w.rows(), w.cols())) - 1);
        const bool lowrank_ok = lr_cfg.rank >= 1;

        Tensor target = w;
        std::vector<Tensor> act_in = raw_inputs;
        bool smoothed = false, lowranked = false, lowrank_smoothed_input = false;
        SmoothResult sres;
        LowRankResult lres;
        if (cfg.optimizer == "smoothquant" || cfg.optimizer == "smooth_svd") {
            sres = sweep_alpha(w, raw_inputs, sp, cfg.weights, cfg.acts, cfg.smooth);
            smoothed = true;
            target = sres.folded_weight;
        }
        if (cfg.optimizer == "svd" && lowrank_ok) {
            lres = svd_lowrank(w, lr_cfg);
            lowranked = true;
            target = lres.residual;
        } else if (cfg.optimizer == "smooth_svd" && lowrank_ok) {
            lres = svd_lowrank(sres.folded_weight, lr_cfg);
            lowranked = true;
            lowrank_smoothed_input = true;
            target = lres.residual;
        } else if (cfg.optimizer == "svd_smooth" && lowrank_ok) {
            lres = svd_lowrank(w, lr_cfg);
            lowranked = true;
            sres = sweep_alpha(lres.residual, raw_inputs, sp, cfg.weights, cfg.acts, cfg.smooth);
            smoothed = true;
            target = sres.folded_weight;
        }
        if (smoothed) {
            for (Tensor& x : act_in)
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        x.at(i, j) /= sres.full_scale[j];
        }

        // calibration stage
        QuantizedLayer ql;
        if (cfg.calibrator == "amax") {
            CalibStats stats;
            for (const Tensor& x : act_in) stats.observe(x);
            ql = amax_calibrate(target, bias, stats, sp, cfg.weights, cfg.acts);
        } else {
            ql = gptq_calibrate(target, bias, act_in, sp, cfg.weights, cfg.acts, cfg.calib);
        }
        if (smoothed) {
            ql.smooth_scale = sres.full_scale;
            for (const SmoothSegment& seg : sres.segments) {
                ql.smooth_alpha.push_back(seg.alpha);
                ql.smooth_mse.push_back(seg.mse);
            }
        }
        if (lowranked) {
            ql.lowrank_rank = lr_cfg.rank;
            ql.lowrank_l1 = lres.l1;
            ql.lowrank_l2 = lres.l2;
            ql.lowrank_residual_fnorm = lres.residual_fnorm;
            ql.lowrank_smoothed_input = lowrank_smoothed_input;
        }

        // per-layer error rows: weight round trip plus calibration-set output error
        const double w_rt = frobenius(target, dequantize(ql.weight));
        std::vector<Tensor> fp_out, q_out;
        for (const Tensor& x : raw_inputs) {
            Tensor yf = matmul(x, w);
            if (bias)
                for (std::size_t i = 0; i < yf.rows(); ++i)
                    for (std::size_t j = 0; j < yf.cols(); ++j) yf.at(i, j) += bias->data[j];
            fp_out.push_back(std::move(yf));
            q_out.push_back(quantized_layer_forward(ql, x));
        }
        const double out_mse = mse(concat_rows(fp_out), concat_rows(q_out));

        entry["method"] = ql.method;
        nlohmann::ordered_json hp;
        hp["alpha"] = smoothed ? nlohmann::ordered_json(ql.smooth_alpha)
                               : nlohmann::ordered_json(nullptr);
        if (cfg.calibrator == "gptq")
            hp["gptq"] = {{"block", cfg.calib.gptq_block},
                          {"damping", cfg.calib.gptq_damping},
                          {"fallback", ql.gptq_fallback}};
        else
            hp["gptq"] = nullptr;
        if (lowranked)
            hp["lowrank"] = {{"rank", ql.lowrank_rank},
                             {"residual_fnorm", ql.lowrank_residual_fnorm},
                             {"precision", cfg.lowrank.precision},
                             {"smoothed_input", lowrank_smoothed_input}};
        else
            hp["lowrank"] = nullptr;
        entry["hyperparams"] = std::move(hp);

        float smin = 0.0f, smax = 0.0f;
        if (!ql.weight.params.empty()) {
            smin = smax = ql.weight.params[0].scale;
            for (const QParams& p : ql.weight.params) {
                smin = std::min(smin, p.scale);
                smax = std::max(smax, p.scale);
            }
        }
        entry["weight"] = {{"kind", to_string(ql.weight.scheme.kind)},
                           {"bits", ql.weight.scheme.bits},
                           {"granularity", to_string(ql.weight.scheme.granularity)},
                           {"groups", ql.weight.params.size()},
                           {"scale_min", smin},
                           {"scale_max", smax}};
        entry["act"] = {{"kind", to_string(ql.act_scheme.kind)},
                        {"bits", ql.act_scheme.bits},
                        {"granularity", to_string(ql.act_scheme.granularity)},
                        {"dual", ql.act_dual},
                        {"params", ql.act_params.size()}};
        entry["errors"] = nlohmann::ordered_json::array(
            {{{"metric", "weight_frobenius"}, {"value", metric_or_null_value(w_rt)}},
             {{"metric", "output_mse"}, {"value", metric_or_null_value(out_mse)}}});

        layers_json.push_back(std::move(entry));
        model.layers.emplace(id, std::move(ql));
    }

    // end-to-end metrics against the reference executor on the calib set
    nlohmann::ordered_json global;
    global["calib_batches"] = calib.size();
    nlohmann::ordered_json outs = nlohmann::ordered_json::array();
    for (const MetricRow& row : evaluate(g, model, calib)) {
        nlohmann::ordered_json r;
        r["output"] = row.output;
        r["metric"] = row.metric;
        if (std::isfinite(row.value))
            r["value"] = row.value;
        else
            r["value"] = nullptr;  // psnr sentinel for identical outputs
        outs.push_back(std::move(r));
    }
    global["outputs"] = std::move(outs);

    nlohmann::ordered_json report;
    report["version"] = 1;
    report["tool"] = {{"name", "segquant"}, {"version", kToolVersion}};
    report["config"] = config_to_json(cfg);
    report["layers"] = std::move(layers_json);
    report["global"] = std::move(global);

    return {std::move(model), std::move(report)};
}

}  // namespace segquant
