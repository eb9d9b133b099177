#include "segquant/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "bytes.hpp"
#include "segquant/calibstats.hpp"
#include "segquant/harness.hpp"

namespace segquant {

namespace {

using ojson = nlohmann::ordered_json;

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"seed", "uint", "engine seed echoed into reports"},
        {"weights.kind", "string", "weight scheme: int_sym | int_asym | fp8_e4m3_sim"},
        {"weights.bits", "int", "weight bit width: 4 | 8"},
        {"weights.granularity", "string", "weight granularity: per_tensor | per_channel"},
        {"acts.kind", "string",
         "activation scheme: int_sym | int_asym | dual_scale | fp8_e4m3_sim"},
        {"acts.bits", "int", "activation bit width: 4 | 8"},
        {"acts.granularity", "string",
         "activation granularity: per_tensor | per_token_dynamic"},
        {"seglinear", "bool", "enable graph-driven segment inference"},
        {"dualscale", "bool", "enable dual-scale activation quantization on eligible layers"},
        {"passthrough", "bool", "keep every layer full precision (no-op bundle)"},
        {"optimizer", "string", "none | smoothquant | svd | smooth_svd | svd_smooth"},
        {"calibrator", "string", "amax | gptq"},
        {"smooth.alpha_grid", "array", "alpha sweep grid, values in [0, 1]"},
        {"smooth.per_segment", "bool", "sweep alpha per input segment"},
        {"lowrank.rank", "int", "low-rank r for the svd optimizers"},
        {"lowrank.precision", "string", "svd precision note echoed into reports"},
        {"gptq.block", "int", "gptq lazy-update block size"},
        {"gptq.damping", "number", "gptq damping as a fraction of mean(diag(H))"},
        {"layer_filter", "array", "linear node ids to quantize (empty = all)"},
        {"demo.timesteps", "uint", "demo-ddpm: schedule length T"},
        {"demo.hidden", "uint", "demo-ddpm: toy model hidden width (even)"},
        {"demo.tokens", "uint", "demo-ddpm: toy model token count"},
        {"demo.blocks", "uint", "demo-ddpm: toy model block count"},
        {"demo.seed", "uint", "demo-ddpm: data/model seed"},
        {"demo.calib_batches", "uint", "demo-ddpm: calibration batch count"},
        {"demo.branch_curves", "bool", "demo-ddpm: also emit time-only and latent-only curves"},
    };
    return keys;
}

std::string config_help_text() {
    std::string out = "Config keys (JSON file, nested by dots; --set key=value overrides):\n";
    for (const ConfigKey& k : config_keys()) {
        out += "  ";
        out += k.key;
        out += " (";
        out += k.type;
        out += "): ";
        out += k.desc;
        out += "\n";
    }
    return out;
}

namespace {

void flatten_keys(const ojson& j, const std::string& prefix, std::vector<std::string>& out) {
    if (!j.is_object()) {
        out.push_back(prefix);
        return;
    }
    for (const auto& [key, value] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        // arrays are leaves (alpha_grid, layer_filter)
        if (value.is_object())
            flatten_keys(value, path, out);
        else
            out.push_back(path);
    }
}

const ojson* find_path(const ojson& j, const std::string& dotted) {
    const ojson* cur = &j;
    std::size_t pos = 0;
    while (pos < dotted.size()) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string part = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (!cur->is_object() || !cur->contains(part)) return nullptr;
        cur = &cur->at(part);
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    return cur;
}

void set_path(ojson& j, const std::string& dotted, ojson value) {
    ojson* cur = &j;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string part = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (dot == std::string::npos) {
            (*cur)[part] = std::move(value);
            return;
        }
        cur = &(*cur)[part];
        pos = dot + 1;
    }
}

AppConfig config_from_json(const ojson& j) {
    // reject unknown keys first
    std::set<std::string> known;
    for (const ConfigKey& k : config_keys()) known.insert(k.key);
    std::vector<std::string> present;
    flatten_keys(j, "", present);
    for (const std::string& key : present)
        if (!known.count(key))
            throw_validation("bad_config", "unknown config key: " + key);

    AppConfig cfg;
    try {
        auto get = [&](const char* key) { return find_path(j, key); };
        if (auto* v = get("seed")) cfg.engine.seed = v->get<std::uint64_t>();
        if (auto* v = get("weights.kind"))
            cfg.engine.weights.kind = scheme_kind_from_string(v->get<std::string>());
        if (auto* v = get("weights.bits")) cfg.engine.weights.bits = v->get<int>();
        if (auto* v = get("weights.granularity"))
            cfg.engine.weights.granularity = granularity_from_string(v->get<std::string>());
        if (auto* v = get("acts.kind"))
            cfg.engine.acts.kind = scheme_kind_from_string(v->get<std::string>());
        if (auto* v = get("acts.bits")) cfg.engine.acts.bits = v->get<int>();
        if (auto* v = get("acts.granularity"))
            cfg.engine.acts.granularity = granularity_from_string(v->get<std::string>());
        if (auto* v = get("seglinear")) cfg.engine.seglinear = v->get<bool>();
        if (auto* v = get("dualscale")) cfg.engine.dualscale = v->get<bool>();
        if (auto* v = get("passthrough")) cfg.engine.passthrough = v->get<bool>();
        if (auto* v = get("optimizer")) cfg.engine.optimizer = v->get<std::string>();
        if (auto* v = get("calibrator")) cfg.engine.calibrator = v->get<std::string>();
        if (auto* v = get("smooth.alpha_grid"))
            cfg.engine.smooth.alpha_grid = v->get<std::vector<double>>();
        if (auto* v = get("smooth.per_segment"))
            cfg.engine.smooth.per_segment = v->get<bool>();
        if (auto* v = get("lowrank.rank")) cfg.engine.lowrank.rank = v->get<int>();
        if (auto* v = get("lowrank.precision"))
            cfg.engine.lowrank.precision = v->get<std::string>();
        if (auto* v = get("gptq.block")) cfg.engine.calib.gptq_block = v->get<int>();
        if (auto* v = get("gptq.damping")) cfg.engine.calib.gptq_damping = v->get<double>();
        if (auto* v = get("layer_filter"))
            cfg.engine.layer_filter = v->get<std::vector<std::string>>();
        if (auto* v = get("demo.timesteps")) cfg.demo.timesteps = v->get<std::size_t>();
        if (auto* v = get("demo.hidden")) cfg.demo.hidden = v->get<std::size_t>();
        if (auto* v = get("demo.tokens")) cfg.demo.tokens = v->get<std::size_t>();
        if (auto* v = get("demo.blocks")) cfg.demo.blocks = v->get<std::size_t>();
        if (auto* v = get("demo.seed")) cfg.demo.seed = v->get<std::uint64_t>();
        if (auto* v = get("demo.calib_batches"))
            cfg.demo.calib_batches = v->get<std::size_t>();
        if (auto* v = get("demo.branch_curves")) cfg.demo.branch_curves = v->get<bool>();
    } catch (const sq_error&) {
        throw;
    } catch (const std::exception& e) {
        throw_parse("parse_failure", std::string("config: ") + e.what());
    }
    return cfg;
}

}  // namespace

AppConfig load_app_config(const std::string& path, const std::vector<std::string>& overrides) {
    ojson j = ojson::object();
    if (!path.empty()) {
        const std::string text = detail::read_file(path);
        try {
            j = ojson::parse(text);
        } catch (const std::exception& e) {
            throw_parse("parse_failure", path + ": " + e.what());
        }
        if (!j.is_object())
            throw_parse("parse_failure", path + ": config must be a JSON object");
    }
    for (const std::string& ov : overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw_validation("bad_config", "override must be key=value: " + ov);
        const std::string key = ov.substr(0, eq);
        const std::string raw = ov.substr(eq + 1);
        ojson value;
        try {
            value = ojson::parse(raw);
        } catch (const std::exception&) {
            value = raw;  // unquoted strings (e.g. weights.kind=int_sym)
        }
        set_path(j, key, std::move(value));
    }
    return config_from_json(j);  // overrides win: applied onto the file json
}

namespace {

int report_error(const sq_error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return e.exit_code();
}

void require_file(const std::string& path, const char* what) {
    if (!std::filesystem::exists(path))
        throw_io("io", std::string(what) + " not found: " + path);
}

}  // namespace

int cmd_quantize(const QuantizeArgs& args) {
    try {
        require_file(args.graph, "graph file");
        require_file(args.weights, "weights file");
        require_file(args.calib, "calibration file");
        if (!args.config.empty()) require_file(args.config, "config file");

        const AppConfig cfg = load_app_config(args.config, args.overrides);
        const Graph g = load_graph(args.graph, args.weights);
        const std::vector<Bindings> calib = load_calib(args.calib);

        auto [model, report] = quantize_model(g, calib, cfg.engine);
        save_bundle(model, report, args.out);

        std::cout << "quantized " << model.layers.size() << " of "
                  << model.plan.layers.size() << " linear layers -> " << args.out << "\n";
        return 0;
    } catch (const sq_error& e) {
        return report_error(e);
    }
}

int cmd_analyze(const AnalyzeArgs& args) {
    try {
        require_file(args.graph, "graph file");
        require_file(args.weights, "weights file");
        require_file(args.calib, "calibration file");

        const Graph g = load_graph(args.graph, args.weights);
        const std::vector<Bindings> calib = load_calib(args.calib);
        if (calib.empty())
            throw_validation("missing_stats", "calibration bundle is empty");

        std::map<std::string, CalibStats> stats;
        for (const Bindings& b : calib) {
            std::map<std::string, Tensor> cap;
            execute(g, b, &cap);
            for (auto& [id, x] : cap) stats[id].observe(x);
        }
        std::set<std::string> eligible;
        for (const auto& [act, lin] : find_act_to_linear(g)) eligible.insert(lin);

        std::printf("%-16s %9s %9s %9s %12s %5s\n", "layer", "channels", "neg", "pos", "amax",
                    "dual");
        ojson rows = ojson::array();
        for (const std::string& id : topo_order(g)) {
            if (!stats.count(id)) continue;
            const CalibStats& s = stats.at(id);
            const PolarityRow row = polarity_row(s);
            const bool dual = eligible.count(id) != 0;
            std::printf("%-16s %9zu %9.3f %9.3f %12.6g %5s\n", id.c_str(), row.channels,
                        row.mean_neg, row.mean_pos, s.amax(), dual ? "yes" : "no");
            ojson r;
            r["id"] = id;
            r["channels"] = row.channels;
            r["mean_neg_ratio"] = row.mean_neg;
            r["mean_pos_ratio"] = row.mean_pos;
            r["min"] = s.tensor_min();
            r["max"] = s.tensor_max();
            r["amax"] = s.amax();
            r["dualscale_eligible"] = dual;
            rows.push_back(std::move(r));
        }
        ojson out;
        out["version"] = 1;
        out["layers"] = std::move(rows);
        detail::write_file(args.out, out.dump(2) + "\n");
        return 0;
    } catch (const sq_error& e) {
        return report_error(e);
    }
}

int cmd_demo_ddpm(const DemoArgs& args) {
    try {
        if (!args.config.empty()) require_file(args.config, "config file");
        const AppConfig cfg = load_app_config(args.config, args.overrides);

        ToyModelSpec spec;
        spec.hidden = cfg.demo.hidden;
        spec.tokens = cfg.demo.tokens;
        spec.blocks = cfg.demo.blocks;
        spec.seed = cfg.demo.seed;
        const ToyModel toy = build_toy_dit(spec);
        const NoiseSchedule sched = NoiseSchedule::linear(cfg.demo.timesteps);

        // calibration batches: noised latents spread over the schedule
        Rng rng(cfg.demo.seed);
        Rng data_rng = rng.split(1);
        std::vector<Bindings> calib;
        for (std::size_t b = 0; b < cfg.demo.calib_batches; ++b) {
            const std::size_t t = 1 + (b * sched.T) / std::max<std::size_t>(cfg.demo.calib_batches, 1);
            const Tensor x0 = gaussian(data_rng, {spec.tokens, spec.hidden});
            const Tensor noise = gaussian(data_rng, {spec.tokens, spec.hidden});
            calib.push_back({{"latent", ddpm_forward(x0, std::min(t, sched.T), sched, noise)},
                             {"temb", sinusoidal_time_embedding(std::min(t, sched.T), spec.hidden)}});
        }

        std::error_code ec;
        std::filesystem::create_directories(args.out, ec);
        if (ec)
            throw_io("io", "cannot create output directory " + args.out);
        const std::filesystem::path base(args.out);

        auto run = [&](const EngineConfig& engine, const std::string& csv) {
            auto [model, report] = quantize_model(toy.graph, calib, engine);
            Rng noise_rng = rng.split(2);
            const Tensor x_T = gaussian(noise_rng, {spec.tokens, spec.hidden});
            write_curve_csv(timestep_error_curve(toy.graph, model, sched, x_T),
                            (base / csv).string());
            return std::make_pair(std::move(model), std::move(report));
        };

        auto [model, report] = run(cfg.engine, "curve.csv");
        save_bundle(model, report, args.out);

        if (cfg.demo.branch_curves) {
            EngineConfig time_cfg = cfg.engine;
            time_cfg.layer_filter = toy.time_layers;
            run(time_cfg, "curve_time.csv");
            EngineConfig latent_cfg = cfg.engine;
            latent_cfg.layer_filter = toy.latent_layers;
            run(latent_cfg, "curve_latent.csv");
        }

        std::cout << "demo outputs written to " << args.out << "\n";
        return 0;
    } catch (const sq_error& e) {
        return report_error(e);
    }
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"segquant: segment-aware post-training quantization toolkit"};
    app.footer(config_help_text());
    app.require_subcommand(1);

    QuantizeArgs qa;
    CLI::App* q = app.add_subcommand("quantize", "quantize a model against calibration data");
    q->add_option("--graph", qa.graph, "graph.json path")->required();
    q->add_option("--weights", qa.weights, "weights.bin path")->required();
    q->add_option("--calib", qa.calib, "calibration bundle path")->required();
    q->add_option("--config", qa.config, "config JSON path");
    q->add_option("--out", qa.out, "output bundle directory")->required();
    q->add_option("--set", qa.overrides, "config override key=value (repeatable)");

    AnalyzeArgs aa;
    CLI::App* a = app.add_subcommand("analyze", "activation statistics without quantizing");
    a->add_option("--graph", aa.graph, "graph.json path")->required();
    a->add_option("--weights", aa.weights, "weights.bin path")->required();
    a->add_option("--calib", aa.calib, "calibration bundle path")->required();
    a->add_option("--out", aa.out, "stats.json output path");

    DemoArgs da;
    CLI::App* d = app.add_subcommand("demo-ddpm", "toy denoising demo with timestep error curves");
    d->add_option("--config", da.config, "config JSON path");
    d->add_option("--out", da.out, "output directory")->required();
    d->add_option("--set", da.overrides, "config override key=value (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (q->parsed()) return cmd_quantize(qa);
    if (a->parsed()) return cmd_analyze(aa);
    if (d->parsed()) return cmd_demo_ddpm(da);
    return 2;
}

}  // namespace segquant
