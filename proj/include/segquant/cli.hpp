#pragma once

#include <string>
#include <vector>

#include "segquant/engine.hpp"

namespace segquant {

/// demo-ddpm knobs, configured under the "demo.*" keys.
struct DemoConfig {
    std::size_t timesteps = 10;
    std::size_t hidden = 16;
    std::size_t tokens = 16;
    std::size_t blocks = 1;
    std::uint64_t seed = 7;
    std::size_t calib_batches = 4;
    bool branch_curves = false;  // also emit time-only / latent-only curves
};

struct AppConfig {
    EngineConfig engine;
    DemoConfig demo;
};

struct ConfigKey {
    const char* key;
    const char* type;
    const char* desc;
};

/// Every accepted config key (dotted), one source of truth for the parser,
/// --help, and docs/CONFIG.md.
const std::vector<ConfigKey>& config_keys();

/// Human-readable key listing embedded in --help.
std::string config_help_text();

/// Parses a config file (JSON, nested; keys per config_keys()) and applies
/// "key=value" overrides. Unknown keys are rejected. An empty path yields
/// defaults.
AppConfig load_app_config(const std::string& path, const std::vector<std::string>& overrides);

struct QuantizeArgs {
    std::string graph, weights, calib, config, out;
    std::vector<std::string> overrides;
};

struct AnalyzeArgs {
    std::string graph, weights, calib;
    std::string out = "stats.json";
};

struct DemoArgs {
    std::string config, out;
    std::vector<std::string> overrides;
};

// Exit codes: 0 ok, 2 parse, 3 validation, 4 numeric, 5 io.
int cmd_quantize(const QuantizeArgs& args);
int cmd_analyze(const AnalyzeArgs& args);
int cmd_demo_ddpm(const DemoArgs& args);

int run_cli(int argc, const char* const* argv);

}  // namespace segquant
