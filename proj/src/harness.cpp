#include "segquant/harness.hpp"

#include <charconv>
#include <cmath>

#include "bytes.hpp"
#include "segquant/calibstats.hpp"

namespace segquant {

NoiseSchedule NoiseSchedule::linear(std::size_t T, double beta_start, double beta_end) {
    if (T < 1)
        throw_validation("bad_config", "schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw_validation("bad_config", "betas must satisfy 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    double abar = 1.0;
    for (std::size_t t = 1; t <= T; ++t) {
        const double b = T == 1 ? beta_start
                                : beta_start + (beta_end - beta_start) *
                                                   static_cast<double>(t - 1) /
                                                   static_cast<double>(T - 1);
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        abar *= 1.0 - b;
        s.alpha_bar.push_back(abar);
    }
    return s;
}

namespace {

void check_t(std::size_t t, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T)
        throw_validation("bad_range", "timestep out of range");
}

}  // namespace

Tensor ddpm_forward(const Tensor& x0, std::size_t t, const NoiseSchedule& sched,
                    const Tensor& noise) {
    check_t(t, sched);
    if (!x0.same_shape(noise))
        throw_validation("shape_mismatch", "noise shape must match x0");
    const float a = static_cast<float>(std::sqrt(sched.alpha_bar[t - 1]));
    const float b = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar[t - 1]));
    Tensor xt = x0;
    for (std::size_t i = 0; i < xt.size(); ++i) xt.data[i] = a * x0.data[i] + b * noise.data[i];
    return xt;
}

Tensor ddpm_reverse_step(const Tensor& x_t, const Tensor& eps_hat, std::size_t t,
                         const NoiseSchedule& sched, const Tensor* z) {
    check_t(t, sched);
    if (!x_t.same_shape(eps_hat))
        throw_validation("shape_mismatch", "eps shape must match x_t");
    if (z && !x_t.same_shape(*z))
        throw_validation("shape_mismatch", "z shape must match x_t");
    const float inv_sqrt_a = static_cast<float>(1.0 / std::sqrt(sched.alpha[t - 1]));
    const float coef =
        static_cast<float>(sched.beta[t - 1] / std::sqrt(1.0 - sched.alpha_bar[t - 1]));
    const float sigma = static_cast<float>(std::sqrt(sched.beta[t - 1]));
    Tensor prev = x_t;
    for (std::size_t i = 0; i < prev.size(); ++i) {
        float v = inv_sqrt_a * (x_t.data[i] - coef * eps_hat.data[i]);
        if (z) v += sigma * z->data[i];
        prev.data[i] = v;
    }
    return prev;
}

Tensor sinusoidal_time_embedding(std::size_t t, std::size_t dim) {
    if (dim < 2 || dim % 2 != 0)
        throw_validation("bad_config", "embedding dim must be even and >= 2");
    Tensor e({1, dim});
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e.data[i] = static_cast<float>(std::sin(static_cast<double>(t) * freq));
        e.data[half + i] = static_cast<float>(std::cos(static_cast<double>(t) * freq));
    }
    return e;
}

namespace {

// gaussian weight scaled per column block; `mags` cycles over blocks
Tensor seg_weight(Rng& rng, std::size_t k, std::size_t n, const std::vector<std::size_t>& col_widths,
                  const std::vector<float>& mags, float base) {
    Tensor w({k, n});
    std::size_t c0 = 0;
    for (std::size_t b = 0; b < col_widths.size(); ++b) {
        const float m = base * mags[b % mags.size()];
        for (std::size_t j = c0; j < c0 + col_widths[b]; ++j)
            for (std::size_t i = 0; i < k; ++i)
                w.at(i, j) = m * static_cast<float>(rng.next_gaussian());
        c0 += col_widths[b];
    }
    return w;
}

Tensor row_seg_weight(Rng& rng, std::size_t k, std::size_t n,
                      const std::vector<std::size_t>& row_widths, const std::vector<float>& mags,
                      float base) {
    Tensor w({k, n});
    std::size_t r0 = 0;
    for (std::size_t b = 0; b < row_widths.size(); ++b) {
        const float m = base * mags[b % mags.size()];
        for (std::size_t i = r0; i < r0 + row_widths[b]; ++i)
            for (std::size_t j = 0; j < n; ++j)
                w.at(i, j) = m * static_cast<float>(rng.next_gaussian());
        r0 += row_widths[b];
    }
    return w;
}

// amplify the rows fed by the predominantly-negative channels and damp the
// spike rows: the layer's output then hinges on the narrow negative band,
// which is what dual-scale protects
void amplify_negative_rows(Tensor& w, std::size_t spike_every, float neg_mag, float spike_mag) {
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const float m = (i % spike_every == spike_every - 1) ? spike_mag : neg_mag;
        for (std::size_t j = 0; j < w.cols(); ++j) w.at(i, j) *= m;
    }
}

Tensor small_bias(Rng& rng, std::size_t n) {
    Tensor b({n});
    for (auto& v : b.data) v = 0.01f * static_cast<float>(rng.next_gaussian());
    return b;
}

// pre-activation bias pattern: most channels sit well below zero so the
// activation emits its narrow negative band, while a few spike channels
// stretch the positive range (the polarity profile dual-scale targets)
Tensor skewed_bias(Rng& rng, std::size_t n, float neg, float pos, std::size_t spike_every) {
    Tensor b({n});
    for (std::size_t j = 0; j < n; ++j) {
        const float base = (j % spike_every == spike_every - 1) ? pos : neg;
        b.data[j] = base + 0.1f * static_cast<float>(rng.next_gaussian());
    }
    return b;
}

}  // namespace

ToyModel build_toy_dit(const ToyModelSpec& spec) {
    if (spec.hidden < 4 || spec.hidden % 2 != 0)
        throw_validation("bad_config", "hidden width must be even and >= 4");
    if (spec.tokens < 1 || spec.blocks < 1)
        throw_validation("bad_config", "tokens and blocks must be positive");
    const std::size_t h = spec.hidden;

    ToyModel tm;
    Graph& g = tm.graph;
    Rng rng(spec.seed);
    const float base = 1.0f / std::sqrt(static_cast<float>(h));

    auto add_node = [&](Node n) { g.nodes.push_back(std::move(n)); };
    auto wire = [&](const std::string& src, int sp, const std::string& dst, int dp) {
        g.edges.push_back(Edge{src, sp, dst, dp});
    };
    auto linear = [&](const std::string& id, const Tensor& w, bool bias) {
        Node n;
        n.id = id;
        n.kind = NodeKind::linear;
        n.weight = id + ".w";
        g.weights.emplace(n.weight, w);
        if (bias) {
            n.bias = id + ".b";
            g.weights.emplace(n.bias, small_bias(rng, w.cols()));
        }
        add_node(std::move(n));
    };

    // inputs
    {
        Node in;
        in.id = "latent";
        in.kind = NodeKind::input;
        in.width = h;
        add_node(in);
        Node te;
        te.id = "temb";
        te.kind = NodeKind::input;
        te.width = h;
        add_node(te);
        g.inputs = {"latent", "temb"};
    }

    // time branch: temb -> linear -> silu -> linear(6h) -> chunk(6)
    linear("t_fc1", seg_weight(rng, h, h, {h}, {1.0f}, base), false);
    {
        Node& n = g.nodes.back();
        n.bias = "t_fc1.b";
        g.weights.emplace("t_fc1.b", skewed_bias(rng, h, -2.0f, 5.0f, h / 2));
    }
    wire("temb", 0, "t_fc1", 0);
    {
        Node a;
        a.id = "t_act";
        a.kind = NodeKind::activation;
        a.act = ActKind::silu;
        add_node(a);
        wire("t_fc1", 0, "t_act", 0);
    }
    // per-segment magnitude spread across the six modulation outputs
    // (shift1, scale1, gate1, shift2, scale2, gate2); the gates get the larger
    // magnitudes so the time branch drives the trunk multiplicatively
    {
        Tensor w = seg_weight(rng, h, 6 * h, std::vector<std::size_t>(6, h),
                              {0.25f, 1.0f, 2.0f, 0.5f, 0.75f, 1.5f}, base);
        amplify_negative_rows(w, h / 2, 3.0f, 0.15f);
        linear("t_fc2", w, true);
    }
    wire("t_act", 0, "t_fc2", 0);
    {
        Node c;
        c.id = "t_mods";
        c.kind = NodeKind::chunk;
        c.count = 6;
        add_node(c);
        wire("t_fc2", 0, "t_mods", 0);
    }
    tm.time_layers = {"t_fc1", "t_fc2"};

    // transformer-ish blocks; every block consumes the same six modulations
    std::string trunk = "latent";
    for (std::size_t b = 0; b < spec.blocks; ++b) {
        const std::string p = "blk" + std::to_string(b) + "_";
        auto node = [&](const std::string& name, NodeKind kind) {
            Node n;
            n.id = p + name;
            n.kind = kind;
            add_node(n);
            return n.id;
        };

        const std::string ln1 = node("ln1", NodeKind::layernorm);
        wire(trunk, 0, ln1, 0);
        const std::string mod1 = node("mod1", NodeKind::scale_shift);
        wire(ln1, 0, mod1, 0);
        wire("t_mods", 1, mod1, 1);
        wire("t_mods", 0, mod1, 2);
        linear(p + "mix", seg_weight(rng, h, h, {h}, {1.0f}, base), true);
        wire(mod1, 0, p + "mix", 0);
        const std::string gate1 = node("gate1", NodeKind::mul);
        wire(p + "mix", 0, gate1, 0);
        wire("t_mods", 2, gate1, 1);
        const std::string res1 = node("res1", NodeKind::add);
        wire(trunk, 0, res1, 0);
        wire(gate1, 0, res1, 1);

        const std::string ln2 = node("ln2", NodeKind::layernorm);
        wire(res1, 0, ln2, 0);
        const std::string mod2 = node("mod2", NodeKind::scale_shift);
        wire(ln2, 0, mod2, 0);
        wire("t_mods", 4, mod2, 1);
        wire("t_mods", 3, mod2, 2);
        linear(p + "ffn_fc1", seg_weight(rng, h, 4 * h, {4 * h}, {1.0f}, base), false);
        {
            Node& fn = g.nodes.back();
            fn.bias = p + "ffn_fc1.b";
            g.weights.emplace(fn.bias, skewed_bias(rng, 4 * h, -1.5f, 4.0f, 8));
        }
        wire(mod2, 0, p + "ffn_fc1", 0);
        const std::string act = node("ffn_act", NodeKind::activation);
        g.nodes.back().act = ActKind::gelu;
        wire(p + "ffn_fc1", 0, act, 0);
        {
            Tensor w = seg_weight(rng, 4 * h, h, {h}, {1.0f}, base);
            amplify_negative_rows(w, 8, 2.5f, 0.2f);
            linear(p + "ffn_fc2", w, true);
        }
        wire(act, 0, p + "ffn_fc2", 0);
        const std::string gate2 = node("gate2", NodeKind::mul);
        wire(p + "ffn_fc2", 0, gate2, 0);
        wire("t_mods", 5, gate2, 1);
        const std::string res2 = node("res2", NodeKind::add);
        wire(res1, 0, res2, 0);
        wire(gate2, 0, res2, 1);

        tm.latent_layers.push_back(p + "mix");
        tm.latent_layers.push_back(p + "ffn_fc1");
        tm.latent_layers.push_back(p + "ffn_fc2");
        trunk = res2;
    }

    // concat-fed projection: two streams of widths 4 and 12
    linear("side_a", seg_weight(rng, h, 4, {4}, {3.0f}, base), false);
    wire(trunk, 0, "side_a", 0);
    linear("side_b", seg_weight(rng, h, 12, {12}, {0.1f}, base), false);
    wire(trunk, 0, "side_b", 0);
    {
        Node c;
        c.id = "side_cat";
        c.kind = NodeKind::concat;
        add_node(c);
        wire("side_a", 0, "side_cat", 0);
        wire("side_b", 0, "side_cat", 1);
    }
    linear("cat_proj", row_seg_weight(rng, 16, h, {4, 12}, {3.0f, 0.1f}, base), true);
    wire("side_cat", 0, "cat_proj", 0);
    {
        Node a;
        a.id = "res_cat";
        a.kind = NodeKind::add;
        add_node(a);
        wire(trunk, 0, "res_cat", 0);
        wire("cat_proj", 0, "res_cat", 1);
    }

    // relu side path; its act-to-linear pair must stay ineligible
    linear("relu_fc", seg_weight(rng, h, h, {h}, {1.0f}, base), true);
    wire("res_cat", 0, "relu_fc", 0);
    {
        Node a;
        a.id = "relu_act";
        a.kind = NodeKind::activation;
        a.act = ActKind::relu;
        add_node(a);
        wire("relu_fc", 0, "relu_act", 0);
    }
    linear("relu_proj", seg_weight(rng, h, h, {h}, {1.0f}, base), true);
    wire("relu_act", 0, "relu_proj", 0);
    {
        Node a;
        a.id = "res_relu";
        a.kind = NodeKind::add;
        add_node(a);
        wire("res_cat", 0, "res_relu", 0);
        wire("relu_proj", 0, "res_relu", 1);
    }

    // noise prediction head
    linear("head", seg_weight(rng, h, h, {h}, {1.0f}, base), true);
    wire("res_relu", 0, "head", 0);
    {
        Node o;
        o.id = "eps_out";
        o.kind = NodeKind::output;
        add_node(o);
        wire("head", 0, "eps_out", 0);
        g.outputs = {"eps_out"};
    }

    tm.latent_layers.push_back("side_a");
    tm.latent_layers.push_back("side_b");
    tm.latent_layers.push_back("cat_proj");
    tm.latent_layers.push_back("relu_fc");
    tm.latent_layers.push_back("relu_proj");
    tm.latent_layers.push_back("head");

    validate(g);
    return tm;
}

std::vector<std::pair<std::size_t, double>> timestep_error_curve(const Graph& g,
                                                                 const QuantizedModel& model,
                                                                 const NoiseSchedule& sched,
                                                                 const Tensor& x_T) {
    const std::size_t h = g.node("temb").width;
    std::vector<std::pair<std::size_t, double>> curve;
    Tensor x_fp = x_T, x_q = x_T;
    for (std::size_t t = sched.T; t >= 1; --t) {
        const Tensor temb = sinusoidal_time_embedding(t, h);
        const Bindings fp_in = {{"latent", x_fp}, {"temb", temb}};
        const Bindings q_in = {{"latent", x_q}, {"temb", temb}};
        const Tensor eps_fp = execute(g, fp_in).begin()->second;
        const Tensor eps_q = execute_quantized(g, model, q_in).begin()->second;
        curve.emplace_back(t, frobenius(eps_fp, eps_q));
        x_fp = ddpm_reverse_step(x_fp, eps_fp, t, sched, nullptr);
        x_q = ddpm_reverse_step(x_q, eps_q, t, sched, nullptr);
    }
    return curve;
}

void write_curve_csv(const std::vector<std::pair<std::size_t, double>>& curve,
                     const std::string& path) {
    std::string out = "t,frobenius\n";
    char buf[64];
    for (const auto& [t, f] : curve) {
        out += std::to_string(t);
        out += ',';
        auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), f);
        if (ec != std::errc())
            throw_numeric("format", "cannot format curve value");
        out.append(buf, end);
        out += '\n';
    }
    detail::write_file(path, out);
}

void save_calib(const std::vector<Bindings>& batches, const std::string& path) {
    std::map<std::string, Tensor> flat;
    for (std::size_t b = 0; b < batches.size(); ++b)
        for (const auto& [name, t] : batches[b])
            flat.emplace(std::to_string(b) + "/" + name, t);
    save_weights(flat, path);
}

std::vector<Bindings> load_calib(const std::string& path) {
    std::map<std::string, Tensor> flat = load_weights(path);
    std::map<std::size_t, Bindings> grouped;
    for (auto& [key, t] : flat) {
        const std::size_t slash = key.find('/');
        if (slash == std::string::npos || slash == 0)
            throw_parse("parse_failure", path + ": calib entry '" + key + "' lacks batch prefix");
        std::size_t batch = 0;
        const auto [p, ec] = std::from_chars(key.data(), key.data() + slash, batch);
        if (ec != std::errc() || p != key.data() + slash)
            throw_parse("parse_failure", path + ": bad batch index in '" + key + "'");
        grouped[batch].emplace(key.substr(slash + 1), std::move(t));
    }
    std::vector<Bindings> batches;
    for (auto& [idx, b] : grouped) batches.push_back(std::move(b));
    return batches;
}

}  // namespace segquant
