#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "segquant/calibrators.hpp"
#include "segquant/engine.hpp"

using namespace segquant;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, float scale = 1.0f) {
    Tensor t({r, c});
    for (auto& v : t.data) v = scale * static_cast<float>(rng.next_gaussian());
    return t;
}

// calibration activations with correlated channels (realistic covariance)
std::vector<Tensor> correlated_inputs(Rng& rng, std::size_t batches, std::size_t rows,
                                      std::size_t k) {
    const Tensor mix = random_tensor(rng, k, k);
    std::vector<Tensor> out;
    for (std::size_t b = 0; b < batches; ++b)
        out.push_back(matmul(random_tensor(rng, rows, k), mix));
    return out;
}

SegmentPlan plan_for(const std::string& id, std::size_t k, std::size_t n,
                     std::vector<std::size_t> in = {}, std::vector<std::size_t> out = {},
                     bool dual = false) {
    SegmentPlan sp;
    sp.layer_id = id;
    sp.in_segments = in.empty() ? std::vector<std::size_t>{k} : std::move(in);
    sp.out_segments = out.empty() ? std::vector<std::size_t>{n} : std::move(out);
    sp.dualscale_eligible = dual;
    return sp;
}

double layer_mse(const Tensor& w, const std::vector<Tensor>& inputs, const QuantizedLayer& ql) {
    double acc = 0.0;
    std::size_t count = 0;
    for (const Tensor& x : inputs) {
        const Tensor y_fp = matmul(x, w);
        const Tensor y_q = quantized_layer_forward(ql, x);
        for (std::size_t i = 0; i < y_fp.size(); ++i) {
            const double d = static_cast<double>(y_fp.data[i]) - y_q.data[i];
            acc += d * d;
        }
        count += y_fp.size();
    }
    return acc / static_cast<double>(count);
}

const Scheme kW8{SchemeKind::int_sym, 8, Granularity::per_tensor};
const Scheme kA8{SchemeKind::int_sym, 8, Granularity::per_tensor};

}  // namespace

TEST_CASE("amax calibration: singleton plan gives amax/127 weight scale") {
    Rng rng(7);
    const Tensor w = random_tensor(rng, 6, 4);
    float amax = 0.0f;
    for (float v : w.data) amax = std::max(amax, std::fabs(v));

    CalibStats stats;
    stats.observe(random_tensor(rng, 8, 6));
    const QuantizedLayer ql = amax_calibrate(w, nullptr, stats, plan_for("l", 6, 4), kW8, kA8);
    REQUIRE(ql.weight.params.size() == 1);
    CHECK(ql.weight.params[0].scale == doctest::Approx(amax / 127.0f));
    CHECK(ql.method == "amax");
    REQUIRE(ql.act_params.size() == 1);
    CHECK(ql.act_params[0].scale == doctest::Approx(stats.amax() / 127.0f));
}

TEST_CASE("amax calibration: six output segments carry six independent scales") {
    Rng rng(11);
    const std::size_t h = 4;
    Tensor w({h, 6 * h});
    const float mags[6] = {0.05f, 1.0f, 0.1f, 2.0f, 0.5f, 4.0f};
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < 6 * h; ++j)
            w.at(i, j) = mags[j / h] * static_cast<float>(rng.next_gaussian());

    CalibStats stats;
    stats.observe(random_tensor(rng, 8, h));
    const QuantizedLayer ql = amax_calibrate(
        w, nullptr, stats, plan_for("ada", h, 6 * h, {}, std::vector<std::size_t>(6, h)), kW8, kA8);
    REQUIRE(ql.weight.params.size() == 6);
    std::set<float> scales;
    for (const QParams& p : ql.weight.params) scales.insert(p.scale);
    CHECK(scales.size() == 6);
}

TEST_CASE("dualscale-eligible layers get dual activation params from stats") {
    Rng rng(13);
    const Tensor w = random_tensor(rng, 4, 4);
    CalibStats stats;
    Tensor acts({8, 4});
    for (auto& v : acts.data) {
        const float z = static_cast<float>(rng.next_gaussian());
        v = z / (1.0f + std::exp(-z));
    }
    stats.observe(acts);
    const QuantizedLayer ql =
        amax_calibrate(w, nullptr, stats, plan_for("l", 4, 4, {}, {}, true), kW8, kA8);
    CHECK(ql.act_dual);
    CHECK(ql.act_scheme.kind == SchemeKind::dual_scale);
    REQUIRE(ql.act_params.size() == 1);
    CHECK(ql.act_params[0].scale == doctest::Approx(stats.tensor_max() / 127.0f));
    CHECK(ql.act_params[0].scale_neg == doctest::Approx(-stats.tensor_min() / 128.0f));
}

TEST_CASE("missing stats are rejected") {
    Rng rng(17);
    const Tensor w = random_tensor(rng, 4, 4);
    CalibStats empty;
    CHECK_THROWS_AS(amax_calibrate(w, nullptr, empty, plan_for("l", 4, 4), kW8, kA8), sq_error);
}

TEST_CASE("gptq with k=1 equals round-to-nearest") {
    Rng rng(19);
    const Tensor w = random_tensor(rng, 1, 6);
    const auto inputs = correlated_inputs(rng, 2, 16, 1);
    CalibStats stats;
    for (const Tensor& x : inputs) stats.observe(x);

    const QuantizedLayer g =
        gptq_calibrate(w, nullptr, inputs, plan_for("l", 1, 6), kW8, kA8, CalibConfig{});
    const QuantizedLayer a = amax_calibrate(w, nullptr, stats, plan_for("l", 1, 6), kW8, kA8);
    CHECK(g.method == "gptq");
    CHECK_FALSE(g.gptq_fallback);
    for (std::size_t i = 0; i < w.size(); ++i)
        CHECK(g.weight.codes.data[i] == a.weight.codes.data[i]);
}

TEST_CASE("gptq is non-inferior to round-to-nearest on the calibration set") {
    int wins = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(1000 + trial);
        const Tensor w = random_tensor(rng, 8, 8);
        const auto inputs = correlated_inputs(rng, 1, 64, 8);
        CalibStats stats;
        for (const Tensor& x : inputs) stats.observe(x);

        const QuantizedLayer g =
            gptq_calibrate(w, nullptr, inputs, plan_for("l", 8, 8), kW8, kA8, CalibConfig{});
        const QuantizedLayer a = amax_calibrate(w, nullptr, stats, plan_for("l", 8, 8), kW8, kA8);
        if (layer_mse(w, inputs, g) <= layer_mse(w, inputs, a)) ++wins;
    }
    CHECK(wins >= 19);
}

TEST_CASE("huge damping degenerates gptq to round-to-nearest") {
    Rng rng(23);
    const Tensor w = random_tensor(rng, 8, 8);
    const auto inputs = correlated_inputs(rng, 1, 32, 8);
    CalibStats stats;
    for (const Tensor& x : inputs) stats.observe(x);

    CalibConfig cfg;
    cfg.gptq_damping = 1e6;
    const QuantizedLayer g = gptq_calibrate(w, nullptr, inputs, plan_for("l", 8, 8), kW8, kA8, cfg);
    const QuantizedLayer a = amax_calibrate(w, nullptr, stats, plan_for("l", 8, 8), kW8, kA8);
    const Tensor dg = dequantize(g.weight);
    const Tensor da = dequantize(a.weight);
    for (std::size_t i = 0; i < dg.size(); ++i)
        CHECK(std::fabs(dg.data[i] - da.data[i]) <= 1e-5f);
}

TEST_CASE("output segments calibrate independently") {
    Rng rng(29);
    const std::size_t k = 8, n = 8;
    const Tensor w = random_tensor(rng, k, n);
    const auto inputs = correlated_inputs(rng, 1, 32, k);
    const std::vector<std::size_t> segs = {4, 4};

    const QuantizedLayer base =
        gptq_calibrate(w, nullptr, inputs, plan_for("l", k, n, {}, segs), kW8, kA8, CalibConfig{});

    // permute the two output segments, calibrate, permute back
    Tensor wp({k, n});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < n; ++j) wp.at(i, j) = w.at(i, (j + 4) % n);
    const QuantizedLayer perm =
        gptq_calibrate(wp, nullptr, inputs, plan_for("l", k, n, {}, segs), kW8, kA8, CalibConfig{});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < n; ++j)
            CHECK(perm.weight.codes.at(i, (j + 4) % n) == base.weight.codes.at(i, j));
}

TEST_CASE("segmented gptq beats unsegmented on magnitude-mismatched segments") {
    int wins = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(3000 + trial);
        const std::size_t k = 8, n = 8;
        Tensor w({k, n});
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < n; ++j)
                w.at(i, j) = (j < 4 ? 12.0f : 0.3f) * static_cast<float>(rng.next_gaussian());
        const auto inputs = correlated_inputs(rng, 1, 32, k);

        const QuantizedLayer seg = gptq_calibrate(w, nullptr, inputs, plan_for("l", k, n, {}, {4, 4}),
                                                  kW8, kA8, CalibConfig{});
        const QuantizedLayer mono =
            gptq_calibrate(w, nullptr, inputs, plan_for("l", k, n), kW8, kA8, CalibConfig{});
        if (layer_mse(w, inputs, seg) < layer_mse(w, inputs, mono)) ++wins;
    }
    CHECK(wins == 10);
}

TEST_CASE("gptq falls back to amax when the Hessian is unusable") {
    Rng rng(31);
    const Tensor w = random_tensor(rng, 4, 4);
    std::vector<Tensor> zero_inputs = {Tensor({8, 4})};  // all-zero calibration data
    const QuantizedLayer g =
        gptq_calibrate(w, nullptr, zero_inputs, plan_for("l", 4, 4), kW8, kA8, CalibConfig{});
    CHECK(g.method == "gptq");
    CHECK(g.gptq_fallback);
    // fallback still produced in-range codes
    for (std::int32_t c : g.weight.codes.data) {
        CHECK(c >= -127);
        CHECK(c <= 127);
    }
}

TEST_CASE("both calibrators emit codes within range and finite dequants") {
    Rng rng(37);
    const Tensor w = random_tensor(rng, 6, 10, 5.0f);
    const auto inputs = correlated_inputs(rng, 2, 16, 6);
    CalibStats stats;
    for (const Tensor& x : inputs) stats.observe(x);
    const Scheme w4{SchemeKind::int_sym, 4, Granularity::per_channel};

    for (const QuantizedLayer& ql :
         {amax_calibrate(w, nullptr, stats, plan_for("l", 6, 10), w4, kA8),
          gptq_calibrate(w, nullptr, inputs, plan_for("l", 6, 10), w4, kA8, CalibConfig{})}) {
        for (std::int32_t c : ql.weight.codes.data) {
            CHECK(c >= -7);
            CHECK(c <= 7);
        }
        for (float v : dequantize(ql.weight).data) CHECK(std::isfinite(v));
    }
}
