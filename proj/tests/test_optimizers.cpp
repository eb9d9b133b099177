#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "segquant/calibrators.hpp"
#include "segquant/calibstats.hpp"
#include "segquant/optimizers.hpp"

using namespace segquant;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, float scale = 1.0f) {
    Tensor t({r, c});
    for (auto& v : t.data) v = scale * static_cast<float>(rng.next_gaussian());
    return t;
}

SegmentPlan plan_for(std::size_t k, std::size_t n, std::vector<std::size_t> in = {},
                     bool dual = false) {
    SegmentPlan sp;
    sp.layer_id = "w";
    sp.in_segments = in.empty() ? std::vector<std::size_t>{k} : std::move(in);
    sp.out_segments = {n};
    sp.dualscale_eligible = dual;
    return sp;
}

const Scheme kW8{SchemeKind::int_sym, 8, Granularity::per_tensor};
const Scheme kA8{SchemeKind::int_sym, 8, Granularity::per_tensor};

// independent sweep reimplementation: same grid and tie rule, but evaluation
// goes through dequantize-then-matmul rather than the integer recovery path
double oracle_best_alpha(const Tensor& w, const Tensor& X, const std::vector<double>& grid,
                         const Scheme& wscheme, const Scheme& ascheme) {
    const std::size_t k = w.rows(), n = w.cols();
    std::vector<float> act_amax(k, 0.0f), w_amax(k, 0.0f);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < X.rows(); ++i)
            act_amax[j] = std::max(act_amax[j], std::fabs(X.at(i, j)));
        for (std::size_t i = 0; i < n; ++i) w_amax[j] = std::max(w_amax[j], std::fabs(w.at(j, i)));
    }
    const Tensor y_fp = matmul(X, w);
    double best_alpha = grid.front();
    double best = -1.0;
    for (double alpha : grid) {
        std::vector<float> s(k);
        for (std::size_t j = 0; j < k; ++j)
            s[j] = static_cast<float>(std::pow(std::max(act_amax[j], kScaleEps), alpha) /
                                      std::pow(std::max(w_amax[j], kScaleEps), 1.0 - alpha));
        Tensor xs = X;
        for (std::size_t i = 0; i < X.rows(); ++i)
            for (std::size_t j = 0; j < k; ++j) xs.at(i, j) /= s[j];
        Tensor ws = w;
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t i = 0; i < n; ++i) ws.at(j, i) *= s[j];
        const Tensor y_q =
            matmul(dequantize(quantize(xs, ascheme)), dequantize(quantize(ws, wscheme)));
        const double m = mse(y_q, y_fp);
        if (best < 0.0 || m < best) {
            best = m;
            best_alpha = alpha;
        }
    }
    return best_alpha;
}

}  // namespace

TEST_CASE("smooth_factors closed forms") {
    std::vector<float> act = {4.0f, 1.0f, 9.0f};
    std::vector<float> w = {1.0f, 2.0f, 4.0f};
    const auto half = smooth_factors(act, w, 0.5);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(half[j] == doctest::Approx(std::sqrt(act[j] / w[j])));

    const auto one = smooth_factors(act, w, 1.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(one[j] == doctest::Approx(act[j]));

    const auto zero = smooth_factors(act, w, 0.0);
    CHECK(zero[1] == doctest::Approx(0.5f));

    std::vector<float> short_w = {1.0f};
    CHECK_THROWS_AS(smooth_factors(act, short_w, 0.5), sq_error);
}

TEST_CASE("singleton grid picks the only alpha") {
    Rng rng(7);
    const Tensor w = random_tensor(rng, 6, 4);
    const std::vector<Tensor> inputs = {random_tensor(rng, 16, 6)};
    SmoothConfig cfg;
    cfg.alpha_grid = {0.7};
    const SmoothResult r = sweep_alpha(w, inputs, plan_for(6, 4), kW8, kA8, cfg);
    REQUIRE(r.segments.size() == 1);
    CHECK(r.segments[0].alpha == 0.7);
}

TEST_CASE("sweep argmin equals the independent oracle") {
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(500 + trial);
        const std::size_t k = 6, n = 5;
        Tensor w = random_tensor(rng, k, n);
        Tensor X = random_tensor(rng, 24, k);
        // activation outlier channel to make the sweep non-trivial
        for (std::size_t i = 0; i < X.rows(); ++i) X.at(i, 0) *= 40.0f;

        SmoothConfig cfg;  // default 0.0..1.0 step 0.1 grid
        const SmoothResult r = sweep_alpha(w, {X}, plan_for(k, n), kW8, kA8, cfg);
        const double want = oracle_best_alpha(w, X, cfg.alpha_grid, kW8, kA8);
        CHECK(r.segments[0].alpha == want);
    }
}

TEST_CASE("outlier channels pull alpha above zero and reduce the error") {
    Rng rng(11);
    const std::size_t k = 8, n = 6;
    const Tensor w = random_tensor(rng, k, n);
    Tensor X = random_tensor(rng, 32, k);
    for (std::size_t i = 0; i < X.rows(); ++i) X.at(i, 2) *= 100.0f;

    SmoothConfig cfg;
    const SmoothResult r = sweep_alpha(w, {X}, plan_for(k, n), kW8, kA8, cfg);
    CHECK(r.segments[0].alpha > 0.0);

    SmoothConfig zero_only;
    zero_only.alpha_grid = {0.0};
    const SmoothResult r0 = sweep_alpha(w, {X}, plan_for(k, n), kW8, kA8, zero_only);
    CHECK(r.segments[0].mse < r0.segments[0].mse);

    SmoothConfig one_only;
    one_only.alpha_grid = {1.0};
    const SmoothResult r1 = sweep_alpha(w, {X}, plan_for(k, n), kW8, kA8, one_only);
    CHECK(r.segments[0].mse <= r0.segments[0].mse);
    CHECK(r.segments[0].mse <= r1.segments[0].mse);
}

TEST_CASE("smoothing is neutral in full precision") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t k = 8, n = 8;
        const Tensor w = random_tensor(rng, k, n);
        const Tensor X = random_tensor(rng, 16, k);
        std::vector<float> s(k);
        for (auto& v : s) v = std::exp(static_cast<float>(rng.next_gaussian()));

        Tensor xs = X;
        for (std::size_t i = 0; i < X.rows(); ++i)
            for (std::size_t j = 0; j < k; ++j) xs.at(i, j) /= s[j];
        Tensor ws = w;
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t i = 0; i < n; ++i) ws.at(j, i) *= s[j];

        const Tensor ref = matmul(X, w);
        const Tensor got = matmul(xs, ws);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            const double d = static_cast<double>(got.data[i]) - ref.data[i];
            num += d * d;
            den += static_cast<double>(ref.data[i]) * ref.data[i];
        }
        CHECK(std::sqrt(num) <= 1e-6 * std::sqrt(den));
    }
}

TEST_CASE("per-segment sweep is no worse than whole-layer on disjoint supports") {
    Rng rng(17);
    // block-diagonal weight: each input segment feeds its own output columns
    const std::size_t k = 8, n = 8;
    Tensor w({k, n});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) w.at(i, j) = static_cast<float>(rng.next_gaussian());
    for (std::size_t i = 4; i < 8; ++i)
        for (std::size_t j = 4; j < 8; ++j)
            w.at(i, j) = 0.05f * static_cast<float>(rng.next_gaussian());
    Tensor X = random_tensor(rng, 32, k);
    for (std::size_t i = 0; i < X.rows(); ++i) X.at(i, 5) *= 60.0f;

    SmoothConfig per_seg;
    const SmoothResult rs = sweep_alpha(w, {X}, plan_for(k, n, {4, 4}), kW8, kA8, per_seg);
    SmoothConfig whole = per_seg;
    whole.per_segment = false;
    const SmoothResult rw = sweep_alpha(w, {X}, plan_for(k, n, {4, 4}), kW8, kA8, whole);

    double sum_seg = 0.0;
    for (const auto& seg : rs.segments) sum_seg += seg.mse;
    double sum_whole = 0.0;
    for (const auto& seg : rw.segments) sum_whole += seg.mse;
    CHECK(sum_seg <= sum_whole + 1e-9);
}

TEST_CASE("svd recovers low-rank matrices exactly") {
    Rng rng(19);
    const std::size_t k = 12, n = 10, r = 4;
    const Tensor a = random_tensor(rng, k, r);
    const Tensor b = random_tensor(rng, r, n);
    const Tensor w = matmul(a, b);  // rank <= 4

    LowRankConfig cfg;
    cfg.rank = static_cast<int>(r);
    const LowRankResult out = svd_lowrank(w, cfg);
    double wn = 0.0;
    for (float v : w.data) wn += static_cast<double>(v) * v;
    CHECK(out.residual_fnorm <= 1e-5 * std::sqrt(wn));
}

TEST_CASE("svd rejects invalid ranks") {
    Tensor w({6, 6});
    LowRankConfig cfg;
    cfg.rank = 0;
    CHECK_THROWS_AS(svd_lowrank(w, cfg), sq_error);
    cfg.rank = 6;
    CHECK_THROWS_AS(svd_lowrank(w, cfg), sq_error);
}

TEST_CASE("svd residual norm matches the eigen-oracle tail") {
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(700 + trial);
        const Tensor w = random_tensor(rng, 16, 16);
        LowRankConfig cfg;
        cfg.rank = 4;
        const LowRankResult out = svd_lowrank(w, cfg);
        const double want = oracle::tail_singular_norm(w, 4);
        CHECK(out.residual_fnorm == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("svd residual is orthogonal to the low-rank part") {
    Rng rng(23);
    const Tensor w = random_tensor(rng, 12, 9);
    LowRankConfig cfg;
    cfg.rank = 3;
    const LowRankResult out = svd_lowrank(w, cfg);
    const Tensor lr = matmul(out.l1, out.l2);
    double inner = 0.0, wn = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        inner += static_cast<double>(lr.data[i]) * out.residual.data[i];
        wn += static_cast<double>(w.data[i]) * w.data[i];
    }
    CHECK(std::fabs(inner) <= 1e-5 * wn);
}
