#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "segquant/calibstats.hpp"
#include "segquant/tensor.hpp"

using namespace segquant;

TEST_CASE("observe tracks running extremes") {
    CalibStats s;
    s.observe(Tensor({1, 2}, {-1.0f, 2.0f}));
    s.observe(Tensor({1, 2}, {-3.0f, 1.0f}));
    CHECK(s.tensor_min() == -3.0f);
    CHECK(s.tensor_max() == 2.0f);
    CHECK(s.amax() == 3.0f);
    CHECK(s.samples == 2);
    CHECK_THROWS_AS(s.observe(Tensor({1, 3})), sq_error);
}

TEST_CASE("polarity counting excludes zeros") {
    CalibStats s;
    s.observe(Tensor({4, 2}, {-1.0f, -1.0f, 0.0f, -2.0f, 1.0f, -3.0f, 1.0f, -0.5f}));
    // channel 0: [-1, 0, 1, 1] -> neg 0.25, pos 0.5
    CHECK(s.neg_ratio(0) == doctest::Approx(0.25));
    CHECK(s.pos_ratio(0) == doctest::Approx(0.5));
    // channel 1: all negative
    CHECK(s.neg_ratio(1) == doctest::Approx(1.0));
    CHECK(s.pos_ratio(1) == doctest::Approx(0.0));

    // neg + pos + zero fractions account for every sample
    const double zero_frac0 = 1.0 - s.neg_ratio(0) - s.pos_ratio(0);
    CHECK(zero_frac0 == doctest::Approx(0.25));
}

TEST_CASE("polarity table reproduces the reporting row shape") {
    // 1536 channels where 955 of 1000 samples are negative and 21 positive
    const std::size_t channels = 1536, rows = 1000;
    Tensor batch({rows, channels});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < channels; ++c)
            batch.at(i, c) = i < 955 ? -0.2f : (i < 976 ? 0.3f : 0.0f);
    CalibStats s;
    s.observe(batch);
    const PolarityRow row = polarity_row(s);
    CHECK(row.channels == 1536);
    CHECK(row.mean_neg == doctest::Approx(0.955));
    CHECK(row.mean_pos == doctest::Approx(0.021));
}

TEST_CASE("polarity table on all-zero input") {
    CalibStats s;
    s.observe(Tensor({4, 3}));
    const PolarityRow row = polarity_row(s);
    CHECK(row.mean_neg == 0.0);
    CHECK(row.mean_pos == 0.0);

    CalibStats empty;
    CHECK_THROWS_AS(polarity_row(empty), sq_error);
}

TEST_CASE("merge equals sequential observation; order does not matter") {
    Rng rng(71);
    std::vector<Tensor> batches;
    for (int b = 0; b < 4; ++b) batches.push_back(gaussian(rng, {8, 5}));

    CalibStats seq;
    for (const Tensor& t : batches) seq.observe(t);

    CalibStats a, b;
    a.observe(batches[2]);
    a.observe(batches[0]);
    b.observe(batches[3]);
    b.observe(batches[1]);
    const CalibStats merged = CalibStats::merge(a, b);

    CHECK(merged.samples == seq.samples);
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(merged.ch_min[c] == seq.ch_min[c]);
        CHECK(merged.ch_max[c] == seq.ch_max[c]);
        CHECK(merged.neg_count[c] == seq.neg_count[c]);
        CHECK(merged.pos_count[c] == seq.pos_count[c]);
    }
}

TEST_CASE("frobenius and mse") {
    Tensor a({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(frobenius(a, a) == 0.0);
    CHECK(mse(a, a) == 0.0);

    Tensor b({2, 2}, {2.0f, 3.0f, 4.0f, 5.0f});  // all-ones difference
    CHECK(frobenius(a, b) == doctest::Approx(2.0));
    CHECK(mse(a, b) == doctest::Approx(1.0));

    CHECK_THROWS_AS(frobenius(a, Tensor({1, 4})), sq_error);

    // naive loop oracle on random data
    Rng rng(73);
    const Tensor x = gaussian(rng, {7, 5});
    const Tensor y = gaussian(rng, {7, 5});
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x.data[i]) - y.data[i];
        acc += d * d;
    }
    CHECK(frobenius(x, y) == doctest::Approx(std::sqrt(acc)).epsilon(1e-7));
    CHECK(mse(x, y) == doctest::Approx(acc / x.size()).epsilon(1e-7));

    // frobenius^2 == mse * count
    CHECK(frobenius(x, y) * frobenius(x, y) ==
          doctest::Approx(mse(x, y) * x.size()).epsilon(1e-6));
}

TEST_CASE("psnr") {
    Tensor a({2, 2}, {0.0f, 0.5f, 1.0f, 0.25f});
    CHECK(std::isinf(psnr(a, a, 1.0)));

    Tensor b = a;
    for (auto& v : b.data) v += 0.01f;  // constant offset far below the range
    CHECK(psnr(a, b, 1.0) == doctest::Approx(10.0 * std::log10(1.0 / (0.01 * 0.01))).epsilon(1e-3));
    CHECK_THROWS_AS(psnr(a, b, 0.0), sq_error);
}

TEST_CASE("ssim") {
    Rng rng(79);
    const Tensor a = gaussian(rng, {12, 12});
    CHECK(ssim(a, a) == doctest::Approx(1.0));

    // direct-formula oracle on a single full-size window
    const Tensor x = gaussian(rng, {8, 8});
    Tensor y = gaussian(rng, {8, 8});
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = 0.8f * x.data[i] + 0.2f * y.data[i];
    const double n = 64.0;
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < 64; ++i) {
        sa += x.data[i];
        sb += y.data[i];
        saa += static_cast<double>(x.data[i]) * x.data[i];
        sbb += static_cast<double>(y.data[i]) * y.data[i];
        sab += static_cast<double>(x.data[i]) * y.data[i];
    }
    const double ma = sa / n, mb = sb / n;
    const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
    const double c1 = 0.0001, c2 = 0.0009;  // k1=0.01, k2=0.03, range=1
    const double want =
        ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    CHECK(ssim(x, y, 8, 0.01, 0.03, 1.0) == doctest::Approx(want).epsilon(1e-4));
    CHECK(ssim(x, y) >= -1.0);
    CHECK(ssim(x, y) <= 1.0);
}
