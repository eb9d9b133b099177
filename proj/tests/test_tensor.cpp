#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "segquant/tensor.hpp"

using namespace segquant;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, float scale = 1.0f) {
    Tensor t({r, c});
    for (auto& v : t.data) v = scale * static_cast<float>(rng.next_gaussian());
    return t;
}

Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

}  // namespace

TEST_CASE("tensor construction validates shape and finiteness") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0f, 2.0f}), sq_error);
    CHECK_THROWS_AS(Tensor({0, 3}), sq_error);
    CHECK_THROWS_AS(Tensor({1, 1}, {std::numeric_limits<float>::quiet_NaN()}), sq_error);
    CHECK_THROWS_AS(Tensor({1, 1}, {std::numeric_limits<float>::infinity()}), sq_error);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
}

TEST_CASE("matmul identity and annihilator") {
    Rng rng(3);
    const Tensor a = random_tensor(rng, 2, 2);
    const Tensor ia = matmul(identity(2), a);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(ia.data[i] == a.data[i]);

    const Tensor zero({2, 4});
    const Tensor az = matmul(a, zero);
    for (float v : az.data) CHECK(v == 0.0f);
}

TEST_CASE("matmul matches the naive triple-loop oracle bitwise") {
    Rng rng(11);
    const Tensor a = random_tensor(rng, 3, 4);
    const Tensor b = random_tensor(rng, 4, 2);
    const Tensor got = matmul(a, b);
    const Tensor want = oracle::naive_matmul(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.data[i] == want.data[i]);
}

TEST_CASE("matmul shape errors") {
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), sq_error);
    CHECK_THROWS_AS(matmul(Tensor({4}), Tensor({4, 2})), sq_error);
}

TEST_CASE("matmul associativity with identity is bitwise") {
    Rng rng(5);
    const Tensor a = random_tensor(rng, 3, 3);
    const Tensor b = random_tensor(rng, 3, 3);
    const Tensor lhs = matmul(matmul(a, identity(3)), b);
    const Tensor rhs = matmul(a, matmul(identity(3), b));
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs.data[i] == rhs.data[i]);
}

TEST_CASE("round_ties_away") {
    CHECK(round_ties_away(0.0) == 0);
    CHECK(round_ties_away(2.5) == 3);
    CHECK(round_ties_away(-2.5) == -3);
    CHECK(round_ties_away(-42.67) == -43);
    CHECK(round_ties_away(0.49999999) == 0);
    CHECK_THROWS_AS(round_ties_away(std::numeric_limits<double>::infinity()), sq_error);
    CHECK_THROWS_AS(round_ties_away(std::numeric_limits<double>::quiet_NaN()), sq_error);

    // odd symmetry over random finite values
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        const double x = (rng.next_uniform() - 0.5) * 2000.0;
        CHECK(round_ties_away(-x) == -round_ties_away(x));
    }
}

TEST_CASE("clip") {
    CHECK(clip(5, -128, 127) == 5);
    CHECK(clip(200, -128, 127) == 127);
    CHECK(clip(-130, -128, 127) == -128);
    CHECK_THROWS_AS(clip(0, 1, -1), sq_error);

    Rng rng(23);
    for (int i = 0; i < 1000; ++i) {
        const double x = (rng.next_uniform() - 0.5) * 100.0;
        const double once = clip(x, -3.0, 7.0);
        CHECK(clip(once, -3.0, 7.0) == once);
    }
}

TEST_CASE("gaussian determinism and shape") {
    Rng a(7), b(7);
    const Tensor ta = gaussian(a, {4, 5});
    const Tensor tb = gaussian(b, {4, 5});
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta.data[i] == tb.data[i]);

    Rng c(7);
    CHECK(gaussian(c, {2, 3}).size() == 6);
}

TEST_CASE("gaussian moments") {
    Rng rng(123);
    const std::size_t n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = rng.next_gaussian();
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.02);
    CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("rng streams are seed-stable and split streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(1);
    Rng s1 = base.split(1);
    Rng s2 = base.split(2);
    CHECK(s1.next_u64() != s2.next_u64());
}
