#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "echo/estimators.hpp"
#include "echo/rng.hpp"

using namespace echo;

namespace {

MatrixD gaussian_samples(int n, int d, std::uint64_t seed) {
    Rng rng(seed);
    return rng.normal_matrix<double>(n, d);
}

}  // namespace

TEST_CASE("digamma table matches reference values", "[estimators]") {
    detail::DigammaTable psi(16);
    REQUIRE(psi(1) == Catch::Approx(-0.5772156649015329).margin(1e-14));
    REQUIRE(psi(2) == Catch::Approx(0.4227843350984671).margin(1e-14));
    REQUIRE(psi(5) == Catch::Approx(1.5061176684318003).margin(1e-13));
    REQUIRE(psi(10) == Catch::Approx(2.2517525890667212).margin(1e-13));
}

TEST_CASE("unit ball volumes for small d", "[estimators]") {
    REQUIRE(std::exp(detail::log_unit_ball_volume(1)) == Catch::Approx(2.0).epsilon(1e-12));
    REQUIRE(std::exp(detail::log_unit_ball_volume(2)) ==
            Catch::Approx(std::numbers::pi).epsilon(1e-12));
    REQUIRE(std::exp(detail::log_unit_ball_volume(3)) ==
            Catch::Approx(4.0 * std::numbers::pi / 3.0).epsilon(1e-12));
}

TEST_CASE("1-d kth neighbor fast path agrees with the generic path", "[estimators]") {
    Rng rng(3);
    const MatrixD x = rng.normal_matrix<double>(500, 1);
    for (int k : {1, 3, 7}) {
        auto sq = detail::kth_nn_sq(x, k);
        std::vector<double> generic(sq.size());
        for (std::size_t i = 0; i < sq.size(); ++i) generic[i] = std::sqrt(sq[i]);
        auto fast = detail::kth_nn_sorted_1d(std::vector<double>(x.data), k);
        std::sort(generic.begin(), generic.end());
        std::sort(fast.begin(), fast.end());
        for (std::size_t i = 0; i < fast.size(); ++i)
            REQUIRE(fast[i] == Catch::Approx(generic[i]).margin(1e-12));
    }
}

TEST_CASE("entropy of standard normals", "[estimators]") {
    // d=1: H = ln sqrt(2 pi e) = 1.41894, d=2 doubles it
    const double h1 = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    REQUIRE(kl_entropy({gaussian_samples(20000, 1, 7), "g1"}, 5) ==
            Catch::Approx(h1).margin(0.03));
    REQUIRE(kl_entropy({gaussian_samples(20000, 2, 8), "g2"}, 5) ==
            Catch::Approx(2.0 * h1).margin(0.04));
}

TEST_CASE("entropy shift and scale identities", "[estimators]") {
    MatrixD x = gaussian_samples(20000, 1, 9);
    const double h = kl_entropy({x, "x"}, 5);
    MatrixD shifted = x;
    for (double& v : shifted.data) v += 4.0;
    REQUIRE(kl_entropy({shifted, "x+4"}, 5) == Catch::Approx(h).margin(0.02));
    MatrixD scaled = x;
    for (double& v : scaled.data) v *= 0.5;
    REQUIRE(kl_entropy({scaled, "x/2"}, 5) == Catch::Approx(h - std::log(2.0)).margin(0.02));
}

TEST_CASE("entropy of the unit uniform is zero", "[estimators]") {
    Rng rng(10);
    const MatrixD u = rng.uniform_matrix<double>(20000, 1, 0.0, 1.0);
    REQUIRE(kl_entropy({u, "u"}, 5) == Catch::Approx(0.0).margin(0.03));
}

TEST_CASE("entropy estimator survives duplicate samples by jittering", "[estimators]") {
    MatrixD x(200, 1, 3.0);  // all identical
    const double h = kl_entropy({x, "const"}, 3);
    REQUIRE(std::isfinite(h));
    REQUIRE(h < -10.0);  // jitter scale 1e-10 puts the entropy deep below zero
}

TEST_CASE("entropy estimator rejects bad arguments", "[estimators]") {
    const MatrixD x = gaussian_samples(50, 1, 1);
    REQUIRE_THROWS(kl_entropy({x, "x"}, 0));
    REQUIRE_THROWS(kl_entropy({x, "x"}, 50));
    MatrixD bad = x;
    bad(0, 0) = std::nan("");
    REQUIRE_THROWS(kl_entropy({bad, "nan"}, 3));
}

TEST_CASE("ksg mi is near zero for independent variables", "[estimators]") {
    const MatrixD x = gaussian_samples(5000, 1, 21);
    const MatrixD z = gaussian_samples(5000, 1, 22);
    REQUIRE(ksg_mi({x, "x"}, {z, "z"}, 5) == Catch::Approx(0.0).margin(0.04));
}

TEST_CASE("ksg mi recovers the gaussian closed form", "[estimators]") {
    // (x, rho x + sqrt(1-rho^2) y): MI = -ln(1-rho^2)/2
    const double rho = 0.8;
    Rng rng(31);
    const int n = 8000;
    MatrixD x(n, 1), z(n, 1);
    for (int i = 0; i < n; ++i) {
        const double a = rng.normal(), b = rng.normal();
        x(i, 0) = a;
        z(i, 0) = rho * a + std::sqrt(1.0 - rho * rho) * b;
    }
    const double want = -0.5 * std::log(1.0 - rho * rho);
    REQUIRE(ksg_mi({x, "x"}, {z, "z"}, 5) == Catch::Approx(want).margin(0.05));
}

TEST_CASE("ksg mi validates shapes", "[estimators]") {
    const MatrixD x = gaussian_samples(100, 1, 1);
    const MatrixD z = gaussian_samples(99, 1, 2);
    REQUIRE_THROWS(ksg_mi({x, "x"}, {z, "z"}, 3));
    REQUIRE_THROWS(ksg_mi({x, "x"}, {x, "x"}, 0));
}

TEST_CASE("energy test keeps its size under the null", "[estimators]") {
    // identical distributions: p should be roughly uniform; count small p
    int rejections = 0;
    for (int s = 0; s < 100; ++s) {
        const MatrixD a = gaussian_samples(100, 2, 1000 + 2 * s);
        const MatrixD b = gaussian_samples(100, 2, 1001 + 2 * s);
        const TestResult t = energy_distance_test({a, "a"}, {b, "b"}, 99, 77 + s);
        if (t.p_value <= 0.05) ++rejections;
    }
    REQUIRE(rejections <= 10);
}

TEST_CASE("energy test detects a mean shift", "[estimators]") {
    const MatrixD a = gaussian_samples(200, 1, 51);
    MatrixD b = gaussian_samples(200, 1, 52);
    for (double& v : b.data) v += 1.0;
    const TestResult t = energy_distance_test({a, "a"}, {b, "b"}, 999, 5);
    REQUIRE(t.p_value <= 0.002);
    REQUIRE(t.statistic > 0.0);
}

TEST_CASE("energy test early stop only strengthens p>alpha verdicts", "[estimators]") {
    const MatrixD a = gaussian_samples(150, 2, 61);
    const MatrixD b = gaussian_samples(150, 2, 62);
    const TestResult full = energy_distance_test({a, "a"}, {b, "b"}, 999, 9);
    const TestResult quick = energy_distance_test({a, "a"}, {b, "b"}, 999, 9, 0.2);
    REQUIRE(full.p_value > 0.2);
    REQUIRE(quick.p_value > 0.2);
    REQUIRE(quick.n_permutations < full.n_permutations);  // actually stopped early
}

TEST_CASE("anderson-darling holds its size and is affine invariant", "[estimators]") {
    int rejections = 0;
    for (int s = 0; s < 100; ++s) {
        const MatrixD x = gaussian_samples(100, 1, 300 + s);
        const TestResult t = anderson_darling({x, "x"}, 200, 17 + s);
        if (t.p_value <= 0.05) ++rejections;
    }
    REQUIRE(rejections >= 1);
    REQUIRE(rejections <= 13);

    const MatrixD x = gaussian_samples(500, 1, 71);
    std::vector<double> v(x.data);
    const double a0 = detail::anderson_darling_stat(v);
    for (double& w : v) w = 3.0 * w - 7.0;
    REQUIRE(detail::anderson_darling_stat(v) == Catch::Approx(a0).margin(1e-10));
}

TEST_CASE("anderson-darling rejects a uniform sample", "[estimators]") {
    Rng rng(81);
    const MatrixD u = rng.uniform_matrix<double>(200, 1, 0.0, 1.0);
    const TestResult t = anderson_darling({u, "u"}, 400, 3);
    REQUIRE(t.p_value < 0.01);
}

TEST_CASE("gaussian tc vanishes for independent columns", "[estimators]") {
    const MatrixD x = gaussian_samples(100000, 4, 91);
    REQUIRE(gaussian_tc({x, "x"}) == Catch::Approx(0.0).margin(0.005));
}

TEST_CASE("gaussian tc matches the bivariate closed form", "[estimators]") {
    const double rho = 0.6;
    Rng rng(95);
    const int n = 200000;
    MatrixD x(n, 2);
    for (int i = 0; i < n; ++i) {
        const double a = rng.normal(), b = rng.normal();
        x(i, 0) = a;
        x(i, 1) = rho * a + std::sqrt(1.0 - rho * rho) * b;
    }
    const double want = -0.5 * std::log(1.0 - rho * rho);
    const double tc = gaussian_tc({x, "x"});
    REQUIRE(tc == Catch::Approx(want).margin(0.01));
    // the alternate convention is exactly twice the standard one
    REQUIRE(gaussian_tc({x, "x"}, true) == 2.0 * tc);
}

TEST_CASE("gaussian tc rejects degenerate inputs", "[estimators]") {
    MatrixD dup(500, 2);
    Rng rng(97);
    for (int i = 0; i < 500; ++i) {
        dup(i, 0) = rng.normal();
        dup(i, 1) = dup(i, 0);  // perfectly correlated
    }
    REQUIRE_THROWS_WITH(gaussian_tc({dup, "dup"}),
                        Catch::Matchers::ContainsSubstring("singular"));
    MatrixD flat(100, 2);
    for (int i = 0; i < 100; ++i) flat(i, 0) = rng.normal();  // column 1 all zero
    REQUIRE_THROWS_WITH(gaussian_tc({flat, "flat"}),
                        Catch::Matchers::ContainsSubstring("variance"));
}
