#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "echo/matrix.hpp"
#include "echo/rng.hpp"

using namespace echo;

TEST_CASE("matrix basics", "[matrix]") {
    MatrixD a(2, 3);
    REQUIRE(a.rows == 2);
    REQUIRE(a.cols == 3);
    for (double v : a.data) REQUIRE(v == 0.0);
    a(1, 2) = 5.0;
    REQUIRE(a.row(1)[2] == 5.0);
    REQUIRE(a.all_finite());
    a(0, 0) = std::nan("");
    REQUIRE_FALSE(a.all_finite());
}

TEST_CASE("matmul against a hand example", "[matrix]") {
    MatrixD a(2, 2), b(2, 2);
    a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;
    b(0, 0) = 5; b(0, 1) = 6; b(1, 0) = 7; b(1, 1) = 8;
    const MatrixD c = matmul(a, b);
    REQUIRE(c(0, 0) == 19.0);
    REQUIRE(c(0, 1) == 22.0);
    REQUIRE(c(1, 0) == 43.0);
    REQUIRE(c(1, 1) == 50.0);
}

TEST_CASE("matmul_tn and matmul_nt match explicit transposes", "[matrix]") {
    Rng rng(7);
    const MatrixD a = rng.normal_matrix<double>(4, 3);
    const MatrixD b = rng.normal_matrix<double>(4, 5);
    const MatrixD c = rng.normal_matrix<double>(3, 5);
    const MatrixD tn = matmul_tn(a, b);          // (3x4)(4x5)
    const MatrixD tn_ref = matmul(transpose(a), b);
    const MatrixD nt = matmul_nt(b, c);          // (4x5)(3x5)^T
    const MatrixD nt_ref = matmul(b, transpose(c));
    for (std::size_t i = 0; i < tn.data.size(); ++i)
        REQUIRE(tn.data[i] == Catch::Approx(tn_ref.data[i]).margin(1e-12));
    for (std::size_t i = 0; i < nt.data.size(); ++i)
        REQUIRE(nt.data[i] == Catch::Approx(nt_ref.data[i]).margin(1e-12));
}

TEST_CASE("shape mismatch throws with both shapes in the message", "[matrix]") {
    MatrixD a(2, 3), b(3, 2);
    REQUIRE_THROWS_WITH(check_same_shape(a, b, "test"),
                        Catch::Matchers::ContainsSubstring("(2,3)") &&
                            Catch::Matchers::ContainsSubstring("(3,2)"));
    REQUIRE_THROWS(matmul(a, MatrixD(2, 2)));
}

TEST_CASE("stable activations agree with naive forms in the safe range", "[matrix]") {
    for (double x : {-30.0, -4.0, -0.5, 0.0, 0.5, 4.0, 30.0}) {
        REQUIRE(stable_sigmoid(x) == Catch::Approx(1.0 / (1.0 + std::exp(-x))).epsilon(1e-12));
        REQUIRE(stable_softplus(x) ==
                Catch::Approx(std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0))
                    .epsilon(1e-12));
        REQUIRE(stable_logsigmoid(x) == Catch::Approx(-stable_softplus(-x)).margin(1e-15));
    }
}

TEST_CASE("stable activations do not overflow at extremes", "[matrix]") {
    REQUIRE(stable_softplus(1e6) == 1e6);
    REQUIRE(stable_softplus(-1e6) == 0.0);
    REQUIRE(stable_sigmoid(1e6) == 1.0);
    REQUIRE(stable_sigmoid(-1e6) == 0.0);
    REQUIRE(stable_logsigmoid(1e6) == 0.0);
    REQUIRE(std::isfinite(stable_logsigmoid(-30.0)));
    REQUIRE(stable_logsigmoid(-1e3) == -1e3);  // softplus(1e3) == 1e3 in double
}

TEST_CASE("rng normal moments", "[rng]") {
    Rng rng(123);
    const int n = 200000;
    double mean = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        mean += v;
        sq += v * v;
    }
    mean /= n;
    const double var = sq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.01);
    REQUIRE(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng uniform_int is in range and hits every value", "[rng]") {
    Rng rng(9);
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) {
        const int v = rng.uniform_int(7);
        REQUIRE(v >= 0);
        REQUIRE(v < 7);
        seen.insert(v);
    }
    REQUIRE(seen.size() == 7);
}

TEST_CASE("permutation is a bijection", "[rng]") {
    Rng rng(5);
    const auto p = rng.permutation(50);
    std::set<int> seen(p.begin(), p.end());
    REQUIRE(seen.size() == 50);
    REQUIRE(*seen.begin() == 0);
    REQUIRE(*seen.rbegin() == 49);
}

TEST_CASE("same seed, same stream; derive_seed separates streams", "[rng]") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.normal() == b.normal());
    REQUIRE(derive_seed(1, 2) == derive_seed(1, 2));
    REQUIRE(derive_seed(1, 2) != derive_seed(1, 3));
    REQUIRE(derive_seed(1, 2) != derive_seed(2, 2));
}
