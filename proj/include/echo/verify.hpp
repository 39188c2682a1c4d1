#ifndef ECHO_VERIFY_HPP
#define ECHO_VERIFY_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "echo/datasets.hpp"
#include "echo/echo_channel.hpp"
#include "echo/estimators.hpp"
#include "echo/gaussian_channel.hpp"
#include "echo/matrix.hpp"
#include "echo/models.hpp"
#include "echo/optimizer.hpp"
#include "echo/rng.hpp"

// Named verification suites: statistical cross-checks of the channel's exact
// claims, runnable from the CLI (`verify --suite ...`) and reused by the
// test suite. Each check is deterministic given the seed.

namespace echo {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

namespace verify_detail {

class Suite {
public:
    explicit Suite(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    void check(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult r;
        r.name = name;
        try {
            auto [pass, detail] = fn();
            r.pass = pass;
            r.detail = detail;
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        results_.push_back(std::move(r));
    }

    std::vector<CheckResult> take() { return std::move(results_); }

private:
    std::uint64_t seed_;
    std::vector<CheckResult> results_;
};

inline std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

// Mixture-like 2-D source with support strictly inside [-1,1]^2, used
// wherever an identity encoder must respect |f| <= 1.
inline MatrixD ring_source(int n, Rng& rng) {
    MatrixD x(n, 2);
    for (int i = 0; i < n; ++i) {
        const int blob = rng.uniform_int(8);
        const double ang = 6.283185307179586 * blob / 8.0;
        x(i, 0) = 0.7 * std::cos(ang) + 0.04 * rng.normal();
        x(i, 1) = 0.7 * std::sin(ang) + 0.04 * rng.normal();
    }
    return x;
}

// Identity encoder with constant s: f(x) = x, log_s = log(s0).
inline std::pair<MatrixD, MatrixD> identity_encoder(const MatrixD& x, double s0) {
    return {x, MatrixD(x.rows, x.cols, std::log(s0))};
}

}  // namespace verify_detail

// ---- clip: solver golden values and algebraic identities ----

inline void verify_clip(verify_detail::Suite& s) {
    using verify_detail::fmt;
    s.check("clip.golden_r", [] {
        const double r = solve_clip(1.0, 99, 0x1p-23);
        const double err = std::abs(r - 0.8359);
        return std::make_pair(err <= 1e-4,
                              "r=" + fmt(r) + " |r-0.8359|=" + fmt(err) + " (tol 1e-4)");
    });
    s.check("clip.d_max_1", [] {
        const double r = solve_clip(1.0, 1, 0x1p-23);
        const double expect = 0x1p-23 / (1.0 + 0x1p-23);
        return std::make_pair(std::abs(r - expect) <= 1e-10,
                              "r=" + fmt(r) + " expected~2^-23");
    });
    s.check("clip.monotone_in_d_max", [] {
        const double r99 = solve_clip(1.0, 99, 0x1p-23);
        const double r200 = solve_clip(1.0, 200, 0x1p-23);
        return std::make_pair(r200 > r99, "r(200)=" + fmt(r200) + " > r(99)=" + fmt(r99));
    });
    s.check("clip.remainder_identity", [] {
        const double r = solve_clip(1.0, 99, 0x1p-23);
        const double bound = remainder_bound(1.0, r, 99);
        return std::make_pair(bound <= 0x1p-23 * (1.0 + 1e-3),
                              "bound=" + fmt(bound) + " vs tol=" + fmt(0x1p-23));
    });
    s.check("clip.remainder_ratio", [] {
        const double b1 = remainder_bound(2.0, 0.7, 10);
        const double b2 = remainder_bound(2.0, 0.7, 11);
        return std::make_pair(std::abs(b2 / b1 - 0.7) <= 1e-12, "ratio=" + fmt(b2 / b1));
    });
}

// ---- truncation: |eps(d) - eps(2d)| <= M r^d / (1-r), 1000 draws ----

inline void verify_truncation(verify_detail::Suite& s) {
    using verify_detail::fmt;
    s.check("truncation.bound_1000_draws", [&s] {
        const int d_max = 99, d_z = 4, n_draws = 1000;
        const EchoConfig cfg = make_echo_config(d_max, 1.0, 0x1p-23);
        const double bound = remainder_bound(cfg.M, cfg.r, d_max);
        Rng rng(derive_seed(s.seed(), 0x7c));
        double worst = 0.0;
        int violations = 0;
        std::vector<double> lo(d_z), hi(d_z);
        for (int draw = 0; draw < n_draws; ++draw) {
            // random admissible encoder outputs along a depth-2*d_max chain
            MatrixD f(2 * d_max, d_z), sv(2 * d_max, d_z);
            for (int i = 0; i < 2 * d_max; ++i)
                for (int j = 0; j < d_z; ++j) {
                    f(i, j) = rng.uniform(-cfg.M, cfg.M);
                    sv(i, j) = rng.uniform(0.0, cfg.r);
                }
            auto horner = [&](int depth, std::vector<double>& out) {
                for (int j = 0; j < d_z; ++j) out[static_cast<std::size_t>(j)] = f(depth - 1, j);
                for (int t = depth - 2; t >= 0; --t)
                    for (int j = 0; j < d_z; ++j)
                        out[static_cast<std::size_t>(j)] =
                            f(t, j) + sv(t, j) * out[static_cast<std::size_t>(j)];
            };
            horner(d_max, lo);
            horner(2 * d_max, hi);
            for (int j = 0; j < d_z; ++j) {
                const double diff = std::abs(hi[static_cast<std::size_t>(j)] -
                                             lo[static_cast<std::size_t>(j)]);
                worst = std::max(worst, diff);
                violations += diff > bound ? 1 : 0;
            }
        }
        return std::make_pair(violations == 0, "worst=" + fmt(worst) + " bound=" + fmt(bound) +
                                                   " violations=" + std::to_string(violations));
    });
}

// ---- thm1: KSG MI on the 1-D echo channel vs the exact ln 2 ----

inline void verify_thm1(verify_detail::Suite& s, int n = 100000) {
    using verify_detail::fmt;
    s.check("thm1.ksg_ln2", [&s, n] {
        // X ~ N(0,1), f identity, s = 0.5: exact I(X;Z) = -log 0.5 = ln 2.
        // M = 16 keeps the guard satisfied for every realizable draw.
        const EchoConfig cfg = make_echo_config(99, 16.0, 0x1p-23, EchoMode::iid);
        Rng rng(derive_seed(s.seed(), 0x31));
        MatrixD x(n, 1);
        for (auto& v : x.data) v = rng.normal();
        const MatrixD eps = sample_echo_iid(
            [](int m, Rng& r) {
                MatrixD out(m, 1);
                for (auto& v : out.data) v = r.normal();
                return out;
            },
            [](const MatrixD& xs) { return verify_detail::identity_encoder(xs, 0.5); }, cfg, n,
            derive_seed(s.seed(), 0x32));
        const MatrixD log_s(n, 1, std::log(0.5));
        const MatrixD z = apply_channel(x, log_s, eps);
        const double mi = ksg_mi({x, "x"}, {z, "z"}, 5);
        const double err = std::abs(mi - std::log(2.0));
        return std::make_pair(err <= 0.10, "ksg=" + fmt(mi) + " ln2=" + fmt(std::log(2.0)) +
                                               " |err|=" + fmt(err) + " (tol 0.10)");
    });
    s.check("thm1.ksg_independent_zero", [&s] {
        Rng rng(derive_seed(s.seed(), 0x33));
        const int n = 20000;
        MatrixD x(n, 1), y(n, 1);
        for (auto& v : x.data) v = rng.normal();
        for (auto& v : y.data) v = rng.normal();
        const double mi = ksg_mi({x, "x"}, {y, "y"}, 5);
        return std::make_pair(std::abs(mi) <= 0.02, "ksg=" + fmt(mi) + " (tol 0.02)");
    });
}

// ---- lemma1: eps and z = f + s.*eps agree in distribution ----

inline void verify_lemma1(verify_detail::Suite& s, int n = 10000, int n_seeds = 20) {
    using verify_detail::fmt;
    s.check("lemma1.energy_fixed_point", [&s, n, n_seeds] {
        const EchoConfig cfg = make_echo_config(99, 1.0, 0x1p-23, EchoMode::iid);
        const auto sampler = [](int m, Rng& r) { return verify_detail::ring_source(m, r); };
        const auto encoder = [](const MatrixD& xs) {
            return verify_detail::identity_encoder(xs, 0.5);
        };
        int failures = 0;
        std::string ps;
        for (int t = 0; t < n_seeds; ++t) {
            const std::uint64_t st = derive_seed(s.seed(), 0x1e00 + t);
            const MatrixD eps = sample_echo_iid(sampler, encoder, cfg, n, derive_seed(st, 1));
            // independent anchors and noise for the z set
            Rng rng(derive_seed(st, 2));
            const MatrixD anchors = verify_detail::ring_source(n, rng);
            const MatrixD eps2 = sample_echo_iid(sampler, encoder, cfg, n, derive_seed(st, 3));
            const MatrixD log_s(n, 2, std::log(0.5));
            const MatrixD z = apply_channel(anchors, log_s, eps2);
            const TestResult res = energy_distance_test({eps, "eps"}, {z, "z"}, 1000,
                                                        derive_seed(st, 4), 0.01);
            failures += res.p_value > 0.01 ? 0 : 1;
            ps += (t ? "," : "") + fmt(res.p_value);
        }
        return std::make_pair(failures <= 1, "failures=" + std::to_string(failures) + "/" +
                                                 std::to_string(n_seeds) + " p=[" + ps + "]");
    });
}

// ---- entropy: KL estimator identities used in the rate derivation ----

inline void verify_entropy(verify_detail::Suite& s, int n = 100000) {
    using verify_detail::fmt;
    Rng rng(derive_seed(s.seed(), 0xe0));
    MatrixD x(n, 1);
    for (auto& v : x.data) v = rng.normal();
    s.check("entropy.gaussian_value", [&x, n] {
        const double h = kl_entropy({x, "x"}, 5);
        const double analytic = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
        return std::make_pair(std::abs(h - analytic) <= 0.02,
                              "H=" + fmt(h) + " analytic=" + fmt(analytic));
    });
    s.check("entropy.scaling", [&x, n] {
        MatrixD xs = x;
        for (auto& v : xs.data) v *= 0.5;
        const double gap = kl_entropy({xs, "x/2"}, 5) - kl_entropy({x, "x"}, 5);
        return std::make_pair(std::abs(gap - std::log(0.5)) <= 0.02,
                              "H(cX)-H(X)=" + fmt(gap) + " ln(0.5)=" + fmt(std::log(0.5)));
    });
    s.check("entropy.translation", [&x, n] {
        MatrixD xt = x;
        for (auto& v : xt.data) v += 3.25;
        const double gap = kl_entropy({xt, "x+b"}, 5) - kl_entropy({x, "x"}, 5);
        return std::make_pair(std::abs(gap) <= 0.02, "H(X+b)-H(X)=" + fmt(gap));
    });
}

// ---- tc: second-order total correlation oracle ----

inline void verify_tc(verify_detail::Suite& s, int n = 100000) {
    using verify_detail::fmt;
    s.check("tc.diagonal_zero", [&s, n] {
        Rng rng(derive_seed(s.seed(), 0x7c1));
        const MatrixD x = rng.normal_matrix(n, 8);
        const double tc = gaussian_tc({x, "diag"});
        return std::make_pair(std::abs(tc) <= 0.01, "tc=" + fmt(tc) + " (tol 0.01)");
    });
    s.check("tc.correlated_pair", [&s, n] {
        Rng rng(derive_seed(s.seed(), 0x7c2));
        MatrixD x(n, 2);
        for (int i = 0; i < n; ++i) {
            const double a = rng.normal(), b = rng.normal();
            x(i, 0) = a;
            x(i, 1) = 0.5 * a + std::sqrt(0.75) * b;  // corr exactly 0.5
        }
        const double tc = gaussian_tc({x, "rho0.5"});
        const double analytic = -0.5 * std::log(0.75);
        return std::make_pair(std::abs(tc - analytic) <= 0.01,
                              "tc=" + fmt(tc) + " analytic=" + fmt(analytic));
    });
    s.check("tc.paper_convention_factor", [&s] {
        Rng rng(derive_seed(s.seed(), 0x7c3));
        const MatrixD x = rng.normal_matrix(5000, 3);
        const double std_tc = gaussian_tc({x, "x"}, false);
        const double paper = gaussian_tc({x, "x"}, true);
        return std::make_pair(paper == 2.0 * std_tc,
                              "paper=" + fmt(paper) + " = 2*" + fmt(std_tc));
    });
}

// ---- gradients: tape vs finite differences on the echo objective ----

inline void verify_gradients(verify_detail::Suite& s) {
    using verify_detail::fmt;
    s.check("gradients.echo_objective_fd", [&s] {
        AutoencoderSpec spec;
        spec.d_x = 3;
        spec.d_z = 2;
        spec.hidden = {6, 5};
        spec.channel = ChannelKind::echo;
        spec.distortion = DistortionKind::gaussian;
        spec.echo_cfg = make_echo_config(7, 1.0, 0x1p-23);
        Autoencoder<double> model(spec, derive_seed(s.seed(), 0x6d));
        Rng rng(derive_seed(s.seed(), 0x6e));
        const MatrixD batch = rng.uniform_matrix(8, 3, -1.0, 1.0);
        const std::uint64_t noise_seed = derive_seed(s.seed(), 0x6f);
        const auto report = grad_check(
            [&](ParameterStore<double>&) {
                return model.objective(batch, 0.7, noise_seed).loss;
            },
            model.store, 1e-5, 1e-4);
        return std::make_pair(report.pass, "max_rel_err=" + fmt(report.max_rel_err) +
                                               " worst=" + report.worst + " (tol 1e-4)");
    });
    s.check("gradients.noise_path_matters", [&s] {
        AutoencoderSpec spec;
        spec.d_x = 3;
        spec.d_z = 2;
        spec.hidden = {6, 5};
        spec.channel = ChannelKind::echo;
        spec.distortion = DistortionKind::gaussian;
        spec.echo_cfg = make_echo_config(7, 1.0, 0x1p-23);
        Autoencoder<double> model(spec, derive_seed(s.seed(), 0x6d));
        Rng rng(derive_seed(s.seed(), 0x6e));
        const MatrixD batch = rng.uniform_matrix(8, 3, -1.0, 1.0);
        const std::uint64_t noise_seed = derive_seed(s.seed(), 0x6f);
        const auto attached = forward_backward(
            model.objective(batch, 0.7, noise_seed).loss, model.store);
        AutoencoderSpec detached_spec = spec;
        detached_spec.echo_cfg.detach_noise_gradients = true;
        Autoencoder<double> detached(detached_spec, derive_seed(s.seed(), 0x6d));
        const auto det = forward_backward(
            detached.objective(batch, 0.7, noise_seed).loss, detached.store);
        double max_diff = 0.0;
        for (const auto& [name, g] : attached)
            for (std::size_t i = 0; i < g.data.size(); ++i)
                max_diff = std::max(max_diff, std::abs(g.data[i] - det.at(name).data[i]));
        return std::make_pair(max_diff > 0.0, "max_grad_diff=" + fmt(max_diff));
    });
}

// ---- gaussian: baseline channel sanity ----

inline void verify_gaussian(verify_detail::Suite& s) {
    using verify_detail::fmt;
    s.check("gaussian.kl_zero_at_prior", [] {
        const MatrixD mu(4, 3), log_sigma(4, 3);
        const auto [rate, pw] = gaussian_kl_rate(mu, log_sigma);
        return std::make_pair(std::abs(rate) <= 1e-12, "rate=" + fmt(rate));
    });
    s.check("gaussian.kl_monte_carlo", [&s] {
        Rng rng(derive_seed(s.seed(), 0x9a));
        MatrixD mu(1, 2), log_sigma(1, 2);
        for (auto& v : mu.data) v = rng.uniform(-1.5, 1.5);
        for (auto& v : log_sigma.data) v = rng.uniform(-1.0, 0.5);
        const auto [analytic, pw] = gaussian_kl_rate(mu, log_sigma);
        const int n = 1000000;
        Rng mc(derive_seed(s.seed(), 0x9b));
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 2; ++j) {
                const double sigma = std::exp(log_sigma(0, j));
                const double z = mu(0, j) + sigma * mc.normal();
                const double u = (z - mu(0, j)) / sigma;
                // log q(z) - log p(z)
                acc += -0.5 * u * u - log_sigma(0, j) + 0.5 * z * z;
            }
        const double est = acc / n;
        const double rel = std::abs(est - analytic) / std::abs(analytic);
        return std::make_pair(rel <= 0.01, "mc=" + fmt(est) + " analytic=" + fmt(analytic) +
                                               " rel=" + fmt(rel));
    });
    s.check("gaussian.sample_moments", [&s] {
        const int n = 100000;
        MatrixD mu(n, 1), log_sigma(n, 1);
        const MatrixD z = gaussian_sample(mu, log_sigma, derive_seed(s.seed(), 0x9c));
        double mean = 0.0;
        for (double v : z.data) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : z.data) var += (v - mean) * (v - mean);
        var /= (n - 1);
        return std::make_pair(std::abs(mean) <= 0.02 && std::abs(var - 1.0) <= 0.02,
                              "mean=" + fmt(mean) + " var=" + fmt(var));
    });
}

// ---- rates: exact-rate identities on a (briefly) trained echo model ----

inline void verify_rates(verify_detail::Suite& s) {
    using verify_detail::fmt;
    s.check("rates.additivity_and_floor", [&s] {
        const int B = 16, d_z = 3;
        AutoencoderSpec spec;
        spec.d_x = 2;
        spec.d_z = d_z;
        spec.hidden = {16, 8};
        spec.channel = ChannelKind::echo;
        spec.distortion = DistortionKind::gaussian;
        spec.echo_cfg = make_echo_config(B - 1, 1.0, 0x1p-23);
        Autoencoder<float> model(spec, derive_seed(s.seed(), 0xaa));
        Rng rng(derive_seed(s.seed(), 0xab));
        int worst_add = 0;
        double max_rel = 0.0;
        int floor_violations = 0;
        const float floor = rate_floor_matched<float>(d_z, spec.echo_cfg.r);
        for (int trial = 0; trial < 50; ++trial) {
            const Matrix<float> batch = rng.uniform_matrix<float>(B, 2, -1.0, 1.0);
            auto g = model.objective(batch, 1.0, derive_seed(s.seed(), 0xac + trial));
            // additivity: batch rate == sum of per-dimension rates
            const Matrix<float>& ls = g.log_scale->value;
            double per_dim_total = 0.0;
            for (int j = 0; j < d_z; ++j) {
                double colsum = 0.0;
                for (int i = 0; i < B; ++i) colsum += static_cast<double>(ls(i, j));
                per_dim_total += -colsum / B;
            }
            const double rate = static_cast<double>(g.rate->value.data[0]);
            const double rel = std::abs(rate - per_dim_total) / std::max(std::abs(rate), 1e-12);
            max_rel = std::max(max_rel, rel);
            worst_add += rel > 1e-6 ? 1 : 0;
            for (int i = 0; i < B; ++i)
                floor_violations +=
                    g.pointwise_rate->value(i, 0) >= floor ? 0 : 1;
        }
        return std::make_pair(worst_add == 0 && floor_violations == 0,
                              "max_rel=" + fmt(max_rel) + " floor_violations=" +
                                  std::to_string(floor_violations));
    });
}

inline std::vector<std::string> verify_suite_names() {
    return {"clip", "truncation", "thm1", "lemma1", "entropy", "tc",
            "gradients", "gaussian", "rates", "all"};
}

inline std::vector<CheckResult> run_verify_suite(const std::string& suite, std::uint64_t seed) {
    verify_detail::Suite s(seed);
    bool known = false;
    const auto want = [&](const char* name) {
        const bool hit = suite == name || suite == "all";
        known = known || suite == name;
        return hit;
    };
    if (want("clip")) verify_clip(s);
    if (want("truncation")) verify_truncation(s);
    if (want("thm1")) verify_thm1(s);
    if (want("lemma1")) verify_lemma1(s);
    if (want("entropy")) verify_entropy(s);
    if (want("tc")) verify_tc(s);
    if (want("gradients")) verify_gradients(s);
    if (want("gaussian")) verify_gaussian(s);
    if (want("rates")) verify_rates(s);
    if (!known && suite != "all")
        throw std::invalid_argument("unknown verify suite '" + suite + "'");
    return s.take();
}

}  // namespace echo

#endif
