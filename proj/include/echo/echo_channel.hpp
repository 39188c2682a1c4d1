#ifndef ECHO_ECHO_CHANNEL_HPP
#define ECHO_ECHO_CHANNEL_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "echo/autodiff.hpp"
#include "echo/matrix.hpp"
#include "echo/rng.hpp"

// The Echo channel: z = f(x) + s(x) .* eps, where eps is a truncated series of
// attenuated encodings of other samples,
//
//     eps = f(x^0) + s(x^0) .* (f(x^1) + s(x^1) .* (...)),   d_max terms,
//
// evaluated backward (Horner). The truncation error is bounded by
// M * r^d_max / (1 - r) once |f| <= M and s <= r < 1, and the channel's exact
// mutual information is -E[sum_j log s_j].

namespace echo {

enum class EchoMode { iid, batch_permute };

struct EchoConfig {
    int d_max = 99;
    double M = 1.0;
    double tol = 0x1p-23;
    double r = 0.0;  // solved from (M, d_max, tol); see make_echo_config
    EchoMode mode = EchoMode::batch_permute;
    bool with_replacement = false;
    bool detach_noise_gradients = false;
};

struct ClipSolution {
    double r = 0.0;
    bool clamped = false;  // true when no root exists below the documented cap
};

// Truncation error cap for the echo series: M * r^d_max / (1 - r).
inline double remainder_bound(double M, double r, int d_max) {
    if (r >= 1.0) throw std::invalid_argument("remainder_bound: r >= 1, series diverges");
    if (r < 0.0) throw std::invalid_argument("remainder_bound: r must be nonnegative");
    if (M <= 0.0) throw std::invalid_argument("remainder_bound: M must be positive");
    if (d_max < 1) throw std::invalid_argument("remainder_bound: d_max must be >= 1");
    return M * std::pow(r, d_max) / (1.0 - r);
}

// Solves M * r^d_max / (1 - r) = tol for r in (0,1) by bisection. The left
// side is strictly increasing on (0,1), so the root is unique. If even the
// cap r = 1 - 1e-7 stays below tol there is no root; we clamp and flag.
inline ClipSolution solve_clip_full(double M, int d_max, double tol) {
    if (M <= 0.0 || tol <= 0.0)
        throw std::invalid_argument("solve_clip: M and tol must be positive");
    if (d_max < 1) throw std::invalid_argument("solve_clip: d_max must be >= 1");
    const double cap = 1.0 - 1e-7;
    if (remainder_bound(M, cap, d_max) < tol) return {cap, true};
    double lo = 0.0, hi = cap;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        (remainder_bound(M, mid, d_max) < tol ? lo : hi) = mid;
    }
    return {0.5 * (lo + hi), false};
}

inline double solve_clip(double M, int d_max, double tol) {
    return solve_clip_full(M, d_max, tol).r;
}

// Lower limit on the achievable rate: s <= r in every dimension, so the rate
// -sum_j log s_j can never drop below -d_z * log r.
inline double rate_floor(int d_z, double r) {
    if (d_z < 1) throw std::invalid_argument("rate_floor: d_z must be >= 1");
    if (r <= 0.0 || r >= 1.0) throw std::invalid_argument("rate_floor: r must be in (0,1)");
    return -static_cast<double>(d_z) * std::log(r);
}

// Same floor, accumulated in T with the same left-fold the rate reduction
// uses. Per-example rates computed in T satisfy rate >= this value exactly,
// not merely up to rounding. (log_s = T(log r) + logsigmoid(pre) <= T(log r)
// by monotonicity of rounding, and summation preserves elementwise order.)
template <class T>
T rate_floor_matched(int d_z, double r) {
    const T log_r = static_cast<T>(std::log(r));
    T acc = T(0);
    for (int j = 0; j < d_z; ++j) acc += log_r;
    return -acc;
}

inline EchoConfig make_echo_config(int d_max = 99, double M = 1.0, double tol = 0x1p-23,
                                   EchoMode mode = EchoMode::batch_permute,
                                   bool with_replacement = false,
                                   bool detach_noise_gradients = false) {
    EchoConfig cfg;
    cfg.d_max = d_max;
    cfg.M = M;
    cfg.tol = tol;
    cfg.r = solve_clip(M, d_max, tol);
    cfg.mode = mode;
    cfg.with_replacement = with_replacement;
    cfg.detach_noise_gradients = detach_noise_gradients;
    return cfg;
}

inline void validate_echo_config(const EchoConfig& cfg) {
    if (cfg.d_max < 1) throw std::invalid_argument("EchoConfig: d_max must be >= 1");
    if (cfg.M <= 0.0) throw std::invalid_argument("EchoConfig: M must be positive");
    if (cfg.tol <= 0.0) throw std::invalid_argument("EchoConfig: tol must be positive");
    if (cfg.r <= 0.0 || cfg.r >= 1.0)
        throw std::invalid_argument("EchoConfig: r must be in (0,1)");
    if (remainder_bound(cfg.M, cfg.r, cfg.d_max) > cfg.tol * (1.0 + 1e-9))
        throw std::invalid_argument("EchoConfig: M*r^d_max/(1-r) exceeds tol");
}

inline const char* to_string(EchoMode m) {
    return m == EchoMode::iid ? "iid" : "batch-permute";
}

inline EchoMode echo_mode_from_string(const std::string& s) {
    if (s == "iid") return EchoMode::iid;
    if (s == "batch-permute") return EchoMode::batch_permute;
    throw std::invalid_argument("unknown echo mode '" + s + "'");
}

inline nlohmann::json to_json(const EchoConfig& cfg) {
    return nlohmann::json{{"d_max", cfg.d_max},
                          {"M", cfg.M},
                          {"tol", cfg.tol},
                          {"r", cfg.r},
                          {"mode", to_string(cfg.mode)},
                          {"with_replacement", cfg.with_replacement},
                          {"detach_noise_gradients", cfg.detach_noise_gradients}};
}

inline EchoConfig echo_config_from_json(const nlohmann::json& j) {
    static const char* known[] = {"d_max", "M",    "tol",
                                  "r",     "mode", "with_replacement",
                                  "detach_noise_gradients"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw std::invalid_argument("EchoConfig: unknown field '" + it.key() + "'");
    }
    EchoConfig cfg;
    cfg.d_max = j.value("d_max", cfg.d_max);
    cfg.M = j.value("M", cfg.M);
    cfg.tol = j.value("tol", cfg.tol);
    cfg.mode = echo_mode_from_string(j.value("mode", std::string(to_string(cfg.mode))));
    cfg.with_replacement = j.value("with_replacement", cfg.with_replacement);
    cfg.detach_noise_gradients = j.value("detach_noise_gradients", cfg.detach_noise_gradients);
    cfg.r = j.contains("r") ? j.at("r").get<double>() : solve_clip(cfg.M, cfg.d_max, cfg.tol);
    validate_echo_config(cfg);
    return cfg;
}

// Lemma 3 preconditions, with slack for accumulated rounding. Violations name
// the offending bound.
template <class T>
void check_encoder_bounds(const Matrix<T>& f, const Matrix<T>& log_s, const EchoConfig& cfg,
                          double slack = 1e-6) {
    check_same_shape(f, log_s, "check_encoder_bounds");
    const double log_r = std::log(cfg.r);
    for (std::size_t i = 0; i < f.data.size(); ++i) {
        const double fv = static_cast<double>(f.data[i]);
        if (!(std::abs(fv) <= cfg.M + slack))
            throw std::domain_error("echo: |f| <= M violated (|" + std::to_string(fv) +
                                    "| > M=" + std::to_string(cfg.M) + ")");
        const double ls = static_cast<double>(log_s.data[i]);
        if (!(ls <= log_r + slack))
            throw std::domain_error("echo: s <= r violated (log_s=" + std::to_string(ls) +
                                    " > log r=" + std::to_string(log_r) + ")");
    }
}

// Echo index plan for one batch: row i lists the d_max source rows of the
// noise series for anchor i, in order. Without replacement we draw a single
// permutation pi and give anchor i the other rows in pi-order starting just
// past i's own slot, so every anchor sees a distinct unbiased ordering. The
// anchor itself never appears in its plan.
inline std::vector<std::vector<int>> echo_sequence_plan(int B, const EchoConfig& cfg, Rng& rng) {
    if (B < 2) throw std::invalid_argument("echo_sequence_plan: batch size must be >= 2");
    const int L = cfg.d_max;
    if (!cfg.with_replacement && L > B - 1)
        throw std::invalid_argument("echo_sequence_plan: d_max=" + std::to_string(L) +
                                    " exceeds B-1=" + std::to_string(B - 1) +
                                    " without replacement");
    std::vector<std::vector<int>> plan(static_cast<std::size_t>(B));
    if (cfg.with_replacement) {
        for (int i = 0; i < B; ++i) {
            auto& seq = plan[static_cast<std::size_t>(i)];
            seq.resize(static_cast<std::size_t>(L));
            for (int t = 0; t < L; ++t) {
                const int draw = rng.uniform_int(B - 1);
                seq[static_cast<std::size_t>(t)] = draw < i ? draw : draw + 1;
            }
        }
    } else {
        const std::vector<int> pi = rng.permutation(B);
        std::vector<int> pos(static_cast<std::size_t>(B));
        for (int k = 0; k < B; ++k) pos[static_cast<std::size_t>(pi[static_cast<std::size_t>(k)])] = k;
        for (int i = 0; i < B; ++i) {
            auto& seq = plan[static_cast<std::size_t>(i)];
            seq.resize(static_cast<std::size_t>(L));
            const int p = pos[static_cast<std::size_t>(i)];
            for (int t = 0; t < L; ++t)
                seq[static_cast<std::size_t>(t)] = pi[static_cast<std::size_t>((p + 1 + t) % B)];
        }
    }
    return plan;
}

namespace detail {

// Horner pass over one index sequence: eps = f[j0] + s[j0].*(f[j1] + ...).
template <class T>
void echo_horner_row(const Matrix<T>& f, const Matrix<T>& s, const std::vector<int>& seq,
                     T* out, int d_z) {
    const int L = static_cast<int>(seq.size());
    const T* fl = f.row(seq[static_cast<std::size_t>(L - 1)]);
    for (int j = 0; j < d_z; ++j) out[j] = fl[j];
    for (int t = L - 2; t >= 0; --t) {
        const T* ft = f.row(seq[static_cast<std::size_t>(t)]);
        const T* st = s.row(seq[static_cast<std::size_t>(t)]);
        for (int j = 0; j < d_z; ++j) out[j] = ft[j] + st[j] * out[j];
    }
}

}  // namespace detail

// Batch-mode noise, values only. Use echo_noise_graph for training.
template <class T>
Matrix<T> sample_echo_batch(const Matrix<T>& f, const Matrix<T>& log_s, const EchoConfig& cfg,
                            std::uint64_t seed) {
    if (cfg.mode != EchoMode::batch_permute)
        throw std::invalid_argument("sample_echo_batch: cfg.mode must be batch-permute");
    check_encoder_bounds(f, log_s, cfg);
    Rng rng(seed);
    const auto plan = echo_sequence_plan(f.rows, cfg, rng);
    const Matrix<T> s = map(log_s, [](T v) { return std::exp(v); });
    Matrix<T> eps(f.rows, f.cols);
    for (int i = 0; i < f.rows; ++i)
        detail::echo_horner_row(f, s, plan[static_cast<std::size_t>(i)], eps.row(i), f.cols);
    return eps;
}

// iid-mode noise: each output row gets its own d_max fresh draws from the
// source. Draws are batched through the encoder in blocks to keep memory flat.
inline MatrixD sample_echo_iid(
    const std::function<MatrixD(int, Rng&)>& sampler,
    const std::function<std::pair<MatrixD, MatrixD>(const MatrixD&)>& encoder,
    const EchoConfig& cfg, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_echo_iid: n must be >= 1");
    Rng rng(seed);
    const int L = cfg.d_max;
    const int block = std::max(1, 8192 / std::max(1, L));
    MatrixD eps;
    std::vector<int> seq(static_cast<std::size_t>(L));
    for (int start = 0; start < n; start += block) {
        const int m = std::min(block, n - start);
        const MatrixD xs = sampler(m * L, rng);
        auto [f, log_s] = encoder(xs);
        if (f.rows != m * L)
            throw std::invalid_argument("sample_echo_iid: encoder changed the row count");
        check_encoder_bounds(f, log_s, cfg);
        const MatrixD s = map(log_s, [](double v) { return std::exp(v); });
        if (eps.empty()) eps = MatrixD(n, f.cols);
        for (int i = 0; i < m; ++i) {
            for (int t = 0; t < L; ++t) seq[static_cast<std::size_t>(t)] = i * L + t;
            detail::echo_horner_row(f, s, seq, eps.row(start + i), f.cols);
        }
    }
    return eps;
}

// Differentiable batch-mode noise. Gradients flow into every used row of f
// and log_s unless the config says to detach.
template <class T>
ad::Var<T> echo_noise_graph(const ad::Var<T>& f, const ad::Var<T>& log_s, const EchoConfig& cfg,
                            const std::vector<std::vector<int>>& plan) {
    if (plan.size() != static_cast<std::size_t>(f->rows()))
        throw std::invalid_argument("echo_noise_graph: plan does not match batch");
    const int L = cfg.d_max;
    ad::Var<T> fin = f, lin = log_s;
    if (cfg.detach_noise_gradients) {
        fin = ad::detach(f);
        lin = ad::detach(log_s);
    }
    const ad::Var<T> s = ad::exp_(lin);
    std::vector<int> level(plan.size());
    auto level_at = [&](int t) {
        for (std::size_t i = 0; i < plan.size(); ++i) level[i] = plan[i][static_cast<std::size_t>(t)];
        return level;
    };
    ad::Var<T> acc = ad::gather_rows(fin, level_at(L - 1));
    for (int t = L - 2; t >= 0; --t) {
        const auto idx = level_at(t);
        acc = ad::add(ad::gather_rows(fin, idx), ad::mul(ad::gather_rows(s, idx), acc));
    }
    return acc;
}

// z = f + exp(log_s) .* eps
template <class T>
Matrix<T> apply_channel(const Matrix<T>& f, const Matrix<T>& log_s, const Matrix<T>& eps) {
    check_same_shape(f, log_s, "apply_channel");
    check_same_shape(f, eps, "apply_channel");
    Matrix<T> z(f.rows, f.cols);
    for (std::size_t i = 0; i < z.data.size(); ++i)
        z.data[i] = f.data[i] + std::exp(log_s.data[i]) * eps.data[i];
    return z;
}

template <class T>
ad::Var<T> apply_channel_graph(const ad::Var<T>& f, const ad::Var<T>& log_s,
                               const ad::Var<T>& eps) {
    return ad::add(f, ad::mul(ad::exp_(log_s), eps));
}

namespace detail {

template <class T>
void check_log_s_nonpositive(const Matrix<T>& log_s) {
    for (T v : log_s.data)
        if (!(static_cast<double>(v) <= 0.0))
            throw std::domain_error("echo_rate: log_s > 0 (s >= 1 breaks convergence)");
}

}  // namespace detail

// Exact channel rate: pointwise[i] = -sum_j log_s[i,j], rate = batch mean.
template <class T>
std::pair<double, std::vector<double>> echo_rate(const Matrix<T>& log_s) {
    detail::check_log_s_nonpositive(log_s);
    std::vector<double> pointwise(static_cast<std::size_t>(log_s.rows));
    double total = 0.0;
    for (int i = 0; i < log_s.rows; ++i) {
        T acc = T(0);
        const T* row = log_s.row(i);
        for (int j = 0; j < log_s.cols; ++j) acc += row[j];
        pointwise[static_cast<std::size_t>(i)] = -static_cast<double>(acc);
        total += pointwise[static_cast<std::size_t>(i)];
    }
    return {total / static_cast<double>(log_s.rows), pointwise};
}

template <class T>
struct RateGraph {
    ad::Var<T> rate;       // 1x1
    ad::Var<T> pointwise;  // Bx1
};

template <class T>
RateGraph<T> echo_rate_graph(const ad::Var<T>& log_s) {
    detail::check_log_s_nonpositive(log_s->value);
    RateGraph<T> out;
    out.pointwise = ad::neg(ad::row_sum(log_s));
    out.rate = ad::mean_all(out.pointwise);
    return out;
}

struct ChannelDraw {
    MatrixD z;
    MatrixD epsilon;
    std::vector<double> pointwise_rate;
    double rate = 0.0;
};

// One batch through the channel, values only; handy for verification suites.
inline ChannelDraw draw_channel(const MatrixD& f, const MatrixD& log_s, const EchoConfig& cfg,
                                std::uint64_t seed) {
    ChannelDraw d;
    d.epsilon = sample_echo_batch(f, log_s, cfg, seed);
    d.z = apply_channel(f, log_s, d.epsilon);
    auto [rate, pw] = echo_rate(log_s);
    d.rate = rate;
    d.pointwise_rate = std::move(pw);
    return d;
}

}  // namespace echo

#endif
