#ifndef ECHO_ESTIMATORS_HPP
#define ECHO_ESTIMATORS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "echo/matrix.hpp"
#include "echo/rng.hpp"

// Statistical oracles, all in double regardless of the model's width:
// Kozachenko-Leonenko entropy, KSG mutual information, a two-sample energy
// distance permutation test, Gaussian total correlation, and an
// Anderson-Darling normality test with a simulated composite null. Everything
// is brute-force and deterministic; no spatial trees.

namespace echo {

struct SampleSet {
    MatrixD data;
    std::string label;
};

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int n_permutations = 0;
};

namespace detail {

constexpr double kEulerGamma = 0.5772156649015328606;

inline void validate_samples(const SampleSet& s, const char* what) {
    if (s.data.rows < 2)
        throw std::invalid_argument(std::string(what) + ": need at least 2 samples");
    if (!s.data.all_finite())
        throw std::invalid_argument(std::string(what) + ": non-finite entries in '" + s.label +
                                    "'");
}

// digamma at integer arguments via harmonic numbers: psi(m) = H_{m-1} - gamma.
// Table is built once per estimator call; arguments never exceed n+1.
struct DigammaTable {
    std::vector<double> psi;
    explicit DigammaTable(int max_arg) : psi(static_cast<std::size_t>(max_arg) + 1, 0.0) {
        double h = 0.0;
        for (int m = 1; m <= max_arg; ++m) {
            psi[static_cast<std::size_t>(m)] = h - kEulerGamma;
            h += 1.0 / static_cast<double>(m);
        }
    }
    double operator()(int m) const { return psi[static_cast<std::size_t>(m)]; }
};

// log volume of the d-dimensional Euclidean unit ball.
inline double log_unit_ball_volume(int d) {
    return 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0);
}

// Squared distance to the k-th nearest neighbor of every point, self
// excluded. Streaming k-best over a blocked distance buffer; the buffer pass
// vectorizes and the insertion branch is rarely taken.
inline std::vector<double> kth_nn_sq(const MatrixD& x, int k) {
    const int n = x.rows, d = x.cols;
    constexpr int kBlock = 512;
    std::vector<double> out(static_cast<std::size_t>(n));
    std::vector<double> best(static_cast<std::size_t>(k));
    std::vector<double> buf(kBlock);
    for (int i = 0; i < n; ++i) {
        int have = 0;
        double thr = std::numeric_limits<double>::infinity();
        const double* xi = x.row(i);
        for (int j0 = 0; j0 < n; j0 += kBlock) {
            const int m = std::min(kBlock, n - j0);
            if (d == 1) {
                for (int t = 0; t < m; ++t) {
                    const double dx = x.data[static_cast<std::size_t>(j0 + t)] - xi[0];
                    buf[static_cast<std::size_t>(t)] = dx * dx;
                }
            } else if (d == 2) {
                for (int t = 0; t < m; ++t) {
                    const double* xj = x.row(j0 + t);
                    const double a = xj[0] - xi[0], b = xj[1] - xi[1];
                    buf[static_cast<std::size_t>(t)] = a * a + b * b;
                }
            } else {
                for (int t = 0; t < m; ++t) {
                    const double* xj = x.row(j0 + t);
                    double acc = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double dd = xj[c] - xi[c];
                        acc += dd * dd;
                    }
                    buf[static_cast<std::size_t>(t)] = acc;
                }
            }
            for (int t = 0; t < m; ++t) {
                const double dist = buf[static_cast<std::size_t>(t)];
                if (dist >= thr || j0 + t == i) continue;
                int pos = std::min(have, k - 1);
                while (pos > 0 && best[static_cast<std::size_t>(pos - 1)] > dist) {
                    if (pos < k) best[static_cast<std::size_t>(pos)] = best[static_cast<std::size_t>(pos - 1)];
                    --pos;
                }
                best[static_cast<std::size_t>(pos)] = dist;
                if (have < k) ++have;
                if (have == k) thr = best[static_cast<std::size_t>(k - 1)];
            }
        }
        out[static_cast<std::size_t>(i)] = best[static_cast<std::size_t>(k - 1)];
    }
    return out;
}

// 1-D exact alternative: after sorting, the k nearest neighbors of x_(i) form
// a contiguous window, so a two-pointer sweep gives every k-th distance in
// O(nk) instead of O(n^2).
inline std::vector<double> kth_nn_sorted_1d(std::vector<double> v, int k) {
    const int n = static_cast<int>(v.size());
    std::sort(v.begin(), v.end());
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int lo = i, hi = i;
        double dist = 0.0;
        for (int t = 0; t < k; ++t) {
            const double dl = lo > 0 ? v[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(lo - 1)]
                                     : std::numeric_limits<double>::infinity();
            const double dr = hi < n - 1 ? v[static_cast<std::size_t>(hi + 1)] - v[static_cast<std::size_t>(i)]
                                         : std::numeric_limits<double>::infinity();
            if (dl <= dr) {
                dist = dl;
                --lo;
            } else {
                dist = dr;
                ++hi;
            }
        }
        out[static_cast<std::size_t>(i)] = dist;
    }
    return out;
}

inline MatrixD jitter(const MatrixD& x, std::uint64_t seed) {
    Rng rng(seed);
    MatrixD out = x;
    for (auto& v : out.data) v += 1e-10 * rng.normal();
    return out;
}

}  // namespace detail

// Kozachenko-Leonenko: H = psi(n) - psi(k) + log c_d + (d/n) sum_i log eps_i,
// eps_i the Euclidean distance to the k-th nearest neighbor.
inline double kl_entropy(const SampleSet& samples, int k) {
    detail::validate_samples(samples, "kl_entropy");
    const int n = samples.data.rows, d = samples.data.cols;
    if (k < 1 || k >= n) throw std::invalid_argument("kl_entropy: need n > k >= 1");

    MatrixD data = samples.data;
    for (int attempt = 0;; ++attempt) {
        std::vector<double> sq;
        if (d == 1) {
            std::vector<double> v(data.data.begin(), data.data.end());
            sq = detail::kth_nn_sorted_1d(std::move(v), k);
            for (auto& s : sq) s *= s;
        } else {
            sq = detail::kth_nn_sq(data, k);
        }
        const bool dup = std::any_of(sq.begin(), sq.end(), [](double s) { return s <= 0.0; });
        if (!dup) {
            const detail::DigammaTable psi(n);
            double acc = 0.0;
            for (double s : sq) acc += 0.5 * std::log(s);
            return psi(n) - psi(k) + detail::log_unit_ball_volume(d) +
                   static_cast<double>(d) / n * acc;
        }
        if (attempt >= 1)
            throw std::runtime_error("kl_entropy: duplicates persist after jitter");
        std::cerr << "kl_entropy: duplicate points in '" << samples.label
                  << "', applying 1e-10 jitter\n";
        data = detail::jitter(data, 0xec11u + static_cast<std::uint64_t>(n));
    }
}

// KSG algorithm 1. Joint metric is the max over the two blocks, Euclidean
// inside each block; counts are strict and exclude the point itself:
//   MI = psi(k) + psi(n) - mean_i [psi(n_x(i)+1) + psi(n_z(i)+1)]
inline double ksg_mi(const SampleSet& x, const SampleSet& z, int k) {
    detail::validate_samples(x, "ksg_mi");
    detail::validate_samples(z, "ksg_mi");
    const int n = x.data.rows;
    if (z.data.rows != n) throw std::invalid_argument("ksg_mi: sample sets must pair up");
    if (k < 1 || k >= n) throw std::invalid_argument("ksg_mi: need n > k >= 1");
    const int dx = x.data.cols, dz = z.data.cols;

    MatrixD xd = x.data, zd = z.data;
    for (int attempt = 0;; ++attempt) {
        // kth joint distance (squared), streaming k-best as in kth_nn_sq
        constexpr int kBlock = 512;
        std::vector<double> eps_sq(static_cast<std::size_t>(n));
        std::vector<double> best(static_cast<std::size_t>(k));
        std::vector<double> buf(kBlock);
        bool dup = false;
        for (int i = 0; i < n; ++i) {
            int have = 0;
            double thr = std::numeric_limits<double>::infinity();
            const double* xi = xd.row(i);
            const double* zi = zd.row(i);
            for (int j0 = 0; j0 < n; j0 += kBlock) {
                const int m = std::min(kBlock, n - j0);
                if (dx == 1 && dz == 1) {
                    for (int t = 0; t < m; ++t) {
                        const double a = xd.data[static_cast<std::size_t>(j0 + t)] - xi[0];
                        const double b = zd.data[static_cast<std::size_t>(j0 + t)] - zi[0];
                        buf[static_cast<std::size_t>(t)] = std::max(a * a, b * b);
                    }
                } else {
                    for (int t = 0; t < m; ++t) {
                        const double* xj = xd.row(j0 + t);
                        const double* zj = zd.row(j0 + t);
                        double ax = 0.0, az = 0.0;
                        for (int c = 0; c < dx; ++c) {
                            const double dd = xj[c] - xi[c];
                            ax += dd * dd;
                        }
                        for (int c = 0; c < dz; ++c) {
                            const double dd = zj[c] - zi[c];
                            az += dd * dd;
                        }
                        buf[static_cast<std::size_t>(t)] = std::max(ax, az);
                    }
                }
                for (int t = 0; t < m; ++t) {
                    const double dist = buf[static_cast<std::size_t>(t)];
                    if (dist >= thr || j0 + t == i) continue;
                    int pos = std::min(have, k - 1);
                    while (pos > 0 && best[static_cast<std::size_t>(pos - 1)] > dist) {
                        if (pos < k) best[static_cast<std::size_t>(pos)] = best[static_cast<std::size_t>(pos - 1)];
                        --pos;
                    }
                    best[static_cast<std::size_t>(pos)] = dist;
                    if (have < k) ++have;
                    if (have == k) thr = best[static_cast<std::size_t>(k - 1)];
                }
            }
            eps_sq[static_cast<std::size_t>(i)] = best[static_cast<std::size_t>(k - 1)];
            dup = dup || best[static_cast<std::size_t>(k - 1)] <= 0.0;
        }
        if (dup) {
            if (attempt >= 1) throw std::runtime_error("ksg_mi: duplicates persist after jitter");
            std::cerr << "ksg_mi: duplicate joint points, applying 1e-10 jitter\n";
            xd = detail::jitter(xd, 0x5a11u);
            zd = detail::jitter(zd, 0x5a12u);
            continue;
        }

        // marginal counts, strictly inside the ball of radius eps_i
        auto count_marginal = [n](const MatrixD& m, const std::vector<double>& esq,
                                  std::vector<int>& cnt) {
            if (m.cols == 1) {
                std::vector<double> sorted(m.data.begin(), m.data.end());
                std::sort(sorted.begin(), sorted.end());
                for (int i = 0; i < n; ++i) {
                    const double e = std::sqrt(esq[static_cast<std::size_t>(i)]);
                    const double v = m.data[static_cast<std::size_t>(i)];
                    const auto hi = std::lower_bound(sorted.begin(), sorted.end(), v + e);
                    const auto lo = std::upper_bound(sorted.begin(), sorted.end(), v - e);
                    cnt[static_cast<std::size_t>(i)] = static_cast<int>(hi - lo) - 1;
                }
            } else {
                for (int i = 0; i < n; ++i) {
                    const double* mi = m.row(i);
                    int c = 0;
                    for (int j = 0; j < n; ++j) {
                        const double* mj = m.row(j);
                        double acc = 0.0;
                        for (int t = 0; t < m.cols; ++t) {
                            const double dd = mj[t] - mi[t];
                            acc += dd * dd;
                        }
                        c += acc < esq[static_cast<std::size_t>(i)] ? 1 : 0;
                    }
                    cnt[static_cast<std::size_t>(i)] = c - 1;  // self always counted
                }
            }
        };
        std::vector<int> nx(static_cast<std::size_t>(n)), nz(static_cast<std::size_t>(n));
        count_marginal(xd, eps_sq, nx);
        count_marginal(zd, eps_sq, nz);

        const detail::DigammaTable psi(n + 1);
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += psi(nx[static_cast<std::size_t>(i)] + 1) + psi(nz[static_cast<std::size_t>(i)] + 1);
        return psi(k) + psi(n) - acc / static_cast<double>(n);
    }
}

namespace detail {

// buf[t] = ||a - pts.row(j0+t)|| for t in [0, m); elementwise, vectorizes.
inline void dist_block(const MatrixD& pts, int j0, int m, const double* a, double* buf) {
    const int d = pts.cols;
    if (d == 1) {
        const double* p = pts.data.data() + j0;
        for (int t = 0; t < m; ++t) buf[t] = std::abs(p[t] - a[0]);
    } else if (d == 2) {
        const double* p = pts.data.data() + 2 * static_cast<std::size_t>(j0);
        for (int t = 0; t < m; ++t) {
            const double u = p[2 * t] - a[0], v = p[2 * t + 1] - a[1];
            buf[t] = std::sqrt(u * u + v * v);
        }
    } else {
        for (int t = 0; t < m; ++t) {
            const double* pj = pts.row(j0 + t);
            double acc = 0.0;
            for (int c = 0; c < d; ++c) {
                const double dd = pj[c] - a[c];
                acc += dd * dd;
            }
            buf[t] = std::sqrt(acc);
        }
    }
}

// sum_{i<j} d_ij over a contiguous point set.
inline double triangular_sum(const MatrixD& pts) {
    constexpr int kBlock = 1024;
    double buf[kBlock];
    double total = 0.0;
    for (int i = 0; i < pts.rows; ++i) {
        const double* pi = pts.row(i);
        for (int j0 = i + 1; j0 < pts.rows; j0 += kBlock) {
            const int m = std::min(kBlock, pts.rows - j0);
            dist_block(pts, j0, m, pi, buf);
            double acc = 0.0;
            for (int t = 0; t < m; ++t) acc += buf[t];
            total += acc;
        }
    }
    return total;
}

}  // namespace detail

// Szekely-Rizzo two-sample energy statistic,
//   E = 2 mean d(A,B) - mean d(A,A) - mean d(B,B)   (V-statistic),
// with a label-permutation p-value p = (1 + #{E_perm >= E_obs}) / (n_perm+1).
// If early_stop_alpha > 0 the loop stops once p provably exceeds it (more
// exceedances only raise p), reporting the count so far over the full
// denominator; p is then a lower bound and the "p > alpha" verdict is exact.
inline TestResult energy_distance_test(const SampleSet& a, const SampleSet& b, int n_perm,
                                       std::uint64_t seed, double early_stop_alpha = 0.0) {
    detail::validate_samples(a, "energy_distance_test");
    detail::validate_samples(b, "energy_distance_test");
    if (a.data.cols != b.data.cols)
        throw std::invalid_argument("energy_distance_test: dimension mismatch");
    if (n_perm < 1) throw std::invalid_argument("energy_distance_test: n_perm must be >= 1");
    const int na = a.data.rows, nb = b.data.rows, n = na + nb, d = a.data.cols;

    MatrixD pts(n, d);
    std::copy(a.data.data.begin(), a.data.data.end(), pts.data.begin());
    std::copy(b.data.data.begin(), b.data.data.end(),
              pts.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));

    // Global row sums R_i = sum_j d_ij, computed once. For any subset A,
    // sum_{i in A} R_i = 2 S_AA + S_AB, so each permutation only needs the
    // within-A triangular pass instead of the full O(n^2) matrix.
    std::vector<double> rowsums(static_cast<std::size_t>(n), 0.0);
    {
        constexpr int kBlock = 1024;
        double buf[kBlock];
        for (int i = 0; i < n; ++i) {
            const double* pi = pts.row(i);
            double acc = 0.0;
            for (int j0 = i + 1; j0 < n; j0 += kBlock) {
                const int m = std::min(kBlock, n - j0);
                detail::dist_block(pts, j0, m, pi, buf);
                double* rs = rowsums.data() + j0;
                for (int t = 0; t < m; ++t) {
                    acc += buf[t];
                    rs[t] += buf[t];
                }
            }
            rowsums[static_cast<std::size_t>(i)] += acc;
        }
    }
    double total = 0.0;
    for (double r : rowsums) total += r;
    const double total_unordered = 0.5 * total;

    MatrixD scratch(na, d);
    const auto energy = [&](const int* sel) {
        double rowsum_a = 0.0;
        for (int i = 0; i < na; ++i) {
            rowsum_a += rowsums[static_cast<std::size_t>(sel[i])];
            std::copy(pts.row(sel[i]), pts.row(sel[i]) + d, scratch.row(i));
        }
        const double within_a = detail::triangular_sum(scratch);
        const double cross = rowsum_a - 2.0 * within_a;
        const double within_b = total_unordered - within_a - cross;
        return 2.0 * cross / (static_cast<double>(na) * nb) -
               2.0 * within_a / (static_cast<double>(na) * na) -
               2.0 * within_b / (static_cast<double>(nb) * nb);
    };

    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    const double observed = energy(idx.data());

    Rng rng(seed);
    int count = 0, done = 0;
    for (int p = 0; p < n_perm; ++p) {
        rng.shuffle(idx);
        count += energy(idx.data()) >= observed ? 1 : 0;
        done = p + 1;
        if (early_stop_alpha > 0.0 && (1.0 + count) / (n_perm + 1.0) > early_stop_alpha)
            break;
    }
    return {observed, (1.0 + count) / (n_perm + 1.0), done};
}

// Gaussian total correlation from the sample correlation matrix P:
// -1/2 log det P, or -log det P with paper_convention (some texts drop the
// half when writing -log|Sigma_diag^{-1} Sigma|).
inline double gaussian_tc(const SampleSet& samples, bool paper_convention = false) {
    detail::validate_samples(samples, "gaussian_tc");
    const int n = samples.data.rows, d = samples.data.cols;
    if (n <= d) throw std::invalid_argument("gaussian_tc: need n > d");

    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* r = samples.data.row(i);
        for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += r[j];
    }
    for (auto& m : mean) m /= n;

    MatrixD cov(d, d);
    for (int i = 0; i < n; ++i) {
        const double* r = samples.data.row(i);
        for (int aa = 0; aa < d; ++aa) {
            const double da = r[aa] - mean[static_cast<std::size_t>(aa)];
            for (int bb = aa; bb < d; ++bb)
                cov(aa, bb) += da * (r[bb] - mean[static_cast<std::size_t>(bb)]);
        }
    }
    MatrixD corr(d, d);
    for (int aa = 0; aa < d; ++aa) {
        const double va = cov(aa, aa);
        if (va <= 0.0) throw std::domain_error("gaussian_tc: zero-variance dimension");
        for (int bb = aa; bb < d; ++bb) {
            const double c = cov(aa, bb) / std::sqrt(va * cov(bb, bb));
            corr(aa, bb) = c;
            corr(bb, aa) = c;
        }
    }

    // Cholesky; log det P = 2 sum log L_ii
    double logdet = 0.0;
    MatrixD chol(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double acc = corr(i, j);
            for (int t = 0; t < j; ++t) acc -= chol(i, t) * chol(j, t);
            if (i == j) {
                if (acc <= 0.0)
                    throw std::domain_error("gaussian_tc: correlation matrix is singular");
                chol(i, i) = std::sqrt(acc);
                logdet += 2.0 * std::log(chol(i, i));
            } else {
                chol(i, j) = acc / chol(j, j);
            }
        }
    }
    return paper_convention ? -logdet : -0.5 * logdet;
}

namespace detail {

inline double anderson_darling_stat(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= (n - 1);
    if (var <= 0.0) throw std::domain_error("anderson_darling: zero variance");
    const double sd = std::sqrt(var);
    std::sort(v.begin(), v.end());
    // ln Phi(x) and ln(1-Phi(x)) = ln Phi(-x), both via erfc for stability
    const auto log_phi = [](double x) {
        return std::log(0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0));
    };
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double zi = (v[static_cast<std::size_t>(i)] - mean) / sd;
        const double zr = (v[static_cast<std::size_t>(n - 1 - i)] - mean) / sd;
        acc += (2.0 * i + 1.0) * (log_phi(zi) + log_phi(-zr));
    }
    return -n - acc / n;
}

}  // namespace detail

// A^2 with estimated mean and variance. The composite null has no clean
// closed form, so the p-value comes from simulating the same statistic on
// n_null_sims standard-normal datasets of the same size.
inline TestResult anderson_darling(const SampleSet& samples, int n_null_sims,
                                   std::uint64_t seed) {
    detail::validate_samples(samples, "anderson_darling");
    if (samples.data.cols != 1)
        throw std::invalid_argument("anderson_darling: 1-D samples only");
    const int n = samples.data.rows;
    if (n < 20) throw std::invalid_argument("anderson_darling: need n >= 20");
    if (n_null_sims < 1) throw std::invalid_argument("anderson_darling: need n_null_sims >= 1");

    const double observed =
        detail::anderson_darling_stat({samples.data.data.begin(), samples.data.data.end()});

    Rng rng(seed);
    std::vector<double> sim(static_cast<std::size_t>(n));
    int count = 0;
    for (int s = 0; s < n_null_sims; ++s) {
        for (auto& v : sim) v = rng.normal();
        count += detail::anderson_darling_stat(sim) >= observed ? 1 : 0;
    }
    return {observed, (1.0 + count) / (n_null_sims + 1.0), n_null_sims};
}

}  // namespace echo

#endif
