#ifndef ECHO_GAUSSIAN_CHANNEL_HPP
#define ECHO_GAUSSIAN_CHANNEL_HPP

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "echo/autodiff.hpp"
#include "echo/matrix.hpp"
#include "echo/rng.hpp"

// Gaussian baseline: z = mu + sigma .* eta with eta ~ N(0, I), rate reported
// as the analytic KL to a standard-normal prior. Unlike the echo rate this is
// only an upper bound on the information, but it is the standard VAE bound
// and uses the same units and batch-mean reduction.

namespace echo {

template <class T>
Matrix<T> gaussian_sample(const Matrix<T>& mu, const Matrix<T>& log_sigma, std::uint64_t seed) {
    check_same_shape(mu, log_sigma, "gaussian_sample");
    Rng rng(seed);
    Matrix<T> z(mu.rows, mu.cols);
    for (std::size_t i = 0; i < z.data.size(); ++i)
        z.data[i] = mu.data[i] + std::exp(log_sigma.data[i]) * static_cast<T>(rng.normal());
    return z;
}

// Reparameterized: the noise is a constant leaf, gradients reach mu and
// log_sigma only.
template <class T>
ad::Var<T> gaussian_sample_graph(const ad::Var<T>& mu, const ad::Var<T>& log_sigma,
                                 std::uint64_t seed) {
    Rng rng(seed);
    return ad::add(mu, ad::mul(ad::exp_(log_sigma),
                               ad::constant(rng.normal_matrix<T>(mu->rows(), mu->cols()))));
}

// pointwise[i] = 1/2 sum_j (mu^2 + sigma^2 - 2 log sigma - 1)
template <class T>
std::pair<double, std::vector<double>> gaussian_kl_rate(const Matrix<T>& mu,
                                                        const Matrix<T>& log_sigma) {
    check_same_shape(mu, log_sigma, "gaussian_kl_rate");
    std::vector<double> pointwise(static_cast<std::size_t>(mu.rows));
    double total = 0.0;
    for (int i = 0; i < mu.rows; ++i) {
        const T* m = mu.row(i);
        const T* ls = log_sigma.row(i);
        double acc = 0.0;
        for (int j = 0; j < mu.cols; ++j) {
            const double mj = static_cast<double>(m[j]);
            const double lj = static_cast<double>(ls[j]);
            acc += mj * mj + std::exp(2.0 * lj) - 2.0 * lj - 1.0;
        }
        pointwise[static_cast<std::size_t>(i)] = 0.5 * acc;
        total += pointwise[static_cast<std::size_t>(i)];
    }
    return {total / static_cast<double>(mu.rows), pointwise};
}

template <class T>
struct GaussianRateGraph {
    ad::Var<T> rate;
    ad::Var<T> pointwise;
};

template <class T>
GaussianRateGraph<T> gaussian_kl_rate_graph(const ad::Var<T>& mu, const ad::Var<T>& log_sigma) {
    using namespace ad;
    auto sq_mu = mul(mu, mu);
    auto var = exp_(mul_scalar(log_sigma, 2.0));
    auto elem = add_scalar(add(add(sq_mu, var), mul_scalar(log_sigma, -2.0)), -1.0);
    GaussianRateGraph<T> out;
    out.pointwise = mul_scalar(row_sum(elem), 0.5);
    out.rate = mean_all(out.pointwise);
    return out;
}

}  // namespace echo

#endif
