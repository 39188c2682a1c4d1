#ifndef ECHO_RNG_HPP
#define ECHO_RNG_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "echo/matrix.hpp"

namespace echo {

// mt19937_64 with hand-rolled output transforms. The engine is pinned by the
// standard, the std:: distributions are not, so rolling our own keeps streams
// identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller, one spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
        const double u2 = uniform();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        spare_ = rad * std::sin(ang);
        has_spare_ = true;
        return rad * std::cos(ang);
    }

    // Unbiased draw from {0, ..., n-1} by rejection.
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t bound = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= bound);
        return static_cast<int>(x % un);
    }

    // Fisher-Yates.
    template <class V>
    void shuffle(std::vector<V>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        shuffle(p);
        return p;
    }

    template <class T = double>
    Matrix<T> normal_matrix(int r, int c) {
        Matrix<T> m(r, c);
        for (auto& v : m.data) v = static_cast<T>(normal());
        return m;
    }

    template <class T = double>
    Matrix<T> uniform_matrix(int r, int c, double lo, double hi) {
        Matrix<T> m(r, c);
        for (auto& v : m.data) v = static_cast<T>(uniform(lo, hi));
        return m;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Cheap seed derivation (splitmix64 step) so nested components get
// decorrelated streams from one user-facing seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace echo

#endif
