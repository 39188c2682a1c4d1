#ifndef ECHO_DATASETS_HPP
#define ECHO_DATASETS_HPP

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "echo/matrix.hpp"
#include "echo/rng.hpp"

namespace echo {

enum class DatasetKind { continuous2d, binary_image };

struct Dataset {
    std::string name;
    MatrixD train;
    MatrixD test;  // may be empty; splits are always disjoint draws
    DatasetKind kind = DatasetKind::continuous2d;
};

// 8 Gaussian blobs on a ring, rescaled by the global max-|coordinate| so the
// box is exactly [-1,1]. Train gets n rows, test gets n/10 extra rows from
// the same stream.
inline Dataset make_mixture2d(int n, std::uint64_t seed) {
    if (n < 100) throw std::invalid_argument("make_mixture2d: n must be >= 100");
    const int n_test = n / 10;
    const double radius = 1.0, sigma = 0.1;
    Rng rng(seed);
    Dataset ds;
    ds.name = "mixture2d";
    ds.kind = DatasetKind::continuous2d;
    ds.train = MatrixD(n, 2);
    ds.test = MatrixD(n_test, 2);
    double max_abs = 0.0;
    auto fill = [&](MatrixD& m) {
        for (int i = 0; i < m.rows; ++i) {
            const int blob = rng.uniform_int(8);
            const double ang = 6.283185307179586 * blob / 8.0;
            double* row = m.row(i);
            row[0] = radius * std::cos(ang) + sigma * rng.normal();
            row[1] = radius * std::sin(ang) + sigma * rng.normal();
            max_abs = std::max(max_abs, std::max(std::abs(row[0]), std::abs(row[1])));
        }
    };
    fill(ds.train);
    fill(ds.test);
    for (auto& v : ds.train.data) v /= max_abs;
    for (auto& v : ds.test.data) v /= max_abs;
    return ds;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, std::size_t offset, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("idx '" + path + "': truncated at byte offset " +
                                 std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// IDX image file (magic 0x00000803, big-endian dims, u8 pixels), flattened to
// one row per image with pixels scaled to [0,1] and thresholded to {0,1}.
// Everything lands in train; use split_dataset for a held-out slice.
inline Dataset load_idx_images(const std::string& path, double binarize_threshold) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("idx '" + path + "': cannot open");
    const std::uint32_t magic = detail::read_be32(in, 0, path);
    if (magic != 0x00000803u) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "0x%08x", magic);
        throw std::runtime_error("idx '" + path + "': bad magic " + buf +
                                 " at byte offset 0 (want 0x00000803)");
    }
    const std::uint32_t n = detail::read_be32(in, 4, path);
    const std::uint32_t rows = detail::read_be32(in, 8, path);
    const std::uint32_t cols = detail::read_be32(in, 12, path);
    const std::size_t pixels = std::size_t(n) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
    if (static_cast<std::size_t>(in.gcount()) != pixels)
        throw std::runtime_error("idx '" + path + "': truncated at byte offset " +
                                 std::to_string(16 + in.gcount()) + " (want " +
                                 std::to_string(16 + pixels) + " bytes)");
    Dataset ds;
    ds.name = "idx:" + path;
    ds.kind = DatasetKind::binary_image;
    ds.train = MatrixD(static_cast<int>(n), static_cast<int>(rows * cols));
    for (std::size_t i = 0; i < pixels; ++i)
        ds.train.data[i] = (raw[i] / 255.0) >= binarize_threshold ? 1.0 : 0.0;
    return ds;
}

inline void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels,
                             int n, int rows, int cols) {
    if (pixels.size() != std::size_t(n) * rows * cols)
        throw std::invalid_argument("write_idx_images: pixel count does not match dims");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("idx '" + path + "': cannot open for writing");
    detail::write_be32(out, 0x00000803u);
    detail::write_be32(out, static_cast<std::uint32_t>(n));
    detail::write_be32(out, static_cast<std::uint32_t>(rows));
    detail::write_be32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("idx '" + path + "': short write");
}

// Moves the last fraction of train into test (rows keep their order; the
// slices stay disjoint).
inline Dataset split_dataset(const Dataset& ds, double test_fraction) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw std::invalid_argument("split_dataset: fraction must be in (0,1)");
    const int n = ds.train.rows;
    const int n_test = std::max(1, static_cast<int>(n * test_fraction));
    if (n_test >= n) throw std::invalid_argument("split_dataset: not enough rows");
    Dataset out;
    out.name = ds.name;
    out.kind = ds.kind;
    out.train = MatrixD(n - n_test, ds.train.cols);
    out.test = MatrixD(n_test, ds.train.cols);
    std::copy(ds.train.data.begin(),
              ds.train.data.begin() + static_cast<std::ptrdiff_t>(out.train.size()),
              out.train.data.begin());
    std::copy(ds.train.data.begin() + static_cast<std::ptrdiff_t>(out.train.size()),
              ds.train.data.end(), out.test.data.begin());
    return out;
}

}  // namespace echo

#endif
