#ifndef ECHO_MATRIX_HPP
#define ECHO_MATRIX_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace echo {

// Dense row-major matrix. The batch dimension always comes first.
template <class T>
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}
    Matrix(int r, int c, T fill) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    T* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
    const T* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

    T& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    T operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    template <class U>
    Matrix<U> cast() const {
        Matrix<U> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

inline std::string shape_str(int r, int c) {
    return "(" + std::to_string(r) + "," + std::to_string(c) + ")";
}

template <class T>
void check_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    shape_str(a.rows, a.cols) + " vs " + shape_str(b.rows, b.cols));
}

template <class T, class F>
Matrix<T> map(const Matrix<T>& a, F f) {
    Matrix<T> out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
    return out;
}

template <class T, class F>
Matrix<T> zip(const Matrix<T>& a, const Matrix<T>& b, F f) {
    check_same_shape(a, b, "zip");
    Matrix<T> out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
}

// y += alpha * x
template <class T>
void axpy(Matrix<T>& y, const Matrix<T>& x, T alpha) {
    check_same_shape(y, x, "axpy");
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

// C = A * B, ikj order so the inner loop is a vectorizable saxpy.
template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul: inner dims " + shape_str(a.rows, a.cols) + " x " +
                                    shape_str(b.rows, b.cols));
    Matrix<T> c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        T* cr = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const T aik = ar[k];
            const T* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return c;
}

// C = A^T * B without materializing A^T.
template <class T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_tn: outer dims disagree");
    Matrix<T> c(a.cols, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const T* ar = a.row(i);
        const T* br = b.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const T aik = ar[k];
            T* cr = c.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return c;
}

// C = A * B^T. B is transposed up front; shapes here are small.
template <class T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_nt: inner dims disagree");
    return matmul(a, transpose(b));
}

// Numerically stable scalar activations shared by forward kernels and tests.
template <class T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T t = std::exp(x);
    return t / (T(1) + t);
}

template <class T>
T stable_softplus(T x) {
    if (x > T(0)) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

template <class T>
T stable_logsigmoid(T x) {
    return -stable_softplus(-x);
}

}  // namespace echo

#endif
