#ifndef ECHO_AUTODIFF_HPP
#define ECHO_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "echo/matrix.hpp"

// Define-by-run reverse-mode tape. Every op builds a Node whose backprop
// closure scatters the node's grad into its parents. backward() walks the
// graph once in reverse topological order; nodes that do not reach the root
// keep a zero gradient.

namespace echo::ad {

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
    Matrix<T> value;
    Matrix<T> grad;  // sized and zeroed by backward() for reachable nodes
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backprop;
    bool requires_grad = false;
    const char* op = "leaf";

    int rows() const { return value.rows; }
    int cols() const { return value.cols; }
};

template <class T>
Var<T> leaf(Matrix<T> v, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

template <class T>
Var<T> constant(Matrix<T> v) {
    return leaf(std::move(v), false);
}

template <class T>
Var<T> scalar(T v) {
    Matrix<T> m(1, 1);
    m.data[0] = v;
    return leaf(std::move(m), false);
}

namespace detail {

template <class T>
Var<T> make_op(const char* name, Matrix<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->op = name;
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

// Post-order DFS without recursion; graphs can be thousands of nodes deep.
template <class T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

}  // namespace detail

// Seeds root with d(root)/d(root) = 1 and accumulates into every reachable
// requires_grad node. Root must be a 1x1 scalar.
template <class T>
std::vector<Node<T>*> backward(const Var<T>& root) {
    if (root->rows() != 1 || root->cols() != 1)
        throw std::invalid_argument(std::string("backward: root must be scalar, got ") +
                                    shape_str(root->rows(), root->cols()));
    if (!root->requires_grad)
        throw std::invalid_argument("backward: root does not depend on any parameter");
    auto order = detail::topo_order(root.get());
    for (Node<T>* n : order) n->grad = Matrix<T>(n->rows(), n->cols());
    root->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
    return order;
}

// ---- elementwise ----

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "add");
    return detail::make_op<T>(
        "add", zip(a->value, b->value, [](T x, T y) { return x + y; }), {a, b},
        [a, b](Node<T>& self) {
            if (a->requires_grad) axpy(a->grad, self.grad, T(1));
            if (b->requires_grad) axpy(b->grad, self.grad, T(1));
        });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "sub");
    return detail::make_op<T>(
        "sub", zip(a->value, b->value, [](T x, T y) { return x - y; }), {a, b},
        [a, b](Node<T>& self) {
            if (a->requires_grad) axpy(a->grad, self.grad, T(1));
            if (b->requires_grad) axpy(b->grad, self.grad, T(-1));
        });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->value, b->value, "mul");
    return detail::make_op<T>(
        "mul", zip(a->value, b->value, [](T x, T y) { return x * y; }), {a, b},
        [a, b](Node<T>& self) {
            if (a->requires_grad)
                for (std::size_t i = 0; i < self.grad.data.size(); ++i)
                    a->grad.data[i] += self.grad.data[i] * b->value.data[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < self.grad.data.size(); ++i)
                    b->grad.data[i] += self.grad.data[i] * a->value.data[i];
        });
}

template <class T>
Var<T> neg(const Var<T>& a) {
    return detail::make_op<T>(
        "neg", map(a->value, [](T x) { return -x; }), {a},
        [a](Node<T>& self) { axpy(a->grad, self.grad, T(-1)); });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, double c) {
    const T tc = static_cast<T>(c);
    return detail::make_op<T>(
        "add_scalar", map(a->value, [tc](T x) { return x + tc; }), {a},
        [a](Node<T>& self) { axpy(a->grad, self.grad, T(1)); });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, double c) {
    const T tc = static_cast<T>(c);
    return detail::make_op<T>(
        "mul_scalar", map(a->value, [tc](T x) { return x * tc; }), {a},
        [a, tc](Node<T>& self) { axpy(a->grad, self.grad, tc); });
}

// a is (n, c), row is (1, c); broadcast down the batch.
template <class T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& row) {
    if (row->rows() != 1 || row->cols() != a->cols())
        throw std::invalid_argument("add_rowvec: expected (1," + std::to_string(a->cols()) +
                                    "), got " + shape_str(row->rows(), row->cols()));
    Matrix<T> out(a->rows(), a->cols());
    for (int i = 0; i < a->rows(); ++i)
        for (int j = 0; j < a->cols(); ++j) out(i, j) = a->value(i, j) + row->value(0, j);
    return detail::make_op<T>(
        "add_rowvec", std::move(out), {a, row}, [a, row](Node<T>& self) {
            if (a->requires_grad) axpy(a->grad, self.grad, T(1));
            if (row->requires_grad)
                for (int i = 0; i < self.grad.rows; ++i)
                    for (int j = 0; j < self.grad.cols; ++j)
                        row->grad(0, j) += self.grad(i, j);
        });
}

#define ECHO_AD_UNARY(NAME, FWD, BWD_EXPR)                                            \
    template <class T>                                                                \
    Var<T> NAME(const Var<T>& a) {                                                    \
        return detail::make_op<T>(                                                    \
            #NAME, map(a->value, [](T x) { return FWD; }), {a}, [a](Node<T>& self) {  \
                for (std::size_t i = 0; i < self.grad.data.size(); ++i) {             \
                    const T x = a->value.data[i];                                     \
                    const T y = self.value.data[i];                                   \
                    (void)x;                                                          \
                    (void)y;                                                          \
                    a->grad.data[i] += self.grad.data[i] * (BWD_EXPR);                \
                }                                                                     \
            });                                                                       \
    }

ECHO_AD_UNARY(tanh_, std::tanh(x), T(1) - y * y)
ECHO_AD_UNARY(sigmoid_, stable_sigmoid(x), y * (T(1) - y))
ECHO_AD_UNARY(exp_, std::exp(x), y)
ECHO_AD_UNARY(log_, std::log(x), T(1) / x)
ECHO_AD_UNARY(softplus_, stable_softplus(x), stable_sigmoid(x))
ECHO_AD_UNARY(logsigmoid_, stable_logsigmoid(x), stable_sigmoid(-x))

#undef ECHO_AD_UNARY

// ---- linear algebra ----

template <class T>
Var<T> matmul_(const Var<T>& a, const Var<T>& b) {
    return detail::make_op<T>(
        "matmul", matmul(a->value, b->value), {a, b}, [a, b](Node<T>& self) {
            if (a->requires_grad) axpy(a->grad, matmul_nt(self.grad, b->value), T(1));
            if (b->requires_grad) axpy(b->grad, matmul_tn(a->value, self.grad), T(1));
        });
}

// ---- shape ops ----

template <class T>
Var<T> row_sum(const Var<T>& a) {
    Matrix<T> out(a->rows(), 1);
    for (int i = 0; i < a->rows(); ++i) {
        T s = T(0);
        const T* r = a->value.row(i);
        for (int j = 0; j < a->cols(); ++j) s += r[j];
        out(i, 0) = s;
    }
    return detail::make_op<T>(
        "row_sum", std::move(out), {a}, [a](Node<T>& self) {
            for (int i = 0; i < a->grad.rows; ++i) {
                const T g = self.grad(i, 0);
                T* r = a->grad.row(i);
                for (int j = 0; j < a->grad.cols; ++j) r[j] += g;
            }
        });
}

template <class T>
Var<T> sum_all(const Var<T>& a) {
    Matrix<T> out(1, 1);
    T s = T(0);
    for (T v : a->value.data) s += v;
    out.data[0] = s;
    return detail::make_op<T>(
        "sum_all", std::move(out), {a}, [a](Node<T>& self) {
            const T g = self.grad.data[0];
            for (auto& v : a->grad.data) v += g;
        });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
    if (a->value.empty()) throw std::invalid_argument("mean_all: empty input");
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
    if (a->rows() != b->rows())
        throw std::invalid_argument("concat_cols: row counts disagree");
    Matrix<T> out(a->rows(), a->cols() + b->cols());
    for (int i = 0; i < a->rows(); ++i) {
        T* o = out.row(i);
        const T* ra = a->value.row(i);
        const T* rb = b->value.row(i);
        for (int j = 0; j < a->cols(); ++j) o[j] = ra[j];
        for (int j = 0; j < b->cols(); ++j) o[a->cols() + j] = rb[j];
    }
    return detail::make_op<T>(
        "concat_cols", std::move(out), {a, b}, [a, b](Node<T>& self) {
            const int ca = a->cols();
            for (int i = 0; i < self.grad.rows; ++i) {
                const T* g = self.grad.row(i);
                if (a->requires_grad)
                    for (int j = 0; j < ca; ++j) a->grad(i, j) += g[j];
                if (b->requires_grad)
                    for (int j = 0; j < b->cols(); ++j) b->grad(i, j) += g[ca + j];
            }
        });
}

// out.row(i) = a.row(idx[i]); backward scatter-adds, so repeated indices
// accumulate as they must.
template <class T>
Var<T> gather_rows(const Var<T>& a, std::vector<int> idx) {
    for (int i : idx)
        if (i < 0 || i >= a->rows())
            throw std::out_of_range("gather_rows: index " + std::to_string(i) + " outside " +
                                    std::to_string(a->rows()) + " rows");
    Matrix<T> out(static_cast<int>(idx.size()), a->cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const T* src = a->value.row(idx[i]);
        T* dst = out.row(static_cast<int>(i));
        for (int j = 0; j < a->cols(); ++j) dst[j] = src[j];
    }
    return detail::make_op<T>(
        "gather_rows", std::move(out), {a},
        [a, idx = std::move(idx)](Node<T>& self) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const T* g = self.grad.row(static_cast<int>(i));
                T* dst = a->grad.row(idx[i]);
                for (int j = 0; j < self.grad.cols; ++j) dst[j] += g[j];
            }
        });
}

// Value passes through, gradient does not.
template <class T>
Var<T> detach(const Var<T>& a) {
    return constant(a->value);
}

}  // namespace echo::ad

#endif
