#ifndef ECHO_OPTIMIZER_HPP
#define ECHO_OPTIMIZER_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "echo/autodiff.hpp"
#include "echo/matrix.hpp"
#include "echo/rng.hpp"

namespace echo {

// Named trainable leaves plus Adam state. std::map keeps parameters in name
// order, which fixes the serialization layout and the update order.
template <class T>
class ParameterStore {
public:
    ad::Var<T> create(const std::string& name, Matrix<T> init) {
        if (params_.count(name))
            throw std::invalid_argument("parameter '" + name + "' already exists");
        auto v = ad::leaf(std::move(init), true);
        params_.emplace(name, v);
        return v;
    }

    ad::Var<T> at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end())
            throw std::out_of_range("no parameter named '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    std::size_t count() const { return params_.size(); }
    long step() const { return step_; }

    const std::map<std::string, ad::Var<T>>& params() const { return params_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, v] : params_) n += v->value.size();
        return n;
    }

    // Bias-corrected Adam. Every parameter must have an entry in grads.
    void adam_step(const std::map<std::string, Matrix<T>>& grads, double lr,
                   double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        ++step_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (auto& [name, v] : params_) {
            auto git = grads.find(name);
            if (git == grads.end())
                throw std::invalid_argument("adam_step: missing gradient for '" + name + "'");
            const Matrix<T>& g = git->second;
            check_same_shape(v->value, g, "adam_step");
            auto& [m, vel] = moments_[name];
            if (m.empty()) {
                m = Matrix<T>(g.rows, g.cols);
                vel = Matrix<T>(g.rows, g.cols);
            }
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                const double gi = static_cast<double>(g.data[i]);
                double mi = beta1 * static_cast<double>(m.data[i]) + (1.0 - beta1) * gi;
                double vi = beta2 * static_cast<double>(vel.data[i]) + (1.0 - beta2) * gi * gi;
                m.data[i] = static_cast<T>(mi);
                vel.data[i] = static_cast<T>(vi);
                const double mhat = mi / c1;
                const double vhat = vi / c2;
                v->value.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }

    void reset_optimizer() {
        moments_.clear();
        step_ = 0;
    }

private:
    std::map<std::string, ad::Var<T>> params_;
    std::map<std::string, std::pair<Matrix<T>, Matrix<T>>> moments_;
    long step_ = 0;
};

// Runs backward and returns one gradient per parameter. Parameters the graph
// never touched come back as zeros, not stale values from an earlier pass.
template <class T>
std::map<std::string, Matrix<T>> forward_backward(const ad::Var<T>& root,
                                                  const ParameterStore<T>& store) {
    auto order = ad::backward(root);
    std::unordered_set<const ad::Node<T>*> reached(order.begin(), order.end());
    std::map<std::string, Matrix<T>> grads;
    for (const auto& [name, v] : store.params()) {
        if (reached.count(v.get()))
            grads.emplace(name, v->grad);
        else
            grads.emplace(name, Matrix<T>(v->value.rows, v->value.cols));
    }
    return grads;
}

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;  // "name[i]" of the worst coordinate
    bool pass = false;
};

// Central finite differences against the tape, double precision only. The
// builder must be deterministic: any randomness inside has to be re-seeded on
// every call. Relative error uses a floor of 1e-6 * max|grad| so coordinates
// with near-zero gradient do not drown in quantization noise.
inline GradCheckReport grad_check(
    const std::function<ad::Var<double>(ParameterStore<double>&)>& build,
    ParameterStore<double>& store, double h = 1e-5, double tol = 1e-6) {
    auto root = build(store);
    if (!root->value.all_finite())
        throw std::runtime_error("grad_check: objective is not finite");
    auto grads = forward_backward(root, store);

    double gmax = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g.data) gmax = std::max(gmax, std::abs(v));
    const double floor = std::max(1e-6 * gmax, 1e-12);

    GradCheckReport rep;
    for (const auto& [name, v] : store.params()) {
        const Matrix<double>& g = grads.at(name);
        for (std::size_t i = 0; i < v->value.data.size(); ++i) {
            const double orig = v->value.data[i];
            v->value.data[i] = orig + h;
            const double fp = build(store)->value.data[0];
            v->value.data[i] = orig - h;
            const double fm = build(store)->value.data[0];
            v->value.data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: non-finite objective at '" + name + "'");
            const double fd = (fp - fm) / (2.0 * h);
            const double ga = g.data[i];
            const double rel = std::abs(ga - fd) / std::max(std::abs(ga) + std::abs(fd), floor);
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace echo

#endif
