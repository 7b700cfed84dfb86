#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "biophys/tensor.hpp"

namespace biophys {

struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
};

/// Flat, ordered store of named parameter tensors. Models register their
/// parameters here and refer to them by index; the trainer pushes the whole
/// store onto a fresh tape each step.
struct ParamStore {
    std::vector<Param> params;

    int add(std::string name, Shape shape, std::vector<double> value) {
        if (shape_numel(shape) != value.size())
            throw std::invalid_argument("ParamStore::add: shape/value mismatch for " + name);
        params.push_back(Param{std::move(name), std::move(shape), std::move(value)});
        return static_cast<int>(params.size()) - 1;
    }

    /// Push every parameter as a differentiable leaf on the given tape.
    std::vector<Tensor> push_leaves(Tape& tape) const {
        std::vector<Tensor> out;
        out.reserve(params.size());
        for (const auto& p : params) out.push_back(tape.leaf(p.shape, p.value, true));
        return out;
    }

    size_t total_size() const {
        size_t n = 0;
        for (const auto& p : params) n += p.value.size();
        return n;
    }

    int find(const std::string& name) const {
        for (size_t i = 0; i < params.size(); ++i)
            if (params[i].name == name) return static_cast<int>(i);
        return -1;
    }
};

namespace detail {
inline std::vector<double> uniform_init(std::mt19937_64& rng, size_t n, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}
}  // namespace detail

/// Central-difference check of a scalar loss over every parameter in a store.
/// `coords_per_param` > 0 limits the check to a random coordinate subset of
/// each parameter; the reverse-mode pass always covers everything.
inline double grad_check_store(ParamStore& store,
                               const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                               double eps, int coords_per_param = -1, uint64_t coord_seed = 0) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check_store: eps must be positive");
    std::vector<std::vector<double>> ad;
    {
        Tape tape;
        auto leaves = store.push_leaves(tape);
        Tensor y = f(tape, leaves);
        if (!std::isfinite(y.scalar()))
            throw std::runtime_error("grad_check_store: non-finite evaluation");
        tape.backward(y);
        for (const auto& leaf : leaves) ad.push_back(tape.grad(leaf));
    }
    auto eval = [&]() {
        Tape tape;
        auto leaves = store.push_leaves(tape);
        const double v = f(tape, leaves).scalar();
        if (!std::isfinite(v)) throw std::runtime_error("grad_check_store: non-finite evaluation");
        return v;
    };
    std::mt19937_64 rng(coord_seed);
    double max_err = 0.0;
    for (size_t p = 0; p < store.params.size(); ++p) {
        auto& value = store.params[p].value;
        std::vector<size_t> coords;
        if (coords_per_param > 0 && value.size() > static_cast<size_t>(coords_per_param)) {
            for (int k = 0; k < coords_per_param; ++k) coords.push_back(rng() % value.size());
        } else {
            coords.resize(value.size());
            for (size_t i = 0; i < value.size(); ++i) coords[i] = i;
        }
        for (size_t i : coords) {
            const double orig = value[i];
            value[i] = orig + eps;
            const double fp = eval();
            value[i] = orig - eps;
            const double fm = eval();
            value[i] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double err = std::abs(ad[p][i] - fd) / std::max(1.0, std::abs(fd));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace biophys
