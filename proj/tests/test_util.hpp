#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vbg/autograd.hpp"

namespace vbg::test {

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

// Central finite differences for an arbitrary Var-valued op: reduces the
// output with fixed random weights to a scalar, checks every input coordinate.
inline double fd_check(std::vector<Tensor>& inputs,
                       const std::function<Var(const std::vector<Var>&)>& fn,
                       std::mt19937_64& rng, double step = 1e-6) {
    std::vector<Var> leaves;
    for (Tensor& t : inputs) leaves.push_back(make_leaf(t, true));
    Var out = fn(leaves);
    Tensor weights = random_tensor(out->value.shape(), rng);
    Var loss = sum_all(mul(out, make_const(weights)));
    backward(loss);

    auto eval = [&]() {
        std::vector<Var> consts;
        for (Tensor& t : inputs) consts.push_back(make_const(t));
        Var o = fn(consts);
        double s = 0.0;
        for (std::int64_t i = 0; i < o->value.numel(); ++i) s += o->value[i] * weights[i];
        return s;
    };

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor& g = leaves[k]->grad;
        for (std::int64_t i = 0; i < inputs[k].numel(); ++i) {
            const double orig = inputs[k][i];
            inputs[k][i] = orig + step;
            const double hi = eval();
            inputs[k][i] = orig - step;
            const double lo = eval();
            inputs[k][i] = orig;
            const double numeric = (hi - lo) / (2.0 * step);
            const double analytic = g.empty() ? 0.0 : g[i];
            worst = std::max(worst, rel_err(analytic, numeric));
        }
    }
    return worst;
}

}  // namespace vbg::test
