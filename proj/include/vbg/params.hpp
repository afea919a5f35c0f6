#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "vbg/autograd.hpp"
#include "vbg/tensor.hpp"

namespace vbg {

// Named parameter tensors. Ordered by name so iteration (checkpointing,
// optimizer sweeps) is deterministic.
class ParamStore {
public:
    Tensor& add(const std::string& name, std::vector<int> shape, double fill = 0.0);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    std::map<std::string, Tensor>& all() { return params_; }
    const std::map<std::string, Tensor>& all() const { return params_; }

    void init_normal(const std::string& name, std::mt19937_64& rng, double stddev);
    void init_uniform(const std::string& name, std::mt19937_64& rng, double lo, double hi);

private:
    std::map<std::string, Tensor> params_;
};

// Per-forward-pass view of a ParamStore as autograd leaves. The same name
// always maps to the same node within one context, so reuse accumulates
// gradients correctly.
class ParamContext {
public:
    explicit ParamContext(const ParamStore& store, bool requires_grad = true)
        : store_(store), requires_grad_(requires_grad) {}

    Var operator[](const std::string& name);
    bool has(const std::string& name) const { return store_.has(name); }

    // Gradient for `name`, or an empty tensor if the parameter was unused.
    Tensor grad_of(const std::string& name) const;
    const std::map<std::string, Var>& used() const { return vars_; }

private:
    const ParamStore& store_;
    bool requires_grad_;
    std::map<std::string, Var> vars_;
};

}  // namespace vbg
