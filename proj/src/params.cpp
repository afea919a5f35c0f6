#include "vbg/params.hpp"

#include <stdexcept>

namespace vbg {

Tensor& ParamStore::add(const std::string& name, std::vector<int> shape, double fill) {
    auto [it, inserted] = params_.emplace(name, Tensor(std::move(shape), fill));
    if (!inserted) throw std::invalid_argument("duplicate parameter: " + name);
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

void ParamStore::init_normal(const std::string& name, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : at(name).vec()) v = dist(rng);
}

void ParamStore::init_uniform(const std::string& name, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : at(name).vec()) v = dist(rng);
}

Var ParamContext::operator[](const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = make_leaf(store_.at(name), requires_grad_, name);
    vars_.emplace(name, v);
    return v;
}

Tensor ParamContext::grad_of(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) return Tensor();
    return it->second->grad;
}

}  // namespace vbg
