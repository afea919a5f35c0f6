#include "vbg/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

namespace vbg {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

void Tensor::add_(const Tensor& o) {
    assert(same_shape(o));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
}

void Tensor::scale_(double s) {
    for (double& v : data_) v *= s;
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    assert(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0));
    Tensor c({a.dim(0), b.dim(1)});
    MMap(c.data(), c.dim(0), c.dim(1)) =
        CMap(a.data(), a.dim(0), a.dim(1)) * CMap(b.data(), b.dim(0), b.dim(1));
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    assert(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0));
    Tensor c({a.dim(1), b.dim(1)});
    MMap(c.data(), c.dim(0), c.dim(1)) =
        CMap(a.data(), a.dim(0), a.dim(1)).transpose() * CMap(b.data(), b.dim(0), b.dim(1));
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    assert(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1));
    Tensor c({a.dim(0), b.dim(0)});
    MMap(c.data(), c.dim(0), c.dim(1)) =
        CMap(a.data(), a.dim(0), a.dim(1)) * CMap(b.data(), b.dim(0), b.dim(1)).transpose();
    return c;
}

}  // namespace vbg
