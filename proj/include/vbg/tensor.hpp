#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

namespace vbg {

// Dense row-major tensor of doubles, rank <= 4.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}
    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        assert(static_cast<std::int64_t>(data_.size()) == numel_of(shape_));
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 2D / 3D / 4D indexed access.
    double& at(int i, int j) { return data_[idx2(i, j)]; }
    double at(int i, int j) const { return data_[idx2(i, j)]; }
    double& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
    double at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
    double& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
    double at(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    void add_(const Tensor& o);
    void scale_(double s);
    double abs_max() const;
    bool all_finite() const;

    static std::int64_t numel_of(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::size_t idx2(int i, int j) const {
        assert(rank() == 2);
        return static_cast<std::size_t>(i) * shape_[1] + j;
    }
    std::size_t idx3(int i, int j, int k) const {
        assert(rank() == 3);
        return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    std::size_t idx4(int i, int j, int k, int l) const {
        assert(rank() == 4);
        return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

// C = A * B for 2D tensors (m×k · k×n).
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A^T * B.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// C = A * B^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

}  // namespace vbg
