#ifndef OVD_TENSOR_HPP
#define OVD_TENSOR_HPP

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "ovd/errors.hpp"
#include "ovd/rng.hpp"

namespace ovd {

// Dense row-major double tensor. Small and value-semantic; every numeric
// path in the project (model, oracles, metrics) runs on doubles.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != count(shape_))
      throw ShapeError("tensor data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto &x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor randn(std::vector<int> shape, rng::Rng &rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto &x : t.data_) x = rng.normal(0.0, stddev);
    return t;
  }

  const std::vector<int> &shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  int rows() const { assert(ndim() == 2); return shape_[0]; }
  int cols() const { assert(ndim() == 2); return shape_[1]; }

  double *data() { return data_.data(); }
  const double *data() const { return data_.data(); }
  std::vector<double> &vec() { return data_; }
  const std::vector<double> &vec() const { return data_; }

  double &operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double &at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor &o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != numel()) throw ShapeError("reshape numel mismatch");
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { for (auto &x : data_) x = v; }

  static int64_t count(const std::vector<int> &shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }

private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// Eigen-backed kernels (tensor.cpp).
Tensor matmul(const Tensor &a, const Tensor &b);      // [m,k]x[k,n]
Tensor matmul_nt(const Tensor &a, const Tensor &b);   // a * b^T: [m,k]x[n,k]
Tensor matmul_tn(const Tensor &a, const Tensor &b);   // a^T * b: [k,m]x[k,n]
Tensor transpose2d(const Tensor &a);

bool all_finite(const Tensor &t);
double checksum(const Tensor &t); // order-sensitive fingerprint

} // namespace ovd

#endif
