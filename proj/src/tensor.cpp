#include "afm/tensor.hpp"

#include <Eigen/Dense>

#include <cassert>
#include <cmath>

namespace afm::ad {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatMap map_of(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap map_of(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor Tensor::row(std::initializer_list<double> v) {
  Tensor t(1, v.size());
  std::size_t i = 0;
  for (double x : v) t.data_[i++] = x;
  return t;
}

Tensor Tensor::row(const std::vector<double>& v) {
  Tensor t(1, v.size());
  t.data_ = v;
  return t;
}

Tensor Tensor::col(const std::vector<double>& v) {
  Tensor t(v.size(), 1);
  t.data_ = v;
  return t;
}

void Tensor::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

void Tensor::add_scaled(const Tensor& other, double scale) {
  assert(same_shape(other));
  const double* src = other.data();
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * src[i];
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void matmul(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  assert(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols());
  if (accumulate) {
    map_of(c).noalias() += map_of(a) * map_of(b);
  } else {
    map_of(c).noalias() = map_of(a) * map_of(b);
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  assert(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows());
  if (accumulate) {
    map_of(c).noalias() += map_of(a) * map_of(b).transpose();
  } else {
    map_of(c).noalias() = map_of(a) * map_of(b).transpose();
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  assert(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols());
  if (accumulate) {
    map_of(c).noalias() += map_of(a).transpose() * map_of(b);
  } else {
    map_of(c).noalias() = map_of(a).transpose() * map_of(b);
  }
}

}  // namespace afm::ad
