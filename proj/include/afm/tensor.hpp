#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace afm::ad {

// Dense row-major matrix of doubles. Row and column vectors are 1xN / Nx1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Tensor row(std::initializer_list<double> v);
  static Tensor row(const std::vector<double>& v);
  static Tensor col(const std::vector<double>& v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

  void set_zero();
  void add_scaled(const Tensor& other, double scale);  // *this += scale * other
  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// c = a * b, or c += a * b when accumulate is set. Shapes must already agree.
void matmul(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);

// c = a * b^T (+ c).
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);

// c = a^T * b (+ c).
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);

}  // namespace afm::ad
