#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace casciff {

// Dense row-major tensor of 64-bit floats. Rank 1 or 2 in practice.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);

  static Tensor zeros(std::initializer_list<std::size_t> shape);
  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);

  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  // 2-D view: rank-1 tensors count as a single row.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    return shape_.size() == 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]);
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(double v);
  void zero() { fill(0.0); }
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Throws ShapeError naming both shapes when they differ.
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace casciff
