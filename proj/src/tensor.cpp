#include "casciff/tensor.hpp"

#include <cmath>

#include "casciff/errors.hpp"

namespace casciff {

namespace {
std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
  if (shape_.empty() || shape_.size() > 2)
    throw ShapeError("tensor rank must be 1 or 2, got " + std::to_string(shape_.size()));
}

Tensor Tensor::zeros(std::initializer_list<std::size_t> shape) {
  return Tensor(std::vector<std::size_t>(shape));
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data_[0] = v;
  return t;
}

Tensor Tensor::vec(std::vector<double> values) {
  Tensor t({values.size()});
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols)
    throw ShapeError("matrix init: " + std::to_string(values.size()) + " values for shape (" +
                     std::to_string(rows) + "," + std::to_string(cols) + ")");
  Tensor t({rows, cols});
  t.data_ = std::move(values);
  return t;
}

std::string Tensor::shape_str() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape_[i]);
  }
  return s + ")";
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace casciff
