#include "flowpos/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "flowpos/errors.hpp"

namespace flowpos {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shp, std::vector<double> vals)
    : shape(std::move(shp)), values(std::move(vals)) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str() + " does not match " +
                         std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::row(std::vector<double> vals) {
  std::size_t n = vals.size();
  return Tensor({1, n}, std::move(vals));
}

Tensor Tensor::matrix(std::size_t m, std::size_t n, std::vector<double> vals) {
  return Tensor({m, n}, std::move(vals));
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double sigma,
                     double mean) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.values) v = rng.normal(mean, sigma);
  return t;
}

std::size_t Tensor::rows() const {
  if (shape.empty()) return 0;
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() == 1) return shape[0];
  if (shape.size() == 2) return shape[1];
  throw DimensionError("cols() on tensor of rank " + std::to_string(rank()));
}

double& Tensor::at(std::size_t i, std::size_t j) {
  return values[i * cols() + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return values[i * cols() + j];
}

void Tensor::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

bool Tensor::finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.values) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.values.size() != b.values.size()) {
    throw DimensionError("max_abs_diff over " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.values.data(), b.values.data(),
                     a.values.size() * sizeof(double)) == 0;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b,
                 double floor) {
  if (a.size() != b.size())
    throw DimensionError("rel_error over vectors of different lengths");
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    da = std::max(da, std::abs(a[i]));
    db = std::max(db, std::abs(b[i]));
  }
  return num / std::max({da, db, floor});
}

double rel_error(const Tensor& a, const Tensor& b, double floor) {
  return rel_error(a.values, b.values, floor);
}

}  // namespace flowpos
