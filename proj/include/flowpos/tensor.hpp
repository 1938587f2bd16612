#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "flowpos/rng.hpp"

namespace flowpos {

// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass populates it
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shp, std::vector<double> vals);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor scalar(double v);                  // shape {1,1}
  static Tensor row(std::vector<double> vals);     // shape {1,n}
  static Tensor matrix(std::size_t m, std::size_t n, std::vector<double> vals);
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng,
                      double sigma = 1.0, double mean = 0.0);

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_matrix() const { return shape.size() == 2; }

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  void ensure_grad();  // allocate a zeroed grad buffer if missing
  void zero_grad();
  bool finite() const;
  std::string shape_str() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
bool same_shape(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

// ||a - b||_inf / max(||a||_inf, ||b||_inf, floor): norm-wise relative error,
// the comparison currency of every gradient and cross-method check.
double rel_error(const Tensor& a, const Tensor& b, double floor = 1e-12);
double rel_error(const std::vector<double>& a, const std::vector<double>& b,
                 double floor = 1e-12);

}  // namespace flowpos
