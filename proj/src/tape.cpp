#include "flowpos/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flowpos/errors.hpp"

namespace flowpos {

namespace {

void check_finite_output(const Tensor& t, const char* op) {
  if (!t.finite()) {
    throw NumericError(std::string("non-finite value in output of ") + op);
  }
}

bool row_broadcastable(const Tensor& a, const Tensor& b) {
  // b broadcasts over the rows of a when it is a {d} or {1,d} vector.
  if (!a.is_matrix()) return false;
  if (b.rank() == 1) return b.shape[0] == a.cols();
  return b.is_matrix() && b.rows() == 1 && b.cols() == a.cols();
}

}  // namespace

int Tape::push(Node n) {
  n.grad.assign(n.val.values.size(), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::at(Var v) const {
  check_same_tape(v);
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::at(Var v) {
  check_same_tape(v);
  return nodes_[static_cast<std::size_t>(v.id)];
}

void Tape::check_same_tape(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ContractError("Var does not belong to this tape");
}

bool Tape::any_requires(const std::vector<int>& in) const {
  for (int i : in)
    if (nodes_[static_cast<std::size_t>(i)].requires_grad) return true;
  return false;
}

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kInput;
  n.val = std::move(value);
  n.requires_grad = requires_grad;
  return Var{push(std::move(n))};
}

Var Tape::param(Tensor& external) {
  if (!external.requires_grad)
    throw ContractError("param() requires a tensor with requires_grad set");
  Node n;
  n.op = Op::kInput;
  n.val = external;
  n.requires_grad = true;
  n.external = &external;
  return Var{push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = at(a).val;
  const Tensor& B = at(b).val;
  if (!A.is_matrix() || !B.is_matrix() || A.cols() != B.rows()) {
    throw DimensionError("matmul shape mismatch: " + A.shape_str() + " x " +
                         B.shape_str());
  }
  std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double aip = A.values[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B.values[p * n];
      double* crow = &C.values[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  check_finite_output(C, "matmul");
  Node node;
  node.op = Op::kMatmul;
  node.in = {a.id, b.id};
  node.val = std::move(C);
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = at(a).val;
  const Tensor& B = at(b).val;
  Node node;
  node.in = {a.id, b.id};
  if (same_shape(A, B)) {
    node.op = Op::kAdd;
    Tensor C = A;
    for (std::size_t i = 0; i < C.values.size(); ++i)
      C.values[i] += B.values[i];
    node.val = std::move(C);
  } else if (row_broadcastable(A, B)) {
    node.op = Op::kAddRow;
    Tensor C = A;
    std::size_t d = A.cols();
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) C.values[i * d + j] += B.values[j];
    node.val = std::move(C);
  } else {
    throw DimensionError("add shape mismatch: " + A.shape_str() + " + " +
                         B.shape_str());
  }
  check_finite_output(node.val, "add");
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = at(a).val;
  const Tensor& B = at(b).val;
  Node node;
  node.in = {a.id, b.id};
  if (same_shape(A, B)) {
    node.op = Op::kMul;
    Tensor C = A;
    for (std::size_t i = 0; i < C.values.size(); ++i)
      C.values[i] *= B.values[i];
    node.val = std::move(C);
  } else if (row_broadcastable(A, B)) {
    node.op = Op::kMulRow;
    Tensor C = A;
    std::size_t d = A.cols();
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) C.values[i * d + j] *= B.values[j];
    node.val = std::move(C);
  } else {
    throw DimensionError("mul shape mismatch: " + A.shape_str() + " * " +
                         B.shape_str());
  }
  check_finite_output(node.val, "mul");
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::scale(Var a, double c) {
  Node node;
  node.op = Op::kScale;
  node.in = {a.id};
  node.c = c;
  node.val = at(a).val;
  for (double& v : node.val.values) v *= c;
  check_finite_output(node.val, "scale");
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::relu(Var a) {
  Node node;
  node.op = Op::kRelu;
  node.in = {a.id};
  node.val = at(a).val;
  for (double& v : node.val.values) v = v > 0.0 ? v : 0.0;
  check_finite_output(node.val, "relu");
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::tanh(Var a) {
  Node node;
  node.op = Op::kTanh;
  node.in = {a.id};
  node.val = at(a).val;
  for (double& v : node.val.values) v = std::tanh(v);
  check_finite_output(node.val, "tanh");
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::softmax_rows(Var a) {
  const Tensor& A = at(a).val;
  if (!A.is_matrix()) throw DimensionError("softmax_rows needs a matrix");
  if (!A.finite()) throw NumericError("non-finite input to softmax_rows");
  std::size_t m = A.rows(), n = A.cols();
  Tensor C = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = &A.values[i * n];
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    double* out = &C.values[i * n];
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(row[j] - mx);
      sum += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
  }
  Node node;
  node.op = Op::kSoftmaxRows;
  node.in = {a.id};
  node.val = std::move(C);
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& X = at(x).val;
  const Tensor& G = at(gain).val;
  const Tensor& B = at(bias).val;
  if (!X.is_matrix() || X.cols() < 2)
    throw DimensionError("layer_norm needs a matrix with >= 2 columns");
  std::size_t m = X.rows(), d = X.cols();
  if (G.numel() != d || B.numel() != d)
    throw DimensionError("layer_norm gain/bias must have length " +
                         std::to_string(d));
  Node node;
  node.op = Op::kLayerNorm;
  node.in = {x.id, gain.id, bias.id};
  node.c = eps;
  node.daux.resize(m * d + m);  // xhat rows, then inv_std per row
  Tensor Y = Tensor::zeros({m, d});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = &X.values[i * d];
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv_std = 1.0 / std::sqrt(var + eps);
    node.daux[m * d + i] = inv_std;
    for (std::size_t j = 0; j < d; ++j) {
      double xh = (row[j] - mean) * inv_std;
      node.daux[i * d + j] = xh;
      Y.values[i * d + j] = xh * G.values[j] + B.values[j];
    }
  }
  check_finite_output(Y, "layer_norm");
  node.val = std::move(Y);
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& targets) {
  const Tensor& Z = at(logits).val;
  if (!Z.is_matrix()) throw DimensionError("cross_entropy needs a matrix");
  std::size_t L = Z.rows(), V = Z.cols();
  if (targets.size() != L)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(L) + " positions");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= V)
      throw IndexError("cross_entropy target " + std::to_string(t) +
                       " out of range [0, " + std::to_string(V) + ")");
  }
  Node node;
  node.op = Op::kCrossEntropy;
  node.in = {logits.id};
  node.iaux.assign(targets.begin(), targets.end());
  node.daux.resize(L * V);  // softmax probabilities
  double loss = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    const double* row = &Z.values[i * V];
    double mx = row[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      node.daux[i * V + j] = std::exp(row[j] - mx);
      sum += node.daux[i * V + j];
    }
    for (std::size_t j = 0; j < V; ++j) node.daux[i * V + j] /= sum;
    loss -= std::log(node.daux[i * V + static_cast<std::size_t>(targets[i])]);
  }
  loss /= static_cast<double>(L);
  node.val = Tensor::scalar(loss);
  check_finite_output(node.val, "cross_entropy");
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::transpose(Var a) {
  const Tensor& A = at(a).val;
  if (!A.is_matrix()) throw DimensionError("transpose needs a matrix");
  std::size_t m = A.rows(), n = A.cols();
  Tensor C = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      C.values[j * m + i] = A.values[i * n + j];
  Node node;
  node.op = Op::kTranspose;
  node.in = {a.id};
  node.val = std::move(C);
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const Tensor& A = at(a).val;
  if (!A.is_matrix()) throw DimensionError("slice_cols needs a matrix");
  if (c0 >= c1 || c1 > A.cols())
    throw DimensionError("slice_cols [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") on " + A.shape_str());
  std::size_t m = A.rows(), n = A.cols(), w = c1 - c0;
  Tensor C = Tensor::zeros({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j)
      C.values[i * w + j] = A.values[i * n + c0 + j];
  Node node;
  node.op = Op::kSliceCols;
  node.in = {a.id};
  node.iaux = {static_cast<int>(c0), static_cast<int>(c1)};
  node.val = std::move(C);
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of zero parts");
  std::size_t m = at(parts[0]).val.rows();
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& t = at(p).val;
    if (!t.is_matrix() || t.rows() != m)
      throw DimensionError("concat_cols row mismatch: " + t.shape_str());
    total += t.cols();
  }
  Tensor C = Tensor::zeros({m, total});
  std::size_t off = 0;
  Node node;
  node.op = Op::kConcatCols;
  for (Var p : parts) {
    const Tensor& t = at(p).val;
    std::size_t w = t.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        C.values[i * total + off + j] = t.values[i * w + j];
    node.in.push_back(p.id);
    off += w;
  }
  node.val = std::move(C);
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of zero parts");
  std::size_t d = at(parts[0]).val.cols();
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& t = at(p).val;
    if (!t.is_matrix() || t.cols() != d)
      throw DimensionError("concat_rows column mismatch: " + t.shape_str());
    total += t.rows();
  }
  Tensor C = Tensor::zeros({total, d});
  std::size_t off = 0;
  Node node;
  node.op = Op::kConcatRows;
  for (Var p : parts) {
    const Tensor& t = at(p).val;
    std::copy(t.values.begin(), t.values.end(), C.values.begin() + off);
    node.in.push_back(p.id);
    off += t.values.size();
  }
  node.val = std::move(C);
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::gather_rows(Var table, const std::vector<int>& rows) {
  const Tensor& T = at(table).val;
  if (!T.is_matrix()) throw DimensionError("gather_rows needs a matrix");
  std::size_t m = T.rows(), d = T.cols();
  for (int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= m)
      throw IndexError("gather_rows index " + std::to_string(r) +
                       " out of range [0, " + std::to_string(m) + ")");
  }
  Tensor C = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = &T.values[static_cast<std::size_t>(rows[i]) * d];
    std::copy(src, src + d, &C.values[i * d]);
  }
  Node node;
  node.op = Op::kGatherRows;
  node.in = {table.id};
  node.iaux = rows;
  node.val = std::move(C);
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

Var Tape::sum(Var a) {
  const Tensor& A = at(a).val;
  double s = 0.0;
  for (double v : A.values) s += v;
  Node node;
  node.op = Op::kSum;
  node.in = {a.id};
  node.val = Tensor::scalar(s);
  check_finite_output(node.val, "sum");
  node.requires_grad = any_requires(node.in);
  return Var{push(std::move(node))};
}

const Tensor& Tape::value(Var v) const { return at(v).val; }

const std::vector<double>& Tape::grad(Var v) const { return at(v).grad; }

Tensor Tape::grad_tensor(Var v) const {
  const Node& n = at(v);
  return Tensor(n.val.shape, n.grad);
}

void Tape::seed_grad(Var v, const Tensor& g) {
  Node& n = at(v);
  if (g.values.size() != n.grad.size())
    throw DimensionError("seed_grad shape mismatch: " + g.shape_str() +
                         " onto " + n.val.shape_str());
  for (std::size_t i = 0; i < g.values.size(); ++i)
    n.grad[i] += g.values[i];
}

void Tape::zero_all_grads() {
  for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Tape::backward(Var loss) {
  const Node& n = at(loss);
  if (n.val.numel() != 1)
    throw ContractError("backward() requires a scalar loss, got " +
                        n.val.shape_str());
  at(loss).grad[0] += 1.0;
  run_backward();
}

void Tape::run_backward() {
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    backward_node(i);
  }
  for (Node& n : nodes_) {
    if (n.external != nullptr) {
      n.external->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        n.external->grad[i] += n.grad[i];
    }
  }
}

void Tape::backward_node(int idx) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (!n.requires_grad) return;
  const std::vector<double>& g = n.grad;
  auto gin = [&](int slot) -> std::vector<double>& {
    return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(
                      slot)])].grad;
  };
  auto vin = [&](int slot) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(
                      slot)])].val;
  };
  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kMatmul: {
      const Tensor& A = vin(0);
      const Tensor& B = vin(1);
      std::size_t m = A.rows(), k = A.cols(), c = B.cols();
      std::vector<double>& dA = gin(0);
      std::vector<double>& dB = gin(1);
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j)
            acc += g[i * c + j] * B.values[p * c + j];
          dA[i * k + p] += acc;
        }
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double a = A.values[i * k + p];
          if (a == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j)
            dB[p * c + j] += a * g[i * c + j];
        }
      break;
    }
    case Op::kAdd: {
      std::vector<double>& dA = gin(0);
      std::vector<double>& dB = gin(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        dA[i] += g[i];
        dB[i] += g[i];
      }
      break;
    }
    case Op::kAddRow: {
      const Tensor& A = vin(0);
      std::size_t m = A.rows(), d = A.cols();
      std::vector<double>& dA = gin(0);
      std::vector<double>& dB = gin(1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          dA[i * d + j] += g[i * d + j];
          dB[j] += g[i * d + j];
        }
      break;
    }
    case Op::kMul: {
      const Tensor& A = vin(0);
      const Tensor& B = vin(1);
      std::vector<double>& dA = gin(0);
      std::vector<double>& dB = gin(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        dA[i] += g[i] * B.values[i];
        dB[i] += g[i] * A.values[i];
      }
      break;
    }
    case Op::kMulRow: {
      const Tensor& A = vin(0);
      const Tensor& B = vin(1);
      std::size_t m = A.rows(), d = A.cols();
      std::vector<double>& dA = gin(0);
      std::vector<double>& dB = gin(1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          dA[i * d + j] += g[i * d + j] * B.values[j];
          dB[j] += g[i * d + j] * A.values[i * d + j];
        }
      break;
    }
    case Op::kScale: {
      std::vector<double>& dA = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i] * n.c;
      break;
    }
    case Op::kRelu: {
      const Tensor& A = vin(0);
      std::vector<double>& dA = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (A.values[i] > 0.0) dA[i] += g[i];
      break;
    }
    case Op::kTanh: {
      std::vector<double>& dA = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double y = n.val.values[i];
        dA[i] += g[i] * (1.0 - y * y);
      }
      break;
    }
    case Op::kSoftmaxRows: {
      std::size_t m = n.val.rows(), c = n.val.cols();
      std::vector<double>& dA = gin(0);
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = &n.val.values[i * c];
        const double* gy = &g[i * c];
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < c; ++j)
          dA[i * c + j] += y[j] * (gy[j] - dot);
      }
      break;
    }
    case Op::kLayerNorm: {
      const Tensor& X = vin(0);
      const Tensor& G = vin(1);
      std::size_t m = X.rows(), d = X.cols();
      std::vector<double>& dX = gin(0);
      std::vector<double>& dG = gin(1);
      std::vector<double>& dB = gin(2);
      const double* xhat = n.daux.data();
      const double* inv_std = n.daux.data() + m * d;
      for (std::size_t i = 0; i < m; ++i) {
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          double dxh = g[i * d + j] * G.values[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xhat[i * d + j];
        }
        mean_dxh /= static_cast<double>(d);
        mean_dxh_xh /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          double dxh = g[i * d + j] * G.values[j];
          dX[i * d + j] +=
              inv_std[i] * (dxh - mean_dxh - xhat[i * d + j] * mean_dxh_xh);
          dG[j] += g[i * d + j] * xhat[i * d + j];
          dB[j] += g[i * d + j];
        }
      }
      break;
    }
    case Op::kCrossEntropy: {
      std::size_t L = n.iaux.size();
      std::size_t V = n.daux.size() / L;
      std::vector<double>& dZ = gin(0);
      double s = g[0] / static_cast<double>(L);
      for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < V; ++j) {
          double p = n.daux[i * V + j];
          double onehot =
              (static_cast<std::size_t>(n.iaux[i]) == j) ? 1.0 : 0.0;
          dZ[i * V + j] += s * (p - onehot);
        }
      }
      break;
    }
    case Op::kTranspose: {
      std::size_t m = n.val.rows(), c = n.val.cols();
      std::vector<double>& dA = gin(0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j)
          dA[j * m + i] += g[i * c + j];
      break;
    }
    case Op::kSliceCols: {
      const Tensor& A = vin(0);
      std::size_t m = A.rows(), nc = A.cols();
      std::size_t c0 = static_cast<std::size_t>(n.iaux[0]);
      std::size_t w = n.val.cols();
      std::vector<double>& dA = gin(0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j)
          dA[i * nc + c0 + j] += g[i * w + j];
      break;
    }
    case Op::kConcatCols: {
      std::size_t m = n.val.rows(), total = n.val.cols();
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        const Tensor& part = vin(static_cast<int>(k));
        std::size_t w = part.cols();
        std::vector<double>& dP = gin(static_cast<int>(k));
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j)
            dP[i * w + j] += g[i * total + off + j];
        off += w;
      }
      break;
    }
    case Op::kConcatRows: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        std::vector<double>& dP = gin(static_cast<int>(k));
        for (std::size_t i = 0; i < dP.size(); ++i) dP[i] += g[off + i];
        off += dP.size();
      }
      break;
    }
    case Op::kGatherRows: {
      const Tensor& T = vin(0);
      std::size_t d = T.cols();
      std::vector<double>& dT = gin(0);
      for (std::size_t i = 0; i < n.iaux.size(); ++i) {
        std::size_t r = static_cast<std::size_t>(n.iaux[i]);
        for (std::size_t j = 0; j < d; ++j) dT[r * d + j] += g[i * d + j];
      }
      break;
    }
    case Op::kSum: {
      std::vector<double>& dA = gin(0);
      for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += g[0];
      break;
    }
  }
}

}  // namespace flowpos
