#include "flowpos/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "flowpos/rng.hpp"

namespace flowpos {

GradCheckItem grad_check(const std::string& name, const TapeFn& f,
                         const std::vector<Tensor>& inputs, double eps) {
  GradCheckItem item;
  item.name = name;

  // Reverse mode.
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.input(t, true));
  Var out = f(tape, vars);
  tape.backward(out);
  std::vector<std::vector<double>> ad_grads;
  for (Var v : vars) ad_grads.push_back(tape.grad(v));

  // Central finite differences of the same forward map.
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vs;
    vs.reserve(xs.size());
    for (const Tensor& x : xs) vs.push_back(t.input(x, false));
    return t.value(f(t, vs)).values[0];
  };
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> fd(inputs[k].numel());
    for (std::size_t i = 0; i < fd.size(); ++i) {
      double orig = work[k].values[i];
      work[k].values[i] = orig + eps;
      double up = eval(work);
      work[k].values[i] = orig - eps;
      double down = eval(work);
      work[k].values[i] = orig;
      fd[i] = (up - down) / (2.0 * eps);
    }
    item.per_input_rel_err.push_back(rel_error(ad_grads[k], fd));
  }
  item.max_rel_err = 0.0;
  for (double e : item.per_input_rel_err)
    item.max_rel_err = std::max(item.max_rel_err, e);
  return item;
}

namespace {

Tensor rand_matrix(Rng& rng, std::size_t m, std::size_t n, double sigma) {
  return Tensor::randn({m, n}, rng, sigma);
}

}  // namespace

std::vector<GradCheckItem> primitive_grad_report(std::uint64_t seed) {
  std::vector<GradCheckItem> report;
  Rng rng(seed);
  const std::vector<std::pair<std::size_t, std::size_t>> shapes = {
      {1, 2}, {2, 3}, {3, 3}, {4, 2}, {5, 7}};

  for (auto [m, n] : shapes) {
    std::string tag = std::to_string(m) + "x" + std::to_string(n);
    Tensor a = rand_matrix(rng, m, n, 0.8);
    Tensor b = rand_matrix(rng, n, m, 0.8);
    Tensor c = rand_matrix(rng, m, n, 0.8);
    Tensor bias = rand_matrix(rng, 1, n, 0.8);

    report.push_back(grad_check(
        "matmul_" + tag,
        [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.tanh(t.matmul(v[0], v[1])));
        },
        {a, b}));
    report.push_back(grad_check(
        "softmax_rows_" + tag,
        [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.mul(t.softmax_rows(v[0]), v[1]));
        },
        {a, c}));
    report.push_back(grad_check(
        "add_row_" + tag,
        [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.tanh(t.add(v[0], v[1])));
        },
        {a, bias}));
    report.push_back(grad_check(
        "mul_" + tag,
        [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.mul(v[0], v[1]));
        },
        {a, c}));
    report.push_back(grad_check(
        "relu_" + tag,
        [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.relu(v[0]));
        },
        {a}));
    report.push_back(grad_check(
        "tanh_scale_" + tag,
        [](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.tanh(t.scale(v[0], 1.7)));
        },
        {a}));
    if (n >= 2) {
      Tensor gain = rand_matrix(rng, 1, n, 0.5);
      Tensor lbias = rand_matrix(rng, 1, n, 0.5);
      report.push_back(grad_check(
          "layer_norm_" + tag,
          [](Tape& t, const std::vector<Var>& v) {
            return t.sum(t.mul(t.layer_norm(v[0], v[1], v[2], 1e-5), v[3]));
          },
          {a, gain, lbias, c}));
    }
    std::vector<int> targets(m);
    for (std::size_t i = 0; i < m; ++i)
      targets[i] = static_cast<int>(rng.uniform_int(0, static_cast<int>(n) - 1));
    report.push_back(grad_check(
        "cross_entropy_" + tag,
        [targets](Tape& t, const std::vector<Var>& v) {
          return t.cross_entropy(v[0], targets);
        },
        {a}));
    report.push_back(grad_check(
        "transpose_slice_concat_" + tag,
        [](Tape& t, const std::vector<Var>& v) {
          Var tr = t.transpose(v[0]);                       // n x m
          Var s1 = t.slice_cols(tr, 0, 1);
          Var s2 = t.slice_cols(tr, 0, t.value(tr).cols());
          return t.sum(t.tanh(t.concat_cols({s1, s2})));
        },
        {a}));
    std::vector<int> gather_idx = {0, static_cast<int>(m) - 1, 0};
    report.push_back(grad_check(
        "gather_rows_" + tag,
        [gather_idx](Tape& t, const std::vector<Var>& v) {
          return t.sum(t.tanh(t.gather_rows(v[0], gather_idx)));
        },
        {a}));
    // composite graph reusing one tensor on several paths
    report.push_back(grad_check(
        "composite_" + tag,
        [](Tape& t, const std::vector<Var>& v) {
          Var p = t.matmul(v[0], v[1]);  // m x m
          Var q = t.softmax_rows(p);
          Var r = t.matmul(q, v[0]);
          return t.sum(t.tanh(t.mul(r, r)));
        },
        {a, b}));
  }
  return report;
}

}  // namespace flowpos
