#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "flowpos/errors.hpp"
#include "flowpos/ode.hpp"
#include "flowpos/rng.hpp"

using namespace flowpos;

namespace {

// Test-only linear field p' = p * A with trainable matrix A.
class LinearField final : public ParametricField {
 public:
  Tensor a;

  explicit LinearField(Tensor mat) : a(std::move(mat)) {}

  std::size_t dim() const override { return a.rows(); }
  std::vector<const Tensor*> param_tensors() const override { return {&a}; }

  Tensor eval(double, const Tensor& p) const override {
    std::size_t d = dim();
    Tensor out = Tensor::zeros({1, d});
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t j = 0; j < d; ++j)
        out.values[k] += p.values[j] * a.values[j * d + k];
    return out;
  }

  void vjp(double, const Tensor& p, const Tensor& cot, Tensor& d_p,
           std::vector<Tensor>& d_params) const override {
    std::size_t d = dim();
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        d_p.values[j] += cot.values[k] * a.values[j * d + k];
        d_params[0].values[j * d + k] += p.values[j] * cot.values[k];
      }
    }
  }

  std::vector<Var> bind(Tape& tape) const override {
    return {tape.input(a, true)};
  }

  Var taped_eval(Tape& tape, double, Var p,
                 const std::vector<Var>& params) const override {
    return tape.matmul(p, params[0]);
  }
};

// Field whose first coordinate integrates cos(t); independent of the state.
class CosField final : public ParametricField {
 public:
  std::size_t d;
  explicit CosField(std::size_t dim) : d(dim) {}
  std::size_t dim() const override { return d; }
  std::vector<const Tensor*> param_tensors() const override { return {}; }
  Tensor eval(double t, const Tensor&) const override {
    Tensor out = Tensor::zeros({1, d});
    out.values[0] = std::cos(t);
    return out;
  }
  void vjp(double, const Tensor&, const Tensor&, Tensor&,
           std::vector<Tensor>&) const override {}
  std::vector<Var> bind(Tape&) const override { return {}; }
  Var taped_eval(Tape& tape, double t, Var,
                 const std::vector<Var>&) const override {
    return tape.input(eval(t, Tensor::zeros({1, d})));
  }
};

// Field that turns non-finite past a trigger time, for error-path tests.
class BlowupField final : public ParametricField {
 public:
  double trigger;
  explicit BlowupField(double tr) : trigger(tr) {}
  std::size_t dim() const override { return 1; }
  std::vector<const Tensor*> param_tensors() const override { return {}; }
  Tensor eval(double t, const Tensor&) const override {
    Tensor out = Tensor::zeros({1, 1});
    out.values[0] = t > trigger ? std::nan("") : 1.0;
    return out;
  }
  void vjp(double, const Tensor&, const Tensor&, Tensor&,
           std::vector<Tensor>&) const override {}
  std::vector<Var> bind(Tape&) const override { return {}; }
  Var taped_eval(Tape& tape, double t, Var,
                 const std::vector<Var>&) const override {
    return tape.input(eval(t, Tensor::zeros({1, 1})), false);
  }
};

DynamicsFunction random_dynamics(std::size_t d, std::uint64_t seed,
                                 double sigma) {
  Rng rng(seed);
  return DynamicsFunction(d, 2 * d, rng, sigma);
}

std::vector<Tensor> random_cotangents(std::size_t L, std::size_t d,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < L; ++i)
    out.push_back(Tensor::randn({1, d}, rng, 1.0));
  return out;
}

// Loss used by the gradient oracles: sum_i <c_i, p(t_i)>.
double linear_loss(const Trajectory& tr, const std::vector<Tensor>& cots) {
  double loss = 0.0;
  for (std::size_t i = 0; i < cots.size(); ++i)
    for (std::size_t j = 0; j < cots[i].numel(); ++j)
      loss += cots[i].values[j] * tr.states[i + 1].values[j];
  return loss;
}

FieldGradient fd_gradient(ParametricField& f, std::vector<Tensor*> params,
                          const Tensor& p0, const TimeGrid& grid,
                          const SolverConfig& cfg,
                          const std::vector<Tensor>& cots, double eps = 1e-6) {
  SolverConfig plain = cfg;
  plain.grad_mode = GradMode::adjoint;
  FieldGradient out;
  for (Tensor* p : params) {
    Tensor g = Tensor::zeros(p->shape);
    for (std::size_t i = 0; i < p->numel(); ++i) {
      double orig = p->values[i];
      p->values[i] = orig + eps;
      double up = linear_loss(encode_positions(f, p0, grid, plain), cots);
      p->values[i] = orig - eps;
      double dn = linear_loss(encode_positions(f, p0, grid, plain), cots);
      p->values[i] = orig;
      g.values[i] = (up - dn) / (2 * eps);
    }
    out.d_params.push_back(std::move(g));
  }
  Tensor start = p0;
  out.d_p0 = Tensor::zeros(p0.shape);
  for (std::size_t i = 0; i < p0.numel(); ++i) {
    double orig = start.values[i];
    start.values[i] = orig + eps;
    double up = linear_loss(encode_positions(f, start, grid, plain), cots);
    start.values[i] = orig - eps;
    double dn = linear_loss(encode_positions(f, start, grid, plain), cots);
    start.values[i] = orig;
    out.d_p0.values[i] = (up - dn) / (2 * eps);
  }
  return out;
}

double grads_rel_error(const FieldGradient& a, const FieldGradient& b) {
  double worst = rel_error(a.d_p0, b.d_p0);
  for (std::size_t i = 0; i < a.d_params.size(); ++i)
    worst = std::max(worst, rel_error(a.d_params[i], b.d_params[i]));
  return worst;
}

}  // namespace

TEST_CASE("time grid validation") {
  CHECK_THROWS_AS(TimeGrid({0.2, 0.1}), ContractError);
  CHECK_THROWS_AS(TimeGrid({0.0, 0.1}), ContractError);
  CHECK_THROWS_AS(TimeGrid({-0.1}), ContractError);
  TimeGrid g = TimeGrid::equidistant(4, 0.1);
  CHECK(g.size() == 4);
  CHECK(g.points[0] == 0.1);
  CHECK(g.points[3] == 4 * 0.1);
}

TEST_CASE("integrate_segment") {
  SUBCASE("zero dynamics is exact") {
    DynamicsFunction f = DynamicsFunction::zero(3, 6);
    Tensor p = Tensor::row({1.5, -2.0, 0.25});
    Tensor q = integrate_segment(f, p, 0.0, 1.0, {Scheme::rk4, 7});
    CHECK(bitwise_equal(p, q));
  }
  SUBCASE("linear field reproduces e^t") {
    LinearField f(Tensor::matrix(1, 1, {1.0}));
    Tensor p = Tensor::row({1.0});
    double e = std::exp(1.0);
    // rk4 on p' = p is the degree-4 Taylor map; with 20 substeps the global
    // error sits near 1.4e-7, with 40 it drops below 1e-8.
    Tensor q20 = integrate_segment(f, p, 0.0, 1.0, {Scheme::rk4, 20});
    CHECK(std::abs(q20.values[0] - e) <= 2e-7);
    Tensor q40 = integrate_segment(f, p, 0.0, 1.0, {Scheme::rk4, 40});
    CHECK(std::abs(q40.values[0] - e) <= 1e-8);
  }
  SUBCASE("cosine field integrates to zero over [0, pi]") {
    CosField f(2);
    Tensor p = Tensor::row({0.7, -0.3});
    Tensor q =
        integrate_segment(f, p, 0.0, std::acos(-1.0), {Scheme::rk4, 32});
    CHECK(std::abs(q.values[0] - p.values[0]) <= 1e-6);
    CHECK(q.values[1] == p.values[1]);
  }
  SUBCASE("contract and numeric errors") {
    DynamicsFunction f = DynamicsFunction::zero(1, 2);
    Tensor p = Tensor::row({1.0});
    CHECK_THROWS_AS(integrate_segment(f, p, 1.0, 1.0, {}), ContractError);
    Tensor bad = Tensor::row({std::nan("")});
    CHECK_THROWS_AS(integrate_segment(f, bad, 0.0, 1.0, {}), NumericError);
    // euler evaluates the field at t = j/10; the first non-finite value
    // appears at substep 6 (t = 0.6 > 0.5)
    BlowupField blow(0.5);
    CHECK_THROWS_WITH_AS(
        integrate_segment(blow, p, 0.0, 1.0, {Scheme::euler, 10}),
        doctest::Contains("substep 6"), NumericError);
  }
}

TEST_CASE("encode_positions") {
  SUBCASE("zero dynamics keeps the initial vector") {
    DynamicsFunction f = DynamicsFunction::zero(2, 4);
    Tensor p0 = Tensor::row({0.5, -1.0});
    Trajectory tr = encode_positions(f, p0, TimeGrid::equidistant(5, 0.1), {});
    CHECK(tr.states.size() == 6);
    for (const Tensor& s : tr.states) CHECK(bitwise_equal(s, p0));
  }
  SUBCASE("empty grid yields only p0") {
    DynamicsFunction f = random_dynamics(2, 5, 0.4);
    Tensor p0 = Tensor::row({0.1, 0.2});
    Trajectory tr = encode_positions(f, p0, TimeGrid(), {});
    CHECK(tr.states.size() == 1);
    CHECK(bitwise_equal(tr.states[0], p0));
  }
  SUBCASE("zero dynamics from zero vector is the all-zero trajectory") {
    DynamicsFunction f = DynamicsFunction::zero(3, 6);
    Trajectory tr = encode_positions(f, Tensor::zeros({1, 3}),
                                     TimeGrid::equidistant(4, 0.1), {});
    for (const Tensor& s : tr.states)
      for (double v : s.values) CHECK(v == 0.0);
  }
  SUBCASE("truncated grid is a bitwise prefix of the full run") {
    DynamicsFunction f = random_dynamics(4, 9, 0.5);
    Rng rng(10);
    Tensor p0 = Tensor::randn({1, 4}, rng, 0.3);
    for (Scheme s : {Scheme::euler, Scheme::midpoint, Scheme::rk4}) {
      SolverConfig cfg{s, 4, GradMode::adjoint};
      Trajectory full =
          encode_positions(f, p0, TimeGrid::equidistant(7, 0.1), cfg);
      Trajectory part =
          encode_positions(f, p0, TimeGrid::equidistant(3, 0.1), cfg);
      for (std::size_t i = 0; i < part.states.size(); ++i)
        CHECK(bitwise_equal(part.states[i], full.states[i]));
    }
  }
  SUBCASE("unrolled mode records the tape and matches the plain pass") {
    DynamicsFunction f = random_dynamics(3, 11, 0.5);
    Rng rng(12);
    Tensor p0 = Tensor::randn({1, 3}, rng, 0.3);
    TimeGrid grid = TimeGrid::equidistant(4, 0.1);
    SolverConfig plain{Scheme::rk4, 5, GradMode::adjoint};
    SolverConfig unrolled{Scheme::rk4, 5, GradMode::unrolled};
    Trajectory a = encode_positions(f, p0, grid, plain);
    Trajectory b = encode_positions(f, p0, grid, unrolled);
    REQUIRE(b.tape != nullptr);
    CHECK(b.state_vars.size() == 5);
    for (std::size_t i = 0; i < a.states.size(); ++i)
      CHECK(bitwise_equal(a.states[i], b.states[i]));
  }
}

TEST_CASE("scheme order on the linear test field") {
  LinearField f(Tensor::matrix(1, 1, {1.0}));
  Tensor p0 = Tensor::row({1.0});
  double e = std::exp(1.0);
  auto slope = [&](Scheme s) {
    std::vector<int> ns = {5, 10, 20, 40};
    std::vector<double> xs, ys;
    for (int n : ns) {
      Tensor q = integrate_segment(f, p0, 0.0, 1.0, {s, n});
      xs.push_back(std::log(static_cast<double>(n)));
      ys.push_back(std::log(std::abs(q.values[0] - e)));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= xs.size();
    my /= ys.size();
    double num = 0, den = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      num += (xs[i] - mx) * (ys[i] - my);
      den += (xs[i] - mx) * (xs[i] - mx);
    }
    return num / den;
  };
  CHECK(std::abs(slope(Scheme::euler) - (-1.0)) <= 0.3);
  CHECK(std::abs(slope(Scheme::midpoint) - (-2.0)) <= 0.3);
  CHECK(std::abs(slope(Scheme::rk4) - (-4.0)) <= 0.3);
}

TEST_CASE("adjoint_backward") {
  SUBCASE("frozen zero dynamics transports the jumps unchanged") {
    DynamicsFunction f = DynamicsFunction::zero(3, 6);
    TimeGrid grid = TimeGrid::equidistant(4, 0.1);
    SolverConfig cfg{Scheme::rk4, 5, GradMode::adjoint};
    Trajectory tr = encode_positions(f, Tensor::zeros({1, 3}), grid, cfg);
    auto cots = random_cotangents(4, 3, 31);
    FieldGradient g = adjoint_backward(f, tr, grid, cfg, cots);
    Tensor expect = Tensor::zeros({1, 3});
    for (const Tensor& c : cots)
      for (std::size_t j = 0; j < 3; ++j) expect.values[j] += c.values[j];
    CHECK(max_abs_diff(g.d_p0, expect) <= 1e-12);
  }
  SUBCASE("linear field matches finite differences") {
    Rng rng(41);
    Tensor A = Tensor::randn({3, 3}, rng, 0.4);
    LinearField f(A);
    Tensor p0 = Tensor::randn({1, 3}, rng, 0.5);
    TimeGrid grid = TimeGrid::equidistant(5, 0.1);
    SolverConfig cfg{Scheme::rk4, 10, GradMode::adjoint};
    Trajectory tr = encode_positions(f, p0, grid, cfg);
    // loss = first coordinate of the last state
    std::vector<Tensor> cots(5, Tensor::zeros({1, 3}));
    cots[4].values[0] = 1.0;
    FieldGradient adj = adjoint_backward(f, tr, grid, cfg, cots);
    FieldGradient fd = fd_gradient(f, {&f.a}, p0, grid, cfg, cots);
    CHECK(grads_rel_error(adj, fd) <= 1e-4);
  }
  SUBCASE("zero loss gradients give zero parameter gradients") {
    DynamicsFunction f = random_dynamics(3, 17, 0.4);
    TimeGrid grid = TimeGrid::equidistant(3, 0.1);
    SolverConfig cfg{Scheme::rk4, 8, GradMode::adjoint};
    Rng rng(18);
    Trajectory tr =
        encode_positions(f, Tensor::randn({1, 3}, rng, 0.3), grid, cfg);
    std::vector<Tensor> cots(3, Tensor::zeros({1, 3}));
    FieldGradient g = adjoint_backward(f, tr, grid, cfg, cots);
    CHECK(max_abs(g.d_p0) == 0.0);
    for (const Tensor& t : g.d_params) CHECK(max_abs(t) == 0.0);
  }
  SUBCASE("grid mismatch is a contract error") {
    DynamicsFunction f = random_dynamics(2, 19, 0.3);
    TimeGrid grid = TimeGrid::equidistant(3, 0.1);
    SolverConfig cfg{Scheme::rk4, 5, GradMode::adjoint};
    Trajectory tr = encode_positions(f, Tensor::zeros({1, 2}), grid, cfg);
    auto cots = random_cotangents(3, 2, 20);
    TimeGrid other = TimeGrid::equidistant(3, 0.2);
    CHECK_THROWS_AS(adjoint_backward(f, tr, other, cfg, cots), ContractError);
    SolverConfig changed{Scheme::euler, 5, GradMode::adjoint};
    CHECK_THROWS_AS(adjoint_backward(f, tr, grid, changed, cots),
                    ContractError);
    auto short_cots = random_cotangents(2, 2, 21);
    CHECK_THROWS_AS(adjoint_backward(f, tr, grid, cfg, short_cots),
                    ContractError);
  }
}

TEST_CASE("unrolled_backward") {
  SUBCASE("exactly differentiates the discrete map") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      DynamicsFunction f = random_dynamics(4, seed, 0.5);
      Rng rng(seed + 100);
      Tensor p0 = Tensor::randn({1, 4}, rng, 0.4);
      TimeGrid grid = TimeGrid::equidistant(4, 0.1);
      SolverConfig cfg{Scheme::midpoint, 6, GradMode::unrolled};
      Trajectory tr = encode_positions(f, p0, grid, cfg);
      auto cots = random_cotangents(4, 4, seed + 200);
      FieldGradient un = unrolled_backward(f, tr, grid, cfg, cots);
      std::vector<Tensor*> params = f.param_tensors();
      FieldGradient fd = fd_gradient(f, params, p0, grid, cfg, cots);
      CHECK(grads_rel_error(un, fd) <= 1e-5);
    }
  }
  SUBCASE("frozen zero dynamics sums the jumps") {
    DynamicsFunction f = DynamicsFunction::zero(2, 4);
    TimeGrid grid = TimeGrid::equidistant(3, 0.1);
    SolverConfig cfg{Scheme::rk4, 5, GradMode::unrolled};
    Trajectory tr = encode_positions(f, Tensor::zeros({1, 2}), grid, cfg);
    auto cots = random_cotangents(3, 2, 51);
    FieldGradient g = unrolled_backward(f, tr, grid, cfg, cots);
    Tensor expect = Tensor::zeros({1, 2});
    for (const Tensor& c : cots)
      for (std::size_t j = 0; j < 2; ++j) expect.values[j] += c.values[j];
    CHECK(max_abs_diff(g.d_p0, expect) <= 1e-12);
  }
  SUBCASE("missing substep tape is a contract error") {
    DynamicsFunction f = random_dynamics(2, 23, 0.3);
    TimeGrid grid = TimeGrid::equidistant(3, 0.1);
    SolverConfig cfg{Scheme::rk4, 5, GradMode::adjoint};
    Trajectory tr = encode_positions(f, Tensor::zeros({1, 2}), grid, cfg);
    auto cots = random_cotangents(3, 2, 24);
    CHECK_THROWS_AS(unrolled_backward(f, tr, grid, cfg, cots), ContractError);
  }
}

TEST_CASE("adjoint and unrolled agree on random smooth instances") {
  Rng seeds(7);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t d = static_cast<std::size_t>(seeds.uniform_int(2, 8));
    std::size_t L = static_cast<std::size_t>(seeds.uniform_int(1, 6));
    Scheme scheme = (trial % 2 == 0) ? Scheme::rk4 : Scheme::midpoint;
    int substeps = static_cast<int>(seeds.uniform_int(10, 16));
    DynamicsFunction f = random_dynamics(d, seeds.next(), 0.3);
    Rng rng(seeds.next());
    Tensor p0 = Tensor::randn({1, d}, rng, 0.4);
    TimeGrid grid = TimeGrid::equidistant(L, 0.1);
    SolverConfig un_cfg{scheme, substeps, GradMode::unrolled};
    SolverConfig adj_cfg{scheme, substeps, GradMode::adjoint};
    Trajectory tr_un = encode_positions(f, p0, grid, un_cfg);
    Trajectory tr_adj = encode_positions(f, p0, grid, adj_cfg);
    auto cots = random_cotangents(L, d, seeds.next());
    FieldGradient un = unrolled_backward(f, tr_un, grid, un_cfg, cots);
    FieldGradient adj = adjoint_backward(f, tr_adj, grid, adj_cfg, cots);
    INFO("trial ", trial, " d=", d, " L=", L, " substeps=", substeps);
    CHECK(grads_rel_error(un, adj) <= 1e-4);
    ++checked;
  }
  CHECK(checked == 10);
}
