#include "flowpos/ode.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "flowpos/errors.hpp"

namespace flowpos {

TimeGrid::TimeGrid(std::vector<double> pts) : points(std::move(pts)) {
  double prev = 0.0;
  bool first = true;
  for (double t : points) {
    if (t < 0.0 || (!first && t <= prev) || (first && t <= 0.0))
      throw ContractError("time grid must be strictly increasing and > 0");
    prev = t;
    first = false;
  }
}

TimeGrid TimeGrid::equidistant(std::size_t length, double delta) {
  if (delta <= 0.0) throw ContractError("grid spacing must be positive");
  std::vector<double> pts(length);
  for (std::size_t i = 0; i < length; ++i)
    pts[i] = static_cast<double>(i + 1) * delta;
  return TimeGrid(std::move(pts));
}

std::vector<Tensor> ParametricField::zero_param_grads() const {
  std::vector<Tensor> out;
  for (const Tensor* p : param_tensors()) out.push_back(Tensor::zeros(p->shape));
  return out;
}

DynamicsFunction::DynamicsFunction(std::size_t d, std::size_t hidden, Rng& rng,
                                   double sigma)
    : w_in(Tensor::randn({d + 1, hidden}, rng, sigma)),
      b_in(Tensor::randn({1, hidden}, rng, sigma)),
      w_out(Tensor::randn({hidden, d}, rng, sigma)),
      b_out(Tensor::randn({1, d}, rng, sigma)),
      d_(d),
      hidden_(hidden) {}

DynamicsFunction DynamicsFunction::zero(std::size_t d, std::size_t hidden) {
  Rng rng(0);
  DynamicsFunction f(d, hidden, rng, 0.0);
  return f;
}

std::size_t DynamicsFunction::param_count() const {
  return (d_ + 1) * hidden_ + hidden_ + hidden_ * d_ + d_;
}

std::vector<const Tensor*> DynamicsFunction::param_tensors() const {
  return {&w_in, &b_in, &w_out, &b_out};
}

std::vector<Tensor*> DynamicsFunction::param_tensors() {
  return {&w_in, &b_in, &w_out, &b_out};
}

Tensor DynamicsFunction::eval(double t, const Tensor& p) const {
  if (p.numel() != d_)
    throw DimensionError("dynamics state " + p.shape_str() + ", expected 1x" +
                         std::to_string(d_));
  // Accumulation order mirrors the taped matmul-then-bias path so the plain
  // and unrolled forward passes agree bitwise.
  std::vector<double> z(hidden_);
  for (std::size_t k = 0; k < hidden_; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d_; ++j)
      acc += p.values[j] * w_in.values[j * hidden_ + k];
    acc += t * w_in.values[d_ * hidden_ + k];
    z[k] = std::tanh(acc + b_in.values[k]);
  }
  Tensor out = Tensor::zeros({1, d_});
  for (std::size_t j = 0; j < d_; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < hidden_; ++k)
      acc += z[k] * w_out.values[k * d_ + j];
    out.values[j] = acc + b_out.values[j];
  }
  return out;
}

void DynamicsFunction::vjp(double t, const Tensor& p, const Tensor& cot,
                           Tensor& d_p, std::vector<Tensor>& d_params) const {
  // recompute hidden activations
  std::vector<double> s(hidden_);
  for (std::size_t k = 0; k < hidden_; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d_; ++j)
      acc += p.values[j] * w_in.values[j * hidden_ + k];
    acc += t * w_in.values[d_ * hidden_ + k];
    s[k] = std::tanh(acc + b_in.values[k]);
  }
  Tensor& d_w_in = d_params[0];
  Tensor& d_b_in = d_params[1];
  Tensor& d_w_out = d_params[2];
  Tensor& d_b_out = d_params[3];
  std::vector<double> dz(hidden_);
  for (std::size_t k = 0; k < hidden_; ++k) {
    double ds = 0.0;
    for (std::size_t j = 0; j < d_; ++j)
      ds += cot.values[j] * w_out.values[k * d_ + j];
    dz[k] = ds * (1.0 - s[k] * s[k]);
  }
  for (std::size_t j = 0; j < d_; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < hidden_; ++k)
      acc += dz[k] * w_in.values[j * hidden_ + k];
    d_p.values[j] += acc;
    d_b_out.values[j] += cot.values[j];
  }
  for (std::size_t k = 0; k < hidden_; ++k) {
    for (std::size_t j = 0; j < d_; ++j) {
      d_w_in.values[j * hidden_ + k] += p.values[j] * dz[k];
      d_w_out.values[k * d_ + j] += s[k] * cot.values[j];
    }
    d_w_in.values[d_ * hidden_ + k] += t * dz[k];
    d_b_in.values[k] += dz[k];
  }
}

std::vector<Var> DynamicsFunction::bind(Tape& tape) const {
  return {tape.input(w_in, true), tape.input(b_in, true),
          tape.input(w_out, true), tape.input(b_out, true)};
}

Var DynamicsFunction::taped_eval(Tape& tape, double t, Var p,
                                 const std::vector<Var>& params) const {
  Var tv = tape.input(Tensor::scalar(t), false);
  Var u = tape.concat_cols({p, tv});
  Var z = tape.tanh(tape.add(tape.matmul(u, params[0]), params[1]));
  return tape.add(tape.matmul(z, params[2]), params[3]);
}

Tensor Trajectory::encoding_matrix() const {
  std::size_t L = grid.size();
  std::size_t d = states.empty() ? 0 : states[0].numel();
  Tensor out = Tensor::zeros({L, d});
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.values[i * d + j] = states[i + 1].values[j];
  return out;
}

namespace {

// One scheme step shared by the plain forward pass, the taped forward pass,
// and the backward adjoint pass, so all of them use the same update formulas.
// axpy(a, c, b) must return a + c*b.
template <class State, class F, class Axpy>
State step_once(Scheme scheme, F&& f, double t, const State& p, double h,
                Axpy&& axpy) {
  switch (scheme) {
    case Scheme::euler: {
      State k1 = f(t, p);
      return axpy(p, h, k1);
    }
    case Scheme::midpoint: {
      State k1 = f(t, p);
      State pm = axpy(p, h / 2.0, k1);
      State k2 = f(t + h / 2.0, pm);
      return axpy(p, h, k2);
    }
    case Scheme::rk4: {
      State k1 = f(t, p);
      State p2 = axpy(p, h / 2.0, k1);
      State k2 = f(t + h / 2.0, p2);
      State p3 = axpy(p, h / 2.0, k2);
      State k3 = f(t + h / 2.0, p3);
      State p4 = axpy(p, h, k3);
      State k4 = f(t + h, p4);
      State out = axpy(p, h / 6.0, k1);
      out = axpy(out, h / 3.0, k2);
      out = axpy(out, h / 3.0, k3);
      return axpy(out, h / 6.0, k4);
    }
  }
  throw ContractError("unknown solver scheme");
}

Tensor plain_axpy(const Tensor& a, double c, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] += c * b.values[i];
  return out;
}

std::string segment_str(double s, double t) {
  return "[" + std::to_string(s) + ", " + std::to_string(t) + "]";
}

// Plain multi-substep integration of `f` over [s, t] (or backward when the
// caller passes t < s through `reversed` segments in the adjoint pass).
template <class F>
Tensor march(Scheme scheme, int substeps, F&& f, Tensor state, double s,
             double t) {
  double h = (t - s) / static_cast<double>(substeps);
  for (int j = 0; j < substeps; ++j) {
    double tj = s + static_cast<double>(j) * h;
    state = step_once(scheme, f, tj, state, h, plain_axpy);
    if (!state.finite())
      throw NumericError("non-finite state at substep " + std::to_string(j) +
                         " of segment " + segment_str(s, t));
  }
  return state;
}

void validate_against(const Trajectory& tr, const TimeGrid& grid,
                      const SolverConfig& cfg,
                      const std::vector<Tensor>& dL_dP) {
  if (tr.grid != grid.points)
    throw ContractError("trajectory was produced over a different time grid");
  if (tr.states.size() != grid.size() + 1)
    throw ContractError("trajectory has " + std::to_string(tr.states.size()) +
                        " states for a grid of length " +
                        std::to_string(grid.size()));
  if (tr.cfg.scheme != cfg.scheme || tr.cfg.substeps != cfg.substeps)
    throw ContractError("solver config differs from the one used forward");
  if (dL_dP.size() != grid.size())
    throw ContractError("need one loss gradient per grid point");
}

}  // namespace

Tensor integrate_segment(const ParametricField& f, const Tensor& p_s, double s,
                         double t, const SolverConfig& cfg) {
  if (!(s < t)) throw ContractError("integrate_segment requires s < t");
  if (cfg.substeps < 1) throw ContractError("substeps must be >= 1");
  if (!p_s.finite()) throw NumericError("non-finite initial state");
  auto deriv = [&f](double tau, const Tensor& p) { return f.eval(tau, p); };
  return march(cfg.scheme, cfg.substeps, deriv, p_s, s, t);
}

Trajectory encode_positions(const ParametricField& f, const Tensor& p0,
                            const TimeGrid& grid, const SolverConfig& cfg) {
  if (p0.numel() != f.dim())
    throw DimensionError("initial state " + p0.shape_str() +
                         " does not match field dimension " +
                         std::to_string(f.dim()));
  Trajectory tr;
  tr.grid = grid.points;
  tr.cfg = cfg;
  Tensor start = Tensor({1, f.dim()}, p0.values);
  tr.states.push_back(start);

  if (cfg.grad_mode == GradMode::unrolled) {
    tr.tape = std::make_shared<Tape>();
    Tape& tape = *tr.tape;
    tr.param_vars = f.bind(tape);
    tr.p0_var = tape.input(start, true);
    tr.state_vars.push_back(tr.p0_var);
    auto axpy = [&tape](Var a, double c, Var b) {
      return tape.add(a, tape.scale(b, c));
    };
    auto deriv = [&](double tau, Var p) {
      return f.taped_eval(tape, tau, p, tr.param_vars);
    };
    Var state = tr.p0_var;
    double prev = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double next = grid.points[i];
      double h = (next - prev) / static_cast<double>(cfg.substeps);
      for (int j = 0; j < cfg.substeps; ++j) {
        double tj = prev + static_cast<double>(j) * h;
        try {
          state = step_once(cfg.scheme, deriv, tj, state, h, axpy);
        } catch (const NumericError& e) {
          throw NumericError("non-finite state at substep " +
                             std::to_string(j) + " of segment " +
                             segment_str(prev, next) + ": " + e.what());
        }
      }
      tr.state_vars.push_back(state);
      tr.states.push_back(tape.value(state));
      prev = next;
    }
    return tr;
  }

  double prev = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double next = grid.points[i];
    tr.states.push_back(
        integrate_segment(f, tr.states.back(), prev, next, cfg));
    prev = next;
  }
  return tr;
}

FieldGradient adjoint_backward(const ParametricField& f, const Trajectory& tr,
                               const TimeGrid& grid, const SolverConfig& cfg,
                               const std::vector<Tensor>& dL_dP) {
  validate_against(tr, grid, cfg, dL_dP);
  const std::size_t d = f.dim();
  const std::vector<const Tensor*> params = f.param_tensors();
  std::size_t n_theta = 0;
  for (const Tensor* p : params) n_theta += p->numel();

  const std::size_t L = grid.size();
  FieldGradient out;
  out.d_params = f.zero_param_grads();
  out.d_p0 = Tensor::zeros({1, d});
  if (L == 0) return out;

  // Augmented backward state: (p, a, g) flattened into one row. Integrating
  // with negative steps, da/dtau = -a^T df/dp and dg/dtau = -a^T df/dtheta,
  // so over each segment g gains + integral of a^T df/dtheta.
  const std::size_t D = d + d + n_theta;
  auto aug_deriv = [&](double tau, const Tensor& y) {
    Tensor p({1, d},
             std::vector<double>(y.values.begin(), y.values.begin() + d));
    Tensor a({1, d}, std::vector<double>(y.values.begin() + d,
                                         y.values.begin() + 2 * d));
    Tensor dp = f.eval(tau, p);
    Tensor da = Tensor::zeros({1, d});
    std::vector<Tensor> dth = f.zero_param_grads();
    f.vjp(tau, p, a, da, dth);
    Tensor dy = Tensor::zeros({1, D});
    for (std::size_t j = 0; j < d; ++j) {
      dy.values[j] = dp.values[j];
      dy.values[d + j] = -da.values[j];
    }
    std::size_t off = 2 * d;
    for (const Tensor& t : dth)
      for (double v : t.values) dy.values[off++] = -v;
    return dy;
  };

  Tensor y = Tensor::zeros({1, D});
  for (std::size_t j = 0; j < d; ++j)
    y.values[d + j] = dL_dP[L - 1].values[j];

  for (std::size_t seg = L; seg >= 1; --seg) {
    double t_hi = grid.points[seg - 1];
    double t_lo = (seg >= 2) ? grid.points[seg - 2] : 0.0;
    // restart the state channel from the stored forward value
    for (std::size_t j = 0; j < d; ++j)
      y.values[j] = tr.states[seg].values[j];
    y = march(cfg.scheme, cfg.substeps, aug_deriv, std::move(y), t_hi, t_lo);
    if (seg >= 2) {
      for (std::size_t j = 0; j < d; ++j)
        y.values[d + j] += dL_dP[seg - 2].values[j];
    }
  }

  for (std::size_t j = 0; j < d; ++j) out.d_p0.values[j] = y.values[d + j];
  std::size_t off = 2 * d;
  for (Tensor& t : out.d_params)
    for (double& v : t.values) v = y.values[off++];
  return out;
}

FieldGradient unrolled_backward(const ParametricField& f, const Trajectory& tr,
                                const TimeGrid& grid, const SolverConfig& cfg,
                                const std::vector<Tensor>& dL_dP) {
  validate_against(tr, grid, cfg, dL_dP);
  if (!tr.tape || tr.state_vars.size() != tr.states.size())
    throw ContractError(
        "unrolled_backward needs a trajectory recorded with "
        "GradMode::unrolled (substep states missing)");
  Tape& tape = *tr.tape;
  tape.zero_all_grads();
  for (std::size_t i = 0; i < dL_dP.size(); ++i) {
    Tensor seed({1, f.dim()}, dL_dP[i].values);
    tape.seed_grad(tr.state_vars[i + 1], seed);
  }
  tape.run_backward();
  FieldGradient out;
  for (Var v : tr.param_vars) out.d_params.push_back(tape.grad_tensor(v));
  out.d_p0 = tape.grad_tensor(tr.p0_var);
  return out;
}

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::euler:
      return "euler";
    case Scheme::midpoint:
      return "midpoint";
    case Scheme::rk4:
      return "rk4";
  }
  return "?";
}

Scheme scheme_from_name(const std::string& name) {
  if (name == "euler") return Scheme::euler;
  if (name == "midpoint") return Scheme::midpoint;
  if (name == "rk4") return Scheme::rk4;
  throw ConfigError("unknown solver scheme: " + name);
}

const char* grad_mode_name(GradMode m) {
  return m == GradMode::adjoint ? "adjoint" : "unrolled";
}

GradMode grad_mode_from_name(const std::string& name) {
  if (name == "adjoint") return GradMode::adjoint;
  if (name == "unrolled") return GradMode::unrolled;
  throw ConfigError("unknown grad mode: " + name);
}

}  // namespace flowpos
