#pragma once

#include <memory>
#include <vector>

#include "flowpos/tape.hpp"
#include "flowpos/tensor.hpp"

namespace flowpos {

enum class Scheme { euler, midpoint, rk4 };
enum class GradMode { adjoint, unrolled };

struct SolverConfig {
  Scheme scheme = Scheme::rk4;
  int substeps = 5;  // equal substeps per token interval
  GradMode grad_mode = GradMode::adjoint;
};

// Strictly increasing, non-negative sample times t_1 < ... < t_L.
// The trajectory origin t_0 = 0 is implicit.
struct TimeGrid {
  std::vector<double> points;

  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> pts);
  static TimeGrid equidistant(std::size_t length, double delta);

  std::size_t size() const { return points.size(); }
};

// Vector field p'(t) = f(t, p) with trainable parameters. Implementations
// provide a plain evaluation, a vector-Jacobian product for the adjoint pass,
// and a taped evaluation for unrolled backpropagation.
class ParametricField {
 public:
  virtual ~ParametricField() = default;

  virtual std::size_t dim() const = 0;
  virtual std::vector<const Tensor*> param_tensors() const = 0;

  virtual Tensor eval(double t, const Tensor& p) const = 0;

  // Accumulates cot^T * df/dp into d_p and cot^T * df/dtheta into d_params
  // (same order/shapes as param_tensors()).
  virtual void vjp(double t, const Tensor& p, const Tensor& cot, Tensor& d_p,
                   std::vector<Tensor>& d_params) const = 0;

  // Registers parameter leaves on a tape, in param_tensors() order.
  virtual std::vector<Var> bind(Tape& tape) const = 0;
  virtual Var taped_eval(Tape& tape, double t, Var p,
                         const std::vector<Var>& params) const = 0;

  std::vector<Tensor> zero_param_grads() const;
};

// Two-layer perceptron field over (state, time): the input is the state with
// the scalar time concatenated, giving width d+1; tanh hidden layer of width
// `hidden`; linear output of width d.
class DynamicsFunction final : public ParametricField {
 public:
  Tensor w_in;   // (d+1) x hidden
  Tensor b_in;   // 1 x hidden
  Tensor w_out;  // hidden x d
  Tensor b_out;  // 1 x d

  DynamicsFunction(std::size_t d, std::size_t hidden, Rng& rng, double sigma);
  static DynamicsFunction zero(std::size_t d, std::size_t hidden);

  std::size_t dim() const override { return d_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t param_count() const;

  std::vector<const Tensor*> param_tensors() const override;
  std::vector<Tensor*> param_tensors();

  Tensor eval(double t, const Tensor& p) const override;
  void vjp(double t, const Tensor& p, const Tensor& cot, Tensor& d_p,
           std::vector<Tensor>& d_params) const override;
  std::vector<Var> bind(Tape& tape) const override;
  Var taped_eval(Tape& tape, double t, Var p,
                 const std::vector<Var>& params) const override;

 private:
  std::size_t d_ = 0;
  std::size_t hidden_ = 0;
};

// States p(t_0), p(t_1), ..., p(t_L), each a {1, d} row. When produced with
// GradMode::unrolled the trajectory also owns the tape holding every solver
// substep, so unrolled_backward can replay it.
struct Trajectory {
  std::vector<Tensor> states;
  std::vector<double> grid;
  SolverConfig cfg;

  std::shared_ptr<Tape> tape;     // unrolled mode only
  std::vector<Var> state_vars;    // p(t_0) ... p(t_L) on the tape
  std::vector<Var> param_vars;    // field parameter leaves on the tape
  Var p0_var;

  std::size_t length() const { return grid.size(); }
  Tensor encoding_matrix() const;  // rows p(t_1) ... p(t_L), shape {L, d}
};

struct FieldGradient {
  std::vector<Tensor> d_params;  // same order/shapes as param_tensors()
  Tensor d_p0;
};

// One interval [s, t] with cfg.substeps equal substeps of cfg.scheme.
Tensor integrate_segment(const ParametricField& f, const Tensor& p_s, double s,
                         double t, const SolverConfig& cfg);

// Chains integrate_segment over consecutive grid intervals from p(0) = p0.
Trajectory encode_positions(const ParametricField& f, const Tensor& p0,
                            const TimeGrid& grid, const SolverConfig& cfg);

// dL_dP[i] is the loss gradient w.r.t. p(t_{i+1}), i = 0..L-1.
FieldGradient adjoint_backward(const ParametricField& f, const Trajectory& tr,
                               const TimeGrid& grid, const SolverConfig& cfg,
                               const std::vector<Tensor>& dL_dP);
FieldGradient unrolled_backward(const ParametricField& f, const Trajectory& tr,
                                const TimeGrid& grid, const SolverConfig& cfg,
                                const std::vector<Tensor>& dL_dP);

const char* scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);
const char* grad_mode_name(GradMode m);
GradMode grad_mode_from_name(const std::string& name);

}  // namespace flowpos
