#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "flowpos/ode.hpp"
#include "flowpos/tensor.hpp"

namespace flowpos {

struct SinusoidalSpec {
  std::size_t d = 64;
  double c = 1e-4;
};

// Fixed sinusoidal encoding, positions indexed from 0:
// row i, even j: sin(i * c^(j/d)); odd j: cos(i * c^((j-1)/d)).
Tensor sinusoidal(std::size_t length, const SinusoidalSpec& spec);

// Per-block variant: the block index enters through an additive term of the
// same form, so entries live in [-2, 2].
Tensor sinusoidal_per_block(std::size_t length, const SinusoidalSpec& spec,
                            std::size_t block);

// Time derivative of the sinusoidal encoding, as a vector field over
// (t, state); independent of the state.
Tensor sinusoidal_dynamics(double t, const Tensor& p,
                           const SinusoidalSpec& spec);

// Parameter-free field wrapper for feeding sinusoidal_dynamics to the solver.
class SinusoidalField final : public ParametricField {
 public:
  explicit SinusoidalField(SinusoidalSpec spec) : spec_(spec) {}
  std::size_t dim() const override { return spec_.d; }
  std::vector<const Tensor*> param_tensors() const override { return {}; }
  Tensor eval(double t, const Tensor& p) const override {
    return sinusoidal_dynamics(t, p, spec_);
  }
  void vjp(double, const Tensor&, const Tensor&, Tensor&,
           std::vector<Tensor>&) const override {}
  std::vector<Var> bind(Tape&) const override { return {}; }
  Var taped_eval(Tape& tape, double t, Var,
                 const std::vector<Var>&) const override {
    return tape.input(sinusoidal_dynamics(t, Tensor::zeros({1, spec_.d}),
                                          spec_));
  }

 private:
  SinusoidalSpec spec_;
};

// Trainable per-position table with a hard maximum length.
struct LearnedTable {
  Tensor table;  // l_max x d

  LearnedTable() = default;
  LearnedTable(std::size_t l_max, std::size_t d, std::uint64_t seed,
               double sigma = 0.02);
  std::size_t l_max() const { return table.rows(); }
  std::size_t dim() const { return table.cols(); }
};

// First `length` rows; lengths beyond l_max are a capacity error.
Tensor table_lookup(const LearnedTable& tbl, std::size_t length);

// Plain tanh recurrence over position inputs. Scalar mode feeds i * delta as
// a width-1 input; vectorized mode feeds the sinusoidal vector of index i.
struct RnnEncoderState {
  struct Cell {
    Tensor w_in;  // input_dim x d
    Tensor w_h;   // d x d
    Tensor b;     // 1 x d
    Tensor h0;    // 1 x d, learned initial hidden state
  };

  std::size_t d = 0;
  int layers = 1;  // 1 or 2
  bool vector_input = false;
  double delta = 0.1;
  SinusoidalSpec input_spec;  // used in vectorized mode
  std::vector<Cell> cells;

  RnnEncoderState() = default;
  RnnEncoderState(std::size_t d, int layers, bool vector_input, double delta,
                  std::uint64_t seed, double sigma = 0.02);

  std::size_t param_count() const;
  Tensor input_row(std::size_t i) const;  // z_i

  // Parameter binding order: per layer w_in, w_h, b, h0.
  std::vector<Var> bind(Tape& tape) const;
  Var taped_encode(Tape& tape, const std::vector<Var>& params,
                   std::size_t length) const;
};

Tensor rnn_encode(const RnnEncoderState& state, std::size_t length);

// Shared-dynamics ODE encoder. In additive mode each block holds one initial
// vector; in bias mode each block holds three (applied after the Q/K/V
// projections). One DynamicsFunction is shared by every block and slot.
struct FloaterState {
  enum class Mode { additive, bias };

  Mode mode = Mode::additive;
  std::size_t n_blocks = 1;  // blocks that receive encodings
  DynamicsFunction dyn;
  std::vector<Tensor> init;  // n_blocks (additive) or 3*n_blocks (bias)
  SolverConfig cfg;
  double delta = 0.1;

  FloaterState(Mode mode, std::size_t n_blocks, std::size_t d,
               std::size_t hidden, SolverConfig cfg, double delta,
               std::uint64_t seed, double dyn_sigma = 1e-4,
               double init_sigma = 0.02);

  std::size_t dim() const { return dyn.dim(); }
  std::size_t slots_per_block() const {
    return mode == Mode::bias ? 3 : 1;
  }
  // block is 1-based; slot 0 (additive) or 0/1/2 for q/k/v (bias).
  Tensor& init_vector(std::size_t block, std::size_t slot);
  const Tensor& init_vector(std::size_t block, std::size_t slot) const;
  std::size_t param_count() const;

  // Cache-backed plain trajectory of at least `length` grid points for the
  // given init slot. Served results are bitwise identical to a fresh
  // recomputation; call note_params_updated() after changing any parameter.
  const Trajectory& cached_trajectory(std::size_t block, std::size_t slot,
                                      std::size_t length) const;
  Trajectory fresh_trajectory(std::size_t block, std::size_t slot,
                              std::size_t length, GradMode mode) const;
  void note_params_updated();

 private:
  std::size_t slot_index(std::size_t block, std::size_t slot) const;
  mutable std::map<std::size_t, Trajectory> cache_;
};

// Rows p(t_1) ... p(t_L) for one block (1-based), additive mode.
Tensor floater_encode(const FloaterState& state, std::size_t length,
                      std::size_t block);
// Bias-mode trajectories for q, k, v of one block.
std::array<Tensor, 3> floater_bias(const FloaterState& state,
                                   std::size_t length, std::size_t block);

struct NoEncoding {};
struct PerBlockSinusoidal {
  SinusoidalSpec spec;
};

using PositionEncoder =
    std::variant<NoEncoding, SinusoidalSpec, PerBlockSinusoidal, LearnedTable,
                 RnnEncoderState, FloaterState>;

long param_count(const PositionEncoder& enc);
const char* encoder_kind_name(const PositionEncoder& enc);

// CSV heatmap export: one line per position, one column per dimension.
std::string encoding_csv(const Tensor& m);
void write_encoding_csv(const std::string& path, const Tensor& m);

}  // namespace flowpos
