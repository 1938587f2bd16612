#include "flowpos/encoders.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <utility>

#include "flowpos/errors.hpp"

namespace flowpos {

namespace {

void check_spec(const SinusoidalSpec& spec) {
  if (spec.d == 0 || spec.d % 2 != 0)
    throw DimensionError("sinusoidal dimension must be even and positive");
  if (!(spec.c > 0.0 && spec.c < 1.0))
    throw ContractError("sinusoidal base constant must lie in (0, 1)");
}

double freq(const SinusoidalSpec& spec, std::size_t j) {
  // c^(j/d) for even j; odd j shares the frequency of j-1
  std::size_t base = (j % 2 == 0) ? j : j - 1;
  return std::pow(spec.c,
                  static_cast<double>(base) / static_cast<double>(spec.d));
}

}  // namespace

Tensor sinusoidal(std::size_t length, const SinusoidalSpec& spec) {
  check_spec(spec);
  Tensor out = Tensor::zeros({length, spec.d});
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < spec.d; ++j) {
      double arg = static_cast<double>(i) * freq(spec, j);
      out.values[i * spec.d + j] = (j % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
  }
  return out;
}

Tensor sinusoidal_per_block(std::size_t length, const SinusoidalSpec& spec,
                            std::size_t block) {
  check_spec(spec);
  if (block < 1) throw ContractError("block index is 1-based");
  Tensor out = Tensor::zeros({length, spec.d});
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < spec.d; ++j) {
      double w = freq(spec, j);
      double a = static_cast<double>(i) * w;
      double b = static_cast<double>(block) * w;
      out.values[i * spec.d + j] =
          (j % 2 == 0) ? std::sin(a) + std::sin(b) : std::cos(a) + std::cos(b);
    }
  }
  return out;
}

Tensor sinusoidal_dynamics(double t, const Tensor& p,
                           const SinusoidalSpec& spec) {
  check_spec(spec);
  (void)p;  // the field does not depend on the state
  Tensor out = Tensor::zeros({1, spec.d});
  for (std::size_t j = 0; j < spec.d; ++j) {
    double w = freq(spec, j);
    out.values[j] = (j % 2 == 0) ? w * std::cos(t * w) : -w * std::sin(t * w);
  }
  return out;
}

LearnedTable::LearnedTable(std::size_t l_max, std::size_t d,
                           std::uint64_t seed, double sigma) {
  Rng rng(seed);
  table = Tensor::randn({l_max, d}, rng, sigma);
}

Tensor table_lookup(const LearnedTable& tbl, std::size_t length) {
  if (length > tbl.l_max())
    throw CapacityError("lookup of length " + std::to_string(length) +
                        " exceeds table capacity " +
                        std::to_string(tbl.l_max()));
  Tensor out = Tensor::zeros({length, tbl.dim()});
  std::copy(tbl.table.values.begin(),
            tbl.table.values.begin() +
                static_cast<std::ptrdiff_t>(length * tbl.dim()),
            out.values.begin());
  return out;
}

RnnEncoderState::RnnEncoderState(std::size_t d_, int layers_,
                                 bool vector_input_, double delta_,
                                 std::uint64_t seed, double sigma)
    : d(d_), layers(layers_), vector_input(vector_input_), delta(delta_) {
  if (layers != 1 && layers != 2)
    throw ContractError("rnn encoder supports 1 or 2 layers");
  input_spec.d = d;
  for (int l = 0; l < layers; ++l) {
    std::size_t in_dim = (l == 0) ? (vector_input ? d : 1) : d;
    Rng rng(mix64(seed, static_cast<std::uint64_t>(l)));
    Cell cell;
    cell.w_in = Tensor::randn({in_dim, d}, rng, sigma);
    cell.w_h = Tensor::randn({d, d}, rng, sigma);
    cell.b = Tensor::randn({1, d}, rng, sigma);
    cell.h0 = Tensor::randn({1, d}, rng, sigma);
    cells.push_back(std::move(cell));
  }
}

std::size_t RnnEncoderState::param_count() const {
  std::size_t n = 0;
  for (const Cell& c : cells)
    n += c.w_in.numel() + c.w_h.numel() + c.b.numel() + c.h0.numel();
  return n;
}

Tensor RnnEncoderState::input_row(std::size_t i) const {
  if (vector_input) {
    Tensor full = sinusoidal(i + 1, input_spec);
    Tensor out = Tensor::zeros({1, d});
    for (std::size_t j = 0; j < d; ++j) out.values[j] = full.values[i * d + j];
    return out;
  }
  return Tensor::row({static_cast<double>(i) * delta});
}

std::vector<Var> RnnEncoderState::bind(Tape& tape) const {
  std::vector<Var> vars;
  for (const Cell& c : cells) {
    vars.push_back(tape.input(c.w_in, true));
    vars.push_back(tape.input(c.w_h, true));
    vars.push_back(tape.input(c.b, true));
    vars.push_back(tape.input(c.h0, true));
  }
  return vars;
}

Var RnnEncoderState::taped_encode(Tape& tape, const std::vector<Var>& params,
                                  std::size_t length) const {
  if (length < 1) throw ContractError("rnn encoding needs length >= 1");
  std::vector<Var> hidden;
  for (int l = 0; l < layers; ++l)
    hidden.push_back(params[static_cast<std::size_t>(l) * 4 + 3]);
  std::vector<Var> rows;
  for (std::size_t i = 0; i < length; ++i) {
    Var z = tape.input(input_row(i), false);
    for (int l = 0; l < layers; ++l) {
      std::size_t off = static_cast<std::size_t>(l) * 4;
      std::size_t li = static_cast<std::size_t>(l);
      Var pre = tape.add(tape.add(tape.matmul(z, params[off]),
                                  tape.matmul(hidden[li], params[off + 1])),
                         params[off + 2]);
      hidden[li] = tape.tanh(pre);
      z = hidden[li];
    }
    rows.push_back(hidden[static_cast<std::size_t>(layers - 1)]);
  }
  return tape.concat_rows(rows);
}

Tensor rnn_encode(const RnnEncoderState& state, std::size_t length) {
  Tape tape;
  std::vector<Var> params = state.bind(tape);
  return tape.value(state.taped_encode(tape, params, length));
}

FloaterState::FloaterState(Mode mode_, std::size_t n_blocks_, std::size_t d,
                           std::size_t hidden, SolverConfig cfg_,
                           double delta_, std::uint64_t seed, double dyn_sigma,
                           double init_sigma)
    : mode(mode_),
      n_blocks(n_blocks_),
      dyn([&] {
        Rng rng(mix64(seed, hash_str("dyn")));
        return DynamicsFunction(d, hidden, rng, dyn_sigma);
      }()),
      cfg(cfg_),
      delta(delta_) {
  if (n_blocks < 1) throw ContractError("floater needs at least one block");
  std::size_t slots = n_blocks * slots_per_block();
  for (std::size_t s = 0; s < slots; ++s) {
    Rng rng(mix64(seed, mix64(hash_str("init"), s)));
    init.push_back(Tensor::randn({1, d}, rng, init_sigma));
  }
}

std::size_t FloaterState::slot_index(std::size_t block,
                                     std::size_t slot) const {
  if (block < 1 || block > n_blocks)
    throw ContractError("floater block " + std::to_string(block) +
                        " outside 1.." + std::to_string(n_blocks));
  if (slot >= slots_per_block())
    throw ContractError("floater slot out of range");
  return (block - 1) * slots_per_block() + slot;
}

Tensor& FloaterState::init_vector(std::size_t block, std::size_t slot) {
  return init[slot_index(block, slot)];
}

const Tensor& FloaterState::init_vector(std::size_t block,
                                        std::size_t slot) const {
  return init[slot_index(block, slot)];
}

std::size_t FloaterState::param_count() const {
  std::size_t n = dyn.param_count();
  for (const Tensor& t : init) n += t.numel();
  return n;
}

Trajectory FloaterState::fresh_trajectory(std::size_t block, std::size_t slot,
                                          std::size_t length,
                                          GradMode gmode) const {
  SolverConfig c = cfg;
  c.grad_mode = gmode;
  return encode_positions(dyn, init[slot_index(block, slot)],
                          TimeGrid::equidistant(length, delta), c);
}

const Trajectory& FloaterState::cached_trajectory(std::size_t block,
                                                  std::size_t slot,
                                                  std::size_t length) const {
  std::size_t key = slot_index(block, slot);
  auto it = cache_.find(key);
  if (it == cache_.end() || it->second.length() < length) {
    Trajectory tr = fresh_trajectory(block, slot, length, GradMode::adjoint);
    it = cache_.insert_or_assign(key, std::move(tr)).first;
  }
  return it->second;
}

void FloaterState::note_params_updated() { cache_.clear(); }

Tensor floater_encode(const FloaterState& state, std::size_t length,
                      std::size_t block) {
  std::size_t d = state.dim();
  Tensor out = Tensor::zeros({length, d});
  if (length == 0) return out;
  const Trajectory& tr = state.cached_trajectory(block, 0, length);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.values[i * d + j] = tr.states[i + 1].values[j];
  return out;
}

std::array<Tensor, 3> floater_bias(const FloaterState& state,
                                   std::size_t length, std::size_t block) {
  if (state.mode != FloaterState::Mode::bias)
    throw ContractError("floater_bias requires bias mode");
  std::size_t d = state.dim();
  std::array<Tensor, 3> out = {Tensor::zeros({length, d}),
                               Tensor::zeros({length, d}),
                               Tensor::zeros({length, d})};
  for (std::size_t slot = 0; slot < 3; ++slot) {
    if (length == 0) continue;
    const Trajectory& tr = state.cached_trajectory(block, slot, length);
    for (std::size_t i = 0; i < length; ++i)
      for (std::size_t j = 0; j < d; ++j)
        out[slot].values[i * d + j] = tr.states[i + 1].values[j];
  }
  return out;
}

long param_count(const PositionEncoder& enc) {
  return std::visit(
      [](const auto& e) -> long {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, NoEncoding> ||
                      std::is_same_v<T, SinusoidalSpec> ||
                      std::is_same_v<T, PerBlockSinusoidal>) {
          return 0;
        } else if constexpr (std::is_same_v<T, LearnedTable>) {
          return static_cast<long>(e.table.numel());
        } else {
          return static_cast<long>(e.param_count());
        }
      },
      enc);
}

const char* encoder_kind_name(const PositionEncoder& enc) {
  return std::visit(
      [](const auto& e) -> const char* {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, NoEncoding>) {
          return "none";
        } else if constexpr (std::is_same_v<T, SinusoidalSpec>) {
          return "sinusoidal";
        } else if constexpr (std::is_same_v<T, PerBlockSinusoidal>) {
          return "sin-per-block";
        } else if constexpr (std::is_same_v<T, LearnedTable>) {
          return "table";
        } else if constexpr (std::is_same_v<T, RnnEncoderState>) {
          return "rnn";
        } else {
          return e.mode == FloaterState::Mode::bias ? "floater-bias"
                                                    : "floater";
        }
      },
      enc);
}

std::string encoding_csv(const Tensor& m) {
  if (!m.is_matrix()) throw DimensionError("encoding_csv needs a matrix");
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      auto res = std::to_chars(buf, buf + sizeof(buf), m.at(i, j));
      if (j) out.push_back(',');
      out.append(buf, res.ptr);
    }
    out.push_back('\n');
  }
  return out;
}

void write_encoding_csv(const std::string& path, const Tensor& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << encoding_csv(m);
  if (!f) throw IoError("write failed for " + path);
}

}  // namespace flowpos
