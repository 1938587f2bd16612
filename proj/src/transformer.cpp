#include "flowpos/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "flowpos/errors.hpp"

namespace flowpos {

EncoderKind encoder_kind_from_name(const std::string& name) {
  if (name == "none") return EncoderKind::none;
  if (name == "sinusoidal") return EncoderKind::sinusoidal;
  if (name == "sin-per-block") return EncoderKind::sin_per_block;
  if (name == "table") return EncoderKind::table;
  if (name == "rnn") return EncoderKind::rnn;
  if (name == "floater") return EncoderKind::floater;
  if (name == "floater-bias") return EncoderKind::floater_bias;
  throw ConfigError("unknown encoder: " + name);
}

const char* encoder_kind_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::none:
      return "none";
    case EncoderKind::sinusoidal:
      return "sinusoidal";
    case EncoderKind::sin_per_block:
      return "sin-per-block";
    case EncoderKind::table:
      return "table";
    case EncoderKind::rnn:
      return "rnn";
    case EncoderKind::floater:
      return "floater";
    case EncoderKind::floater_bias:
      return "floater-bias";
  }
  return "?";
}

Injection injection_from_name(const std::string& name) {
  if (name == "input") return Injection::input_only;
  if (name == "all") return Injection::all_blocks;
  throw ConfigError("unknown injection policy: " + name);
}

const char* injection_name(Injection inj) {
  return inj == Injection::input_only ? "input" : "all";
}

namespace {

Tensor named_randn(std::uint64_t seed, const std::string& name,
                   std::vector<std::size_t> shape, double sigma) {
  Rng rng(mix64(seed, hash_str(name)));
  return Tensor::randn(std::move(shape), rng, sigma);
}

void mark_trainable(Tensor& t) { t.requires_grad = true; }

PositionEncoder make_encoder(const ModelConfig& cfg, std::uint64_t seed) {
  std::uint64_t enc_seed = mix64(seed, hash_str("encoder"));
  switch (cfg.encoder) {
    case EncoderKind::none:
      return NoEncoding{};
    case EncoderKind::sinusoidal:
      return SinusoidalSpec{cfg.d_model, cfg.sin_c};
    case EncoderKind::sin_per_block:
      return PerBlockSinusoidal{SinusoidalSpec{cfg.d_model, cfg.sin_c}};
    case EncoderKind::table:
      return LearnedTable(cfg.table_l_max, cfg.d_model, enc_seed,
                          cfg.enc_init_sigma);
    case EncoderKind::rnn:
      return RnnEncoderState(cfg.d_model, cfg.rnn_layers,
                             cfg.rnn_vector_input, cfg.delta, enc_seed,
                             cfg.enc_init_sigma);
    case EncoderKind::floater:
    case EncoderKind::floater_bias: {
      FloaterState::Mode mode = cfg.encoder == EncoderKind::floater_bias
                                    ? FloaterState::Mode::bias
                                    : FloaterState::Mode::additive;
      SolverConfig solver{cfg.scheme, cfg.substeps, cfg.grad_mode};
      return FloaterState(mode, cfg.encoder_blocks(), cfg.d_model,
                          cfg.dyn_hidden_or_default(), solver, cfg.delta,
                          enc_seed, cfg.dyn_init_sigma, cfg.enc_init_sigma);
    }
  }
  throw ConfigError("unhandled encoder kind");
}

}  // namespace

Var self_attention(Tape& tape, Var x, const BoundBlock& blk,
                   std::size_t heads, const std::optional<BoundBias>& pos_bias,
                   std::optional<Var> mask, AttentionProbe* probe) {
  std::size_t d = tape.value(x).cols();
  if (heads == 0 || d % heads != 0)
    throw DimensionError("head count must divide the model dimension");
  std::size_t dh = d / heads;

  Var q = tape.add(tape.matmul(x, blk.w_q), blk.b_q);
  Var k = tape.add(tape.matmul(x, blk.w_k), blk.b_k);
  Var v = tape.add(tape.matmul(x, blk.w_v), blk.b_v);
  if (pos_bias) {
    q = tape.add(q, pos_bias->q);
    k = tape.add(k, pos_bias->k);
    v = tape.add(v, pos_bias->v);
  }

  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)),
                            1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask) scores = tape.add(scores, *mask);
    Var probs = tape.softmax_rows(scores);
    if (probe) probe->head_probs.push_back(tape.value(probs));
    head_out.push_back(tape.matmul(probs, vh));
  }
  Var merged = heads == 1 ? head_out[0] : tape.concat_cols(head_out);
  return tape.add(tape.matmul(merged, blk.w_o), blk.b_o);
}

Var block_forward(Tape& tape, Var x, const BoundBlock& blk, std::size_t heads,
                  double ln_eps, const BlockPos& pos, std::optional<Var> mask,
                  AttentionProbe* probe) {
  Var x_in = pos.additive.valid() ? tape.add(x, pos.additive) : x;
  Var attn = self_attention(tape, x_in, blk, heads, pos.bias, mask, probe);
  Var a = tape.layer_norm(tape.add(x_in, attn), blk.ln1_g, blk.ln1_b, ln_eps);
  Var hidden = tape.relu(tape.add(tape.matmul(a, blk.w1), blk.b1));
  Var ffn = tape.add(tape.matmul(hidden, blk.w2), blk.b2);
  return tape.layer_norm(tape.add(a, ffn), blk.ln2_g, blk.ln2_b, ln_eps);
}

EncoderModel::EncoderModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(cfg), enc_(make_encoder(cfg, seed)) {
  if (cfg_.n_blocks < 1) throw ContractError("need at least one block");
  if (cfg_.heads == 0 || cfg_.d_model % cfg_.heads != 0)
    throw DimensionError("head count must divide the model dimension");
  std::size_t d = cfg_.d_model, dff = cfg_.d_ff;

  double proj_sigma = 1.0 / std::sqrt(static_cast<double>(d));
  double ffn_sigma = 1.0 / std::sqrt(static_cast<double>(dff));
  embed_ = named_randn(seed, "embed", {cfg_.vocab, d}, 0.5);
  for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
    std::string p = "block" + std::to_string(i) + ".";
    BlockParams b;
    b.w_q = named_randn(seed, p + "w_q", {d, d}, proj_sigma);
    b.w_k = named_randn(seed, p + "w_k", {d, d}, proj_sigma);
    b.w_v = named_randn(seed, p + "w_v", {d, d}, proj_sigma);
    b.w_o = named_randn(seed, p + "w_o", {d, d}, proj_sigma);
    b.b_q = Tensor::zeros({1, d});
    b.b_k = Tensor::zeros({1, d});
    b.b_v = Tensor::zeros({1, d});
    b.b_o = Tensor::zeros({1, d});
    b.w1 = named_randn(seed, p + "w1", {d, dff}, proj_sigma);
    b.b1 = Tensor::zeros({1, dff});
    b.w2 = named_randn(seed, p + "w2", {dff, d}, ffn_sigma);
    b.b2 = Tensor::zeros({1, d});
    b.ln1_g = Tensor::full({1, d}, 1.0);
    b.ln1_b = Tensor::zeros({1, d});
    b.ln2_g = Tensor::full({1, d}, 1.0);
    b.ln2_b = Tensor::zeros({1, d});
    blocks_.push_back(std::move(b));
  }
  head_w_ = named_randn(seed, "head.w", {d, cfg_.v_out}, proj_sigma);
  head_b_ = Tensor::zeros({1, cfg_.v_out});

  for (NamedParam& p : parameters()) mark_trainable(*p.tensor);
}

std::vector<NamedParam> EncoderModel::parameters() {
  std::vector<NamedParam> out;
  out.push_back({"embed", &embed_, false});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "block" + std::to_string(i) + ".";
    BlockParams& b = blocks_[i];
    out.push_back({p + "w_q", &b.w_q, false});
    out.push_back({p + "b_q", &b.b_q, false});
    out.push_back({p + "w_k", &b.w_k, false});
    out.push_back({p + "b_k", &b.b_k, false});
    out.push_back({p + "w_v", &b.w_v, false});
    out.push_back({p + "b_v", &b.b_v, false});
    out.push_back({p + "w_o", &b.w_o, false});
    out.push_back({p + "b_o", &b.b_o, false});
    out.push_back({p + "w1", &b.w1, false});
    out.push_back({p + "b1", &b.b1, false});
    out.push_back({p + "w2", &b.w2, false});
    out.push_back({p + "b2", &b.b2, false});
    out.push_back({p + "ln1_g", &b.ln1_g, false});
    out.push_back({p + "ln1_b", &b.ln1_b, false});
    out.push_back({p + "ln2_g", &b.ln2_g, false});
    out.push_back({p + "ln2_b", &b.ln2_b, false});
  }
  out.push_back({"head.w", &head_w_, false});
  out.push_back({"head.b", &head_b_, false});

  if (auto* tbl = std::get_if<LearnedTable>(&enc_)) {
    out.push_back({"enc.table", &tbl->table, false});
  } else if (auto* rnn = std::get_if<RnnEncoderState>(&enc_)) {
    for (std::size_t l = 0; l < rnn->cells.size(); ++l) {
      std::string p = "enc.rnn.l" + std::to_string(l) + ".";
      out.push_back({p + "w_in", &rnn->cells[l].w_in, false});
      out.push_back({p + "w_h", &rnn->cells[l].w_h, false});
      out.push_back({p + "b", &rnn->cells[l].b, false});
      out.push_back({p + "h0", &rnn->cells[l].h0, false});
    }
  } else if (auto* fl = std::get_if<FloaterState>(&enc_)) {
    out.push_back({"enc.dyn.w_in", &fl->dyn.w_in, true});
    out.push_back({"enc.dyn.b_in", &fl->dyn.b_in, true});
    out.push_back({"enc.dyn.w_out", &fl->dyn.w_out, true});
    out.push_back({"enc.dyn.b_out", &fl->dyn.b_out, true});
    static const char* slot_names[3] = {"q", "k", "v"};
    for (std::size_t blk = 1; blk <= fl->n_blocks; ++blk) {
      for (std::size_t s = 0; s < fl->slots_per_block(); ++s) {
        std::string name = "enc.init.b" + std::to_string(blk);
        if (fl->mode == FloaterState::Mode::bias)
          name += std::string(".") + slot_names[s];
        out.push_back({name, &fl->init_vector(blk, s), true});
      }
    }
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> EncoderModel::named_tensors()
    const {
  auto& self = const_cast<EncoderModel&>(*this);
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const NamedParam& p : self.parameters())
    out.emplace_back(p.name, p.tensor);
  return out;
}

long EncoderModel::param_count_total() {
  long n = 0;
  for (const NamedParam& p : parameters())
    n += static_cast<long>(p.tensor->numel());
  return n;
}

long EncoderModel::param_count_encoder() const { return param_count(enc_); }

void EncoderModel::zero_grads() {
  for (NamedParam& p : parameters()) p.tensor->zero_grad();
}

void EncoderModel::note_dynamics_updated() {
  if (auto* fl = std::get_if<FloaterState>(&enc_)) fl->note_params_updated();
}

ForwardResult EncoderModel::forward(const std::vector<std::vector<int>>& batch,
                                    bool with_grad, bool want_probes,
                                    bool freeze_flow) {
  const bool flow_grad = with_grad && !freeze_flow;
  ForwardResult out;
  out.tape = std::make_shared<Tape>();
  Tape& tape = *out.tape;
  std::size_t d = cfg_.d_model;

  std::size_t l_max = 0;
  for (const auto& seq : batch) l_max = std::max(l_max, seq.size());
  if (l_max == 0) throw ContractError("forward needs non-empty sequences");

  Var embed_var = tape.param(embed_);
  std::vector<BoundBlock> bound;
  for (BlockParams& b : blocks_) {
    BoundBlock bb;
    bb.w_q = tape.param(b.w_q);
    bb.b_q = tape.param(b.b_q);
    bb.w_k = tape.param(b.w_k);
    bb.b_k = tape.param(b.b_k);
    bb.w_v = tape.param(b.w_v);
    bb.b_v = tape.param(b.b_v);
    bb.w_o = tape.param(b.w_o);
    bb.b_o = tape.param(b.b_o);
    bb.w1 = tape.param(b.w1);
    bb.b1 = tape.param(b.b1);
    bb.w2 = tape.param(b.w2);
    bb.b2 = tape.param(b.b2);
    bb.ln1_g = tape.param(b.ln1_g);
    bb.ln1_b = tape.param(b.ln1_b);
    bb.ln2_g = tape.param(b.ln2_g);
    bb.ln2_b = tape.param(b.ln2_b);
    bound.push_back(bb);
  }
  Var head_w_var = tape.param(head_w_);
  Var head_b_var = tape.param(head_b_);

  // Full-length encoding matrices at batch width; every sequence gathers its
  // prefix so gradients pool on one leaf per block.
  std::vector<Var> additive(cfg_.n_blocks + 1, Var{});
  std::vector<std::optional<BoundBias>> bias(cfg_.n_blocks + 1);

  auto enc_blocks = cfg_.encoder_blocks();
  switch (cfg_.encoder) {
    case EncoderKind::none:
      break;
    case EncoderKind::sinusoidal: {
      Var m = tape.input(sinusoidal(l_max, SinusoidalSpec{d, cfg_.sin_c}));
      for (std::size_t n = 1; n <= enc_blocks; ++n) additive[n] = m;
      break;
    }
    case EncoderKind::sin_per_block: {
      for (std::size_t n = 1; n <= enc_blocks; ++n)
        additive[n] = tape.input(
            sinusoidal_per_block(l_max, SinusoidalSpec{d, cfg_.sin_c}, n));
      break;
    }
    case EncoderKind::table: {
      auto& tbl = std::get<LearnedTable>(enc_);
      if (l_max > tbl.l_max())
        throw CapacityError("sequence length " + std::to_string(l_max) +
                            " exceeds table capacity " +
                            std::to_string(tbl.l_max()));
      Var table_var = tape.param(tbl.table);
      std::vector<int> rows(l_max);
      for (std::size_t i = 0; i < l_max; ++i) rows[i] = static_cast<int>(i);
      Var m = tape.gather_rows(table_var, rows);
      for (std::size_t n = 1; n <= enc_blocks; ++n) additive[n] = m;
      break;
    }
    case EncoderKind::rnn: {
      auto& rnn = std::get<RnnEncoderState>(enc_);
      std::vector<Var> params;
      for (NamedParam& p : parameters())
        if (p.name.rfind("enc.rnn.", 0) == 0) params.push_back(tape.param(*p.tensor));
      Var m = rnn.taped_encode(tape, params, l_max);
      for (std::size_t n = 1; n <= enc_blocks; ++n) additive[n] = m;
      break;
    }
    case EncoderKind::floater: {
      auto& fl = std::get<FloaterState>(enc_);
      for (std::size_t n = 1; n <= enc_blocks; ++n) {
        if (flow_grad) {
          Trajectory tr = fl.fresh_trajectory(n, 0, l_max,
                                              cfg_.grad_mode);
          Tensor enc = tr.encoding_matrix();
          Var leaf = tape.input(std::move(enc), true);
          additive[n] = leaf;
          out.ode_leaves.push_back({n, 0, leaf, std::move(tr)});
        } else {
          additive[n] = tape.input(floater_encode(fl, l_max, n));
        }
      }
      break;
    }
    case EncoderKind::floater_bias: {
      // Compatibility layout: the fixed sinusoidal stays at the input block
      // and the learned trajectories enter as post-projection biases.
      additive[1] =
          tape.input(sinusoidal(l_max, SinusoidalSpec{d, cfg_.sin_c}));
      auto& fl = std::get<FloaterState>(enc_);
      for (std::size_t n = 1; n <= enc_blocks; ++n) {
        Var slot_vars[3];
        for (std::size_t s = 0; s < 3; ++s) {
          if (flow_grad) {
            Trajectory tr = fl.fresh_trajectory(n, s, l_max, cfg_.grad_mode);
            Tensor enc = tr.encoding_matrix();
            Var leaf = tape.input(std::move(enc), true);
            slot_vars[s] = leaf;
            out.ode_leaves.push_back({n, s, leaf, std::move(tr)});
          } else {
            const Trajectory& tr = fl.cached_trajectory(n, s, l_max);
            Tensor enc = tr.encoding_matrix();
            Tensor cut = Tensor::zeros({l_max, d});
            std::copy(enc.values.begin(),
                      enc.values.begin() +
                          static_cast<std::ptrdiff_t>(l_max * d),
                      cut.values.begin());
            slot_vars[s] = tape.input(std::move(cut));
          }
        }
        bias[n] = BoundBias{slot_vars[0], slot_vars[1], slot_vars[2]};
      }
      break;
    }
  }

  for (const auto& seq : batch) {
    std::size_t L = seq.size();
    if (L == 0) throw ContractError("forward needs non-empty sequences");
    for (int tok : seq)
      if (tok < 0 || static_cast<std::size_t>(tok) >= cfg_.vocab)
        throw IndexError("token " + std::to_string(tok) +
                         " outside vocabulary of size " +
                         std::to_string(cfg_.vocab));
    std::vector<int> prefix(L);
    for (std::size_t i = 0; i < L; ++i) prefix[i] = static_cast<int>(i);

    Var x = tape.gather_rows(embed_var, seq);
    std::vector<AttentionProbe> seq_probes(want_probes ? cfg_.n_blocks : 0);
    for (std::size_t n = 1; n <= cfg_.n_blocks; ++n) {
      BlockPos pos;
      if (additive[n].valid()) {
        pos.additive = (L == l_max) ? additive[n]
                                    : tape.gather_rows(additive[n], prefix);
      }
      if (n <= enc_blocks && bias[n]) {
        if (L == l_max) {
          pos.bias = bias[n];
        } else {
          pos.bias = BoundBias{tape.gather_rows(bias[n]->q, prefix),
                               tape.gather_rows(bias[n]->k, prefix),
                               tape.gather_rows(bias[n]->v, prefix)};
        }
      }
      x = block_forward(tape, x, bound[n - 1], cfg_.heads, cfg_.ln_eps, pos,
                        std::nullopt,
                        want_probes ? &seq_probes[n - 1] : nullptr);
    }
    out.logits.push_back(
        tape.add(tape.matmul(x, head_w_var), head_b_var));
    if (want_probes) out.probes.push_back(std::move(seq_probes));
  }
  return out;
}

Var EncoderModel::batch_loss(ForwardResult& fwd,
                             const std::vector<std::vector<int>>& targets) {
  if (targets.size() != fwd.logits.size())
    throw ContractError("batch size mismatch between logits and targets");
  Tape& tape = *fwd.tape;
  Var total{};
  for (std::size_t b = 0; b < targets.size(); ++b) {
    Var ce = tape.cross_entropy(fwd.logits[b], targets[b]);
    total = total.valid() ? tape.add(total, ce) : ce;
  }
  return tape.scale(total, 1.0 / static_cast<double>(targets.size()));
}

void EncoderModel::backward(ForwardResult& fwd, Var loss) {
  fwd.tape->backward(loss);
  if (fwd.ode_leaves.empty()) return;
  auto* fl = std::get_if<FloaterState>(&enc_);
  if (!fl) throw ContractError("ode leaves without a floater encoder");
  for (ForwardResult::OdeLeaf& leaf : fwd.ode_leaves) {
    Tensor g = fwd.tape->grad_tensor(leaf.var);
    std::size_t L = g.rows(), d = g.cols();
    std::vector<Tensor> dL_dP;
    dL_dP.reserve(L);
    for (std::size_t i = 0; i < L; ++i) {
      Tensor row = Tensor::zeros({1, d});
      for (std::size_t j = 0; j < d; ++j) row.values[j] = g.at(i, j);
      dL_dP.push_back(std::move(row));
    }
    TimeGrid grid = TimeGrid::equidistant(L, fl->delta);
    SolverConfig cfg = leaf.traj.cfg;
    FieldGradient fg =
        cfg.grad_mode == GradMode::unrolled
            ? unrolled_backward(fl->dyn, leaf.traj, grid, cfg, dL_dP)
            : adjoint_backward(fl->dyn, leaf.traj, grid, cfg, dL_dP);
    std::vector<Tensor*> dyn_params = fl->dyn.param_tensors();
    for (std::size_t k = 0; k < dyn_params.size(); ++k) {
      dyn_params[k]->ensure_grad();
      for (std::size_t i = 0; i < fg.d_params[k].numel(); ++i)
        dyn_params[k]->grad[i] += fg.d_params[k].values[i];
    }
    Tensor& init = fl->init_vector(leaf.block, leaf.slot);
    init.ensure_grad();
    for (std::size_t j = 0; j < init.numel(); ++j)
      init.grad[j] += fg.d_p0.values[j];
  }
}

Tensor EncoderModel::logits(const std::vector<int>& tokens) {
  ForwardResult fwd = forward({tokens}, false);
  return fwd.tape->value(fwd.logits[0]);
}

}  // namespace flowpos
