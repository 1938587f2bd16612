#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowpos/encoders.hpp"
#include "flowpos/ode.hpp"
#include "flowpos/tape.hpp"

namespace flowpos {

enum class EncoderKind {
  none,
  sinusoidal,
  sin_per_block,
  table,
  rnn,
  floater,
  floater_bias
};
enum class Injection { input_only, all_blocks };

EncoderKind encoder_kind_from_name(const std::string& name);
const char* encoder_kind_name(EncoderKind kind);
Injection injection_from_name(const std::string& name);
const char* injection_name(Injection inj);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_blocks = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab = 32;
  std::size_t v_out = 32;
  EncoderKind encoder = EncoderKind::sinusoidal;
  Injection injection = Injection::input_only;

  std::size_t table_l_max = 512;
  int rnn_layers = 1;
  bool rnn_vector_input = false;
  double delta = 0.1;
  Scheme scheme = Scheme::rk4;
  int substeps = 5;
  GradMode grad_mode = GradMode::adjoint;
  double sin_c = 1e-4;
  double ln_eps = 1e-5;
  std::size_t dyn_hidden = 0;     // 0 selects 2 * d_model
  double dyn_init_sigma = 1e-4;   // near-zero start keeps the vanilla regime
  double enc_init_sigma = 0.02;   // initial vectors, table, rnn cells

  std::size_t dyn_hidden_or_default() const {
    return dyn_hidden ? dyn_hidden : 2 * d_model;
  }
  std::size_t encoder_blocks() const {
    return injection == Injection::all_blocks ? n_blocks : 1;
  }
};

struct BlockParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor w1, b1, w2, b2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
  bool dynamics_group;  // position-flow parameters (separate lr / frequency)
};

// On-tape views of one block's parameters.
struct BoundBlock {
  Var w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Var w1, b1, w2, b2;
  Var ln1_g, ln1_b, ln2_g, ln2_b;
};

struct BoundBias {
  Var q, k, v;  // {L, d} position-indexed bias matrices
};

struct AttentionProbe {
  std::vector<Tensor> head_probs;  // one {L, L} softmax matrix per head
};

// Multi-head attention sublayer without residual or norm (the caller's
// block applies those). pos_bias rows are added to Q/K/V after projection,
// in the full model width, before the head split.
Var self_attention(Tape& tape, Var x, const BoundBlock& blk,
                   std::size_t heads, const std::optional<BoundBias>& pos_bias,
                   std::optional<Var> mask, AttentionProbe* probe = nullptr);

struct BlockPos {
  Var additive;                  // valid() => added to x at the block input
  std::optional<BoundBias> bias;
};

Var block_forward(Tape& tape, Var x, const BoundBlock& blk, std::size_t heads,
                  double ln_eps, const BlockPos& pos,
                  std::optional<Var> mask = std::nullopt,
                  AttentionProbe* probe = nullptr);

struct ForwardResult {
  std::shared_ptr<Tape> tape;
  std::vector<Var> logits;  // one {L, v_out} per sequence

  struct OdeLeaf {
    std::size_t block;  // 1-based
    std::size_t slot;   // 0 additive; 0/1/2 = q/k/v in bias mode
    Var var;            // {L_max, d} leaf whose grad is dL/dP
    Trajectory traj;
  };
  std::vector<OdeLeaf> ode_leaves;
  std::vector<std::vector<AttentionProbe>> probes;  // [seq][block]
};

class EncoderModel {
 public:
  EncoderModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  PositionEncoder& encoder() { return enc_; }
  const PositionEncoder& encoder() const { return enc_; }

  std::vector<NamedParam> parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  long param_count_total();
  long param_count_encoder() const;

  // freeze_flow serves floater encodings from the cache as constants, so a
  // step can skip the ODE backward entirely (bias-caching training trick).
  ForwardResult forward(const std::vector<std::vector<int>>& batch,
                        bool with_grad, bool want_probes = false,
                        bool freeze_flow = false);
  // Mean cross entropy over the batch.
  Var batch_loss(ForwardResult& fwd,
                 const std::vector<std::vector<int>>& targets);
  // Tape backward plus the ODE gradient transfer for floater encoders.
  void backward(ForwardResult& fwd, Var loss);

  Tensor logits(const std::vector<int>& tokens);
  void zero_grads();
  void note_dynamics_updated();

  bool warm_started = false;

 private:
  ModelConfig cfg_;
  Tensor embed_;
  std::vector<BlockParams> blocks_;
  Tensor head_w_, head_b_;
  PositionEncoder enc_;
};

}  // namespace flowpos
