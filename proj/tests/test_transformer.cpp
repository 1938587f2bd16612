#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowpos/errors.hpp"
#include "flowpos/harness.hpp"
#include "flowpos/rng.hpp"
#include "flowpos/transformer.hpp"

using namespace flowpos;

namespace {

struct TestBlock {
  BlockParams params;
  BoundBlock bound;
};

TestBlock make_block(Tape& tape, std::size_t d, std::size_t dff,
                     std::uint64_t seed, double sigma) {
  Rng rng(seed);
  TestBlock tb;
  BlockParams& b = tb.params;
  b.w_q = Tensor::randn({d, d}, rng, sigma);
  b.b_q = Tensor::randn({1, d}, rng, sigma);
  b.w_k = Tensor::randn({d, d}, rng, sigma);
  b.b_k = Tensor::randn({1, d}, rng, sigma);
  b.w_v = Tensor::randn({d, d}, rng, sigma);
  b.b_v = Tensor::randn({1, d}, rng, sigma);
  b.w_o = Tensor::randn({d, d}, rng, sigma);
  b.b_o = Tensor::randn({1, d}, rng, sigma);
  b.w1 = Tensor::randn({d, dff}, rng, sigma);
  b.b1 = Tensor::randn({1, dff}, rng, sigma);
  b.w2 = Tensor::randn({dff, d}, rng, sigma);
  b.b2 = Tensor::randn({1, d}, rng, sigma);
  b.ln1_g = Tensor::full({1, d}, 1.0);
  b.ln1_b = Tensor::zeros({1, d});
  b.ln2_g = Tensor::full({1, d}, 1.0);
  b.ln2_b = Tensor::zeros({1, d});
  BoundBlock& v = tb.bound;
  v.w_q = tape.input(b.w_q);
  v.b_q = tape.input(b.b_q);
  v.w_k = tape.input(b.w_k);
  v.b_k = tape.input(b.b_k);
  v.w_v = tape.input(b.w_v);
  v.b_v = tape.input(b.b_v);
  v.w_o = tape.input(b.w_o);
  v.b_o = tape.input(b.b_o);
  v.w1 = tape.input(b.w1);
  v.b1 = tape.input(b.b1);
  v.w2 = tape.input(b.w2);
  v.b2 = tape.input(b.b2);
  v.ln1_g = tape.input(b.ln1_g);
  v.ln1_b = tape.input(b.ln1_b);
  v.ln2_g = tape.input(b.ln2_g);
  v.ln2_b = tape.input(b.ln2_b);
  return tb;
}

ModelConfig tiny_config(EncoderKind kind, Injection inj) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_blocks = 2;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.vocab = 12;
  cfg.v_out = 12;
  cfg.encoder = kind;
  cfg.injection = inj;
  cfg.table_l_max = 16;
  cfg.substeps = 4;
  return cfg;
}

std::vector<int> random_tokens(std::size_t L, std::size_t vocab,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out(L);
  for (std::size_t i = 0; i < L; ++i)
    out[i] = static_cast<int>(
        rng.uniform_int(0, static_cast<std::int64_t>(vocab) - 1));
  return out;
}

}  // namespace

TEST_CASE("self_attention basics") {
  SUBCASE("single token attends to itself with weight one") {
    Tape tape;
    TestBlock tb = make_block(tape, 4, 8, 3, 0.4);
    Rng rng(4);
    Tensor x = Tensor::randn({1, 4}, rng, 0.5);
    Var xv = tape.input(x);
    AttentionProbe probe;
    Var out = self_attention(tape, xv, tb.bound, 2, std::nullopt,
                             std::nullopt, &probe);
    REQUIRE(probe.head_probs.size() == 2);
    for (const Tensor& p : probe.head_probs) {
      REQUIRE(p.numel() == 1);
      CHECK(p.values[0] == 1.0);
    }
    // output equals (x W_v + b_v) W_o + b_o when the only weight is 1
    Var v = tape.add(tape.matmul(xv, tb.bound.w_v), tb.bound.b_v);
    Var manual = tape.add(tape.matmul(v, tb.bound.w_o), tb.bound.b_o);
    CHECK(max_abs_diff(tape.value(out), tape.value(manual)) <= 1e-15);
  }
  SUBCASE("identical tokens give identical output rows") {
    Tape tape;
    TestBlock tb = make_block(tape, 6, 12, 5, 0.4);
    Tensor x = Tensor::zeros({5, 6});
    Rng rng(6);
    Tensor row = Tensor::randn({1, 6}, rng, 0.7);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j) x.at(i, j) = row.values[j];
    Var out = self_attention(tape, tape.input(x), tb.bound, 3, std::nullopt,
                             std::nullopt);
    const Tensor& y = tape.value(out);
    for (std::size_t i = 1; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j) CHECK(y.at(i, j) == y.at(0, j));
  }
  SUBCASE("zero position bias changes nothing") {
    Tape tape;
    TestBlock tb = make_block(tape, 4, 8, 7, 0.4);
    Rng rng(8);
    Var xv = tape.input(Tensor::randn({3, 4}, rng, 0.6));
    BoundBias zero{tape.input(Tensor::zeros({3, 4})),
                   tape.input(Tensor::zeros({3, 4})),
                   tape.input(Tensor::zeros({3, 4}))};
    Var with = self_attention(tape, xv, tb.bound, 2, zero, std::nullopt);
    Var without =
        self_attention(tape, xv, tb.bound, 2, std::nullopt, std::nullopt);
    CHECK(bitwise_equal(tape.value(with), tape.value(without)));
  }
  SUBCASE("attention rows sum to one under any mask") {
    Tape tape;
    TestBlock tb = make_block(tape, 4, 8, 9, 0.4);
    Rng rng(10);
    Var xv = tape.input(Tensor::randn({6, 4}, rng, 0.6));
    // random mask of 0 / -1e9 entries, diagonal kept open
    Tensor mask = Tensor::zeros({6, 6});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        if (i != j && rng.uniform() < 0.4) mask.at(i, j) = -1e9;
    AttentionProbe probe;
    (void)self_attention(tape, xv, tb.bound, 2, std::nullopt,
                         tape.input(mask), &probe);
    for (const Tensor& p : probe.head_probs) {
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) s += p.at(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }
  SUBCASE("head count must divide the width") {
    Tape tape;
    TestBlock tb = make_block(tape, 4, 8, 11, 0.4);
    Var xv = tape.input(Tensor::zeros({2, 4}));
    CHECK_THROWS_AS(
        self_attention(tape, xv, tb.bound, 3, std::nullopt, std::nullopt),
        DimensionError);
  }
}

TEST_CASE("block_forward") {
  SUBCASE("zero FFN weights leave layer_norm(attn_out + b2)") {
    Tape tape;
    TestBlock tb = make_block(tape, 4, 8, 13, 0.4);
    tb.params.w1 = Tensor::zeros({4, 8});
    tb.params.b1 = Tensor::zeros({1, 8});
    tb.params.w2 = Tensor::zeros({8, 4});
    tb.bound.w1 = tape.input(tb.params.w1);
    tb.bound.b1 = tape.input(tb.params.b1);
    tb.bound.w2 = tape.input(tb.params.w2);
    Rng rng(14);
    Var xv = tape.input(Tensor::randn({3, 4}, rng, 0.6));
    Var out = block_forward(tape, xv, tb.bound, 2, 1e-5, BlockPos{});

    Var attn =
        self_attention(tape, xv, tb.bound, 2, std::nullopt, std::nullopt);
    Var a = tape.layer_norm(tape.add(xv, attn), tb.bound.ln1_g,
                            tb.bound.ln1_b, 1e-5);
    Var manual = tape.layer_norm(tape.add(a, tb.bound.b2), tb.bound.ln2_g,
                                 tb.bound.ln2_b, 1e-5);
    CHECK(bitwise_equal(tape.value(out), tape.value(manual)));
  }
  SUBCASE("zero additive encoding equals the no-encoding model") {
    ModelConfig none_cfg =
        tiny_config(EncoderKind::none, Injection::input_only);
    ModelConfig fl_cfg =
        tiny_config(EncoderKind::floater, Injection::all_blocks);
    fl_cfg.dyn_init_sigma = 0.0;
    fl_cfg.enc_init_sigma = 0.0;  // all trajectories identically zero
    EncoderModel plain(none_cfg, 99);
    EncoderModel with_zero_enc(fl_cfg, 99);
    auto tokens = random_tokens(6, none_cfg.vocab, 15);
    CHECK(bitwise_equal(plain.logits(tokens), with_zero_enc.logits(tokens)));
  }
}

TEST_CASE("encode-level properties") {
  SUBCASE("no-encoding model is permutation equivariant") {
    EncoderModel model(tiny_config(EncoderKind::none, Injection::input_only),
                       21);
    Rng rng(22);
    for (int trial = 0; trial < 5; ++trial) {
      auto tokens = random_tokens(7, 12, rng.next());
      std::vector<std::size_t> perm(7);
      for (std::size_t i = 0; i < 7; ++i) perm[i] = i;
      for (std::size_t i = 6; i > 0; --i)
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(
                               0, static_cast<std::int64_t>(i)))]);
      std::vector<int> permuted(7);
      for (std::size_t i = 0; i < 7; ++i) permuted[i] = tokens[perm[i]];
      Tensor base = model.logits(tokens);
      Tensor shuffled = model.logits(permuted);
      double worst = 0.0;
      for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < base.cols(); ++j)
          worst = std::max(worst,
                           std::abs(shuffled.at(i, j) - base.at(perm[i], j)));
      CHECK(worst <= 1e-10);
    }
  }
  SUBCASE("sinusoidal encoding breaks the symmetry") {
    EncoderModel model(
        tiny_config(EncoderKind::sinusoidal, Injection::input_only), 23);
    Rng rng(24);
    auto tokens = random_tokens(7, 12, rng.next());
    std::vector<int> permuted(tokens.rbegin(), tokens.rend());
    Tensor base = model.logits(tokens);
    Tensor shuffled = model.logits(permuted);
    double worst = 0.0;
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < base.cols(); ++j)
        worst = std::max(worst,
                         std::abs(shuffled.at(i, j) - base.at(7 - 1 - i, j)));
    CHECK(worst > 1e-3);
  }
  SUBCASE("zero-dynamics bias model equals the vanilla model bitwise") {
    ModelConfig vanilla_cfg =
        tiny_config(EncoderKind::sinusoidal, Injection::input_only);
    ModelConfig bias_cfg =
        tiny_config(EncoderKind::floater_bias, Injection::all_blocks);
    bias_cfg.dyn_init_sigma = 0.0;
    bias_cfg.enc_init_sigma = 0.0;
    EncoderModel vanilla(vanilla_cfg, 31);
    EncoderModel biased(bias_cfg, 31);
    Rng rng(32);
    for (int trial = 0; trial < 10; ++trial) {
      auto tokens = random_tokens(6, 12, rng.next());
      CHECK(bitwise_equal(vanilla.logits(tokens), biased.logits(tokens)));
    }
  }
  SUBCASE("out-of-vocabulary token") {
    EncoderModel model(tiny_config(EncoderKind::none, Injection::input_only),
                       33);
    CHECK_THROWS_AS(model.logits({0, 12}), IndexError);
  }
  SUBCASE("table capacity propagates") {
    ModelConfig cfg = tiny_config(EncoderKind::table, Injection::input_only);
    cfg.table_l_max = 4;
    EncoderModel model(cfg, 34);
    CHECK_NOTHROW(model.logits(random_tokens(4, 12, 35)));
    CHECK_THROWS_AS(model.logits(random_tokens(5, 12, 36)), CapacityError);
  }
}

TEST_CASE("full tiny model gradients match finite differences") {
  ModelConfig cfg = tiny_config(EncoderKind::floater, Injection::all_blocks);
  cfg.grad_mode = GradMode::unrolled;
  cfg.dyn_init_sigma = 0.3;  // exercise a non-degenerate flow
  cfg.enc_init_sigma = 0.3;
  TaskSpec task;
  task.kind = TaskKind::reverse;
  task.vocab = 12;
  task.l_min = 5;
  task.l_train = 5;
  auto report = model_grad_report(cfg, task, 41, 2);
  CHECK(report.size() > 30);
  for (const auto& item : report) {
    INFO(item.name);
    CHECK(item.rel_err <= 1e-4);
  }
}

TEST_CASE("dynamics-group labeling") {
  EncoderModel model(tiny_config(EncoderKind::floater, Injection::all_blocks),
                     51);
  int dyn = 0, core = 0;
  for (const NamedParam& p : model.parameters()) {
    if (p.dynamics_group) {
      ++dyn;
      CHECK(p.name.rfind("enc.", 0) == 0);
    } else {
      ++core;
    }
  }
  CHECK(dyn == 4 + 2);  // mlp tensors plus one init vector per block
  CHECK(core > 0);
}
