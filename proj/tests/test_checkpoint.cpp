#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "flowpos/checkpoint.hpp"
#include "flowpos/errors.hpp"
#include "flowpos/harness.hpp"
#include "flowpos/rng.hpp"

using namespace flowpos;

namespace {

ModelConfig tiny_config(EncoderKind kind) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_blocks = 2;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.vocab = 10;
  cfg.v_out = 10;
  cfg.encoder = kind;
  cfg.injection = Injection::all_blocks;
  cfg.table_l_max = 16;
  cfg.substeps = 4;
  return cfg;
}

std::vector<int> some_tokens() { return {3, 1, 4, 1, 5, 9}; }

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / "flowpos_ckpt_test";
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

}  // namespace

TEST_CASE("checkpoint round-trip is bitwise") {
  TempDir tmp;
  ModelConfig cfg = tiny_config(EncoderKind::floater_bias);
  cfg.dyn_init_sigma = 0.2;
  EncoderModel model(cfg, 7);
  Checkpoint ck = snapshot(model);
  save_checkpoint(ck, tmp.file("m.ckpt"));
  Checkpoint back = load_checkpoint(tmp.file("m.ckpt"));

  CHECK(back.config == ck.config);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == ck.tensors[i].first);
    CHECK(bitwise_equal(back.tensors[i].second, ck.tensors[i].second));
  }

  EncoderModel restored = model_from_checkpoint(back);
  CHECK(bitwise_equal(model.logits(some_tokens()),
                      restored.logits(some_tokens())));
}

TEST_CASE("checkpoint files are byte-identical across saves") {
  TempDir tmp;
  EncoderModel model(tiny_config(EncoderKind::rnn), 9);
  Checkpoint ck = snapshot(model);
  save_checkpoint(ck, tmp.file("a.ckpt"));
  save_checkpoint(ck, tmp.file("b.ckpt"));
  std::ifstream a(tmp.file("a.ckpt"), std::ios::binary);
  std::ifstream b(tmp.file("b.ckpt"), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(!sa.empty());
}

TEST_CASE("corrupted checkpoints are rejected") {
  TempDir tmp;
  CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.ckpt")), IoError);
  write_text_file(tmp.file("junk.ckpt"), "not a checkpoint\n");
  CHECK_THROWS_AS(load_checkpoint(tmp.file("junk.ckpt")), IoError);

  EncoderModel model(tiny_config(EncoderKind::sinusoidal), 3);
  Checkpoint ck = snapshot(model);
  save_checkpoint(ck, tmp.file("m.ckpt"));
  std::ifstream f(tmp.file("m.ckpt"), std::ios::binary);
  std::string blob((std::istreambuf_iterator<char>(f)), {});
  f.close();
  write_text_file(tmp.file("cut.ckpt"), blob.substr(0, blob.size() - 16));
  CHECK_THROWS_AS(load_checkpoint(tmp.file("cut.ckpt")), IoError);
}

TEST_CASE("warm start") {
  ModelConfig donor_cfg = tiny_config(EncoderKind::sinusoidal);
  donor_cfg.injection = Injection::input_only;
  EncoderModel donor(donor_cfg, 11);
  Checkpoint donor_ck = snapshot(donor);

  SUBCASE("zero-forced dynamics reproduce the donor bitwise") {
    ModelConfig target_cfg = tiny_config(EncoderKind::floater_bias);
    EncoderModel target(target_cfg, 999);  // seed differs; surgery overwrites
    warm_start(donor_ck, target, 13);
    CHECK(target.warm_started);
    for (NamedParam& p : target.parameters())
      if (p.name.rfind("enc.dyn.", 0) == 0)
        *p.tensor = Tensor::zeros(p.tensor->shape);
    target.note_dynamics_updated();
    CHECK(bitwise_equal(donor.logits(some_tokens()),
                        target.logits(some_tokens())));
  }
  SUBCASE("near-zero dynamics keep the function close to the donor") {
    ModelConfig target_cfg = tiny_config(EncoderKind::floater_bias);
    EncoderModel target(target_cfg, 999);
    warm_start(donor_ck, target, 13);
    Tensor a = donor.logits(some_tokens());
    Tensor b = target.logits(some_tokens());
    CHECK(max_abs_diff(a, b) <= 1e-3);
    CHECK(max_abs_diff(a, b) >= 0.0);
  }
  SUBCASE("architecture mismatch names the offending dimensions") {
    ModelConfig target_cfg = tiny_config(EncoderKind::floater_bias);
    target_cfg.d_model = 16;
    target_cfg.heads = 4;
    EncoderModel target(target_cfg, 999);
    CHECK_THROWS_WITH_AS(warm_start(donor_ck, target, 13),
                         doctest::Contains("d_model"), SurgeryError);
  }
  SUBCASE("missing donor tensors are listed by name") {
    Checkpoint broken = donor_ck;
    std::erase_if(broken.tensors,
                  [](const auto& kv) { return kv.first == "block0.w_q"; });
    ModelConfig target_cfg = tiny_config(EncoderKind::floater_bias);
    EncoderModel target(target_cfg, 999);
    CHECK_THROWS_WITH_AS(warm_start(broken, target, 13),
                         doctest::Contains("block0.w_q"), SurgeryError);
  }
  SUBCASE("non-floater targets are rejected") {
    ModelConfig target_cfg = tiny_config(EncoderKind::table);
    EncoderModel target(target_cfg, 999);
    CHECK_THROWS_AS(warm_start(donor_ck, target, 13), ContractError);
  }
}
