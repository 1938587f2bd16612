#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "flowpos/checkpoint.hpp"
#include "flowpos/errors.hpp"
#include "flowpos/harness.hpp"

using namespace flowpos;

namespace {

struct Options {
  std::uint64_t seed = 1;
  std::string encoder = "sinusoidal";
  std::string injection = "input";
  std::string solver = "rk4";
  int substeps = 5;
  std::string grad_mode = "adjoint";
  double delta = 0.1;

  std::size_t d_model = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t table_lmax = 512;
  int rnn_layers = 1;
  std::string rnn_input = "scalar";

  std::string task = "positional_parity";
  int vocab = 32;
  int l_min = 2;
  int l_train = 20;
  int shift_k = 1;
  std::string bins = "21-30,31-40,41-60,61-80";

  int steps = 200;
  int batch = 16;
  double lr = 5e-3;
  int warmup = 20;
  double dyn_lr_mult = 2.0;
  int dyn_every = 1;

  std::string out;
};

void add_solver_opts(CLI::App* cmd, Options& o) {
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--solver", o.solver, "euler|midpoint|rk4")
      ->check(CLI::IsMember({"euler", "midpoint", "rk4"}));
  cmd->add_option("--substeps", o.substeps, "solver substeps per interval")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--grad-mode", o.grad_mode, "adjoint|unrolled")
      ->check(CLI::IsMember({"adjoint", "unrolled"}));
  cmd->add_option("--delta", o.delta, "token interval width")
      ->check(CLI::PositiveNumber);
}

void add_model_opts(CLI::App* cmd, Options& o) {
  cmd->add_option("--encoder", o.encoder,
                  "sinusoidal|sin-per-block|table|rnn|floater|floater-bias")
      ->check(CLI::IsMember({"sinusoidal", "sin-per-block", "table", "rnn",
                             "floater", "floater-bias"}));
  cmd->add_option("--injection", o.injection, "input|all")
      ->check(CLI::IsMember({"input", "all"}));
  cmd->add_option("--d-model", o.d_model, "model width");
  cmd->add_option("--blocks", o.blocks, "encoder blocks");
  cmd->add_option("--heads", o.heads, "attention heads");
  cmd->add_option("--d-ff", o.d_ff, "feed-forward width");
  cmd->add_option("--table-lmax", o.table_lmax, "learned-table capacity");
  cmd->add_option("--rnn-layers", o.rnn_layers, "rnn encoder layers (1|2)")
      ->check(CLI::IsMember({1, 2}));
  cmd->add_option("--rnn-input", o.rnn_input, "scalar|vector")
      ->check(CLI::IsMember({"scalar", "vector"}));
}

void add_task_opts(CLI::App* cmd, Options& o) {
  cmd->add_option("--task", o.task, "reverse|positional_parity|shift_by_k");
  cmd->add_option("--vocab", o.vocab, "vocabulary size");
  cmd->add_option("--l-min", o.l_min, "shortest training length");
  cmd->add_option("--l-train", o.l_train, "longest training length");
  cmd->add_option("--shift-k", o.shift_k, "shift distance for shift_by_k");
  cmd->add_option("--bins", o.bins, "evaluation bins, e.g. 21-30,31-40");
}

void add_train_opts(CLI::App* cmd, Options& o) {
  cmd->add_option("--steps", o.steps, "training steps");
  cmd->add_option("--batch", o.batch, "sequences per step");
  cmd->add_option("--lr", o.lr, "peak learning rate");
  cmd->add_option("--warmup", o.warmup, "warmup steps");
  cmd->add_option("--dyn-lr-mult", o.dyn_lr_mult,
                  "learning-rate multiplier for flow parameters");
  cmd->add_option("--dyn-every", o.dyn_every,
                  "update flow parameters every k-th step");
}

std::vector<std::pair<int, int>> parse_bins(const std::string& s) {
  std::vector<std::pair<int, int>> bins;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    std::string item = s.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t dash = item.find('-');
    if (dash == std::string::npos) throw ConfigError("bad bin spec: " + item);
    bins.emplace_back(std::stoi(item.substr(0, dash)),
                      std::stoi(item.substr(dash + 1)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return bins;
}

TaskSpec task_from_options(const Options& o) {
  TaskSpec t;
  t.kind = task_from_name(o.task);
  t.vocab = o.vocab;
  t.l_min = o.l_min;
  t.l_train = o.l_train;
  t.shift_k = o.shift_k;
  t.bins = parse_bins(o.bins);
  t.validate();
  return t;
}

ModelConfig model_config_from_options(const Options& o, const TaskSpec& task) {
  ModelConfig cfg;
  cfg.d_model = o.d_model;
  cfg.n_blocks = o.blocks;
  cfg.heads = o.heads;
  cfg.d_ff = o.d_ff;
  cfg.vocab = static_cast<std::size_t>(task.vocab);
  cfg.v_out = static_cast<std::size_t>(task.v_out());
  cfg.encoder = encoder_kind_from_name(o.encoder);
  cfg.injection = injection_from_name(o.injection);
  cfg.table_l_max = o.table_lmax;
  cfg.rnn_layers = o.rnn_layers;
  cfg.rnn_vector_input = o.rnn_input == "vector";
  cfg.delta = o.delta;
  cfg.scheme = scheme_from_name(o.solver);
  cfg.substeps = o.substeps;
  cfg.grad_mode = grad_mode_from_name(o.grad_mode);
  return cfg;
}

TrainConfig train_config_from_options(const Options& o) {
  TrainConfig t;
  t.lr_peak = o.lr;
  t.warmup = o.warmup;
  t.dyn_lr_mult = o.dyn_lr_mult;
  t.dyn_every = o.dyn_every;
  t.steps = o.steps;
  t.batch = o.batch;
  t.seed = o.seed;
  return t;
}

double batch_mean_loss(EncoderModel& model, const Batch& batch) {
  ForwardResult fwd = model.forward(batch.inputs, false);
  Var loss = model.batch_loss(fwd, batch.targets);
  return fwd.tape->value(loss).values[0];
}

// Fixed tiny configuration for the model-wide gradient report.
ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_blocks = 2;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.vocab = 12;
  cfg.v_out = 12;
  cfg.encoder = EncoderKind::floater;
  cfg.injection = Injection::all_blocks;
  cfg.grad_mode = GradMode::unrolled;
  cfg.substeps = 4;
  cfg.dyn_init_sigma = 0.3;
  cfg.enc_init_sigma = 0.3;
  return cfg;
}

int run_gradcheck(const Options& o) {
  auto prims = primitive_grad_report(o.seed);
  TaskSpec task;
  task.kind = TaskKind::reverse;
  task.vocab = 12;
  task.l_min = 5;
  task.l_train = 5;
  auto model_items = model_grad_report(gradcheck_model_config(), task,
                                       mix64(o.seed, hash_str("model")), 2);
  std::string text = gradcheck_report_text(prims, model_items, 1e-5, 1e-4);
  std::fputs(text.c_str(), stdout);
  bool ok = true;
  for (const auto& it : prims) ok = ok && it.max_rel_err <= 1e-5;
  for (const auto& it : model_items) ok = ok && it.rel_err <= 1e-4;
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    write_text_file(o.out + "/gradcheck.txt", text);
  }
  std::printf("gradcheck: %s\n", ok ? "pass" : "FAIL");
  return ok ? 0 : 1;
}

int run_equivalence(const Options& o) {
  double fine = sinusoidal_equivalence_gap(20);
  double coarse = sinusoidal_equivalence_gap(5);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "sinusoidal-field integration vs closed form (L=64, d=32)\n"
                "  rk4 substeps 20: max abs gap %.3e (tolerance 1e-4)\n"
                "  rk4 substeps 5:  max abs gap %.3e (tolerance 1e-2)\n",
                fine, coarse);
  std::fputs(buf, stdout);
  bool ok = fine <= 1e-4 && coarse <= 1e-2;
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    write_text_file(o.out + "/equivalence.txt", std::string(buf));
  }
  std::printf("equivalence: %s\n", ok ? "pass" : "FAIL");
  return ok ? 0 : 1;
}

int run_train(const Options& o) {
  TaskSpec task = task_from_options(o);
  EncoderModel model(model_config_from_options(o, task), o.seed);
  TrainConfig tc = train_config_from_options(o);
  MetricsRecord rec = train(model, task, tc);
  rec.bins =
      evaluate_extrapolation(model, task, 32, mix64(o.seed, hash_str("eval")));
  int stride = std::max(1, tc.steps / 10);
  for (const StepRecord& s : rec.steps)
    if (s.step % stride == 0 || s.step == tc.steps)
      std::printf("step %4d  loss %.6f  lr %.5f\n", s.step, s.loss, s.lr);
  std::printf("train accuracy %.4f  (%.1fs)\n", rec.train_accuracy,
              rec.wall_seconds);
  for (const BinResult& b : rec.bins) {
    if (b.capacity_failure)
      std::printf("bin [%d,%d]  capacity-failure\n", b.lo, b.hi);
    else
      std::printf("bin [%d,%d]  accuracy %.4f\n", b.lo, b.hi, b.accuracy);
  }
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    export_metrics(rec, o.out + "/metrics.jsonl");
    save_checkpoint(snapshot(model), o.out + "/model.ckpt");
    std::printf("wrote %s/metrics.jsonl and %s/model.ckpt\n", o.out.c_str(),
                o.out.c_str());
  }
  return 0;
}

int run_eval(const Options& o, const std::string& model_path) {
  Checkpoint ck = load_checkpoint(model_path);
  EncoderModel model = model_from_checkpoint(ck);
  TaskSpec task = task_from_options(o);
  if (static_cast<std::size_t>(task.v_out()) != model.config().v_out)
    throw ConfigError("model output width does not match the task");
  MetricsRecord rec;
  rec.task = task_name(task.kind);
  rec.encoder = encoder_kind_name(model.config().encoder);
  rec.injection = injection_name(model.config().injection);
  rec.seed = o.seed;
  rec.params_total = model.param_count_total();
  rec.params_encoder = model.param_count_encoder();
  rec.bins =
      evaluate_extrapolation(model, task, 32, mix64(o.seed, hash_str("eval")));
  rec.train_accuracy =
      token_accuracy(model, task, 32, mix64(o.seed, hash_str("train-range")),
                     task.l_min, task.l_train);
  for (const BinResult& b : rec.bins) {
    if (b.capacity_failure)
      std::printf("bin [%d,%d]  capacity-failure\n", b.lo, b.hi);
    else
      std::printf("bin [%d,%d]  accuracy %.4f\n", b.lo, b.hi, b.accuracy);
  }
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    export_metrics(rec, o.out + "/eval.jsonl");
  }
  return 0;
}

int run_compare(const Options& o, const std::string& rows_spec,
                int eval_per_bin) {
  CompareConfig cc;
  cc.task = task_from_options(o);
  cc.base_model = model_config_from_options(o, cc.task);
  cc.train_cfg = train_config_from_options(o);
  cc.master_seed = o.seed;
  cc.eval_per_bin = eval_per_bin;
  if (!rows_spec.empty()) {
    std::size_t pos = 0;
    while (pos < rows_spec.size()) {
      std::size_t comma = rows_spec.find(',', pos);
      std::string item = rows_spec.substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos);
      std::size_t colon = item.find(':');
      if (colon == std::string::npos)
        throw ConfigError("bad row spec (want encoder:injection): " + item);
      cc.rows.push_back({encoder_kind_from_name(item.substr(0, colon)),
                         injection_from_name(item.substr(colon + 1))});
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  CompareReport report = compare_encoders(cc);
  std::fputs(compare_table_text(report).c_str(), stdout);
  if (!o.out.empty()) export_compare(report, o.out);
  return 0;
}

int run_export(const Options& o, const std::string& model_path,
               std::size_t length) {
  if (o.out.empty()) throw ConfigError("export needs --out");
  std::filesystem::create_directories(o.out);
  if (!model_path.empty()) {
    Checkpoint ck = load_checkpoint(model_path);
    EncoderModel model = model_from_checkpoint(ck);
    export_heatmaps(model, length, o.out);
  } else {
    TaskSpec task = task_from_options(o);
    EncoderModel model(model_config_from_options(o, task), o.seed);
    export_heatmaps(model, length, o.out);
  }
  double fine = sinusoidal_equivalence_gap(20);
  double coarse = sinusoidal_equivalence_gap(5);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "rk4 substeps 20: %.3e\nrk4 substeps 5: %.3e\n", fine, coarse);
  write_text_file(o.out + "/equivalence.txt", std::string(buf));
  std::printf("exported artifacts to %s\n", o.out.c_str());
  return 0;
}

int run_paramcount(const Options& o) {
  TaskSpec task = task_from_options(o);
  for (const char* name : {"sinusoidal", "sin-per-block", "table", "rnn",
                           "floater", "floater-bias"}) {
    Options row = o;
    row.encoder = name;
    EncoderModel model(model_config_from_options(row, task), o.seed);
    std::printf("%-14s encoder %8ld  total %8ld\n", name,
                model.param_count_encoder(), model.param_count_total());
  }
  return 0;
}

int run_warmstart(const Options& o, const std::string& donor_path,
                  const std::string& target_path) {
  Checkpoint donor_ck = load_checkpoint(donor_path);
  EncoderModel donor = model_from_checkpoint(donor_ck);

  ModelConfig target_cfg = config_from_map(donor_ck.config);
  target_cfg.encoder = encoder_kind_from_name(o.encoder);
  if (target_cfg.encoder != EncoderKind::floater &&
      target_cfg.encoder != EncoderKind::floater_bias)
    target_cfg.encoder = EncoderKind::floater_bias;
  target_cfg.injection = injection_from_name(o.injection);
  target_cfg.scheme = scheme_from_name(o.solver);
  target_cfg.substeps = o.substeps;
  target_cfg.grad_mode = grad_mode_from_name(o.grad_mode);
  target_cfg.delta = o.delta;
  EncoderModel target(target_cfg, o.seed);
  warm_start(donor_ck, target, o.seed);
  save_checkpoint(snapshot(target), target_path);

  TaskSpec task = task_from_options(o);
  if (static_cast<std::size_t>(task.v_out()) != donor.config().v_out)
    throw ConfigError("probe task does not match the donor output width");
  Batch probe = generate_batch(task, o.batch, mix64(o.seed, hash_str("probe")));
  double donor_loss = batch_mean_loss(donor, probe);
  double target_loss = batch_mean_loss(target, probe);
  double gap = std::abs(donor_loss - target_loss);
  std::printf("donor loss %.8f\nwarm-start loss %.8f\ngap %.3e\n", donor_loss,
              target_loss, gap);
  bool ok = gap <= 1e-3;
  std::printf("warmstart: %s\n", ok ? "pass" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-dynamics position encodings workbench"};
  app.require_subcommand(1);

  Options o;
  std::string model_path, donor_path, target_path, rows_spec;
  std::size_t export_length = 64;
  int eval_per_bin = 32;

  auto wire = [&](CLI::App* cmd, bool model, bool task, bool training) {
    cmd->set_config("--config", "", "flat key=value config file");
    cmd->add_option("--out", o.out, "output directory");
    add_solver_opts(cmd, o);
    if (model) add_model_opts(cmd, o);
    if (task) add_task_opts(cmd, o);
    if (training) add_train_opts(cmd, o);
  };

  CLI::App* c_gradcheck =
      app.add_subcommand("gradcheck", "module-wide gradient report");
  wire(c_gradcheck, false, false, false);

  CLI::App* c_equiv = app.add_subcommand(
      "equivalence", "sinusoidal dynamical-system special case");
  wire(c_equiv, false, false, false);

  CLI::App* c_train = app.add_subcommand("train", "train one model");
  wire(c_train, true, true, true);

  CLI::App* c_eval =
      app.add_subcommand("eval", "length-bin evaluation of a checkpoint");
  wire(c_eval, false, true, false);
  c_eval->add_option("--model", model_path, "checkpoint path")->required();

  CLI::App* c_compare =
      app.add_subcommand("compare", "encoder x injection comparison table");
  wire(c_compare, true, true, true);
  c_compare->add_option("--rows", rows_spec, "rows as encoder:injection[,...]");
  c_compare->add_option("--eval-per-bin", eval_per_bin,
                        "sequences per evaluation bin");

  CLI::App* c_export =
      app.add_subcommand("export", "encoding heatmaps and check summaries");
  wire(c_export, true, true, false);
  c_export->add_option("--model", model_path, "checkpoint to export from");
  c_export->add_option("--length", export_length, "positions per heatmap");

  CLI::App* c_params =
      app.add_subcommand("paramcount", "parameter accounting per encoder");
  wire(c_params, true, true, false);

  CLI::App* c_warm = app.add_subcommand(
      "warmstart", "initialize a floater model from a vanilla checkpoint");
  wire(c_warm, true, true, true);
  c_warm->add_option("donor", donor_path, "donor checkpoint")->required();
  c_warm->add_option("target", target_path, "output checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_gradcheck->parsed()) return run_gradcheck(o);
    if (c_equiv->parsed()) return run_equivalence(o);
    if (c_train->parsed()) return run_train(o);
    if (c_eval->parsed()) return run_eval(o, model_path);
    if (c_compare->parsed()) return run_compare(o, rows_spec, eval_per_bin);
    if (c_export->parsed()) return run_export(o, model_path, export_length);
    if (c_params->parsed()) return run_paramcount(o);
    if (c_warm->parsed()) return run_warmstart(o, donor_path, target_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
