#include "flowpos/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flowpos/errors.hpp"

namespace flowpos {

std::vector<CompareRow> default_compare_rows() {
  return {
      {EncoderKind::floater, Injection::all_blocks},
      {EncoderKind::sinusoidal, Injection::all_blocks},
      {EncoderKind::sin_per_block, Injection::all_blocks},
      {EncoderKind::table, Injection::all_blocks},
      {EncoderKind::floater, Injection::input_only},
      {EncoderKind::sinusoidal, Injection::input_only},
      {EncoderKind::table, Injection::input_only},
      {EncoderKind::rnn, Injection::input_only},
      {EncoderKind::floater_bias, Injection::all_blocks},
  };
}

namespace {

ModelConfig row_model_config(const CompareConfig& cfg, const CompareRow& row) {
  ModelConfig mc = cfg.base_model;
  mc.encoder = row.encoder;
  mc.injection = row.injection;
  mc.v_out = static_cast<std::size_t>(cfg.task.v_out());
  mc.vocab = static_cast<std::size_t>(cfg.task.vocab);
  return mc;
}

bool core_tensors_identical(EncoderModel& a, EncoderModel& b) {
  auto ta = a.named_tensors();
  auto tb = b.named_tensors();
  for (const auto& [name, tensor] : ta) {
    if (name.rfind("enc.", 0) == 0) continue;
    const Tensor* other = nullptr;
    for (const auto& [n2, t2] : tb)
      if (n2 == name) other = t2;
    if (!other || !bitwise_equal(*tensor, *other)) return false;
  }
  return true;
}

}  // namespace

CompareReport compare_encoders(const CompareConfig& cfg) {
  CompareConfig c = cfg;
  if (c.rows.empty()) c.rows = default_compare_rows();
  c.task.validate();

  CompareReport report;
  for (std::size_t i = 0; i < c.rows.size(); ++i) {
    EncoderModel model(row_model_config(c, c.rows[i]), c.master_seed);
    TrainConfig tc = c.train_cfg;
    tc.seed = mix64(c.master_seed, i + 1);
    MetricsRecord rec = train(model, c.task, tc);
    rec.bins = evaluate_extrapolation(model, c.task, c.eval_per_bin,
                                      mix64(tc.seed, hash_str("eval")));
    report.rows.push_back(std::move(rec));
  }

  if (c.rows.size() >= 2) {
    EncoderModel a(row_model_config(c, c.rows[0]), c.master_seed);
    report.core_init_identical = true;
    for (std::size_t i = 1; i < c.rows.size() && report.core_init_identical;
         ++i) {
      EncoderModel b(row_model_config(c, c.rows[i]), c.master_seed);
      report.core_init_identical = core_tensors_identical(a, b);
    }
  } else {
    report.core_init_identical = true;
  }
  return report;
}

std::string compare_table_text(const CompareReport& report) {
  std::ostringstream os;
  os << "encoder        injection  params   train_acc";
  if (!report.rows.empty())
    for (const BinResult& b : report.rows.front().bins)
      os << "  [" << b.lo << "," << b.hi << "]";
  os << "\n";
  for (const MetricsRecord& r : report.rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-14s %-10s %-8ld %9.4f", r.encoder.c_str(),
                  r.injection.c_str(), r.params_encoder, r.train_accuracy);
    os << buf;
    for (const BinResult& b : r.bins) {
      if (b.capacity_failure)
        os << "  " << "capacity";
      else {
        std::snprintf(buf, sizeof(buf), "  %8.4f", b.accuracy);
        os << buf;
      }
    }
    os << "\n";
  }
  os << "core_init_identical: "
     << (report.core_init_identical ? "true" : "false") << "\n";
  return os.str();
}

std::string metrics_jsonl(const MetricsRecord& rec) {
  using nlohmann::json;
  std::string out;
  json header = {{"type", "run_header"},     {"task", rec.task},
                 {"encoder", rec.encoder},   {"injection", rec.injection},
                 {"seed", rec.seed},         {"params_total", rec.params_total},
                 {"params_encoder", rec.params_encoder}};
  out += header.dump() + "\n";
  for (const StepRecord& s : rec.steps) {
    json step = {{"type", "step"}, {"step", s.step}, {"loss", s.loss},
                 {"lr", s.lr}};
    out += step.dump() + "\n";
  }
  for (const BinResult& b : rec.bins) {
    json bin = {{"type", "bin"},
                {"lo", b.lo},
                {"hi", b.hi},
                {"capacity_failure", b.capacity_failure}};
    if (!b.capacity_failure) bin["accuracy"] = b.accuracy;
    out += bin.dump() + "\n";
  }
  json summary = {{"type", "summary"},
                  {"final_loss", rec.final_loss},
                  {"train_accuracy", rec.train_accuracy}};
  out += summary.dump() + "\n";
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("write failed for " + path);
}

void export_metrics(const MetricsRecord& rec, const std::string& path) {
  write_text_file(path, metrics_jsonl(rec));
}

void export_compare(const CompareReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::string jsonl;
  for (const MetricsRecord& r : report.rows) jsonl += metrics_jsonl(r);
  write_text_file(dir + "/compare.jsonl", jsonl);
  write_text_file(dir + "/compare.txt", compare_table_text(report));
}

void export_heatmaps(EncoderModel& model, std::size_t length,
                     const std::string& dir) {
  std::filesystem::create_directories(dir);
  const ModelConfig& cfg = model.config();
  std::string kind = encoder_kind_name(cfg.encoder);
  PositionEncoder& enc = model.encoder();
  auto path = [&](const std::string& tag) {
    return dir + "/" + kind + "_" + tag + ".csv";
  };
  switch (cfg.encoder) {
    case EncoderKind::none:
      break;
    case EncoderKind::sinusoidal:
      write_encoding_csv(path("input"),
                         sinusoidal(length, std::get<SinusoidalSpec>(enc)));
      break;
    case EncoderKind::sin_per_block:
      for (std::size_t n = 1; n <= cfg.encoder_blocks(); ++n)
        write_encoding_csv(
            path("block" + std::to_string(n)),
            sinusoidal_per_block(length,
                                 std::get<PerBlockSinusoidal>(enc).spec, n));
      break;
    case EncoderKind::table: {
      auto& tbl = std::get<LearnedTable>(enc);
      write_encoding_csv(path("input"),
                         table_lookup(tbl, std::min(length, tbl.l_max())));
      break;
    }
    case EncoderKind::rnn:
      write_encoding_csv(path("input"),
                         rnn_encode(std::get<RnnEncoderState>(enc), length));
      break;
    case EncoderKind::floater: {
      auto& fl = std::get<FloaterState>(enc);
      for (std::size_t n = 1; n <= fl.n_blocks; ++n)
        write_encoding_csv(path("block" + std::to_string(n)),
                           floater_encode(fl, length, n));
      break;
    }
    case EncoderKind::floater_bias: {
      auto& fl = std::get<FloaterState>(enc);
      static const char* slot_names[3] = {"q", "k", "v"};
      for (std::size_t n = 1; n <= fl.n_blocks; ++n) {
        auto mats = floater_bias(fl, length, n);
        for (std::size_t s = 0; s < 3; ++s)
          write_encoding_csv(
              path("block" + std::to_string(n) + "_" + slot_names[s]),
              mats[s]);
      }
      break;
    }
  }
}

std::vector<ModelGradItem> model_grad_report(const ModelConfig& cfg,
                                             const TaskSpec& task,
                                             std::uint64_t seed, int batch,
                                             double eps) {
  EncoderModel model(cfg, seed);
  Batch data = generate_batch(task, batch, mix64(seed, hash_str("gradcheck")));

  auto eval_loss = [&]() {
    model.note_dynamics_updated();  // the cache must see perturbed parameters
    ForwardResult fwd = model.forward(data.inputs, false);
    Var loss = model.batch_loss(fwd, data.targets);
    return fwd.tape->value(loss).values[0];
  };

  model.zero_grads();
  ForwardResult fwd = model.forward(data.inputs, true);
  Var loss = model.batch_loss(fwd, data.targets);
  double loss_value = fwd.tape->value(loss).values[0];
  model.backward(fwd, loss);

  // Parameters with structurally null gradients (the key bias shifts every
  // score in a row equally, which the row softmax cancels) leave both sides
  // at float-noise level; the loss-scaled floor keeps their ratio meaningful.
  double floor = 1e-4 * std::max(1.0, std::abs(loss_value));

  std::vector<ModelGradItem> report;
  for (NamedParam& p : model.parameters()) {
    Tensor& t = *p.tensor;
    t.ensure_grad();
    std::vector<double> ad = t.grad;
    std::vector<double> fd(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double orig = t.values[i];
      t.values[i] = orig + eps;
      double up = eval_loss();
      t.values[i] = orig - eps;
      double dn = eval_loss();
      t.values[i] = orig;
      fd[i] = (up - dn) / (2 * eps);
    }
    model.note_dynamics_updated();
    report.push_back({p.name, rel_error(ad, fd, floor)});
  }
  return report;
}

double sinusoidal_equivalence_gap(int substeps) {
  SinusoidalSpec spec{32, 1e-4};
  SinusoidalField field(spec);
  const std::size_t L = 64;
  Tensor table = sinusoidal(L, spec);
  Tensor p0 = Tensor::zeros({1, 32});
  for (std::size_t j = 0; j < 32; ++j) p0.values[j] = table.at(0, j);
  Trajectory tr = encode_positions(field, p0, TimeGrid::equidistant(L - 1, 1.0),
                                   {Scheme::rk4, substeps});
  double worst = 0.0;
  for (std::size_t i = 1; i < L; ++i)
    for (std::size_t j = 0; j < 32; ++j)
      worst =
          std::max(worst, std::abs(tr.states[i].values[j] - table.at(i, j)));
  return worst;
}

std::string gradcheck_report_text(const std::vector<GradCheckItem>& prims,
                                  const std::vector<ModelGradItem>& model,
                                  double prim_tol, double model_tol) {
  std::ostringstream os;
  char buf[160];
  os << "primitive ops (tolerance " << prim_tol << ")\n";
  for (const GradCheckItem& item : prims) {
    std::snprintf(buf, sizeof(buf), "  %-28s %.3e %s\n", item.name.c_str(),
                  item.max_rel_err, item.max_rel_err <= prim_tol ? "ok" : "FAIL");
    os << buf;
  }
  os << "full model (tolerance " << model_tol << ")\n";
  for (const ModelGradItem& item : model) {
    std::snprintf(buf, sizeof(buf), "  %-28s %.3e %s\n", item.name.c_str(),
                  item.rel_err, item.rel_err <= model_tol ? "ok" : "FAIL");
    os << buf;
  }
  return os.str();
}

}  // namespace flowpos
