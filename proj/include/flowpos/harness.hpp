#pragma once

#include <string>
#include <vector>

#include "flowpos/checkpoint.hpp"
#include "flowpos/gradcheck.hpp"
#include "flowpos/train.hpp"

namespace flowpos {

struct CompareRow {
  EncoderKind encoder;
  Injection injection;
};

struct CompareConfig {
  std::vector<CompareRow> rows;  // empty selects the default grid
  TaskSpec task;
  ModelConfig base_model;  // encoder/injection/v_out overridden per row
  TrainConfig train_cfg;
  std::uint64_t master_seed = 1;
  int eval_per_bin = 32;
};

struct CompareReport {
  std::vector<MetricsRecord> rows;
  // Non-encoder tensors are seeded from the master seed only, so rows start
  // from identical core weights; verified by diffing them at initialization.
  bool core_init_identical = false;
};

std::vector<CompareRow> default_compare_rows();
CompareReport compare_encoders(const CompareConfig& cfg);
std::string compare_table_text(const CompareReport& report);

// Line-delimited records; wall-clock time is deliberately not serialized so
// identical (seed, config) runs export identical bytes.
std::string metrics_jsonl(const MetricsRecord& rec);
void write_text_file(const std::string& path, const std::string& content);
void export_metrics(const MetricsRecord& rec, const std::string& path);
void export_compare(const CompareReport& report, const std::string& dir);

// Heatmap CSVs for every encoding surface the model carries.
void export_heatmaps(EncoderModel& model, std::size_t length,
                     const std::string& dir);

// Full-model gradient check: reverse mode (including the ODE gradient
// transfer) against central finite differences of the whole loss.
struct ModelGradItem {
  std::string name;
  double rel_err;
};
std::vector<ModelGradItem> model_grad_report(const ModelConfig& cfg,
                                             const TaskSpec& task,
                                             std::uint64_t seed, int batch,
                                             double eps = 1e-6);

// Max absolute gap between the integrated sinusoidal field and the closed
// form over a unit grid (L = 64, d = 32, rk4).
double sinusoidal_equivalence_gap(int substeps);

std::string gradcheck_report_text(const std::vector<GradCheckItem>& prims,
                                  const std::vector<ModelGradItem>& model,
                                  double prim_tol, double model_tol);

}  // namespace flowpos
