#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowpos/tasks.hpp"
#include "flowpos/transformer.hpp"

namespace flowpos {

struct TrainConfig {
  double lr_peak = 5e-3;
  int warmup = 20;            // linear warmup, then inverse-sqrt decay
  double dyn_lr_mult = 2.0;   // flow parameters train faster
  int dyn_every = 1;          // flow parameters update every k-th step
  int steps = 200;
  int batch = 16;
  std::uint64_t seed = 1;
  bool halve_peak_on_warm_start = true;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
};

struct StepRecord {
  int step;
  double loss;
  double lr;
};

struct BinResult {
  int lo = 0, hi = 0;
  double accuracy = 0.0;
  bool capacity_failure = false;
};

struct MetricsRecord {
  std::string task;
  std::string encoder;
  std::string injection;
  std::uint64_t seed = 0;
  long params_total = 0;
  long params_encoder = 0;
  std::vector<StepRecord> steps;
  std::vector<BinResult> bins;
  double train_accuracy = -1.0;
  double final_loss = -1.0;
  double wall_seconds = 0.0;  // console only, never exported
};

double lr_at(const TrainConfig& cfg, int step, bool warm_started);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(const TrainConfig& cfg) : cfg_(cfg) {}
  // Applies one update from the gradients currently in the parameters.
  // Dynamics-group parameters are skipped unless update_dynamics is set.
  void step(std::vector<NamedParam> params, double lr, bool update_dynamics);

 private:
  struct Slot {
    std::vector<double> m, v;
    int t = 0;
  };
  TrainConfig cfg_;
  std::map<std::string, Slot> slots_;
};

// Adam with linear warmup and inverse-sqrt decay over position-sensitive
// synthetic tasks. Deterministic in (model seed, cfg.seed).
MetricsRecord train(EncoderModel& model, const TaskSpec& task,
                    const TrainConfig& cfg);

double token_accuracy(EncoderModel& model, const TaskSpec& task, int n,
                      std::uint64_t seed, int lo, int hi);

// Per-bin token accuracy; table capacity failures become markers, not throws.
std::vector<BinResult> evaluate_extrapolation(EncoderModel& model,
                                              const TaskSpec& task,
                                              int n_per_bin,
                                              std::uint64_t seed);

}  // namespace flowpos
