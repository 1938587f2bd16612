#include "flowpos/train.hpp"

#include <chrono>
#include <cmath>

#include "flowpos/errors.hpp"

namespace flowpos {

double lr_at(const TrainConfig& cfg, int step, bool warm_started) {
  if (cfg.lr_peak < 0.0) throw ConfigError("learning rate must be >= 0");
  if (cfg.warmup < 1) throw ConfigError("warmup must be >= 1");
  double peak = cfg.lr_peak;
  if (warm_started && cfg.halve_peak_on_warm_start) peak /= 2.0;
  double s = static_cast<double>(step);
  double w = static_cast<double>(cfg.warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

void AdamOptimizer::step(std::vector<NamedParam> params, double lr,
                         bool update_dynamics) {
  for (NamedParam& p : params) {
    if (p.dynamics_group && !update_dynamics) continue;
    Tensor& t = *p.tensor;
    if (t.grad.empty()) t.ensure_grad();
    Slot& slot = slots_[p.name];
    if (slot.m.empty()) {
      slot.m.assign(t.numel(), 0.0);
      slot.v.assign(t.numel(), 0.0);
    }
    slot.t += 1;
    double bc1 = 1.0 - std::pow(cfg_.beta1, slot.t);
    double bc2 = 1.0 - std::pow(cfg_.beta2, slot.t);
    double lr_eff = lr * (p.dynamics_group ? cfg_.dyn_lr_mult : 1.0);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double g = t.grad[i];
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      t.values[i] -= lr_eff * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
    }
  }
}

MetricsRecord train(EncoderModel& model, const TaskSpec& task,
                    const TrainConfig& cfg) {
  task.validate();
  if (static_cast<std::size_t>(task.v_out()) != model.config().v_out)
    throw ContractError("model v_out does not match the task");
  if (cfg.steps < 0 || cfg.batch < 1)
    throw ConfigError("bad training budget");

  auto started = std::chrono::steady_clock::now();
  MetricsRecord rec;
  rec.task = task_name(task.kind);
  rec.encoder = encoder_kind_name(model.config().encoder);
  rec.injection = injection_name(model.config().injection);
  rec.seed = cfg.seed;
  rec.params_total = model.param_count_total();
  rec.params_encoder = model.param_count_encoder();

  AdamOptimizer adam(cfg);
  for (int step = 1; step <= cfg.steps; ++step) {
    Batch batch =
        generate_batch(task, cfg.batch,
                       mix64(cfg.seed, static_cast<std::uint64_t>(step)));
    bool dyn_step = ((step - 1) % cfg.dyn_every) == 0;
    double loss_value = 0.0;
    try {
      ForwardResult fwd =
          model.forward(batch.inputs, true, false, !dyn_step);
      Var loss = model.batch_loss(fwd, batch.targets);
      loss_value = fwd.tape->value(loss).values[0];
      if (!std::isfinite(loss_value))
        throw NumericError("loss is not finite");
      model.zero_grads();
      model.backward(fwd, loss);
    } catch (const NumericError& e) {
      throw TrainingError("training diverged at step " +
                          std::to_string(step) + ": " + e.what());
    }
    double lr = lr_at(cfg, step, model.warm_started);
    adam.step(model.parameters(), lr, dyn_step);
    if (dyn_step) model.note_dynamics_updated();
    rec.steps.push_back({step, loss_value, lr});
  }
  if (!rec.steps.empty()) rec.final_loss = rec.steps.back().loss;
  rec.train_accuracy =
      token_accuracy(model, task, 64, mix64(cfg.seed, hash_str("train-acc")),
                     task.l_min, task.l_train);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return rec;
}

double token_accuracy(EncoderModel& model, const TaskSpec& task, int n,
                      std::uint64_t seed, int lo, int hi) {
  Batch batch = generate_batch_in_range(task, n, seed, lo, hi);
  long correct = 0, total = 0;
  for (std::size_t b = 0; b < batch.inputs.size(); ++b) {
    Tensor logits = model.logits(batch.inputs[b]);
    std::size_t L = logits.rows(), V = logits.cols();
    for (std::size_t i = 0; i < L; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < V; ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      if (static_cast<int>(best) == batch.targets[b][i]) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) /
                                static_cast<double>(total);
}

std::vector<BinResult> evaluate_extrapolation(EncoderModel& model,
                                              const TaskSpec& task,
                                              int n_per_bin,
                                              std::uint64_t seed) {
  task.validate();
  std::vector<BinResult> out;
  for (std::size_t k = 0; k < task.bins.size(); ++k) {
    auto [lo, hi] = task.bins[k];
    BinResult r;
    r.lo = lo;
    r.hi = hi;
    try {
      r.accuracy = token_accuracy(model, task, n_per_bin,
                                  mix64(seed, static_cast<std::uint64_t>(k)),
                                  lo, hi);
    } catch (const CapacityError&) {
      r.capacity_failure = true;
      r.accuracy = 0.0;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace flowpos
