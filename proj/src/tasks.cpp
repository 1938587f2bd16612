#include "flowpos/tasks.hpp"

#include "flowpos/errors.hpp"
#include "flowpos/rng.hpp"

namespace flowpos {

TaskKind task_from_name(const std::string& name) {
  if (name == "reverse") return TaskKind::reverse;
  if (name == "positional_parity" || name == "parity")
    return TaskKind::positional_parity;
  if (name == "shift_by_k" || name == "shift") return TaskKind::shift_by_k;
  throw ConfigError("unknown task: " + name);
}

const char* task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::reverse:
      return "reverse";
    case TaskKind::positional_parity:
      return "positional_parity";
    case TaskKind::shift_by_k:
      return "shift_by_k";
  }
  return "?";
}

void TaskSpec::validate() const {
  if (vocab < 2) throw ConfigError("task vocabulary must have >= 2 tokens");
  if (l_min < 1 || l_min > l_train)
    throw ConfigError("need 1 <= l_min <= l_train");
  int prev_hi = 0;
  for (const auto& [lo, hi] : bins) {
    if (lo > hi) throw ConfigError("bin bounds out of order");
    if (lo <= prev_hi) throw ConfigError("bins must be disjoint and ascending");
    prev_hi = hi;
  }
}

namespace {

std::vector<int> deal_tokens(int length, int vocab, Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(length));
  std::vector<int> deck(static_cast<std::size_t>(vocab));
  while (static_cast<int>(out.size()) < length) {
    for (int v = 0; v < vocab; ++v) deck[static_cast<std::size_t>(v)] = v;
    for (int i = vocab - 1; i > 0; --i) {
      int j = static_cast<int>(rng.uniform_int(0, i));
      std::swap(deck[static_cast<std::size_t>(i)],
                deck[static_cast<std::size_t>(j)]);
    }
    for (int v = 0; v < vocab && static_cast<int>(out.size()) < length; ++v)
      out.push_back(deck[static_cast<std::size_t>(v)]);
  }
  return out;
}

std::vector<int> targets_for(const TaskSpec& spec,
                             const std::vector<int>& input) {
  int L = static_cast<int>(input.size());
  std::vector<int> t(static_cast<std::size_t>(L));
  switch (spec.kind) {
    case TaskKind::reverse:
      for (int i = 0; i < L; ++i)
        t[static_cast<std::size_t>(i)] =
            input[static_cast<std::size_t>(L - 1 - i)];
      break;
    case TaskKind::positional_parity:
      for (int i = 0; i < L; ++i) t[static_cast<std::size_t>(i)] = i % 2;
      break;
    case TaskKind::shift_by_k:
      for (int i = 0; i < L; ++i)
        t[static_cast<std::size_t>(i)] =
            input[static_cast<std::size_t>((i + spec.shift_k) % L)];
      break;
  }
  return t;
}

}  // namespace

Batch generate_batch_in_range(const TaskSpec& spec, int n, std::uint64_t seed,
                              int lo, int hi) {
  spec.validate();
  if (n < 1) throw ContractError("batch size must be >= 1");
  if (lo < 1 || lo > hi) throw ContractError("bad length range");
  Batch batch;
  for (int b = 0; b < n; ++b) {
    Rng rng(mix64(seed, static_cast<std::uint64_t>(b)));
    int length = static_cast<int>(rng.uniform_int(lo, hi));
    std::vector<int> input = deal_tokens(length, spec.vocab, rng);
    batch.targets.push_back(targets_for(spec, input));
    batch.inputs.push_back(std::move(input));
  }
  return batch;
}

Batch generate_batch(const TaskSpec& spec, int n, std::uint64_t seed) {
  return generate_batch_in_range(spec, n, seed, spec.l_min, spec.l_train);
}

}  // namespace flowpos
