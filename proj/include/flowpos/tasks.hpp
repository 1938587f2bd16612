#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace flowpos {

enum class TaskKind { reverse, positional_parity, shift_by_k };

TaskKind task_from_name(const std::string& name);
const char* task_name(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::positional_parity;
  int vocab = 32;
  int l_min = 2;
  int l_train = 20;
  int shift_k = 1;
  std::vector<std::pair<int, int>> bins = {{21, 30}, {31, 40}, {41, 60},
                                           {61, 80}};

  int v_out() const {
    return kind == TaskKind::positional_parity ? 2 : vocab;
  }
  void validate() const;  // bins disjoint and ascending, sane lengths
};

struct Batch {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;
};

// Deterministic in (spec, n, seed). Lengths are uniform on
// [l_min, l_train]. Tokens are dealt from shuffled decks of the vocabulary,
// so any window of `vocab` consecutive positions holds distinct tokens; for
// lengths <= vocab this is sampling without replacement.
Batch generate_batch(const TaskSpec& spec, int n, std::uint64_t seed);

// Same, with lengths uniform on [lo, hi] (evaluation bins).
Batch generate_batch_in_range(const TaskSpec& spec, int n, std::uint64_t seed,
                              int lo, int hi);

}  // namespace flowpos
