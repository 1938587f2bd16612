#pragma once

#include <cstdint>
#include <string_view>

namespace flowpos {

// splitmix64-based generator. Self-contained so that streams are identical
// across compilers and standard libraries, which the byte-identical
// reproducibility contract depends on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  double uniform();  // [0, 1), 53-bit resolution
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double sigma = 1.0);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Order-sensitive combiner for deriving independent sub-streams
// (per parameter, per comparison row, per training step).
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

// FNV-1a, used to key parameter-name streams.
std::uint64_t hash_str(std::string_view s);

}  // namespace flowpos
