#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flowpos/transformer.hpp"

namespace flowpos {

// Named-tensor container behind the checkpoint file format: a text header
// with a format version and the config snapshot, then raw little-endian
// 64-bit floats for each tensor in header order. Round-trips are bitwise.
struct Checkpoint {
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, Tensor>> tensors;  // sorted by name

  const Tensor* find(const std::string& name) const;
};

Checkpoint snapshot(EncoderModel& model);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

ModelConfig config_from_map(const std::map<std::string, std::string>& m);
EncoderModel model_from_checkpoint(const Checkpoint& ckpt);

// Copies every attention/FFN/embedding/head tensor from the donor, restarts
// the dynamics near zero and zeroes the initial vectors, so the surgered
// model's function starts next to the donor's.
void warm_start(const Checkpoint& donor, EncoderModel& target,
                std::uint64_t seed);

}  // namespace flowpos
