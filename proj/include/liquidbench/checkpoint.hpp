#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "liquidbench/model.hpp"
#include "liquidbench/optim.hpp"

namespace liquidbench {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Versioned binary container: magic "LQBC", format version, config hash,
// seed, epochs done, canonical config text, then length-prefixed
// (name, shape, little-endian float64 payload) records for parameters and
// optimizer moments. Save -> load -> save is byte-identical.
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t epochs_done = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;  // sorted by name
  AdamState adam;
};

Checkpoint make_checkpoint(const Model& model, const AdamState& adam,
                           std::uint64_t seed, std::uint64_t epochs_done,
                           std::uint64_t config_hash, std::string config_text);

// Overwrites matching parameters (by name and shape) and the adam moments.
void restore_checkpoint(const Checkpoint& ckpt, Model& model, AdamState& adam);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace liquidbench
