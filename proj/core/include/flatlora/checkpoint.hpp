#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatlora/model.hpp"
#include "flatlora/perturb.hpp"

namespace flatlora {

// Binary model snapshot: an 8-byte magic, a length-prefixed JSON header
// (model spec, build seed, tensor directory, perturbation records, config
// echo), then all tensor payloads as raw little-endian f64. Loading rebuilds
// the model from the spec and overwrites every tensor, so a save/load cycle
// is bit-exact.
void save_checkpoint(const std::string& path, const Model& model,
                     std::uint64_t build_seed,
                     const std::vector<PerturbationRecord>& records = {},
                     const std::string& config_echo = "");

struct LoadedCheckpoint {
  Model model;
  std::uint64_t build_seed = 0;
  std::vector<PerturbationRecord> records;
  std::string config_echo;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace flatlora
