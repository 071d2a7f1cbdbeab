#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatlora/rng.hpp"
#include "flatlora/tensor.hpp"

namespace flatlora {

struct Model;

// Everything needed to regenerate one layer's ε_W exactly: a seed label plus
// per-filter norms. O(m) storage, never the m×n matrix itself.
struct PerturbationRecord {
  std::string layer;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  double sigma = 0.0;
  std::vector<double> filter_norms;  // ‖W′_{i,:}‖₂, length m
  std::size_t input_dim = 0;         // n

  std::size_t rows() const { return filter_norms.size(); }
  // per-element std of row i is sigma·‖W′_{i,:}‖₂/√n
  double row_scale(std::size_t i) const;
};

struct SigmaSchedule {
  enum class Kind { constant, cosine_increase };
  double sigma_max = 0.05;
  std::size_t total_steps = 1;
  Kind kind = Kind::constant;
};

double sigma_at(const SigmaSchedule& schedule, std::size_t t);

// Per-row ℓ₂ norms of a merged weight matrix.
std::vector<double> filter_norms(const Tensor& w_merged);

// Materializes ε_W from a record. σ = 0 yields exact zeros without touching
// the generator. Analysis-side only; training paths regenerate rows on the
// fly instead of holding the dense matrix.
Tensor sample_perturbation(const PerturbationRecord& record);

PerturbationRecord make_perturbation_record(const std::string& layer_name,
                                            const Tensor& w_merged,
                                            double sigma,
                                            const RngStream& stream);

// Attach/detach perturbations on a model's adapted layers. While attached,
// every forward and backward sees W′ + ε_W; the stored weights are never
// touched, so removal restores the exact original state by construction.
void apply_perturbation(Model& model,
                        const std::vector<PerturbationRecord>& records);
void remove_perturbation(Model& model,
                         const std::vector<PerturbationRecord>& records);

// Appendix-style whole-model variant: adapted linear layers get the filter-norm
// treatment; every other parameter tensor p gets elementwise noise with std
// σ·|p_k| (treated as m = numel single-column records).
std::vector<PerturbationRecord> sample_all_layers(Model& model, double sigma,
                                                  const RngStream& stream);

}  // namespace flatlora
