#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "flatlora/model.hpp"
#include "flatlora/optim.hpp"
#include "flatlora/perturb.hpp"
#include "flatlora/rng.hpp"
#include "flatlora/tensor.hpp"

namespace flatlora {

struct SamConfig {
  double rho = 0.05;
  enum class Space { full_w, lora_ab };
  Space space = Space::full_w;
  bool per_layer = false;  // normalize each layer to rho instead of globally
};

struct StepReport {
  std::size_t step = 0;
  std::optional<double> clean_loss;
  std::optional<double> perturbed_loss;
  double sigma_or_rho = 0.0;
  std::optional<double> ratio;  // min per-layer ratio_statistic, if tracked
  double grad_norm = 0.0;       // norm of the gradient the update consumed
  std::uint64_t grad_evals = 0;
  std::size_t extra_state_floats = 0;  // persistent perturbation bookkeeping
  bool degenerate = false;             // zero-gradient SAM step
};

// Filled by the SAM trainers when a non-null pointer is passed; analysis only.
struct SamCapture {
  std::map<std::string, Tensor> eps_a;
  std::map<std::string, Tensor> eps_b;
  std::map<std::string, Tensor> eps_w;
  std::map<std::string, Tensor> grad_w;  // merged-space gradients, pass 1
};

StepReport lora_step(Model& model, const Batch& batch, Optimizer& opt);

StepReport flat_lora_step(Model& model, const Batch& batch, Optimizer& opt,
                          const SigmaSchedule& schedule, std::size_t t,
                          const RngStream& noise_base, int samples = 1);

StepReport sam_step_full(Model& model, const Batch& batch, Optimizer& opt,
                         const SamConfig& cfg, SamCapture* capture = nullptr);

StepReport lora_sam_step(Model& model, const Batch& batch, Optimizer& opt,
                         const SamConfig& cfg, SamCapture* capture = nullptr);

// Gradient of the batch loss w.r.t. each adapted layer's merged weight matrix,
// obtained by routing the forward pass through gradient-carrying merged copies.
struct MergedGradients {
  std::map<std::string, Tensor> grads;
  double loss = 0.0;
};
MergedGradients merged_weight_gradients(Model& model, const Batch& batch);

// eps_w = c[B·BᵀG + G·AᵀA] + c²·G·Aᵀ·Bᵀ·G with c = rho/sqrt(|BᵀG|² + |GAᵀ|²);
// eps_a = c·BᵀG, eps_b = c·GAᵀ. Zero denominator flags degenerate (all zero).
struct EquivalentPerturbation {
  Tensor eps_w;
  Tensor eps_a;
  Tensor eps_b;
  double c = 0.0;
  bool degenerate = false;
};
EquivalentPerturbation equivalent_perturbation(const Tensor& A, const Tensor& B,
                                               const Tensor& grad_w, double rho);

// Rank-limited form c·G·AᵀA, exact when B = 0.
Tensor approx_equivalent(const Tensor& A, const Tensor& B, const Tensor& grad_w,
                         double rho);

// |eps_b·A| / |eps_w| (Frobenius by default, spectral behind the flag).
// Undefined when |eps_w| = 0: defined=false, value = -1.
struct RatioResult {
  double value = -1.0;
  bool defined = false;
};
RatioResult ratio_statistic(const Tensor& A, const Tensor& B,
                            const Tensor& grad_w, double rho,
                            bool spectral = false);

double frobenius_norm(const Tensor& t);
double spectral_norm(const Tensor& t, int iters = 100);

}  // namespace flatlora
