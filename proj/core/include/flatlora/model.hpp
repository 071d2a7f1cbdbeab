#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flatlora/perturb.hpp"
#include "flatlora/rng.hpp"
#include "flatlora/tensor.hpp"

namespace flatlora {

// A linear layer y = x·Wᵀ + bias with W frozen. rank > 0 adds trainable
// low-rank factors: y += (α/r)·x·Aᵀ·Bᵀ. Perturbation overlays contribute
// x·εᵀ without ever touching the stored weights.
struct LoraLayer {
  std::string name;
  Tensor W;     // [m,n] frozen
  Tensor bias;  // [m] frozen
  std::size_t rank = 0;
  double alpha = 0.0;
  Tensor A;  // [r,n] trainable
  Tensor B;  // [m,r] trainable, zero at init

  std::optional<PerturbationRecord> seeded_overlay;  // regenerated row-wise
  std::optional<Tensor> dense_overlay;               // full ε buffer (SAM)

  bool adapted() const { return rank > 0; }
  double scaling() const { return alpha / static_cast<double>(rank); }
  std::size_t out_dim() const { return W.dim(0); }
  std::size_t in_dim() const { return W.dim(1); }
};

LoraLayer lora_init(std::size_t m, std::size_t n, std::size_t r, double alpha,
                    RngStream& stream, std::string name = "layer",
                    const Tensor* base_w = nullptr, bool normal_init = false);

Tensor lora_forward(const LoraLayer& layer, const Tensor& x);

// W′ = W + (α/r)·B·A, always a fresh tensor; rank 0 gives a copy of W.
Tensor merge_weights(const LoraLayer& layer);

enum class Architecture { mlp, tiny_transformer };

struct ModelSpec {
  Architecture arch = Architecture::mlp;
  std::vector<std::size_t> mlp_dims = {2, 64, 64, 2};  // in, hidden..., classes

  std::size_t vocab = 4;
  std::size_t seq_len = 16;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t heads = 2;
  std::size_t classes = 2;

  std::size_t rank = 4;
  double alpha = 4.0;
  bool adapt_head = false;   // head stays fully frozen by default
  bool train_norms = false;  // layernorm gains/biases join the trainables
  bool normal_init = false;  // adapter A drawn normal instead of uniform
};

struct Batch {
  Tensor features;                               // mlp input [b, d_in]
  std::vector<std::vector<std::size_t>> tokens;  // transformer input
  std::vector<std::size_t> labels;

  std::size_t size() const {
    return tokens.empty() ? features.dim(0) : tokens.size();
  }
};

struct Model {
  ModelSpec spec;
  std::vector<LoraLayer> layers;  // all linear layers in forward order

  // tiny_transformer extras, frozen unless train_norms
  Tensor tok_emb, pos_emb;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b, lnf_g, lnf_b;

  // dense overlays for non-linear-layer parameters (all-layers noise mode)
  std::map<std::string, Tensor> aux_overlays;

  LoraLayer& layer(const std::string& name);
  const LoraLayer& layer(const std::string& name) const;

  std::vector<Tensor> trainable_params();
  std::vector<std::pair<std::string, Tensor>> named_tensors();
  std::size_t trainable_count() const;
  std::size_t dense_linear_count() const;  // Σ m·n over adapted layers
};

Model build_model(const ModelSpec& spec, const RngStream& stream);

// Forward to class logits [b, classes]. When `weight_override` maps a layer
// name, that tensor is used as the layer's complete effective weight (no
// adapter, no overlays) — the probe hook for merged-space analysis.
Tensor model_logits(const Model& model, const Batch& batch,
                    const std::map<std::string, Tensor>* weight_override =
                        nullptr);

Tensor model_loss(const Model& model, const Batch& batch,
                  const std::map<std::string, Tensor>* weight_override =
                      nullptr);

// Fraction of batch rows whose argmax logit matches the label.
double model_accuracy(const Model& model, const Batch& batch);

}  // namespace flatlora
