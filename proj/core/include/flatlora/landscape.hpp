#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "flatlora/model.hpp"
#include "flatlora/tensor.hpp"

namespace flatlora {

// Random probe direction in merged-weight space, one tensor per adapted
// layer. Filter normalization rescales each row to the weight row's norm.
struct Direction {
  std::map<std::string, Tensor> per_layer;
  bool filter_normalized = false;
  std::uint64_t seed_label = 0;
};

struct LandscapeGrid {
  std::vector<double> alphas;
  std::vector<double> betas;   // empty for a 1D slice
  std::vector<double> values;  // 1D: [k]; 2D: row-major [k][k]
  double radius = 1.0;
  std::string dataset_id;
  std::string snapshot_id;

  bool two_d() const { return !betas.empty(); }
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
};

Direction filter_normalized_direction(const Model& model,
                                      std::uint64_t seed_label);

// Unnormalized Gaussian direction, for callers that rescale themselves.
Direction gaussian_direction(const Model& model, std::uint64_t seed_label);

// Loss over a uniform grid of coefficients in [-radius, radius] along one or
// two directions around the merged weights. k must be odd so the origin is a
// grid point; k = 0 picks the default resolution (201 for 1D, 41 for 2D).
// The origin cell is the model's own loss; stored weights are never written.
// Non-finite cell losses are recorded as +inf.
LandscapeGrid loss_surface(const Model& model, const Batch& data,
                           const std::vector<Direction>& dirs,
                           std::size_t k = 0, double radius = 1.0);

// Same grid walk for an arbitrary evaluation callback over named weights,
// used by closed-form oracles. `origin_value` replaces the center cell.
using SurfaceEval =
    std::function<double(const std::map<std::string, Tensor>&)>;
LandscapeGrid surface_from_eval(const SurfaceEval& eval_at,
                                const std::map<std::string, Tensor>& center,
                                const std::vector<Direction>& dirs,
                                std::size_t k, double radius,
                                double origin_value);

// Mean over `samples` filter-normalized directions of
//   max_{a in {+radius, -radius}} L(W' + a d) - L(W').
double sharpness_metric(const Model& model, const Batch& data, double radius,
                        std::size_t samples, std::uint64_t seed_label = 0);

// The same excursion statistic over caller-supplied directions and evaluator.
double sharpness_core(const SurfaceEval& eval_at,
                      const std::map<std::string, Tensor>& center,
                      const std::vector<Direction>& dirs, double radius,
                      double base_value);

struct MetricPoint {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Per-step (train acc - test acc) and (test loss - train loss).
struct GapSeries {
  std::vector<std::size_t> steps;
  std::vector<double> acc_gap;
  std::vector<double> loss_gap;
};
GapSeries generalization_gap(const std::vector<MetricPoint>& train,
                             const std::vector<MetricPoint>& test);

void export_csv(const LandscapeGrid& grid, const std::string& path);
void export_json(const LandscapeGrid& grid, const std::string& path);

}  // namespace flatlora
