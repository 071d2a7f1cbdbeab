#include "flatlora/landscape.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "flatlora/errors.hpp"
#include "flatlora/rng.hpp"
#include "json.hpp"

namespace flatlora {

double LandscapeGrid::at(std::size_t i) const {
  if (two_d()) throw ContractError("1-index lookup on a 2D grid");
  if (i >= alphas.size()) throw ContractError("grid index out of range");
  return values[i];
}

double LandscapeGrid::at(std::size_t i, std::size_t j) const {
  if (!two_d()) throw ContractError("2-index lookup on a 1D grid");
  if (i >= alphas.size() || j >= betas.size())
    throw ContractError("grid index out of range");
  return values[i * betas.size() + j];
}

Direction gaussian_direction(const Model& model, std::uint64_t seed_label) {
  Direction d;
  d.seed_label = seed_label;
  const auto base = RngStream::from_seed(seed_label);
  for (const auto& l : model.layers) {
    if (!l.adapted()) continue;
    auto stream = base.fork(l.name);
    d.per_layer.emplace(
        l.name, Tensor::from({l.out_dim(), l.in_dim()},
                             seeded_normal(stream, l.out_dim() * l.in_dim())));
  }
  if (d.per_layer.empty())
    throw ContractError("direction needs at least one adapted layer");
  return d;
}

Direction filter_normalized_direction(const Model& model,
                                      std::uint64_t seed_label) {
  Direction d = gaussian_direction(model, seed_label);
  d.filter_normalized = true;
  for (const auto& l : model.layers) {
    if (!l.adapted()) continue;
    const Tensor merged = merge_weights(l);
    Tensor& t = d.per_layer.at(l.name);
    const std::size_t m = t.dim(0), n = t.dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      double w_sq = 0.0, d_sq = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        w_sq += merged.data()[i * n + j] * merged.data()[i * n + j];
        d_sq += t.data()[i * n + j] * t.data()[i * n + j];
      }
      const double factor =
          (w_sq == 0.0 || d_sq == 0.0) ? 0.0 : std::sqrt(w_sq / d_sq);
      for (std::size_t j = 0; j < n; ++j) t.data()[i * n + j] *= factor;
    }
  }
  return d;
}

namespace {

std::size_t resolve_k(std::size_t k, std::size_t ndirs) {
  if (k == 0) return ndirs == 1 ? 201 : 41;
  return k;
}

std::map<std::string, Tensor> offset_weights(
    const std::map<std::string, Tensor>& center,
    const std::vector<Direction>& dirs, const std::vector<double>& coeffs) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, w] : center) {
    Tensor shifted = w.clone();
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      const auto it = dirs[d].per_layer.find(name);
      if (it == dirs[d].per_layer.end())
        throw ShapeError("direction missing layer " + name);
      if (it->second.shape() != w.shape())
        throw ShapeError("direction shape mismatch on layer " + name);
      const double c = coeffs[d];
      for (std::size_t i = 0; i < shifted.numel(); ++i)
        shifted.data()[i] += c * it->second.data()[i];
    }
    out.emplace(name, std::move(shifted));
  }
  return out;
}

double guarded(double v) {
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

}  // namespace

LandscapeGrid surface_from_eval(const SurfaceEval& eval_at,
                                const std::map<std::string, Tensor>& center,
                                const std::vector<Direction>& dirs,
                                std::size_t k, double radius,
                                double origin_value) {
  if (dirs.empty() || dirs.size() > 2)
    throw ContractError("loss surface takes one or two directions");
  if (radius <= 0.0) throw ContractError("loss surface radius must be positive");
  k = resolve_k(k, dirs.size());
  if (k % 2 == 0)
    throw ContractError("grid resolution must be odd, got " +
                        std::to_string(k));

  LandscapeGrid grid;
  grid.radius = radius;
  grid.alphas.resize(k);
  const double span = static_cast<double>(k - 1);
  for (std::size_t i = 0; i < k; ++i)
    grid.alphas[i] = radius * (2.0 * static_cast<double>(i) - span) / span;
  grid.alphas[(k - 1) / 2] = 0.0;

  if (dirs.size() == 1) {
    grid.values.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double a = grid.alphas[i];
      grid.values[i] = a == 0.0 ? origin_value
                                : guarded(eval_at(offset_weights(
                                      center, dirs, {a})));
    }
  } else {
    grid.betas = grid.alphas;
    grid.values.resize(k * k);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double a = grid.alphas[i], b = grid.betas[j];
        grid.values[i * k + j] =
            (a == 0.0 && b == 0.0)
                ? origin_value
                : guarded(eval_at(offset_weights(center, dirs, {a, b})));
      }
    }
  }
  return grid;
}

LandscapeGrid loss_surface(const Model& model, const Batch& data,
                           const std::vector<Direction>& dirs, std::size_t k,
                           double radius) {
  std::map<std::string, Tensor> center;
  for (const auto& l : model.layers)
    if (l.adapted()) center.emplace(l.name, merge_weights(l));
  if (center.empty())
    throw ContractError("loss surface needs at least one adapted layer");

  const auto eval_at = [&](const std::map<std::string, Tensor>& weights) {
    return model_loss(model, data, &weights).value();
  };
  const double origin = model_loss(model, data).value();
  return surface_from_eval(eval_at, center, dirs, k, radius, origin);
}

double sharpness_core(const SurfaceEval& eval_at,
                      const std::map<std::string, Tensor>& center,
                      const std::vector<Direction>& dirs, double radius,
                      double base_value) {
  if (dirs.empty()) throw ContractError("sharpness needs at least one sample");
  if (radius < 0.0) throw ContractError("sharpness radius must be nonnegative");
  if (radius == 0.0) return 0.0;

  double acc = 0.0;
  for (const Direction& d : dirs) {
    const std::vector<Direction> one = {d};
    const double lu = guarded(eval_at(offset_weights(center, one, {radius})));
    const double ld = guarded(eval_at(offset_weights(center, one, {-radius})));
    acc += std::max(lu, ld) - base_value;
  }
  return acc / static_cast<double>(dirs.size());
}

double sharpness_metric(const Model& model, const Batch& data, double radius,
                        std::size_t samples, std::uint64_t seed_label) {
  if (samples < 1) throw ContractError("sharpness needs at least one sample");
  if (radius < 0.0) throw ContractError("sharpness radius must be nonnegative");
  if (radius == 0.0) return 0.0;

  std::map<std::string, Tensor> center;
  for (const auto& l : model.layers)
    if (l.adapted()) center.emplace(l.name, merge_weights(l));
  if (center.empty())
    throw ContractError("sharpness needs at least one adapted layer");

  const auto stream = RngStream::from_seed(seed_label);
  std::vector<Direction> dirs;
  for (std::size_t s = 0; s < samples; ++s)
    dirs.push_back(filter_normalized_direction(model, stream.fork(s).seed));

  const auto eval_at = [&](const std::map<std::string, Tensor>& weights) {
    return model_loss(model, data, &weights).value();
  };
  return sharpness_core(eval_at, center, dirs, radius,
                        model_loss(model, data).value());
}

GapSeries generalization_gap(const std::vector<MetricPoint>& train,
                             const std::vector<MetricPoint>& test) {
  if (train.size() != test.size())
    throw ContractError("generalization gap: series lengths differ, " +
                        std::to_string(train.size()) + " vs " +
                        std::to_string(test.size()));
  GapSeries out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].step != test[i].step)
      throw ContractError("generalization gap: step mismatch at index " +
                          std::to_string(i));
    out.steps.push_back(train[i].step);
    out.acc_gap.push_back(train[i].accuracy - test[i].accuracy);
    out.loss_gap.push_back(test[i].loss - train[i].loss);
  }
  return out;
}

void export_csv(const LandscapeGrid& grid, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw StateError("cannot open " + path + " for writing");
  f << std::setprecision(17);
  if (grid.two_d()) {
    f << "alpha,beta,loss\n";
    for (std::size_t i = 0; i < grid.alphas.size(); ++i)
      for (std::size_t j = 0; j < grid.betas.size(); ++j)
        f << grid.alphas[i] << ',' << grid.betas[j] << ',' << grid.at(i, j)
          << '\n';
  } else {
    f << "alpha,loss\n";
    for (std::size_t i = 0; i < grid.alphas.size(); ++i)
      f << grid.alphas[i] << ',' << grid.at(i) << '\n';
  }
  if (!f.good()) throw StateError("write failed for " + path);
}

void export_json(const LandscapeGrid& grid, const std::string& path) {
  nlohmann::json j;
  j["alphas"] = grid.alphas;
  j["betas"] = grid.betas;
  j["values"] = grid.values;
  j["radius"] = grid.radius;
  j["dataset_id"] = grid.dataset_id;
  j["snapshot_id"] = grid.snapshot_id;
  std::ofstream f(path);
  if (!f) throw StateError("cannot open " + path + " for writing");
  f << j.dump(2) << '\n';
  if (!f.good()) throw StateError("write failed for " + path);
}

}  // namespace flatlora
