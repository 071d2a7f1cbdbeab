#include "flatlora/perturb.hpp"

#include <cmath>

#include "flatlora/model.hpp"

namespace flatlora {

double PerturbationRecord::row_scale(std::size_t i) const {
  return sigma * filter_norms[i] / std::sqrt(static_cast<double>(input_dim));
}

double sigma_at(const SigmaSchedule& schedule, std::size_t t) {
  if (t > schedule.total_steps) {
    throw ContractError("schedule step " + std::to_string(t) +
                        " past total_steps " +
                        std::to_string(schedule.total_steps));
  }
  if (schedule.kind == SigmaSchedule::Kind::constant) {
    return schedule.sigma_max;
  }
  const double phase = static_cast<double>(t) /
                       static_cast<double>(schedule.total_steps);
  return schedule.sigma_max * (1.0 - std::cos(phase * M_PI)) / 2.0;
}

std::vector<double> filter_norms(const Tensor& w_merged) {
  if (w_merged.ndim() != 2) {
    throw ShapeError("filter_norms requires a 2-D weight, got " +
                     shape_string(w_merged.shape()));
  }
  const std::size_t m = w_merged.dim(0), n = w_merged.dim(1);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = w_merged[i * n + j];
      s += v * v;
    }
    norms[i] = std::sqrt(s);
  }
  return norms;
}

Tensor sample_perturbation(const PerturbationRecord& record) {
  const std::size_t m = record.rows(), n = record.input_dim;
  Tensor out = Tensor::zeros({m, n});
  if (record.sigma == 0.0) return out;
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    const double s = record.row_scale(i);
    if (s == 0.0) continue;
    normals_at(record.seed, record.counter + i * n, n, row.data());
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = s * row[j];
  }
  return out;
}

PerturbationRecord make_perturbation_record(const std::string& layer_name,
                                            const Tensor& w_merged,
                                            double sigma,
                                            const RngStream& stream) {
  if (sigma < 0.0) throw ContractError("sigma must be nonnegative");
  PerturbationRecord rec;
  rec.layer = layer_name;
  rec.seed = stream.seed;
  rec.counter = stream.counter;
  rec.sigma = sigma;
  rec.filter_norms = filter_norms(w_merged);
  rec.input_dim = w_merged.dim(1);
  return rec;
}

namespace {

bool same_record(const PerturbationRecord& a, const PerturbationRecord& b) {
  return a.layer == b.layer && a.seed == b.seed && a.counter == b.counter &&
         a.sigma == b.sigma && a.input_dim == b.input_dim &&
         a.filter_norms == b.filter_norms;
}

bool is_layer_name(const Model& model, const std::string& name) {
  for (const LoraLayer& l : model.layers) {
    if (l.name == name) return true;
  }
  return false;
}

Tensor find_aux_param(Model& model, const std::string& name) {
  for (auto& [pname, tensor] : model.named_tensors()) {
    if (pname == name) return tensor;
  }
  throw ContractError("perturbation record names unknown parameter " + name);
}

}  // namespace

void apply_perturbation(Model& model,
                        const std::vector<PerturbationRecord>& records) {
  for (const PerturbationRecord& rec : records) {
    if (is_layer_name(model, rec.layer)) {
      LoraLayer& l = model.layer(rec.layer);
      if (l.seeded_overlay) {
        throw StateError("perturbation already applied to layer " + rec.layer);
      }
      if (rec.rows() != l.out_dim() || rec.input_dim != l.in_dim()) {
        throw ShapeError("perturbation record shape does not match layer " +
                         rec.layer);
      }
      l.seeded_overlay = rec;
      continue;
    }
    if (model.aux_overlays.count(rec.layer)) {
      throw StateError("perturbation already applied to parameter " +
                       rec.layer);
    }
    const Tensor param = find_aux_param(model, rec.layer);
    if (rec.rows() != param.numel() || rec.input_dim != 1) {
      throw ShapeError("perturbation record shape does not match parameter " +
                       rec.layer);
    }
    const Tensor flat = sample_perturbation(rec);
    Tensor overlay = Tensor::zeros(param.shape());
    for (std::size_t i = 0; i < param.numel(); ++i) overlay[i] = flat[i];
    model.aux_overlays.emplace(rec.layer, std::move(overlay));
  }
}

void remove_perturbation(Model& model,
                         const std::vector<PerturbationRecord>& records) {
  for (const PerturbationRecord& rec : records) {
    if (is_layer_name(model, rec.layer)) {
      LoraLayer& l = model.layer(rec.layer);
      if (!l.seeded_overlay || !same_record(*l.seeded_overlay, rec)) {
        throw StateError("remove without matching apply on layer " +
                         rec.layer);
      }
      l.seeded_overlay.reset();
      continue;
    }
    auto it = model.aux_overlays.find(rec.layer);
    if (it == model.aux_overlays.end()) {
      throw StateError("remove without matching apply on parameter " +
                       rec.layer);
    }
    model.aux_overlays.erase(it);
  }
}

std::vector<PerturbationRecord> sample_all_layers(Model& model, double sigma,
                                                  const RngStream& stream) {
  std::vector<PerturbationRecord> records;
  for (LoraLayer& l : model.layers) {
    if (!l.adapted()) continue;
    records.push_back(make_perturbation_record(l.name, merge_weights(l),
                                               sigma, stream.fork(l.name)));
  }
  if (model.spec.arch == Architecture::tiny_transformer) {
    for (auto& [name, param] : model.named_tensors()) {
      const bool aux = name == "tok_emb" || name == "pos_emb" ||
                       name.rfind("ln", 0) == 0;
      if (!aux) continue;
      PerturbationRecord rec;
      rec.layer = name;
      const RngStream fork = stream.fork(name);
      rec.seed = fork.seed;
      rec.counter = fork.counter;
      rec.sigma = sigma;
      rec.input_dim = 1;
      rec.filter_norms.resize(param.numel());
      for (std::size_t i = 0; i < param.numel(); ++i) {
        rec.filter_norms[i] = std::abs(param[i]);
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace flatlora
