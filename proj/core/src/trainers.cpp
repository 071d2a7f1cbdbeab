#include "flatlora/trainers.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "flatlora/errors.hpp"
#include "flatlora/ops.hpp"

namespace flatlora {
namespace {

double grad_sq_sum(const Tensor& t) {
  if (!t.has_grad()) return 0.0;
  double s = 0.0;
  for (double g : t.grad()) s += g * g;
  return s;
}

double update_grad_norm(const Optimizer& opt) {
  double s = 0.0;
  for (const auto& p : opt.params()) s += grad_sq_sum(p);
  return std::sqrt(s);
}

double sq_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

void require_positive_rho(double rho, const char* where) {
  if (!(rho > 0.0))
    throw ContractError(std::string(where) + ": rho must be positive, got " +
                        std::to_string(rho));
}

}  // namespace

double frobenius_norm(const Tensor& t) { return std::sqrt(sq_sum(t)); }

double spectral_norm(const Tensor& t, int iters) {
  if (t.ndim() != 2) throw ShapeError("spectral_norm expects a matrix");
  const std::size_t m = t.dim(0), n = t.dim(1);
  auto stream = RngStream::from_seed(hash_label("spectral-norm-probe"));
  std::vector<double> v = seeded_normal(stream, n);
  std::vector<double> u(m, 0.0);
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += t.data()[i * n + j] * v[j];
      u[i] = s;
    }
    sigma = 0.0;
    for (double x : u) sigma += x * x;
    sigma = std::sqrt(sigma);
    if (sigma == 0.0) return 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += t.data()[i * n + j] * u[i];
      v[j] = s / sigma;
    }
    double vn = 0.0;
    for (double x : v) vn += x * x;
    vn = std::sqrt(vn);
    if (vn == 0.0) return 0.0;
    for (double& x : v) x /= vn;
  }
  return sigma;
}

StepReport lora_step(Model& model, const Batch& batch, Optimizer& opt) {
  if (batch.size() == 0) throw ContractError("lora_step: empty batch");
  StepReport report;
  report.step = opt.steps_taken();
  const std::uint64_t evals0 = ComputeGraph::global_backward_calls();

  opt.zero_grad();
  ComputeGraph graph;
  {
    GraphScope scope(graph);
    const Tensor loss = model_loss(model, batch);
    const double v = loss.value();
    if (!std::isfinite(v))
      throw NumericError("lora_step: non-finite loss " + std::to_string(v));
    report.clean_loss = v;
    graph.backward(loss);
  }
  report.grad_norm = update_grad_norm(opt);
  opt.step();
  report.grad_evals = ComputeGraph::global_backward_calls() - evals0;
  return report;
}

StepReport flat_lora_step(Model& model, const Batch& batch, Optimizer& opt,
                          const SigmaSchedule& schedule, std::size_t t,
                          const RngStream& noise_base, int samples) {
  if (samples < 1) throw ContractError("flat_lora_step: samples must be >= 1");
  const double sigma = sigma_at(schedule, t);
  if (sigma == 0.0) {
    // Must be indistinguishable from plain LoRA, so take that exact path.
    StepReport report = lora_step(model, batch, opt);
    report.sigma_or_rho = 0.0;
    return report;
  }
  if (batch.size() == 0) throw ContractError("flat_lora_step: empty batch");

  StepReport report;
  report.step = opt.steps_taken();
  report.sigma_or_rho = sigma;
  const std::uint64_t evals0 = ComputeGraph::global_backward_calls();
  const RngStream step_base = noise_base.fork(t);

  for (const auto& l : model.layers)
    if (l.adapted()) report.extra_state_floats += l.out_dim();

  opt.zero_grad();
  ComputeGraph graph;
  {
    GraphScope scope(graph);
    Tensor total;
    for (int s = 0; s < samples; ++s) {
      std::vector<PerturbationRecord> records;
      for (auto& l : model.layers) {
        if (!l.adapted()) continue;
        records.push_back(make_perturbation_record(
            l.name, merge_weights(l), sigma,
            step_base.fork(l.name).fork(static_cast<std::uint64_t>(s))));
      }
      apply_perturbation(model, records);
      const Tensor sample_loss = model_loss(model, batch);
      remove_perturbation(model, records);
      total = s == 0 ? sample_loss : add(total, sample_loss);
    }
    const Tensor loss =
        samples == 1 ? total : scale(total, 1.0 / static_cast<double>(samples));
    const double v = loss.value();
    if (!std::isfinite(v))
      throw NumericError("flat_lora_step: non-finite perturbed loss " +
                         std::to_string(v) + " at sigma_t=" +
                         std::to_string(sigma) + ", t=" + std::to_string(t));
    report.perturbed_loss = v;
    graph.backward(loss);
  }
  report.grad_norm = update_grad_norm(opt);
  opt.step();
  report.grad_evals = ComputeGraph::global_backward_calls() - evals0;
  return report;
}

MergedGradients merged_weight_gradients(Model& model, const Batch& batch) {
  std::map<std::string, Tensor> overrides;
  for (const auto& l : model.layers) {
    if (!l.adapted()) continue;
    Tensor wm = merge_weights(l);
    wm.set_requires_grad(true);
    overrides.emplace(l.name, wm);
  }
  if (overrides.empty())
    throw ContractError("merged_weight_gradients: no adapted layers");

  MergedGradients out;
  ComputeGraph graph;
  {
    GraphScope scope(graph);
    const Tensor loss = model_loss(model, batch, &overrides);
    out.loss = loss.value();
    graph.backward(loss);
  }
  for (auto& [name, wm] : overrides) {
    out.grads.emplace(name, wm.has_grad() ? Tensor::from(wm.shape(), wm.grad())
                                          : Tensor::zeros(wm.shape()));
  }
  return out;
}

StepReport sam_step_full(Model& model, const Batch& batch, Optimizer& opt,
                         const SamConfig& cfg, SamCapture* capture) {
  require_positive_rho(cfg.rho, "sam_step_full");
  if (batch.size() == 0) throw ContractError("sam_step_full: empty batch");

  StepReport report;
  report.step = opt.steps_taken();
  report.sigma_or_rho = cfg.rho;
  const std::uint64_t evals0 = ComputeGraph::global_backward_calls();

  MergedGradients mg = merged_weight_gradients(model, batch);
  if (!std::isfinite(mg.loss))
    throw NumericError("sam_step_full: non-finite loss " +
                       std::to_string(mg.loss) + " at rho=" +
                       std::to_string(cfg.rho));
  report.clean_loss = mg.loss;
  if (capture) capture->grad_w = mg.grads;

  double global_sq = 0.0;
  for (const auto& [name, g] : mg.grads) global_sq += sq_sum(g);
  const double gnorm = std::sqrt(global_sq);

  std::vector<std::string> attached;
  for (auto& l : model.layers) {
    if (!l.adapted()) continue;
    const Tensor& g = mg.grads.at(l.name);
    const double denom = cfg.per_layer ? frobenius_norm(g) : gnorm;
    if (denom == 0.0) continue;
    Tensor eps = scale(g, cfg.rho / denom);
    report.extra_state_floats += eps.numel();
    if (capture) capture->eps_w.emplace(l.name, eps);
    l.dense_overlay = std::move(eps);
    attached.push_back(l.name);
  }
  report.degenerate = attached.empty();

  opt.zero_grad();
  ComputeGraph graph;
  {
    GraphScope scope(graph);
    const Tensor loss = model_loss(model, batch);
    const double v = loss.value();
    if (!std::isfinite(v)) {
      for (const auto& name : attached) model.layer(name).dense_overlay.reset();
      throw NumericError("sam_step_full: non-finite perturbed loss " +
                         std::to_string(v) + " at rho=" +
                         std::to_string(cfg.rho));
    }
    report.perturbed_loss = v;
    graph.backward(loss);
  }
  for (const auto& name : attached) model.layer(name).dense_overlay.reset();

  report.grad_norm = update_grad_norm(opt);
  opt.step();
  report.grad_evals = ComputeGraph::global_backward_calls() - evals0;
  return report;
}

StepReport lora_sam_step(Model& model, const Batch& batch, Optimizer& opt,
                         const SamConfig& cfg, SamCapture* capture) {
  require_positive_rho(cfg.rho, "lora_sam_step");
  if (batch.size() == 0) throw ContractError("lora_sam_step: empty batch");

  StepReport report;
  report.step = opt.steps_taken();
  report.sigma_or_rho = cfg.rho;
  const std::uint64_t evals0 = ComputeGraph::global_backward_calls();

  opt.zero_grad();
  ComputeGraph pass1;
  {
    GraphScope scope(pass1);
    const Tensor loss = model_loss(model, batch);
    const double v = loss.value();
    if (!std::isfinite(v))
      throw NumericError("lora_sam_step: non-finite loss " +
                         std::to_string(v) + " at rho=" +
                         std::to_string(cfg.rho));
    report.clean_loss = v;
    pass1.backward(loss);
  }

  double joint_sq = 0.0;
  for (const auto& l : model.layers)
    if (l.adapted()) joint_sq += grad_sq_sum(l.A) + grad_sq_sum(l.B);
  const double joint = std::sqrt(joint_sq);

  struct Saved {
    LoraLayer* layer;
    Tensor a, b;
  };
  std::vector<Saved> saved;
  for (auto& l : model.layers) {
    if (!l.adapted()) continue;
    const double denom =
        cfg.per_layer ? std::sqrt(grad_sq_sum(l.A) + grad_sq_sum(l.B)) : joint;
    if (denom == 0.0) continue;
    const double k = cfg.rho / denom;
    saved.push_back({&l, l.A.clone(), l.B.clone()});
    report.extra_state_floats += l.A.numel() + l.B.numel();

    std::vector<double> ea(l.A.numel(), 0.0), eb(l.B.numel(), 0.0);
    if (l.A.has_grad())
      for (std::size_t i = 0; i < ea.size(); ++i) ea[i] = k * l.A.grad()[i];
    if (l.B.has_grad())
      for (std::size_t i = 0; i < eb.size(); ++i) eb[i] = k * l.B.grad()[i];
    for (std::size_t i = 0; i < ea.size(); ++i) l.A.data()[i] += ea[i];
    for (std::size_t i = 0; i < eb.size(); ++i) l.B.data()[i] += eb[i];
    if (capture) {
      capture->eps_a.emplace(l.name, Tensor::from(l.A.shape(), std::move(ea)));
      capture->eps_b.emplace(l.name, Tensor::from(l.B.shape(), std::move(eb)));
    }
  }
  report.degenerate = saved.empty();

  opt.zero_grad();
  ComputeGraph pass2;
  {
    GraphScope scope(pass2);
    const Tensor loss = model_loss(model, batch);
    const double v = loss.value();
    if (!std::isfinite(v)) {
      for (auto& s : saved) {
        s.layer->A.copy_data_from(s.a);
        s.layer->B.copy_data_from(s.b);
      }
      throw NumericError("lora_sam_step: non-finite perturbed loss " +
                         std::to_string(v) + " at rho=" +
                         std::to_string(cfg.rho));
    }
    report.perturbed_loss = v;
    pass2.backward(loss);
  }
  for (auto& s : saved) {
    s.layer->A.copy_data_from(s.a);
    s.layer->B.copy_data_from(s.b);
  }

  report.grad_norm = update_grad_norm(opt);
  opt.step();
  report.grad_evals = ComputeGraph::global_backward_calls() - evals0;
  return report;
}

EquivalentPerturbation equivalent_perturbation(const Tensor& A, const Tensor& B,
                                               const Tensor& grad_w,
                                               double rho) {
  require_positive_rho(rho, "equivalent_perturbation");
  if (A.ndim() != 2 || B.ndim() != 2 || grad_w.ndim() != 2)
    throw ShapeError("equivalent_perturbation expects matrices");
  const std::size_t r = A.dim(0), n = A.dim(1), m = B.dim(0);
  if (B.dim(1) != r || grad_w.dim(0) != m || grad_w.dim(1) != n)
    throw ShapeError("equivalent_perturbation: inconsistent shapes A" +
                     shape_string(A.shape()) + " B" + shape_string(B.shape()) +
                     " G" + shape_string(grad_w.shape()));

  const Tensor bt_g = matmul(transpose(B), grad_w);  // [r,n]
  const Tensor g_at = matmul(grad_w, transpose(A));  // [m,r]
  const double denom_sq = sq_sum(bt_g) + sq_sum(g_at);

  EquivalentPerturbation out;
  if (denom_sq == 0.0) {
    out.degenerate = true;
    out.eps_w = Tensor::zeros({m, n});
    out.eps_a = Tensor::zeros({r, n});
    out.eps_b = Tensor::zeros({m, r});
    return out;
  }
  const double c = rho / std::sqrt(denom_sq);
  out.c = c;
  out.eps_a = scale(bt_g, c);
  out.eps_b = scale(g_at, c);
  out.eps_w = add(scale(add(matmul(B, bt_g), matmul(g_at, A)), c),
                  scale(matmul(g_at, bt_g), c * c));
  return out;
}

Tensor approx_equivalent(const Tensor& A, const Tensor& B, const Tensor& grad_w,
                         double rho) {
  const EquivalentPerturbation full = equivalent_perturbation(A, B, grad_w, rho);
  if (full.degenerate)
    return Tensor::zeros({grad_w.dim(0), grad_w.dim(1)});
  return scale(matmul(matmul(grad_w, transpose(A)), A), full.c);
}

RatioResult ratio_statistic(const Tensor& A, const Tensor& B,
                            const Tensor& grad_w, double rho, bool spectral) {
  const EquivalentPerturbation p = equivalent_perturbation(A, B, grad_w, rho);
  RatioResult out;
  if (p.degenerate) return out;
  const Tensor num = matmul(p.eps_b, A);
  const double denom =
      spectral ? spectral_norm(p.eps_w) : frobenius_norm(p.eps_w);
  if (denom == 0.0) return out;
  out.value = (spectral ? spectral_norm(num) : frobenius_norm(num)) / denom;
  out.defined = true;
  return out;
}

}  // namespace flatlora
