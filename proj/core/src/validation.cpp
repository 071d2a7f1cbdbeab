#include "flatlora/validation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flatlora/data.hpp"
#include "flatlora/harness.hpp"
#include "flatlora/landscape.hpp"
#include "flatlora/model.hpp"
#include "flatlora/ops.hpp"
#include "flatlora/optim.hpp"
#include "flatlora/perturb.hpp"
#include "flatlora/rng.hpp"
#include "flatlora/trainers.hpp"

namespace flatlora {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

Tensor rand_t(std::vector<std::size_t> shape, RngStream& stream,
              double lo = -1.5, double hi = 1.5) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return Tensor::from(std::move(shape), seeded_uniform(stream, n, lo, hi));
}

std::size_t rand_index(RngStream& stream, std::size_t bound) {
  const double u = seeded_uniform(stream, 1, 0.0, 1.0)[0];
  std::size_t i = static_cast<std::size_t>(u * static_cast<double>(bound));
  return i >= bound ? bound - 1 : i;
}

// central finite differences of an eager re-evaluation against the taped
// gradient; errors scaled by max(|analytic|, |numeric|, 1e-4)
double fd_worst(const std::function<Tensor()>& loss_fn,
                std::vector<Tensor*> params) {
  for (Tensor* p : params) p->zero_grad();
  ComputeGraph g;
  {
    GraphScope scope(g);
    Tensor loss = loss_fn();
    g.backward(loss);
  }
  const double h = 1e-5;
  double worst = 0.0;
  for (Tensor* p : params) {
    const std::vector<double> analytic = p->grad();
    auto& d = p->data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double saved = d[i];
      d[i] = saved + h;
      const double fp = loss_fn().value();
      d[i] = saved - h;
      const double fm = loss_fn().value();
      d[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double denom =
          std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
      worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
  }
  return worst;
}

Tensor weighted(const Tensor& t, RngStream& stream) {
  Tensor c = rand_t(t.shape(), stream, -1.0, 1.0);
  return sum(mul(t, c));
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// ---------- 1: operator gradients ----------

Verdict check_op_gradients() {
  const auto t0 = Clock::now();
  RngStream base = RngStream::from_seed(hash_label("validate-ops"));

  struct OpCase {
    const char* name;
    std::function<double(RngStream&)> trial;
  };
  std::vector<OpCase> cases;

  cases.push_back({"matmul", [](RngStream& s) {
    Tensor a = rand_t({3, 4}, s).set_requires_grad(true);
    Tensor b = rand_t({4, 5}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream w = ws;
      return weighted(matmul(a, b), w);
    }, {&a, &b});
  }});
  cases.push_back({"linear", [](RngStream& s) {
    Tensor x = rand_t({4, 5}, s).set_requires_grad(true);
    Tensor w = rand_t({3, 5}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(linear(x, w), r);
    }, {&x, &w});
  }});
  cases.push_back({"transpose", [](RngStream& s) {
    Tensor x = rand_t({3, 4}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(transpose(x), r);
    }, {&x});
  }});
  cases.push_back({"add", [](RngStream& s) {
    Tensor a = rand_t({3, 4}, s).set_requires_grad(true);
    Tensor b = rand_t({3, 4}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(add(a, b), r);
    }, {&a, &b});
  }});
  cases.push_back({"sub", [](RngStream& s) {
    Tensor a = rand_t({3, 4}, s).set_requires_grad(true);
    Tensor b = rand_t({3, 4}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(sub(a, b), r);
    }, {&a, &b});
  }});
  cases.push_back({"mul", [](RngStream& s) {
    Tensor a = rand_t({3, 4}, s).set_requires_grad(true);
    Tensor b = rand_t({3, 4}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(mul(a, b), r);
    }, {&a, &b});
  }});
  cases.push_back({"scale", [](RngStream& s) {
    Tensor x = rand_t({3, 4}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(scale(x, 1.7), r);
    }, {&x});
  }});
  cases.push_back({"add_rowvec", [](RngStream& s) {
    Tensor x = rand_t({4, 5}, s).set_requires_grad(true);
    Tensor v = rand_t({5}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(add_rowvec(x, v), r);
    }, {&x, &v});
  }});
  cases.push_back({"relu", [](RngStream& s) {
    // keep entries away from the kink so differencing is clean
    std::vector<double> mag = seeded_uniform(s, 12, 0.1, 1.6);
    std::vector<double> sign = seeded_uniform(s, 12, 0.0, 1.0);
    for (std::size_t i = 0; i < 12; ++i)
      if (sign[i] < 0.5) mag[i] = -mag[i];
    Tensor x = Tensor::from({3, 4}, std::move(mag)).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(relu(x), r);
    }, {&x});
  }});
  cases.push_back({"gelu", [](RngStream& s) {
    Tensor x = rand_t({3, 4}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(gelu(x), r);
    }, {&x});
  }});
  cases.push_back({"layernorm", [](RngStream& s) {
    Tensor x = rand_t({4, 6}, s).set_requires_grad(true);
    Tensor g = rand_t({6}, s, 0.5, 1.5).set_requires_grad(true);
    Tensor b = rand_t({6}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(layernorm(x, g, b), r);
    }, {&x, &g, &b});
  }});
  cases.push_back({"row_softmax", [](RngStream& s) {
    Tensor x = rand_t({4, 5}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(row_softmax(x), r);
    }, {&x});
  }});
  cases.push_back({"softmax_cross_entropy", [](RngStream& s) {
    Tensor logits = rand_t({5, 4}, s).set_requires_grad(true);
    std::vector<std::size_t> labels(5);
    for (auto& l : labels) l = rand_index(s, 4);
    return fd_worst(
        [&] { return scale(softmax_cross_entropy(logits, labels), 1.3); },
        {&logits});
  }});
  cases.push_back({"sum", [](RngStream& s) {
    Tensor x = rand_t({3, 4}, s).set_requires_grad(true);
    return fd_worst([&] { return scale(sum(x), 0.7); }, {&x});
  }});
  cases.push_back({"mean_rows", [](RngStream& s) {
    Tensor x = rand_t({5, 3}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(mean_rows(x), r);
    }, {&x});
  }});
  cases.push_back({"embedding", [](RngStream& s) {
    Tensor table = rand_t({7, 4}, s).set_requires_grad(true);
    std::vector<std::size_t> ids(6);
    for (auto& id : ids) id = rand_index(s, 7);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(embedding(table, ids), r);
    }, {&table});
  }});
  cases.push_back({"slice_cols", [](RngStream& s) {
    Tensor x = rand_t({3, 8}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(slice_cols(x, 2, 4), r);
    }, {&x});
  }});
  cases.push_back({"concat_cols", [](RngStream& s) {
    Tensor a = rand_t({3, 2}, s).set_requires_grad(true);
    Tensor b = rand_t({3, 3}, s).set_requires_grad(true);
    Tensor c = rand_t({3, 4}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(concat_cols({a, b, c}), r);
    }, {&a, &b, &c});
  }});
  cases.push_back({"concat_rows", [](RngStream& s) {
    Tensor a = rand_t({2, 4}, s).set_requires_grad(true);
    Tensor b = rand_t({3, 4}, s).set_requires_grad(true);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(concat_rows({a, b}), r);
    }, {&a, &b});
  }});
  cases.push_back({"linear_seeded_noise", [](RngStream& s) {
    Tensor x = rand_t({4, 6}, s).set_requires_grad(true);
    const std::uint64_t seed = s.fork("noise").seed;
    std::vector<double> scales = seeded_uniform(s, 5, 0.2, 1.0);
    RngStream ws = s.fork("w");
    return fd_worst([&] {
      RngStream r = ws;
      return weighted(linear_seeded_noise(x, seed, 0, scales), r);
    }, {&x});
  }});

  double worst = 0.0;
  std::string worst_op = "none";
  for (std::size_t c = 0; c < cases.size(); ++c) {
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
      RngStream s = base.fork(c).fork(trial);
      const double err = cases[c].trial(s);
      if (err > worst) {
        worst = err;
        worst_op = cases[c].name;
      }
    }
  }
  const double elapsed = seconds_since(t0);
  Verdict v;
  v.pass = worst < 1e-4 && elapsed < 60.0;
  v.detail = std::to_string(cases.size()) +
             " ops x 50 instances, worst rel err " + sci(worst) + " (" +
             worst_op + ") in " + sci(elapsed) + "s; need < 1e-4 and < 60s";
  return v;
}

// ---------- 2: adapter identities ----------

Verdict check_adapter_identities() {
  RngStream stream = RngStream::from_seed(hash_label("validate-adapter"));
  ModelSpec spec;
  spec.mlp_dims = {2, 16, 16, 2};
  spec.rank = 4;
  spec.alpha = 4.0;
  Model model = build_model(spec, stream.fork("build"));

  Batch batch;
  batch.features = rand_t({8, 2}, stream);
  batch.labels.assign(8, 0);

  // zero-B init: the adapter path must reproduce the frozen path bit for bit
  std::map<std::string, Tensor> base_override;
  for (const LoraLayer& l : model.layers)
    if (l.adapted()) base_override.emplace(l.name, l.W);
  const Tensor adapted = model_logits(model, batch);
  const Tensor frozen = model_logits(model, batch, &base_override);
  const bool exact = adapted.data() == frozen.data();

  // nonzero factors: merged-weight forward within 1e-10 of the adapter path
  RngStream fill = stream.fork("fill");
  for (LoraLayer& l : model.layers) {
    if (!l.adapted()) continue;
    for (double& x : l.A.data()) x = 0.4 * seeded_normal(fill, 1)[0];
    for (double& x : l.B.data()) x = 0.4 * seeded_normal(fill, 1)[0];
  }
  Batch big;
  big.features = rand_t({100, 2}, stream);
  big.labels.assign(100, 0);
  std::map<std::string, Tensor> merged_override;
  for (const LoraLayer& l : model.layers)
    if (l.adapted()) merged_override.emplace(l.name, merge_weights(l));
  const Tensor via_adapter = model_logits(model, big);
  const Tensor via_merged = model_logits(model, big, &merged_override);
  double worst = 0.0;
  for (std::size_t i = 0; i < via_adapter.numel(); ++i)
    worst = std::max(worst,
                     std::abs(via_adapter.data()[i] - via_merged.data()[i]));

  Verdict v;
  v.pass = exact && worst < 1e-10;
  v.detail = std::string("zero-B forward ") +
             (exact ? "bit-exact" : "DIFFERS") +
             "; merged vs adapter worst |diff| " + sci(worst) +
             " on 100 inputs; need < 1e-10";
  return v;
}

// ---------- 3: perturbation replay ----------

Verdict check_replay() {
  RngStream base = RngStream::from_seed(hash_label("validate-replay"));
  std::size_t triples = 0;
  bool all_restored = true;
  bool state_sized = true;

  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    RngStream s = base.fork(trial);
    ModelSpec spec;
    spec.mlp_dims = {2, 4 + rand_index(s, 12), 2};
    spec.rank = 1 + rand_index(s, 4);
    spec.alpha = static_cast<double>(spec.rank);
    Model model = build_model(spec, s.fork("build"));

    const double sigma = seeded_uniform(s, 1, 0.01, 0.3)[0];
    RngStream noise = RngStream::from_seed(s.fork("noise").seed);

    std::vector<std::pair<std::string, std::vector<double>>> before;
    for (auto& [name, t] : model.named_tensors())
      before.emplace_back(name, t.data());

    std::vector<PerturbationRecord> records;
    for (LoraLayer& l : model.layers) {
      if (!l.adapted()) continue;
      records.push_back(make_perturbation_record(
          l.name, merge_weights(l), sigma, noise.fork(l.name)));
      if (records.back().filter_norms.size() != l.out_dim())
        state_sized = false;
      ++triples;
    }
    apply_perturbation(model, records);
    Batch b;
    b.features = rand_t({4, 2}, s);
    b.labels.assign(4, 0);
    model_loss(model, b);
    remove_perturbation(model, records);

    auto after = model.named_tensors();
    for (std::size_t i = 0; i < after.size(); ++i) {
      if (after[i].second.data() != before[i].second) all_restored = false;
    }
    for (const LoraLayer& l : model.layers)
      if (l.seeded_overlay.has_value() || l.dense_overlay.has_value())
        all_restored = false;
  }

  Verdict v;
  v.pass = all_restored && state_sized && triples >= 100;
  v.detail = std::to_string(triples) + " (layer, sigma, seed) triples; " +
             (all_restored ? "all weights restored bit-exactly"
                           : "RESTORATION FAILED") +
             "; per-layer state = m norms + seed " +
             (state_sized ? "(verified)" : "(WRONG SIZE)");
  return v;
}

// ---------- 4: variance amplification ----------

Verdict check_variance() {
  RngStream base = RngStream::from_seed(hash_label("validate-variance"));
  const std::size_t m = 3;
  const std::size_t K = 100000;
  const double sigmas[3] = {0.05, 0.1, 0.2};
  const std::size_t ns[3] = {16, 64, 256};

  double worst_rel = 0.0;
  double worst_spread = 0.0;
  for (double sigma : sigmas) {
    double ratios[3];
    for (int ni = 0; ni < 3; ++ni) {
      const std::size_t n = ns[ni];
      RngStream s = base.fork(static_cast<std::uint64_t>(sigma * 1000))
                        .fork(n);
      RngStream wstream = s.fork("w");
      Tensor w = rand_t({m, n}, wstream, -1.0, 1.0);
      RngStream xs = s.fork("x");
      RngStream es = s.fork("eps");
      double num = 0.0, den = 0.0;
      std::vector<double> x(n);
      for (std::size_t k = 0; k < K; ++k) {
        const std::vector<double> draw = seeded_normal(xs, n);
        for (std::size_t j = 0; j < n; ++j) x[j] = draw[j];
        PerturbationRecord rec =
            make_perturbation_record("probe", w, sigma, es.fork(k));
        const Tensor eps = sample_perturbation(rec);
        for (std::size_t i = 0; i < m; ++i) {
          double clean = 0.0, noisy = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double wij = w.data()[i * n + j];
            clean += wij * x[j];
            noisy += (wij + eps.data()[i * n + j]) * x[j];
          }
          den += clean * clean;
          num += noisy * noisy;
        }
      }
      ratios[ni] = num / den;
      const double target = 1.0 + sigma * sigma;
      worst_rel = std::max(worst_rel,
                           std::abs(ratios[ni] - target) / target);
    }
    const double spread = *std::max_element(ratios, ratios + 3) -
                          *std::min_element(ratios, ratios + 3);
    worst_spread = std::max(worst_spread, spread);
  }

  Verdict v;
  v.pass = worst_rel < 0.05 && worst_spread < 0.05;
  v.detail = "100k samples per cell; worst |ratio/(1+sigma^2) - 1| " +
             sci(worst_rel) + " (need < 0.05); spread across n " +
             sci(worst_spread) + " (need < 0.05, no trend)";
  return v;
}

// ---------- 5: equivalent-perturbation algebra ----------

Verdict check_algebra() {
  RngStream base = RngStream::from_seed(hash_label("validate-algebra"));
  auto mm = [](const std::vector<double>& a, std::size_t am, std::size_t ak,
               const std::vector<double>& b, std::size_t bn) {
    std::vector<double> out(am * bn, 0.0);
    for (std::size_t i = 0; i < am; ++i)
      for (std::size_t k = 0; k < ak; ++k)
        for (std::size_t j = 0; j < bn; ++j)
          out[i * bn + j] += a[i * ak + k] * b[k * bn + j];
    return out;
  };

  double worst = 0.0;
  bool collapse_exact = true;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    RngStream s = base.fork(trial);
    const std::size_t r = 1 + rand_index(s, 4);
    const std::size_t m = 3 + rand_index(s, 8);
    const std::size_t n = 3 + rand_index(s, 8);
    const double rho = 0.05;
    Tensor A = rand_t({r, n}, s);
    Tensor B = rand_t({m, r}, s);
    Tensor G = rand_t({m, n}, s);

    EquivalentPerturbation ep = equivalent_perturbation(A, B, G, rho);

    // hand expansion: Bt_g = B^T G, g_At = G A^T
    std::vector<double> Bt(r * m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < r; ++k) Bt[k * m + i] = B.data()[i * r + k];
    std::vector<double> At(n * r);
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t j = 0; j < n; ++j) At[j * r + k] = A.data()[k * n + j];
    const std::vector<double> bt_g = mm(Bt, r, m, G.data(), n);
    const std::vector<double> g_at = mm(G.data(), m, n, At, r);
    double denom_sq = 0.0;
    for (double x : bt_g) denom_sq += x * x;
    for (double x : g_at) denom_sq += x * x;
    const double c = rho / std::sqrt(denom_sq);
    const std::vector<double> term1 = mm(B.data(), m, r, bt_g, n);
    const std::vector<double> term2 = mm(g_at, m, r, A.data(), n);
    const std::vector<double> term3 = mm(g_at, m, r, bt_g, n);
    for (std::size_t i = 0; i < m * n; ++i) {
      const double want = c * (term1[i] + term2[i]) + c * c * term3[i];
      const double scale_ref = std::max(1.0, std::abs(want));
      worst = std::max(worst,
                       std::abs(ep.eps_w.data()[i] - want) / scale_ref);
    }

    const Tensor zero_b = Tensor::zeros({m, r});
    const EquivalentPerturbation collapsed =
        equivalent_perturbation(A, zero_b, G, rho);
    const Tensor approx = approx_equivalent(A, zero_b, G, rho);
    if (collapsed.eps_w.data() != approx.data()) collapse_exact = false;
  }

  Verdict v;
  v.pass = worst < 1e-10 && collapse_exact;
  v.detail = "100 instances; closed form vs expansion worst scaled err " +
             sci(worst) + " (need < 1e-10); zero-B collapse " +
             (collapse_exact ? "bit-exact" : "DIFFERS");
  return v;
}

// ---------- 6: ratio statistic during training ----------

Verdict check_training_ratio() {
  DatasetSpec ds;
  ds.size = 512;
  ds.noise = 1.0;
  ds.train_fraction = 0.5;
  ds.seed = 3;
  Dataset data = make_dataset(ds);

  ModelSpec spec;  // the desk-scale default
  Model model = build_model(spec, RngStream::from_seed(17).fork("model"));
  OptimConfig oc;
  oc.lr = 1e-3;
  Optimizer opt(model.trainable_params(), oc);
  SamConfig sam;
  sam.rho = 0.05;
  sam.space = SamConfig::Space::lora_ab;

  double lowest = 2.0;
  const std::size_t train_n = data.train.size();
  for (std::size_t t = 0; t < 50; ++t) {
    Batch mb = cyclic_slice(data.train, (t * 64) % train_n, 64);
    MergedGradients mg = merged_weight_gradients(model, mb);
    for (const LoraLayer& l : model.layers) {
      if (!l.adapted()) continue;
      const RatioResult r =
          ratio_statistic(l.A, l.B, mg.grads.at(l.name), sam.rho);
      if (r.defined) lowest = std::min(lowest, r.value);
    }
    lora_sam_step(model, mb, opt, sam);
  }

  Verdict v;
  v.pass = lowest > 0.9;
  v.detail = "50 adapter-SAM steps on the blob task; min per-layer ratio " +
             sci(lowest) + "; need > 0.9";
  return v;
}

// ---------- 7: zero-sigma equivalence ----------

Verdict check_zero_sigma() {
  DatasetSpec ds;
  ds.size = 256;
  ds.train_fraction = 0.5;
  ds.seed = 5;
  Dataset data = make_dataset(ds);

  ModelSpec spec;
  spec.mlp_dims = {2, 32, 2};
  spec.rank = 4;
  spec.alpha = 4.0;

  Model plain = build_model(spec, RngStream::from_seed(7).fork("model"));
  Model flat = build_model(spec, RngStream::from_seed(7).fork("model"));
  OptimConfig oc;
  oc.lr = 3e-3;
  Optimizer opt_plain(plain.trainable_params(), oc);
  Optimizer opt_flat(flat.trainable_params(), oc);
  SigmaSchedule schedule;
  schedule.sigma_max = 0.0;
  schedule.total_steps = 200;
  RngStream noise = RngStream::from_seed(7).fork("noise");

  bool identical = true;
  const std::size_t train_n = data.train.size();
  for (std::size_t t = 0; t < 200 && identical; ++t) {
    Batch mb = cyclic_slice(data.train, (t * 64) % train_n, 64);
    StepReport a = lora_step(plain, mb, opt_plain);
    StepReport b = flat_lora_step(flat, mb, opt_flat, schedule, t, noise);
    if (a.clean_loss != b.clean_loss) identical = false;
    auto pa = plain.named_tensors();
    auto pb = flat.named_tensors();
    for (std::size_t i = 0; i < pa.size(); ++i)
      if (pa[i].second.data() != pb[i].second.data()) identical = false;
  }

  Verdict v;
  v.pass = identical;
  v.detail = std::string("200 steps; trajectories ") +
             (identical ? "bit-identical (losses and every tensor)"
                        : "DIVERGED");
  return v;
}

// ---------- 8: cost counters ----------

Verdict check_counters() {
  DatasetSpec ds;
  ds.size = 64;
  ds.train_fraction = 0.5;
  ds.seed = 2;
  Dataset data = make_dataset(ds);
  Batch mb = cyclic_slice(data.train, 0, 16);

  ModelSpec spec;
  spec.mlp_dims = {2, 16, 2};
  spec.rank = 2;
  spec.alpha = 2.0;

  auto fresh = [&] { return build_model(spec, RngStream::from_seed(4)); };
  OptimConfig oc;
  oc.lr = 1e-3;

  std::size_t rows = 0, dense = 0;
  {
    Model probe = fresh();
    for (const LoraLayer& l : probe.layers) {
      if (!l.adapted()) continue;
      rows += l.out_dim();
      dense += l.out_dim() * l.in_dim();
    }
  }

  Model m1 = fresh();
  Optimizer o1(m1.trainable_params(), oc);
  StepReport lora = lora_step(m1, mb, o1);

  Model m2 = fresh();
  Optimizer o2(m2.trainable_params(), oc);
  SigmaSchedule sched;
  sched.sigma_max = 0.1;
  sched.total_steps = 4;
  RngStream noise = RngStream::from_seed(4).fork("noise");
  StepReport flat = flat_lora_step(m2, mb, o2, sched, 0, noise);

  Model m3 = fresh();
  Optimizer o3(m3.trainable_params(), oc);
  SamConfig full;
  full.rho = 0.05;
  StepReport sam = sam_step_full(m3, mb, o3, full);

  Model m4 = fresh();
  Optimizer o4(m4.trainable_params(), oc);
  SamConfig ab;
  ab.rho = 0.05;
  ab.space = SamConfig::Space::lora_ab;
  StepReport lsam = lora_sam_step(m4, mb, o4, ab);

  const bool evals_ok = lora.grad_evals == 1 && flat.grad_evals == 1 &&
                        sam.grad_evals == 2 && lsam.grad_evals == 2;
  const bool memory_ok = lora.extra_state_floats == 0 &&
                         flat.extra_state_floats == rows &&
                         sam.extra_state_floats == dense && rows < dense;

  Verdict v;
  v.pass = evals_ok && memory_ok;
  v.detail = "grad evals {" + std::to_string(lora.grad_evals) + "," +
             std::to_string(flat.grad_evals) + "," +
             std::to_string(sam.grad_evals) + "," +
             std::to_string(lsam.grad_evals) +
             "} need {1,1,2,2}; extra floats flat " +
             std::to_string(flat.extra_state_floats) + " = sum(m) " +
             std::to_string(rows) + ", sam " +
             std::to_string(sam.extra_state_floats) + " = sum(m*n) " +
             std::to_string(dense);
  return v;
}

// ---------- 9: flatness separation ----------

Verdict check_flatness() {
  const auto t0 = Clock::now();
  ExperimentConfig base;
  base.name = "flatness-probe";
  base.model.mlp_dims = {2, 64, 64, 2};
  base.model.rank = 4;
  base.model.alpha = 4.0;
  base.dataset.size = 2048;
  base.dataset.noise = 1.25;
  base.dataset.train_fraction = 0.125;  // 256 train / 1792 test
  base.dataset.seed = 11;
  base.optimizer.lr = 3e-3;
  base.optimizer.weight_decay = 0.0;
  base.steps = 600;
  base.batch_size = 64;
  base.eval_every = 150;
  base.seeds = {1, 2, 3, 4, 5};
  base.sharpness_radius = 0.5;
  base.sharpness_samples = 8;

  ExperimentConfig lora = base;
  lora.method = Method::lora;
  ExperimentConfig flat = base;
  flat.method = Method::flat_lora;
  flat.sigma = 0.1;

  ResultsTable lt = run_experiment(lora);
  ResultsTable ft = run_experiment(flat);

  std::size_t flatter = 0, runs = 0;
  double gap_lora = 0.0, gap_flat = 0.0;
  for (std::size_t i = 0; i < lt.rows.size(); ++i) {
    if (lt.rows[i].failed || ft.rows[i].failed) continue;
    ++runs;
    if (ft.rows[i].sharpness < lt.rows[i].sharpness) ++flatter;
    gap_lora += lt.rows[i].gap;
    gap_flat += ft.rows[i].gap;
  }
  gap_lora /= static_cast<double>(runs ? runs : 1);
  gap_flat /= static_cast<double>(runs ? runs : 1);

  Verdict v;
  v.pass = runs == 5 && flatter >= 4 && gap_flat <= gap_lora;
  v.detail = "sharpness lower in " + std::to_string(flatter) + "/" +
             std::to_string(runs) + " seeds (need >= 4/5); mean gap " +
             sci(gap_flat) + " vs " + sci(gap_lora) +
             " (need <=); " + sci(seconds_since(t0)) + "s";
  return v;
}

// ---------- 10: double-well smoothing ----------

double well_loss(double w) {
  const double dw = (w - 2.0) / 1.0;
  const double dn = (w + 1.0) / 0.08;
  return 0.08 * w * w + 1.0 - 0.8 * std::exp(-dw * dw) -
         0.2 * std::exp(-dn * dn);
}

Verdict check_smoothing() {
  const double h = 0.02;
  const int cells = 251;
  const std::size_t draws = 2000;
  std::vector<double> z(draws);
  normals_at(hash_label("well-smoothing"), 0, draws, z.data());

  auto max_curvature = [&](double sigma) {
    std::vector<double> smoothed(cells);
    for (int i = 0; i < cells; ++i) {
      const double w = -2.0 + h * i;
      double acc = 0.0;
      for (double zv : z) acc += well_loss(w + sigma * zv);
      smoothed[i] = acc / static_cast<double>(draws);
    }
    double worst = 0.0;
    for (int i = 1; i + 1 < cells; ++i)
      worst = std::max(worst, std::abs(smoothed[i + 1] - 2.0 * smoothed[i] +
                                       smoothed[i - 1]) /
                                  (h * h));
    return worst;
  };

  const double c1 = max_curvature(0.05);
  const double c2 = max_curvature(0.1);
  const double c3 = max_curvature(0.2);

  Verdict v;
  v.pass = c1 > c2 && c2 > c3;
  v.detail = "curvature proxy " + sci(c1) + " > " + sci(c2) + " > " +
             sci(c3) + " over sigma {0.05, 0.1, 0.2}";
  return v;
}

// ---------- 11: landscape probes ----------

Verdict check_landscape() {
  RngStream stream = RngStream::from_seed(hash_label("validate-landscape"));
  ModelSpec spec;
  spec.mlp_dims = {3, 8, 2};
  spec.rank = 2;
  spec.alpha = 2.0;
  Model model = build_model(spec, stream.fork("build"));
  RngStream fill = stream.fork("fill");
  for (LoraLayer& l : model.layers) {
    if (!l.adapted()) continue;
    for (double& x : l.B.data()) x = 0.3 * seeded_normal(fill, 1)[0];
  }
  Batch batch;
  batch.features = rand_t({16, 3}, stream);
  batch.labels.assign(16, 0);
  for (std::size_t i = 0; i < 16; ++i) batch.labels[i] = i % 2;

  const double clean = model_loss(model, batch).value();
  Direction dir = filter_normalized_direction(model, 31);
  LandscapeGrid grid = loss_surface(model, batch, {dir}, 21, 0.5);
  const bool origin_exact = grid.at(10) == clean;

  // quadratic closed form: L(w0 + a d) = a^2 for a unit direction
  Tensor w0 = Tensor::from({2, 2}, {0.3, -0.7, 1.1, 0.4});
  Tensor d = Tensor::from({2, 2}, {0.5, 0.5, 0.5, 0.5});  // unit Frobenius
  Direction qdir;
  qdir.per_layer.emplace("w", d);
  std::map<std::string, Tensor> center;
  center.emplace("w", w0);
  SurfaceEval eval = [&](const std::map<std::string, Tensor>& at) {
    double acc = 0.0;
    const Tensor& w = at.at("w");
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double dv = w.data()[i] - w0.data()[i];
      acc += dv * dv;
    }
    return acc;
  };
  LandscapeGrid quad = surface_from_eval(eval, center, {qdir}, 201, 1.0, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < quad.alphas.size(); ++i) {
    const double want = quad.alphas[i] * quad.alphas[i];
    worst = std::max(worst, std::abs(quad.at(i) - want));
  }

  Verdict v;
  v.pass = origin_exact && worst < 1e-10;
  v.detail = std::string("origin cell ") +
             (origin_exact ? "equals clean loss bit-exactly" : "DIFFERS") +
             "; quadratic surface worst |err| " + sci(worst) +
             " (need < 1e-10)";
  return v;
}

}  // namespace

int run_validation_suite(std::ostream& out) {
  struct Entry {
    const char* label;
    Verdict (*run)();
  };
  const Entry entries[] = {
      {"operator gradients match central finite differences",
       check_op_gradients},
      {"adapter identities (zero-B exactness, merged-weight agreement)",
       check_adapter_identities},
      {"perturbation replay restores weights bit-exactly from O(m) state",
       check_replay},
      {"output variance amplification matches 1 + sigma^2 across widths",
       check_variance},
      {"equivalent-perturbation closed form matches the expansion",
       check_algebra},
      {"update-direction ratio stays above 0.9 during adapter-SAM training",
       check_training_ratio},
      {"zero-sigma noisy training is bit-identical to plain training",
       check_zero_sigma},
      {"gradient-evaluation and extra-memory counters",
       check_counters},
      {"noisy training finds flatter minima on the overfit task",
       check_flatness},
      {"weight noise smooths the double-well curvature monotonically",
       check_smoothing},
      {"landscape origin exactness and quadratic closed form",
       check_landscape},
  };

  int failures = 0;
  int index = 0;
  for (const Entry& e : entries) {
    ++index;
    Verdict v;
    try {
      v = e.run();
    } catch (const std::exception& ex) {
      v.pass = false;
      v.detail = std::string("threw: ") + ex.what();
    }
    if (!v.pass) ++failures;
    out << (v.pass ? "[PASS] " : "[FAIL] ") << index << ". " << e.label
        << " -- " << v.detail << std::endl;
  }
  out << (failures == 0 ? "all criteria passed"
                        : std::to_string(failures) + " criteria failed")
      << std::endl;
  return failures;
}

}  // namespace flatlora
