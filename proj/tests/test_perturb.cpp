#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "flatlora/model.hpp"
#include "flatlora/ops.hpp"
#include "flatlora/perturb.hpp"
#include "oracles.hpp"

using namespace flatlora;

namespace {

Model small_mlp(std::uint64_t seed) {
  ModelSpec spec;
  spec.mlp_dims = {3, 8, 2};
  spec.rank = 2;
  Model m = build_model(spec, RngStream::from_seed(seed));
  auto s = RngStream::from_seed(seed + 1);
  for (LoraLayer& l : m.layers) {
    if (l.adapted())
      l.B = oracle::uniform_tensor(l.B.shape(), s, -0.4, 0.4)
                .set_requires_grad(true);
  }
  return m;
}

std::vector<PerturbationRecord> records_for(Model& m, double sigma,
                                            const RngStream& stream) {
  std::vector<PerturbationRecord> recs;
  for (LoraLayer& l : m.layers) {
    if (l.adapted())
      recs.push_back(make_perturbation_record(l.name, merge_weights(l), sigma,
                                              stream.fork(l.name)));
  }
  return recs;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("sigma schedule endpoints and midpoint") {
  SigmaSchedule constant{0.1, 100, SigmaSchedule::Kind::constant};
  CHECK(sigma_at(constant, 0) == 0.1);
  CHECK(sigma_at(constant, 100) == 0.1);

  SigmaSchedule cosine{0.2, 100, SigmaSchedule::Kind::cosine_increase};
  CHECK(sigma_at(cosine, 0) == 0.0);
  CHECK(sigma_at(cosine, 100) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(sigma_at(cosine, 50) == doctest::Approx(0.1).epsilon(1e-12));
  double prev = -1.0;
  for (std::size_t t = 0; t <= 100; ++t) {
    const double v = sigma_at(cosine, t);
    CHECK(v >= prev);
    CHECK(v <= 0.2);
    prev = v;
  }
  CHECK_THROWS_AS(sigma_at(cosine, 101), ContractError);
}

TEST_CASE("filter_norms hand cases and formula check") {
  CHECK(filter_norms(Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})) ==
        std::vector<double>{1, 1, 1});
  CHECK(filter_norms(Tensor::from({1, 2}, {3, 4}))[0] == 5.0);

  auto s = RngStream::from_seed(2);
  const Tensor w = oracle::uniform_tensor({8, 8}, s);
  const auto norms = filter_norms(w);
  for (std::size_t i = 0; i < 8; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < 8; ++j) acc += w.at(i, j) * w.at(i, j);
    const double direct = std::sqrt(acc);
    CHECK(std::abs(norms[i] - direct) / direct < 1e-12);
  }
}

TEST_CASE("zero sigma gives an exactly zero perturbation") {
  PerturbationRecord rec;
  rec.seed = 7;
  rec.sigma = 0.0;
  rec.filter_norms = {1.0, 2.0};
  rec.input_dim = 3;
  const Tensor eps = sample_perturbation(rec);
  for (double v : eps.data()) CHECK(v == 0.0);
}

TEST_CASE("zero-norm rows stay exactly zero") {
  PerturbationRecord rec;
  rec.seed = 7;
  rec.sigma = 0.5;
  rec.filter_norms = {0.0, 2.0};
  rec.input_dim = 4;
  const Tensor eps = sample_perturbation(rec);
  for (std::size_t j = 0; j < 4; ++j) CHECK(eps.at(0, j) == 0.0);
  bool second_row_nonzero = false;
  for (std::size_t j = 0; j < 4; ++j)
    second_row_nonzero = second_row_nonzero || eps.at(1, j) != 0.0;
  CHECK(second_row_nonzero);
}

TEST_CASE("regeneration is bit-identical") {
  auto s = RngStream::from_seed(3);
  const Tensor w = oracle::uniform_tensor({6, 10}, s);
  const auto rec =
      make_perturbation_record("l", w, 0.1, RngStream::from_seed(42));
  const Tensor e1 = sample_perturbation(rec);
  const Tensor e2 = sample_perturbation(rec);
  CHECK(e1.data() == e2.data());
}

TEST_CASE("per-element std follows the filter-norm law") {
  // unit-norm rows, σ = 0.1, n = 100 → per-element std 0.01
  const std::size_t n = 100;
  PerturbationRecord rec;
  rec.sigma = 0.1;
  rec.input_dim = n;
  rec.filter_norms = {1.0};
  double sum = 0.0, sumsq = 0.0;
  std::size_t count = 0;
  for (std::uint64_t trial = 0; trial < 1000; ++trial) {
    rec.seed = mix64(trial);
    const Tensor eps = sample_perturbation(rec);
    for (double v : eps.data()) {
      sum += v;
      sumsq += v * v;
      ++count;
    }
  }
  const double mean = sum / static_cast<double>(count);
  const double std_emp =
      std::sqrt(sumsq / static_cast<double>(count) - mean * mean);
  CHECK(std::abs(std_emp - 0.01) / 0.01 < 0.03);
}

TEST_CASE("expected squared norm matches sigma squared times weight norm") {
  auto s = RngStream::from_seed(5);
  const Tensor w = oracle::uniform_tensor({20, 50}, s);
  const double sigma = 0.15;
  double wnorm2 = 0.0;
  for (double v : w.data()) wnorm2 += v * v;
  double acc = 0.0;
  const int trials = 300;
  for (int trial = 0; trial < trials; ++trial) {
    const auto rec = make_perturbation_record(
        "l", w, sigma, RngStream::from_seed(900).fork(trial));
    const Tensor eps = sample_perturbation(rec);
    double e2 = 0.0;
    for (double v : eps.data()) e2 += v * v;
    acc += e2;
  }
  const double expected = sigma * sigma * wnorm2;
  CHECK(std::abs(acc / trials - expected) / expected < 0.03);
}

TEST_CASE("output variance amplification is 1 plus sigma squared") {
  // single layer, E[x]=0: Var[(W+ε)x] should exceed Var[Wx] by 1+σ²
  const std::size_t m = 8, n = 16;
  const double sigma = 0.2;
  auto ws = RngStream::from_seed(6);
  const Tensor w = oracle::uniform_tensor({m, n}, ws);
  const auto norms = filter_norms(w);
  auto stream = RngStream::from_seed(7);
  double clean2 = 0.0, pert2 = 0.0;
  const int samples = 20000;
  PerturbationRecord rec;
  rec.sigma = sigma;
  rec.input_dim = n;
  rec.filter_norms = norms;
  for (int t = 0; t < samples; ++t) {
    const auto x = seeded_normal(stream, n);
    rec.seed = mix64(0xABCD + t);
    const Tensor eps = sample_perturbation(rec);
    for (std::size_t i = 0; i < m; ++i) {
      double yc = 0.0, yp = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        yc += w[i * n + j] * x[j];
        yp += (w[i * n + j] + eps[i * n + j]) * x[j];
      }
      clean2 += yc * yc;
      pert2 += yp * yp;
    }
  }
  const double ratio = pert2 / clean2;
  CHECK(std::abs(ratio - (1.0 + sigma * sigma)) < 0.05 * (1.0 + sigma * sigma));
}

TEST_CASE("apply then remove restores weights bit-exactly") {
  Model m = small_mlp(10);
  const auto snapshot = m.named_tensors();
  std::vector<std::vector<double>> before;
  for (auto& [name, t] : snapshot) before.push_back(t.data());

  const auto recs = records_for(m, 0.3, RngStream::from_seed(77));
  auto bs = RngStream::from_seed(11);
  Batch batch;
  batch.features = oracle::uniform_tensor({5, 3}, bs);
  batch.labels = {0, 1, 0, 1, 1};
  const double clean = model_loss(m, batch).value();

  apply_perturbation(m, recs);
  const double perturbed = model_loss(m, batch).value();
  CHECK(perturbed != clean);
  remove_perturbation(m, recs);

  auto after = m.named_tensors();
  for (std::size_t i = 0; i < after.size(); ++i) {
    CHECK(after[i].second.data() == before[i]);
  }
  CHECK(model_loss(m, batch).value() == clean);
}

TEST_CASE("mispaired apply and remove raise state errors") {
  Model m = small_mlp(12);
  const auto recs = records_for(m, 0.2, RngStream::from_seed(13));
  CHECK_THROWS_AS(remove_perturbation(m, recs), StateError);
  apply_perturbation(m, recs);
  CHECK_THROWS_AS(apply_perturbation(m, recs), StateError);
  auto other = records_for(m, 0.2, RngStream::from_seed(14));
  CHECK_THROWS_AS(remove_perturbation(m, other), StateError);
  remove_perturbation(m, recs);
}

TEST_CASE("distinct step labels give decorrelated perturbations") {
  auto s = RngStream::from_seed(15);
  const Tensor w = oracle::uniform_tensor({100, 1000}, s, 0.5, 1.5);
  const auto base = RngStream::from_seed(16);
  const auto r1 = make_perturbation_record("l", w, 0.1, base.fork("step0"));
  const auto r2 = make_perturbation_record("l", w, 0.1, base.fork("step1"));
  const Tensor e1 = sample_perturbation(r1);
  const Tensor e2 = sample_perturbation(r2);
  CHECK(std::abs(pearson(e1.data(), e2.data())) < 0.01);
}

TEST_CASE("overlay forward equals dense merged perturbation") {
  Model m = small_mlp(17);
  auto bs = RngStream::from_seed(18);
  Batch batch;
  batch.features = oracle::uniform_tensor({6, 3}, bs);
  batch.labels = {0, 1, 1, 0, 1, 0};

  const auto recs = records_for(m, 0.25, RngStream::from_seed(19));
  std::map<std::string, Tensor> ov;
  for (const auto& rec : recs) {
    ov.emplace(rec.layer, add(merge_weights(m.layer(rec.layer)),
                              sample_perturbation(rec)));
  }
  const Tensor dense_logits = model_logits(m, batch, &ov);

  apply_perturbation(m, recs);
  const Tensor overlay_logits = model_logits(m, batch);
  remove_perturbation(m, recs);

  for (std::size_t i = 0; i < dense_logits.numel(); ++i) {
    const double denom = std::max(std::abs(dense_logits[i]), 1e-3);
    CHECK(std::abs(dense_logits[i] - overlay_logits[i]) / denom < 1e-10);
  }
}

TEST_CASE("gradients flow correctly through an attached overlay") {
  Model m = small_mlp(20);
  auto bs = RngStream::from_seed(21);
  Batch batch;
  batch.features = oracle::uniform_tensor({4, 3}, bs);
  batch.labels = {1, 0, 1, 0};
  const auto recs = records_for(m, 0.3, RngStream::from_seed(22));
  apply_perturbation(m, recs);
  Tensor a0 = m.layers[0].A, b0 = m.layers[0].B;
  CHECK(oracle::fd_worst_err([&] { return model_loss(m, batch); },
                             {&a0, &b0}) < 1e-4);
  remove_perturbation(m, recs);
}

TEST_CASE("record storage stays at m norms plus a seed label") {
  Model m = small_mlp(23);
  const auto recs = records_for(m, 0.1, RngStream::from_seed(24));
  for (const auto& rec : recs) {
    const LoraLayer& l = m.layer(rec.layer);
    CHECK(rec.filter_norms.size() == l.out_dim());
    CHECK(rec.input_dim == l.in_dim());
  }
}

TEST_CASE("all-layers sampling covers aux parameters on the transformer") {
  ModelSpec spec;
  spec.arch = Architecture::tiny_transformer;
  spec.vocab = 3;
  spec.seq_len = 4;
  spec.d_model = 8;
  spec.d_ff = 12;
  spec.heads = 2;
  spec.rank = 2;
  Model m = build_model(spec, RngStream::from_seed(25));
  const auto recs = sample_all_layers(m, 0.1, RngStream::from_seed(26));

  bool saw_tok = false, saw_ln_bias = false, saw_linear = false;
  for (const auto& rec : recs) {
    if (rec.layer == "tok_emb") {
      saw_tok = true;
      CHECK(rec.input_dim == 1);
      CHECK(rec.filter_norms.size() == m.tok_emb.numel());
      const Tensor eps = sample_perturbation(rec);
      bool nonzero = false;
      for (double v : eps.data()) nonzero = nonzero || v != 0.0;
      CHECK(nonzero);
    }
    if (rec.layer == "ln1.b") {
      saw_ln_bias = true;
      const Tensor eps = sample_perturbation(rec);  // zero init bias
      for (double v : eps.data()) CHECK(v == 0.0);
    }
    if (rec.layer == "attn.q") {
      saw_linear = true;
      const auto direct = make_perturbation_record(
          "attn.q", merge_weights(m.layer("attn.q")), 0.1,
          RngStream::from_seed(26).fork("attn.q"));
      CHECK(sample_perturbation(rec).data() ==
            sample_perturbation(direct).data());
    }
  }
  CHECK(saw_tok);
  CHECK(saw_ln_bias);
  CHECK(saw_linear);

  // the records round-trip through apply/remove like any others
  const auto before = m.named_tensors();
  std::vector<std::vector<double>> vals;
  for (auto& [n, t] : before) vals.push_back(t.data());
  apply_perturbation(m, recs);
  CHECK_FALSE(m.aux_overlays.empty());
  Batch batch;
  batch.tokens = {{0, 1, 2, 1}};
  batch.labels = {1};
  CHECK(all_finite(model_logits(m, batch)));
  remove_perturbation(m, recs);
  CHECK(m.aux_overlays.empty());
  auto after = m.named_tensors();
  for (std::size_t i = 0; i < after.size(); ++i)
    CHECK(after[i].second.data() == vals[i]);
}

TEST_CASE("scalar parameter noise has std sigma times its magnitude") {
  const double p = -1.7, sigma = 0.1;
  PerturbationRecord rec;
  rec.sigma = sigma;
  rec.input_dim = 1;
  rec.filter_norms = {std::abs(p)};
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int t = 0; t < n; ++t) {
    rec.seed = mix64(0x5EED + t);
    const double v = sample_perturbation(rec).value();
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double std_emp = std::sqrt(sumsq / n - mean * mean);
  CHECK(std::abs(std_emp - sigma * std::abs(p)) / (sigma * std::abs(p)) <
        0.03);
}
