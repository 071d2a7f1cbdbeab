#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "flatlora/model.hpp"
#include "flatlora/ops.hpp"
#include "flatlora/rng.hpp"
#include "oracles.hpp"

using namespace flatlora;

namespace {

Batch random_feature_batch(std::size_t b, std::size_t d, RngStream& s,
                           std::size_t classes = 2) {
  Batch batch;
  batch.features = oracle::uniform_tensor({b, d}, s);
  const auto u = seeded_uniform(s, b, 0.0, static_cast<double>(classes));
  for (double v : u) batch.labels.push_back(static_cast<std::size_t>(v));
  return batch;
}

}  // namespace

TEST_CASE("lora_init enforces rank bounds") {
  auto s = RngStream::from_seed(1);
  CHECK_NOTHROW(lora_init(4, 6, 4, 8.0, s));  // r = min(m,n)
  CHECK_THROWS_AS(lora_init(4, 6, 5, 8.0, s), ContractError);
  CHECK_THROWS_AS(lora_init(4, 6, 0, 8.0, s), ContractError);
  CHECK_THROWS_AS(lora_init(4, 6, 2, 0.0, s), ContractError);
}

TEST_CASE("fresh adapter forward equals base forward exactly") {
  auto s = RngStream::from_seed(2);
  const LoraLayer layer = lora_init(5, 3, 2, 4.0, s);
  for (double v : layer.B.data()) CHECK(v == 0.0);

  auto xs = RngStream::from_seed(3);
  const Tensor x = oracle::uniform_tensor({4, 3}, xs);
  const Tensor adapted = lora_forward(layer, x);
  const Tensor base = add_rowvec(linear(x, layer.W), layer.bias);
  CHECK(adapted.data() == base.data());  // bit-exact, B = 0
}

TEST_CASE("adapter A entries follow the fan-in uniform law") {
  auto s = RngStream::from_seed(4);
  const std::size_t n = 50000;
  const LoraLayer layer = lora_init(2, n, 2, 4.0, s);
  const double bound = std::sqrt(6.0 / static_cast<double>(n));
  double lo = 1e9, hi = -1e9, mean = 0.0;
  for (double v : layer.A.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    mean += v;
  }
  mean /= static_cast<double>(layer.A.numel());
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(lo < -bound * 0.98);
  CHECK(hi > bound * 0.98);
  double var = 0.0;
  for (double v : layer.A.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(layer.A.numel());
  CHECK(std::abs(var - bound * bound / 3.0) < 0.02 * bound * bound / 3.0);
}

TEST_CASE("identity adapter reproduces its input") {
  auto s = RngStream::from_seed(5);
  const Tensor zero_w = Tensor::zeros({2, 2});
  LoraLayer layer = lora_init(2, 2, 2, 2.0, s, "id", &zero_w);
  layer.bias = Tensor::zeros({2});
  layer.A = Tensor::from({2, 2}, {1, 0, 0, 1});
  layer.B = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(layer.scaling() == 1.0);
  const Tensor x = Tensor::from({1, 2}, {0.7, -0.3});
  const Tensor h = lora_forward(layer, x);
  CHECK(h.at(0, 0) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(h.at(0, 1) == doctest::Approx(-0.3).epsilon(1e-12));
}

TEST_CASE("adapter forward equals merged-weight forward") {
  auto s = RngStream::from_seed(6);
  LoraLayer layer = lora_init(7, 5, 3, 6.0, s);
  layer.B = oracle::uniform_tensor({7, 3}, s).set_requires_grad(true);
  const Tensor merged = merge_weights(layer);
  auto xs = RngStream::from_seed(7);
  for (int i = 0; i < 100; ++i) {
    const Tensor x = oracle::uniform_tensor({1, 5}, xs);
    const Tensor via_adapter = lora_forward(layer, x);
    const Tensor via_merged = add_rowvec(linear(x, merged), layer.bias);
    for (std::size_t j = 0; j < 7; ++j) {
      const double denom = std::max(std::abs(via_merged[j]), 1.0);
      CHECK(std::abs(via_adapter[j] - via_merged[j]) / denom < 1e-12);
    }
  }
}

TEST_CASE("merge_weights is pure and idempotent on its result") {
  auto s = RngStream::from_seed(8);
  LoraLayer layer = lora_init(4, 4, 2, 4.0, s);
  layer.B = oracle::uniform_tensor({4, 2}, s);
  const auto w_before = layer.W.data();
  const auto a_before = layer.A.data();
  const Tensor m1 = merge_weights(layer);
  const Tensor m2 = merge_weights(layer);
  CHECK(m1.data() == m2.data());
  CHECK(layer.W.data() == w_before);
  CHECK(layer.A.data() == a_before);
  CHECK_FALSE(m1.same_handle(layer.W));
}

TEST_CASE("build_model is deterministic in the stream") {
  ModelSpec spec;
  spec.mlp_dims = {8, 16, 3};
  Model m1 = build_model(spec, RngStream::from_seed(99));
  Model m2 = build_model(spec, RngStream::from_seed(99));
  Model m3 = build_model(spec, RngStream::from_seed(100));
  auto t1 = m1.named_tensors(), t2 = m2.named_tensors(),
       t3 = m3.named_tensors();
  REQUIRE(t1.size() == t2.size());
  bool any_differs = false;
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].first == t2[i].first);
    CHECK(t1[i].second.data() == t2[i].second.data());
    if (t1[i].second.data() != t3[i].second.data()) any_differs = true;
  }
  CHECK(any_differs);
}

TEST_CASE("mlp parameter counts follow the arithmetic") {
  ModelSpec spec;
  spec.mlp_dims = {8, 16, 3};
  spec.rank = 4;
  Model m = build_model(spec, RngStream::from_seed(11));
  REQUIRE(m.layers.size() == 2);
  CHECK(m.layers[0].adapted());
  CHECK_FALSE(m.layers[1].adapted());  // head frozen by default

  std::size_t total = 0;
  for (auto& [name, t] : m.named_tensors()) total += t.numel();
  // base: 8·16+16 + 16·3+3; adapters on fc0: 4·8 (A) + 16·4 (B)
  CHECK(total == 8 * 16 + 16 + 16 * 3 + 3 + 4 * 8 + 16 * 4);
  CHECK(m.trainable_count() == 4 * (16 + 8));
  std::size_t trainable_numel = 0;
  for (auto& t : m.trainable_params()) trainable_numel += t.numel();
  CHECK(trainable_numel == m.trainable_count());
  CHECK(m.trainable_count() < m.dense_linear_count());
}

TEST_CASE("rank clamps to the thinnest dimension per layer") {
  ModelSpec spec;  // default 2→64→64→2, rank 4
  Model m = build_model(spec, RngStream::from_seed(12));
  CHECK(m.layers[0].rank == 2);  // 64×2 layer cannot hold rank 4
  CHECK(m.layers[1].rank == 4);
  CHECK(m.trainable_count() == 2 * (64 + 2) + 4 * (64 + 64));
}

TEST_CASE("adapt_head extends adapters to the final projection") {
  ModelSpec spec;
  spec.mlp_dims = {4, 8, 2};
  spec.adapt_head = true;
  Model m = build_model(spec, RngStream::from_seed(13));
  CHECK(m.layers.back().adapted());
  CHECK(m.layers.back().rank == 2);  // clamped to min(2,8)
}

TEST_CASE("invalid specs are rejected with config errors") {
  ModelSpec bad1;
  bad1.mlp_dims = {5};
  CHECK_THROWS_AS(build_model(bad1, RngStream::from_seed(1)), ConfigError);

  ModelSpec bad2;
  bad2.arch = Architecture::tiny_transformer;
  bad2.d_model = 30;
  bad2.heads = 4;
  CHECK_THROWS_AS(build_model(bad2, RngStream::from_seed(1)), ConfigError);

  ModelSpec bad3;
  bad3.rank = 0;
  CHECK_THROWS_AS(build_model(bad3, RngStream::from_seed(1)), ConfigError);
}

TEST_CASE("unknown layer lookup throws") {
  Model m = build_model(ModelSpec{}, RngStream::from_seed(14));
  CHECK_THROWS_AS(m.layer("nope"), ContractError);
  CHECK(m.layer("fc0").name == "fc0");
}

TEST_CASE("frozen weights never receive gradients") {
  ModelSpec spec;
  spec.mlp_dims = {3, 6, 2};
  Model m = build_model(spec, RngStream::from_seed(15));
  auto s = RngStream::from_seed(16);
  Batch batch = random_feature_batch(5, 3, s);
  ComputeGraph g;
  {
    GraphScope scope(g);
    g.backward(model_loss(m, batch));
  }
  for (LoraLayer& l : m.layers) {
    CHECK_FALSE(l.W.has_grad());
    CHECK_FALSE(l.bias.has_grad());
    if (l.adapted()) {
      CHECK(l.A.has_grad());
      CHECK(l.B.has_grad());
    }
  }
}

TEST_CASE("mlp model loss at init equals the frozen base loss exactly") {
  ModelSpec spec;
  spec.mlp_dims = {3, 6, 2};
  Model m = build_model(spec, RngStream::from_seed(17));
  auto s = RngStream::from_seed(18);
  Batch batch = random_feature_batch(6, 3, s);
  const double adapted_loss = model_loss(m, batch).value();

  Tensor h = batch.features;  // same network with adapters ignored
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = add_rowvec(linear(h, m.layers[i].W), m.layers[i].bias);
    if (i + 1 < m.layers.size()) h = relu(h);
  }
  const double base_loss = softmax_cross_entropy(h, batch.labels).value();
  CHECK(adapted_loss == base_loss);
}

TEST_CASE("weight override replaces a layer's effective weight") {
  ModelSpec spec;
  spec.mlp_dims = {3, 4, 2};
  Model m = build_model(spec, RngStream::from_seed(19));
  auto bs = RngStream::from_seed(20);
  m.layers[0].B = oracle::uniform_tensor({4, m.layers[0].rank}, bs);
  auto s = RngStream::from_seed(21);
  Batch batch = random_feature_batch(4, 3, s);

  std::map<std::string, Tensor> ov;
  ov.emplace("fc0", merge_weights(m.layers[0]));
  const double with_override = model_loss(m, batch, &ov).value();
  const double direct = model_loss(m, batch).value();
  CHECK(std::abs(with_override - direct) < 1e-12);

  ov.at("fc0") = m.layers[0].W;  // override back to base-only weight
  const double base_only = model_loss(m, batch, &ov).value();
  CHECK(base_only != direct);
}

TEST_CASE("tiny transformer produces finite logits of the right shape") {
  ModelSpec spec;
  spec.arch = Architecture::tiny_transformer;
  Model m = build_model(spec, RngStream::from_seed(22));
  Batch batch;
  auto s = RngStream::from_seed(23);
  for (int i = 0; i < 3; ++i) {
    std::vector<std::size_t> ids;
    const auto u = seeded_uniform(s, spec.seq_len, 0.0, 4.0);
    for (double v : u) ids.push_back(static_cast<std::size_t>(v));
    batch.tokens.push_back(ids);
    batch.labels.push_back(i % 2);
  }
  const Tensor logits = model_logits(m, batch);
  CHECK(logits.shape() == std::vector<std::size_t>{3, 2});
  CHECK(all_finite(logits));
}

TEST_CASE("transformer adapter gradients match finite differences") {
  ModelSpec spec;
  spec.arch = Architecture::tiny_transformer;
  spec.vocab = 4;
  spec.seq_len = 4;
  spec.d_model = 8;
  spec.d_ff = 12;
  spec.heads = 2;
  spec.rank = 2;
  spec.adapt_head = true;
  Model m = build_model(spec, RngStream::from_seed(24));
  auto s = RngStream::from_seed(25);
  for (LoraLayer& l : m.layers) {  // nonzero B so every path carries signal
    if (l.adapted())
      l.B = oracle::uniform_tensor(l.B.shape(), s, -0.3, 0.3)
                .set_requires_grad(true);
  }
  Batch batch;
  batch.tokens = {{0, 3, 1, 2}, {2, 2, 0, 1}};
  batch.labels = {1, 0};

  auto loss_fn = [&] { return model_loss(m, batch); };
  Tensor qa = m.layer("attn.q").A, qb = m.layer("attn.q").B;
  Tensor fa = m.layer("ffn.in").A, ob = m.layer("attn.o").B;
  Tensor ha = m.layer("head").A;
  CHECK(oracle::fd_worst_err(loss_fn, {&qa, &qb, &fa, &ob, &ha}) < 1e-4);
}

TEST_CASE("mlp adapter gradients match finite differences") {
  ModelSpec spec;
  spec.mlp_dims = {3, 5, 4, 2};
  spec.rank = 2;
  Model m = build_model(spec, RngStream::from_seed(26));
  auto s = RngStream::from_seed(27);
  for (LoraLayer& l : m.layers) {
    if (l.adapted())
      l.B = oracle::uniform_tensor(l.B.shape(), s, -0.5, 0.5)
                .set_requires_grad(true);
  }
  Batch batch = random_feature_batch(6, 3, s);
  auto loss_fn = [&] { return model_loss(m, batch); };
  Tensor a0 = m.layers[0].A, b0 = m.layers[0].B;
  Tensor a1 = m.layers[1].A, b1 = m.layers[1].B;
  CHECK(oracle::fd_worst_err(loss_fn, {&a0, &b0, &a1, &b1}) < 1e-4);
}
