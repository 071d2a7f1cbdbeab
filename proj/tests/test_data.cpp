#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "flatlora/data.hpp"
#include "flatlora/errors.hpp"
#include "flatlora/model.hpp"
#include "flatlora/optim.hpp"
#include "flatlora/trainers.hpp"

using namespace flatlora;

namespace {

std::set<std::size_t> label_set(const Batch& b) {
  return {b.labels.begin(), b.labels.end()};
}

}  // namespace

TEST_CASE("same spec gives bitwise-identical datasets") {
  DatasetSpec spec;
  spec.size = 120;
  spec.seed = 77;
  Dataset a = make_dataset(spec);
  Dataset b = make_dataset(spec);
  CHECK(a.train.features.data() == b.train.features.data());
  CHECK(a.train.labels == b.train.labels);
  CHECK(a.test.features.data() == b.test.features.data());
  CHECK(a.test.labels == b.test.labels);
}

TEST_CASE("different seeds give different features") {
  DatasetSpec spec;
  spec.size = 60;
  spec.seed = 1;
  Dataset a = make_dataset(spec);
  spec.seed = 2;
  Dataset b = make_dataset(spec);
  CHECK(a.train.features.data() != b.train.features.data());
}

TEST_CASE("split sizes follow the train fraction") {
  DatasetSpec spec;
  spec.size = 250;
  spec.train_fraction = 0.8;
  Dataset d = make_dataset(spec);
  CHECK(d.train.size() == 200);
  CHECK(d.test.size() == 50);

  spec.train_fraction = 0.5;
  spec.size = 11;
  d = make_dataset(spec);
  CHECK(d.train.size() + d.test.size() == 11);
  CHECK(d.train.size() == 5);
}

TEST_CASE("extreme fractions still leave both splits nonempty") {
  DatasetSpec spec;
  spec.size = 10;
  spec.train_fraction = 0.999;
  Dataset d = make_dataset(spec);
  CHECK(d.train.size() == 9);
  CHECK(d.test.size() == 1);

  spec.train_fraction = 0.001;
  d = make_dataset(spec);
  CHECK(d.train.size() == 1);
  CHECK(d.test.size() == 9);
}

TEST_CASE("every class appears in both splits") {
  DatasetSpec spec;
  spec.size = 90;
  spec.classes = 3;
  spec.train_fraction = 0.7;
  Dataset d = make_dataset(spec);
  CHECK(label_set(d.train) == std::set<std::size_t>{0, 1, 2});
  CHECK(label_set(d.test) == std::set<std::size_t>{0, 1, 2});
}

TEST_CASE("blob features are finite and centered on distinct means") {
  DatasetSpec spec;
  spec.size = 400;
  spec.classes = 2;
  spec.noise = 0.3;
  Dataset d = make_dataset(spec);
  const Batch& tr = d.train;
  double mean0[2] = {0, 0}, mean1[2] = {0, 0};
  std::size_t n0 = 0, n1 = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double x = tr.features.at(i, 0);
    const double y = tr.features.at(i, 1);
    CHECK(std::isfinite(x));
    CHECK(std::isfinite(y));
    if (tr.labels[i] == 0) {
      mean0[0] += x;
      mean0[1] += y;
      ++n0;
    } else {
      mean1[0] += x;
      mean1[1] += y;
      ++n1;
    }
  }
  REQUIRE(n0 > 0);
  REQUIRE(n1 > 0);
  const double dx = mean0[0] / n0 - mean1[0] / n1;
  const double dy = mean0[1] / n0 - mean1[1] / n1;
  // centers sit on a circle of radius 2.5 at angles 0 and π
  CHECK(std::sqrt(dx * dx + dy * dy) > 3.0);
}

TEST_CASE("zero-noise blobs are learned to full accuracy") {
  DatasetSpec spec;
  spec.size = 64;
  spec.noise = 0.0;
  spec.train_fraction = 0.5;
  Dataset d = make_dataset(spec);

  ModelSpec ms;
  ms.mlp_dims = {2, 8, 2};
  ms.rank = 2;
  ms.alpha = 2.0;
  Model model = build_model(ms, RngStream::from_seed(5));
  OptimConfig oc;
  oc.lr = 0.05;
  oc.weight_decay = 0.0;
  Optimizer opt(model.trainable_params(), oc);
  for (std::size_t t = 0; t < 60; ++t) lora_step(model, d.train, opt);
  CHECK(model_accuracy(model, d.train) == doctest::Approx(1.0));
  CHECK(model_accuracy(model, d.test) == doctest::Approx(1.0));
}

TEST_CASE("spiral classes are balanced and finite") {
  DatasetSpec spec;
  spec.kind = DatasetKind::two_spirals;
  spec.size = 300;
  spec.noise = 0.05;
  Dataset d = make_dataset(spec);
  std::size_t ones = 0;
  for (auto l : d.train.labels) ones += l;
  for (auto l : d.test.labels) ones += l;
  CHECK(ones == 150);
  for (double v : d.train.features.data()) CHECK(std::isfinite(v));
}

TEST_CASE("parity labels recompute from the tokens") {
  DatasetSpec spec;
  spec.kind = DatasetKind::token_sequence_parity;
  spec.size = 80;
  spec.seq_len = 12;
  spec.vocab = 5;
  Dataset d = make_dataset(spec);
  for (const Batch* b : {&d.train, &d.test}) {
    REQUIRE(b->tokens.size() == b->labels.size());
    for (std::size_t i = 0; i < b->tokens.size(); ++i) {
      REQUIRE(b->tokens[i].size() == 12);
      std::size_t count = 0;
      for (std::size_t tok : b->tokens[i]) {
        CHECK(tok < 5);
        if (tok == 1) ++count;
      }
      CHECK(b->labels[i] == count % 2);
    }
  }
}

TEST_CASE("invalid dataset specs are rejected") {
  DatasetSpec spec;
  spec.size = 2;
  spec.classes = 3;
  CHECK_THROWS_AS(make_dataset(spec), ConfigError);

  spec = DatasetSpec{};
  spec.train_fraction = 0.0;
  CHECK_THROWS_AS(make_dataset(spec), ConfigError);
  spec.train_fraction = 1.0;
  CHECK_THROWS_AS(make_dataset(spec), ConfigError);

  spec = DatasetSpec{};
  spec.noise = -0.1;
  CHECK_THROWS_AS(make_dataset(spec), ConfigError);

  spec = DatasetSpec{};
  spec.kind = DatasetKind::two_spirals;
  spec.classes = 3;
  CHECK_THROWS_AS(make_dataset(spec), ConfigError);

  spec = DatasetSpec{};
  spec.kind = DatasetKind::token_sequence_parity;
  spec.vocab = 1;
  CHECK_THROWS_AS(make_dataset(spec), ConfigError);
  spec = DatasetSpec{};
  spec.kind = DatasetKind::token_sequence_parity;
  spec.seq_len = 0;
  CHECK_THROWS_AS(make_dataset(spec), ConfigError);

  spec = DatasetSpec{};
  spec.classes = 1;
  CHECK_THROWS_AS(make_dataset(spec), ConfigError);
}

TEST_CASE("cyclic_slice wraps indices modulo the batch size") {
  DatasetSpec spec;
  spec.size = 10;
  spec.train_fraction = 0.5;
  Dataset d = make_dataset(spec);
  const Batch& tr = d.train;  // 5 rows

  Batch s = cyclic_slice(tr, 3, 4);  // rows 3,4,0,1
  REQUIRE(s.size() == 4);
  const std::size_t expect[4] = {3, 4, 0, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(s.labels[i] == tr.labels[expect[i]]);
    CHECK(s.features.at(i, 0) == tr.features.at(expect[i], 0));
    CHECK(s.features.at(i, 1) == tr.features.at(expect[i], 1));
  }
}

TEST_CASE("cyclic_slice covers every row over a full cycle") {
  DatasetSpec spec;
  spec.size = 12;
  spec.train_fraction = 0.5;
  Dataset d = make_dataset(spec);
  const std::size_t n = d.train.size();
  std::vector<std::size_t> seen(n, 0);
  for (std::size_t start = 0; start < 2 * n; start += 3) {
    Batch s = cyclic_slice(d.train, start, 3);
    for (std::size_t i = 0; i < 3; ++i) {
      // match the row back to its source by features
      for (std::size_t j = 0; j < n; ++j) {
        if (s.features.at(i, 0) == d.train.features.at(j, 0) &&
            s.features.at(i, 1) == d.train.features.at(j, 1)) {
          ++seen[j];
          break;
        }
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j) CHECK(seen[j] == 2);
}

TEST_CASE("cyclic_slice carries token sequences") {
  DatasetSpec spec;
  spec.kind = DatasetKind::token_sequence_parity;
  spec.size = 8;
  spec.train_fraction = 0.5;
  Dataset d = make_dataset(spec);
  Batch s = cyclic_slice(d.train, 2, 4);  // rows 2,3,0,1
  REQUIRE(s.tokens.size() == 4);
  CHECK(s.tokens[0] == d.train.tokens[2]);
  CHECK(s.tokens[2] == d.train.tokens[0]);
  CHECK(s.labels[3] == d.train.labels[1]);
}
