#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "flatlora/errors.hpp"
#include "flatlora/ops.hpp"
#include "flatlora/optim.hpp"
#include "flatlora/tensor.hpp"

using namespace flatlora;

namespace {

Tensor leaf(std::vector<double> vals) {
  const std::size_t n = vals.size();
  Tensor t = Tensor::from({n}, std::move(vals));
  t.set_requires_grad(true);
  return t;
}

void set_grad(Tensor& t, const std::vector<double>& g) {
  auto& buf = t.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i];
}

}  // namespace

TEST_CASE("adamw single step matches hand-computed update") {
  Tensor p = leaf({2.0});
  OptimConfig cfg;
  cfg.kind = OptimConfig::Kind::adamw;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  Optimizer opt({p}, cfg);
  set_grad(p, {1.0});
  opt.step();

  // m=0.1, v=0.001, mhat=1, vhat=1
  const double expected = 2.0 - 0.1 * (1.0 / (1.0 + 1e-8));
  CHECK(p[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("adamw decoupled weight decay adds -lr*wd*p") {
  Tensor p = leaf({2.0});
  OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  Optimizer opt({p}, cfg);
  set_grad(p, {1.0});
  opt.step();

  const double expected = 2.0 - 0.1 * (1.0 / (1.0 + 1e-8) + 0.01 * 2.0);
  CHECK(p[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("adamw multi-step agrees with scalar reference loop") {
  Tensor p = leaf({1.5});
  OptimConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.02;
  Optimizer opt({p}, cfg);

  double w = 1.5, m = 0.0, v = 0.0;
  const std::vector<double> grads = {0.3, -1.2, 0.7, 0.0, 2.5};
  for (std::size_t t = 0; t < grads.size(); ++t) {
    set_grad(p, {grads[t]});
    opt.step();

    m = 0.9 * m + 0.1 * grads[t];
    v = 0.999 * v + 0.001 * grads[t] * grads[t];
    const double mhat = m / (1.0 - std::pow(0.9, double(t + 1)));
    const double vhat = v / (1.0 - std::pow(0.999, double(t + 1)));
    w -= 0.05 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.02 * w);
    CHECK(p[0] == doctest::Approx(w).epsilon(1e-14));
  }
  CHECK(opt.steps_taken() == grads.size());
}

TEST_CASE("sgd momentum matches hand-computed two steps") {
  Tensor p = leaf({1.0});
  OptimConfig cfg;
  cfg.kind = OptimConfig::Kind::sgd;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  cfg.momentum = 0.9;
  Optimizer opt({p}, cfg);

  set_grad(p, {1.0});
  opt.step();  // buf=1, p=1-0.1
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-14));

  set_grad(p, {1.0});
  opt.step();  // buf=1.9, p=0.9-0.19
  CHECK(p[0] == doctest::Approx(0.71).epsilon(1e-14));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  Tensor p = leaf({0.123456789, -7.5, 3.25});
  const std::vector<double> before = p.data();
  OptimConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.01;
  Optimizer opt({p}, cfg);
  set_grad(p, {10.0, -3.0, 0.5});
  opt.step();
  opt.step();
  CHECK(p.data() == before);
}

TEST_CASE("missing grad acts as zero: adamw applies decay only") {
  Tensor p = leaf({4.0});
  OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  Optimizer opt({p}, cfg);
  opt.step();  // no grad buffer anywhere
  CHECK(p[0] == doctest::Approx(4.0 - 0.1 * 0.5 * 4.0).epsilon(1e-14));
}

TEST_CASE("cosine decay endpoints and monotonicity") {
  Tensor p = leaf({0.0});
  OptimConfig cfg;
  cfg.lr = 0.2;
  cfg.cosine_decay = true;
  cfg.total_steps = 100;
  Optimizer opt({p}, cfg);

  CHECK(opt.current_lr() == doctest::Approx(0.2).epsilon(1e-15));
  double prev = opt.current_lr();
  for (int t = 0; t < 100; ++t) {
    set_grad(p, {0.0});
    opt.step();
    CHECK(opt.current_lr() <= prev + 1e-15);
    if (opt.steps_taken() == 50)
      CHECK(opt.current_lr() == doctest::Approx(0.1).epsilon(1e-12));
    prev = opt.current_lr();
  }
  CHECK(opt.current_lr() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cosine decay without horizon is rejected") {
  Tensor p = leaf({0.0});
  OptimConfig cfg;
  cfg.cosine_decay = true;
  cfg.total_steps = 0;
  CHECK_THROWS_AS(Optimizer({p}, cfg), ContractError);
}

TEST_CASE("zero_grad clears grads on owned parameters") {
  Tensor p = leaf({1.0, 2.0});
  Optimizer opt({p}, OptimConfig{});
  set_grad(p, {3.0, 4.0});
  opt.zero_grad();
  CHECK(p.grad()[0] == 0.0);
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("adamw minimizes a quadratic through the graph") {
  Tensor p = Tensor::scalar(-4.0);
  p.set_requires_grad(true);
  const Tensor target = Tensor::scalar(3.0);

  OptimConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  Optimizer opt({p}, cfg);
  for (int t = 0; t < 600; ++t) {
    opt.zero_grad();
    ComputeGraph graph;
    GraphScope scope(graph);
    const Tensor d = sub(p, target);
    graph.backward(mul(d, d));
    opt.step();
  }
  CHECK(p.value() == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("sgd minimizes the same quadratic") {
  Tensor p = Tensor::scalar(-4.0);
  p.set_requires_grad(true);
  const Tensor target = Tensor::scalar(3.0);

  OptimConfig cfg;
  cfg.kind = OptimConfig::Kind::sgd;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  Optimizer opt({p}, cfg);
  for (int t = 0; t < 300; ++t) {
    opt.zero_grad();
    ComputeGraph graph;
    GraphScope scope(graph);
    const Tensor d = sub(p, target);
    graph.backward(mul(d, d));
    opt.step();
  }
  CHECK(p.value() == doctest::Approx(3.0).epsilon(1e-4));
}
