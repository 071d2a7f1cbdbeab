#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "flatlora/data.hpp"
#include "flatlora/landscape.hpp"
#include "flatlora/model.hpp"
#include "flatlora/ops.hpp"
#include "flatlora/optim.hpp"
#include "flatlora/perturb.hpp"
#include "flatlora/rng.hpp"
#include "flatlora/tensor.hpp"
#include "flatlora/trainers.hpp"

namespace {

using namespace flatlora;

Tensor randn(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  normals_at(seed, 0, t.numel(), t.data().data());
  return t;
}

void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = randn({n, n}, 101);
  Tensor b = randn({n, n}, 202);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_matmul)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_seeded_normals(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> buf(n);
  std::uint64_t start = 0;
  for (auto _ : state) {
    normals_at(42, start, n, buf.data());
    benchmark::DoNotOptimize(buf.data());
    start += n;
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n));
}
BENCHMARK(BM_seeded_normals)->Arg(1 << 10)->Arg(1 << 14)->Arg(1 << 18);

void BM_sample_perturbation(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor w = randn({n, n}, 7);
  RngStream noise = RngStream::from_seed(9).fork("bench");
  PerturbationRecord rec = make_perturbation_record("layer0", w, 0.05, noise);
  for (auto _ : state) {
    Tensor eps = sample_perturbation(rec);
    benchmark::DoNotOptimize(eps.data().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_sample_perturbation)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

struct StepFixture {
  Model model;
  Batch batch;
  Optimizer opt;

  explicit StepFixture(std::uint64_t seed) : StepFixture(make_parts(seed)) {}

 private:
  struct Parts {
    Model model;
    Batch batch;
  };

  static Parts make_parts(std::uint64_t seed) {
    ModelSpec spec;  // 2-64-64-2 mlp, rank 4
    DatasetSpec data;
    data.size = 256;
    data.train_fraction = 0.5;
    data.seed = 3;
    Model m = build_model(spec, RngStream::from_seed(seed).fork("model"));
    Batch b = cyclic_slice(make_dataset(data).train, 0, 64);
    return {std::move(m), std::move(b)};
  }

  explicit StepFixture(Parts p)
      : model(std::move(p.model)),
        batch(std::move(p.batch)),
        opt(model.trainable_params(), OptimConfig{}) {}
};

void BM_step_plain(benchmark::State& state) {
  StepFixture f(1);
  for (auto _ : state) {
    StepReport r = lora_step(f.model, f.batch, f.opt);
    benchmark::DoNotOptimize(r.grad_norm);
  }
}
BENCHMARK(BM_step_plain)->Unit(benchmark::kMicrosecond);

void BM_step_noisy(benchmark::State& state) {
  StepFixture f(1);
  SigmaSchedule sched;
  sched.sigma_max = 0.05;
  sched.total_steps = std::size_t{1} << 40;
  RngStream noise = RngStream::from_seed(1).fork("noise");
  std::size_t t = 0;
  for (auto _ : state) {
    StepReport r = flat_lora_step(f.model, f.batch, f.opt, sched, t++, noise);
    benchmark::DoNotOptimize(r.grad_norm);
  }
}
BENCHMARK(BM_step_noisy)->Unit(benchmark::kMicrosecond);

void BM_step_sam_full(benchmark::State& state) {
  StepFixture f(1);
  SamConfig cfg;
  cfg.space = SamConfig::Space::full_w;
  for (auto _ : state) {
    StepReport r = sam_step_full(f.model, f.batch, f.opt, cfg);
    benchmark::DoNotOptimize(r.grad_norm);
  }
}
BENCHMARK(BM_step_sam_full)->Unit(benchmark::kMicrosecond);

void BM_step_sam_adapter(benchmark::State& state) {
  StepFixture f(1);
  SamConfig cfg;
  cfg.space = SamConfig::Space::lora_ab;
  for (auto _ : state) {
    StepReport r = lora_sam_step(f.model, f.batch, f.opt, cfg);
    benchmark::DoNotOptimize(r.grad_norm);
  }
}
BENCHMARK(BM_step_sam_adapter)->Unit(benchmark::kMicrosecond);

void BM_surface_1d(benchmark::State& state) {
  const std::size_t k = 21;
  StepFixture f(1);
  std::vector<Direction> dirs = {filter_normalized_direction(f.model, 5)};
  for (auto _ : state) {
    LandscapeGrid grid = loss_surface(f.model, f.batch, dirs, k, 0.5);
    benchmark::DoNotOptimize(grid.values.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(k));
}
BENCHMARK(BM_surface_1d)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
