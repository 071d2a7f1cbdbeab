#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flatlora/data.hpp"
#include "flatlora/model.hpp"
#include "flatlora/optim.hpp"
#include "flatlora/perturb.hpp"

namespace flatlora {

enum class Method { lora, flat_lora, sam_full, lora_sam, full_ft };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

// One experiment: a model, a dataset, a training method, and the seeds to
// repeat it over. Noise scales are method-gated: sigma belongs to flat_lora,
// rho to the SAM methods, and neither to lora / full_ft.
struct ExperimentConfig {
  std::string name = "experiment";
  Method method = Method::lora;
  ModelSpec model;
  DatasetSpec dataset;
  OptimConfig optimizer;

  std::size_t steps = 500;
  std::size_t batch_size = 64;
  std::size_t eval_every = 50;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string output_dir;  // empty: nothing is written to disk

  std::optional<double> sigma;  // flat_lora; unset means 0.05
  SigmaSchedule::Kind sigma_schedule = SigmaSchedule::Kind::constant;
  std::size_t flat_samples = 1;

  std::optional<double> rho;  // sam_full / lora_sam; unset means 0.05
  bool sam_per_layer = false;
  bool track_ratio = false;  // lora_sam: log the ratio statistic per step

  double sharpness_radius = 0.5;
  std::size_t sharpness_samples = 8;

  double effective_sigma() const { return sigma.value_or(0.05); }
  double effective_rho() const { return rho.value_or(0.05); }
};

// Throws ConfigError on any violated invariant.
void validate_config(const ExperimentConfig& config);

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json_text(const ExperimentConfig& config);

struct ResultRow {
  std::string method;
  std::uint64_t seed = 0;
  double noise_scale = 0.0;  // sigma or rho; 0 for plain methods
  double sweep_value = 0.0;
  bool has_sweep_value = false;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double sharpness = 0.0;
  double gap = 0.0;  // test loss - train loss at the end of training
  std::uint64_t grad_evals = 0;
  std::size_t extra_state_floats = 0;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string note;
};

struct AggregateRow {
  std::string method;
  double value = 0.0;  // sweep value, or the method's noise scale
  std::size_t runs = 0;
  double train_loss_mean = 0.0, train_loss_std = 0.0;
  double train_acc_mean = 0.0, train_acc_std = 0.0;
  double test_loss_mean = 0.0, test_loss_std = 0.0;
  double test_acc_mean = 0.0, test_acc_std = 0.0;
  double sharpness_mean = 0.0, sharpness_std = 0.0;
  double gap_mean = 0.0, gap_std = 0.0;
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  // Mean and sample std per (method, value) group, failed rows excluded.
  std::vector<AggregateRow> aggregate() const;
  std::string csv() const;
  std::string aggregate_csv() const;
  bool all_succeeded() const;
};

// Trains once per seed. Per seed: build the model from the seed, run the
// configured method, log per-step JSON lines and periodic eval points, then
// record terminal metrics, the sharpness probe, and the generalization gap.
// A throwing run yields a failed row; the remaining seeds still execute.
// When output_dir is set, writes step logs, a checkpoint per run, and the
// results/aggregate CSV files under it.
ResultsTable run_experiment(const ExperimentConfig& config);

enum class SweepParameter { sigma, rho, rank };

SweepParameter sweep_parameter_from_name(const std::string& name);
std::string sweep_parameter_name(SweepParameter p);

// Grid defaults: sigma {0, 0.01, 0.05, 0.10, 0.15, 0.20}, rho the same six
// values, rank {1, 4, 16, 64}.
std::vector<double> default_sweep_values(SweepParameter p);

// One run_experiment per value (values x seeds runs total), rows tagged with
// the value. Rank values must be positive integers; the adapter scaling alpha
// follows the rank so alpha/r stays 1.
ResultsTable sweep(const ExperimentConfig& config, SweepParameter param,
                   std::vector<double> values);

// Resolves where output lands: FLATLORA_OUT if set, else the working dir.
// Relative output_dir values are joined onto this root.
std::string output_root();
std::string resolve_output_dir(const std::string& output_dir);

}  // namespace flatlora
