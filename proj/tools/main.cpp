#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flatlora/checkpoint.hpp"
#include "flatlora/errors.hpp"
#include "flatlora/harness.hpp"
#include "flatlora/landscape.hpp"
#include "flatlora/validation.hpp"

namespace {

void print_table(const flatlora::ResultsTable& table) {
  std::cout << table.csv() << "\n" << table.aggregate_csv();
  std::size_t failed = 0;
  for (const auto& row : table.rows)
    if (row.failed) ++failed;
  if (failed > 0)
    std::cerr << failed << " of " << table.rows.size()
              << " runs failed; see the note column\n";
}

int run_verb(const std::string& config_path) {
  flatlora::ExperimentConfig config = flatlora::load_config(config_path);
  flatlora::ResultsTable table = flatlora::run_experiment(config);
  print_table(table);
  if (!config.output_dir.empty())
    std::cerr << "artifacts under "
              << flatlora::resolve_output_dir(config.output_dir) << "\n";
  return table.all_succeeded() ? 0 : 1;
}

int sweep_verb(const std::string& config_path, const std::string& param_name,
               std::vector<double> values) {
  flatlora::ExperimentConfig config = flatlora::load_config(config_path);
  const flatlora::SweepParameter param =
      flatlora::sweep_parameter_from_name(param_name);
  if (values.empty()) values = flatlora::default_sweep_values(param);
  flatlora::ResultsTable table = flatlora::sweep(config, param, values);
  print_table(table);
  if (!config.output_dir.empty())
    std::cerr << "artifacts under "
              << flatlora::resolve_output_dir(config.output_dir) << "\n";
  return table.all_succeeded() ? 0 : 1;
}

int landscape_verb(const std::string& ckpt_path, int dims, double radius,
                   std::size_t grid_k, std::string out_path) {
  flatlora::LoadedCheckpoint loaded = flatlora::load_checkpoint(ckpt_path);
  if (loaded.config_echo.empty())
    throw flatlora::StateError(
        "checkpoint carries no config; cannot regenerate its dataset");
  flatlora::ExperimentConfig config =
      flatlora::config_from_json_text(loaded.config_echo);
  flatlora::Dataset data = flatlora::make_dataset(config.dataset);

  std::vector<flatlora::Direction> dirs;
  for (int d = 0; d < dims; ++d)
    dirs.push_back(flatlora::filter_normalized_direction(
        loaded.model, static_cast<std::uint64_t>(d + 1)));

  flatlora::LandscapeGrid grid =
      flatlora::loss_surface(loaded.model, data.train, dirs, grid_k, radius);
  grid.dataset_id = "train split of " + config.name;
  grid.snapshot_id = std::filesystem::path(ckpt_path).filename().string();

  if (out_path.empty()) out_path = ckpt_path + ".surface.csv";
  flatlora::export_csv(grid, out_path);

  double lo = grid.values[0], hi = grid.values[0];
  for (double v : grid.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const std::size_t k = grid.alphas.size();
  const double origin =
      grid.two_d() ? grid.at(k / 2, k / 2) : grid.at(k / 2);
  std::cout << dims << "d surface, " << grid.values.size()
            << " cells, radius " << radius << "\n"
            << "loss at origin " << origin << ", min " << lo << ", max " << hi
            << "\nwritten to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "desk-scale laboratory for low-rank adapters trained under random "
      "weight perturbations, with SAM baselines and landscape probes"};
  app.require_subcommand(1);

  std::string run_config;
  CLI::App* run_cmd =
      app.add_subcommand("run", "train one experiment per seed from a config");
  run_cmd->add_option("config", run_config, "JSON experiment config")
      ->required();

  std::string sweep_config;
  std::string sweep_param;
  std::vector<double> sweep_values;
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep", "cross a config with a parameter grid (values x seeds runs)");
  sweep_cmd->add_option("config", sweep_config, "JSON experiment config")
      ->required();
  sweep_cmd->add_option("--param", sweep_param, "sigma, rho, or rank")
      ->required();
  sweep_cmd->add_option("--values", sweep_values,
                        "grid values; omit for the published default grid");

  std::string ckpt_path;
  int dims = 1;
  double radius = 1.0;
  std::size_t grid_k = 0;
  std::string surface_out;
  CLI::App* land_cmd = app.add_subcommand(
      "landscape", "loss surface around a checkpointed model, on the "
                   "training split its config describes");
  land_cmd->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  land_cmd->add_option("--dims", dims, "1 for a slice, 2 for a grid")
      ->check(CLI::Range(1, 2));
  land_cmd->add_option("--radius", radius, "coefficient range half-width")
      ->check(CLI::PositiveNumber);
  land_cmd->add_option("--grid", grid_k,
                       "odd cell count per axis (0: 201 for 1d, 41 for 2d)");
  land_cmd->add_option("--output", surface_out,
                       "CSV destination (default: <checkpoint>.surface.csv)");

  app.add_subcommand("validate", "run the full invariant suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run_verb(run_config);
    if (sweep_cmd->parsed())
      return sweep_verb(sweep_config, sweep_param, sweep_values);
    if (land_cmd->parsed())
      return landscape_verb(ckpt_path, dims, radius, grid_k, surface_out);
    return flatlora::run_validation_suite(std::cout) == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
