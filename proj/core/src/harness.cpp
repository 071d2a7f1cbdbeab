#include "flatlora/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "flatlora/checkpoint.hpp"
#include "flatlora/errors.hpp"
#include "flatlora/landscape.hpp"
#include "flatlora/trainers.hpp"
#include "json.hpp"
#include "serialize_detail.hpp"

namespace flatlora {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

bool is_sam(Method m) { return m == Method::sam_full || m == Method::lora_sam; }

std::string schedule_name(SigmaSchedule::Kind k) {
  return k == SigmaSchedule::Kind::constant ? "constant" : "cosine_increase";
}

SigmaSchedule::Kind schedule_from_name(const std::string& name) {
  if (name == "constant") return SigmaSchedule::Kind::constant;
  if (name == "cosine_increase") return SigmaSchedule::Kind::cosine_increase;
  throw ConfigError("sigma_schedule: unknown kind '" + name + "'");
}

json optimizer_to_json(const OptimConfig& oc) {
  json j;
  j["kind"] = oc.kind == OptimConfig::Kind::adamw ? "adamw" : "sgd";
  j["lr"] = oc.lr;
  j["weight_decay"] = oc.weight_decay;
  j["beta1"] = oc.beta1;
  j["beta2"] = oc.beta2;
  j["eps"] = oc.eps;
  j["momentum"] = oc.momentum;
  j["cosine_decay"] = oc.cosine_decay;
  return j;
}

OptimConfig optimizer_from_json(const json& j) {
  detail::reject_unknown_keys(j,
                              {"kind", "lr", "weight_decay", "beta1", "beta2",
                               "eps", "momentum", "cosine_decay"},
                              "optimizer");
  OptimConfig oc;
  const std::string kind = j.value("kind", "adamw");
  if (kind == "adamw") {
    oc.kind = OptimConfig::Kind::adamw;
  } else if (kind == "sgd") {
    oc.kind = OptimConfig::Kind::sgd;
  } else {
    throw ConfigError("optimizer.kind: unknown kind '" + kind + "'");
  }
  oc.lr = j.value("lr", oc.lr);
  oc.weight_decay = j.value("weight_decay", oc.weight_decay);
  oc.beta1 = j.value("beta1", oc.beta1);
  oc.beta2 = j.value("beta2", oc.beta2);
  oc.eps = j.value("eps", oc.eps);
  oc.momentum = j.value("momentum", oc.momentum);
  oc.cosine_decay = j.value("cosine_decay", oc.cosine_decay);
  return oc;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::lora: return "lora";
    case Method::flat_lora: return "flat_lora";
    case Method::sam_full: return "sam_full";
    case Method::lora_sam: return "lora_sam";
    case Method::full_ft: return "full_ft";
  }
  throw ContractError("unreachable method");
}

Method method_from_name(const std::string& name) {
  if (name == "lora") return Method::lora;
  if (name == "flat_lora") return Method::flat_lora;
  if (name == "sam_full") return Method::sam_full;
  if (name == "lora_sam") return Method::lora_sam;
  if (name == "full_ft") return Method::full_ft;
  throw ConfigError("method: unknown method '" + name + "'");
}

void validate_config(const ExperimentConfig& config) {
  std::vector<std::string> bad;
  if (config.name.empty() || config.name.find('/') != std::string::npos)
    bad.push_back("name (must be a nonempty filename fragment)");
  if (config.steps == 0) bad.push_back("steps (must be >= 1)");
  if (config.batch_size == 0) bad.push_back("batch_size (must be >= 1)");
  if (config.eval_every == 0) bad.push_back("eval_every (must be >= 1)");
  if (config.seeds.empty()) bad.push_back("seeds (must be nonempty)");
  if (config.optimizer.lr < 0) bad.push_back("optimizer.lr (must be >= 0)");
  if (config.sharpness_radius < 0)
    bad.push_back("sharpness_radius (must be >= 0)");
  if (config.sharpness_samples == 0)
    bad.push_back("sharpness_samples (must be >= 1)");

  const bool flat = config.method == Method::flat_lora;
  if (config.sigma.has_value() && !flat)
    bad.push_back("sigma (only valid for flat_lora)");
  if (flat && config.effective_sigma() < 0)
    bad.push_back("sigma (must be >= 0)");
  if (config.sigma_schedule != SigmaSchedule::Kind::constant && !flat)
    bad.push_back("sigma_schedule (only valid for flat_lora)");
  if (config.flat_samples == 0) bad.push_back("flat_samples (must be >= 1)");
  if (config.flat_samples != 1 && !flat)
    bad.push_back("flat_samples (only valid for flat_lora)");

  if (config.rho.has_value() && !is_sam(config.method))
    bad.push_back("rho (only valid for sam_full / lora_sam)");
  if (is_sam(config.method) && config.effective_rho() <= 0)
    bad.push_back("rho (must be > 0)");
  if (config.sam_per_layer && config.method != Method::sam_full)
    bad.push_back("sam_per_layer (only valid for sam_full)");
  if (config.track_ratio && config.method != Method::lora_sam)
    bad.push_back("track_ratio (only valid for lora_sam)");

  if (!bad.empty()) {
    std::string msg = "invalid config:";
    for (const auto& b : bad) msg += " " + b + ";";
    msg.pop_back();
    throw ConfigError(msg);
  }
}

std::string config_to_json_text(const ExperimentConfig& config) {
  json j;
  j["name"] = config.name;
  j["method"] = method_name(config.method);
  j["model"] = detail::spec_to_json(config.model);
  j["dataset"] = detail::dataset_to_json(config.dataset);
  j["optimizer"] = optimizer_to_json(config.optimizer);
  j["steps"] = config.steps;
  j["batch_size"] = config.batch_size;
  j["eval_every"] = config.eval_every;
  j["seeds"] = config.seeds;
  j["output_dir"] = config.output_dir;
  if (config.method == Method::flat_lora) {
    j["sigma"] = config.effective_sigma();
    j["sigma_schedule"] = schedule_name(config.sigma_schedule);
    j["flat_samples"] = config.flat_samples;
  }
  if (is_sam(config.method)) j["rho"] = config.effective_rho();
  if (config.method == Method::sam_full)
    j["sam_per_layer"] = config.sam_per_layer;
  if (config.method == Method::lora_sam) j["track_ratio"] = config.track_ratio;
  j["sharpness_radius"] = config.sharpness_radius;
  j["sharpness_samples"] = config.sharpness_samples;
  return j.dump(2);
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  detail::reject_unknown_keys(
      j,
      {"name", "method", "model", "dataset", "optimizer", "steps",
       "batch_size", "eval_every", "seeds", "output_dir", "sigma",
       "sigma_schedule", "flat_samples", "rho", "sam_per_layer", "track_ratio",
       "sharpness_radius", "sharpness_samples"},
      "config");
  if (!j.contains("method")) throw ConfigError("config: 'method' is required");

  ExperimentConfig config;
  config.method = method_from_name(j.at("method").get<std::string>());

  // noise keys belong to specific methods; catch mismatches while the key
  // presence is still known
  std::string stray;
  auto gate = [&](const char* key, bool allowed) {
    if (j.contains(key) && !allowed) stray += std::string(" ") + key;
  };
  const bool flat = config.method == Method::flat_lora;
  gate("sigma", flat);
  gate("sigma_schedule", flat);
  gate("flat_samples", flat);
  gate("rho", is_sam(config.method));
  gate("sam_per_layer", config.method == Method::sam_full);
  gate("track_ratio", config.method == Method::lora_sam);
  if (!stray.empty())
    throw ConfigError("config: keys not valid for method '" +
                      method_name(config.method) + "':" + stray);

  config.name = j.value("name", config.name);
  if (j.contains("model")) config.model = detail::spec_from_json(j.at("model"));
  if (j.contains("dataset"))
    config.dataset = detail::dataset_from_json(j.at("dataset"));
  if (j.contains("optimizer"))
    config.optimizer = optimizer_from_json(j.at("optimizer"));
  config.steps = j.value("steps", config.steps);
  config.batch_size = j.value("batch_size", config.batch_size);
  config.eval_every = j.value("eval_every", config.eval_every);
  if (j.contains("seeds"))
    config.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  config.output_dir = j.value("output_dir", config.output_dir);
  if (j.contains("sigma")) config.sigma = j.at("sigma").get<double>();
  if (j.contains("sigma_schedule"))
    config.sigma_schedule =
        schedule_from_name(j.at("sigma_schedule").get<std::string>());
  config.flat_samples = j.value("flat_samples", config.flat_samples);
  if (j.contains("rho")) config.rho = j.at("rho").get<double>();
  config.sam_per_layer = j.value("sam_per_layer", config.sam_per_layer);
  config.track_ratio = j.value("track_ratio", config.track_ratio);
  config.sharpness_radius =
      j.value("sharpness_radius", config.sharpness_radius);
  config.sharpness_samples =
      j.value("sharpness_samples", config.sharpness_samples);

  validate_config(config);
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

std::string output_root() {
  const char* env = std::getenv("FLATLORA_OUT");
  return env && *env ? env : ".";
}

std::string resolve_output_dir(const std::string& output_dir) {
  if (output_dir.empty()) return "";
  fs::path p(output_dir);
  if (p.is_absolute()) return p.string();
  return (fs::path(output_root()) / p).string();
}

// ---------- results ----------

namespace {

struct Acc {
  std::vector<double> xs;
  void add(double v) { xs.push_back(v); }
  double mean() const {
    double s = 0;
    for (double v : xs) s += v;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
  }
  double stdev() const {
    if (xs.size() < 2) return 0.0;
    const double m = mean();
    double s = 0;
    for (double v : xs) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
  }
};

}  // namespace

std::vector<AggregateRow> ResultsTable::aggregate() const {
  struct Group {
    std::string method;
    double value;
    Acc train_loss, train_acc, test_loss, test_acc, sharpness, gap;
  };
  std::vector<Group> groups;
  for (const ResultRow& r : rows) {
    if (r.failed) continue;
    const double value = r.has_sweep_value ? r.sweep_value : r.noise_scale;
    Group* g = nullptr;
    for (Group& cand : groups) {
      if (cand.method == r.method && cand.value == value) {
        g = &cand;
        break;
      }
    }
    if (!g) {
      groups.push_back(Group{r.method, value, {}, {}, {}, {}, {}, {}});
      g = &groups.back();
    }
    g->train_loss.add(r.train_loss);
    g->train_acc.add(r.train_acc);
    g->test_loss.add(r.test_loss);
    g->test_acc.add(r.test_acc);
    g->sharpness.add(r.sharpness);
    g->gap.add(r.gap);
  }
  std::vector<AggregateRow> out;
  for (const Group& g : groups) {
    AggregateRow a;
    a.method = g.method;
    a.value = g.value;
    a.runs = g.test_acc.xs.size();
    a.train_loss_mean = g.train_loss.mean();
    a.train_loss_std = g.train_loss.stdev();
    a.train_acc_mean = g.train_acc.mean();
    a.train_acc_std = g.train_acc.stdev();
    a.test_loss_mean = g.test_loss.mean();
    a.test_loss_std = g.test_loss.stdev();
    a.test_acc_mean = g.test_acc.mean();
    a.test_acc_std = g.test_acc.stdev();
    a.sharpness_mean = g.sharpness.mean();
    a.sharpness_std = g.sharpness.stdev();
    a.gap_mean = g.gap.mean();
    a.gap_std = g.gap.stdev();
    out.push_back(std::move(a));
  }
  return out;
}

std::string ResultsTable::csv() const {
  std::ostringstream os;
  os << "method,seed,noise,sweep_value,train_loss,train_acc,test_loss,"
        "test_acc,sharpness,gap,grad_evals,extra_state_floats,wall_seconds,"
        "failed,note\n";
  for (const ResultRow& r : rows) {
    os << r.method << ',' << r.seed << ',' << fmt17(r.noise_scale) << ','
       << (r.has_sweep_value ? fmt17(r.sweep_value) : std::string()) << ','
       << fmt17(r.train_loss) << ',' << fmt17(r.train_acc) << ','
       << fmt17(r.test_loss) << ',' << fmt17(r.test_acc) << ','
       << fmt17(r.sharpness) << ',' << fmt17(r.gap) << ',' << r.grad_evals
       << ',' << r.extra_state_floats << ',' << fmt17(r.wall_seconds) << ','
       << (r.failed ? "true" : "false") << ',' << csv_escape(r.note) << '\n';
  }
  return os.str();
}

std::string ResultsTable::aggregate_csv() const {
  std::ostringstream os;
  os << "method,value,runs,train_loss_mean,train_loss_std,train_acc_mean,"
        "train_acc_std,test_loss_mean,test_loss_std,test_acc_mean,"
        "test_acc_std,sharpness_mean,sharpness_std,gap_mean,gap_std\n";
  for (const AggregateRow& a : aggregate()) {
    os << a.method << ',' << fmt17(a.value) << ',' << a.runs << ','
       << fmt17(a.train_loss_mean) << ',' << fmt17(a.train_loss_std) << ','
       << fmt17(a.train_acc_mean) << ',' << fmt17(a.train_acc_std) << ','
       << fmt17(a.test_loss_mean) << ',' << fmt17(a.test_loss_std) << ','
       << fmt17(a.test_acc_mean) << ',' << fmt17(a.test_acc_std) << ','
       << fmt17(a.sharpness_mean) << ',' << fmt17(a.sharpness_std) << ','
       << fmt17(a.gap_mean) << ',' << fmt17(a.gap_std) << '\n';
  }
  return os.str();
}

bool ResultsTable::all_succeeded() const {
  return std::none_of(rows.begin(), rows.end(),
                      [](const ResultRow& r) { return r.failed; });
}

// ---------- experiment execution ----------

namespace {

std::vector<Tensor> full_ft_params(Model& model) {
  std::vector<Tensor> params;
  auto enroll = [&params](Tensor& t) {
    t.set_requires_grad(true);
    params.push_back(t);
  };
  for (LoraLayer& l : model.layers) {
    if (l.adapted()) {
      l.A.set_requires_grad(false);
      l.B.set_requires_grad(false);
    }
    enroll(l.W);
    enroll(l.bias);
  }
  if (model.spec.arch == Architecture::tiny_transformer) {
    for (Tensor* t : {&model.tok_emb, &model.pos_emb, &model.ln1_g,
                      &model.ln1_b, &model.ln2_g, &model.ln2_b, &model.lnf_g,
                      &model.lnf_b}) {
      enroll(*t);
    }
  }
  return params;
}

double min_layer_ratio(Model& model, const Batch& batch, double rho) {
  MergedGradients mg = merged_weight_gradients(model, batch);
  double lowest = 1.0;
  bool any = false;
  for (const LoraLayer& l : model.layers) {
    if (!l.adapted()) continue;
    auto it = mg.grads.find(l.name);
    if (it == mg.grads.end()) continue;
    RatioResult r = ratio_statistic(l.A, l.B, it->second, rho);
    if (!r.defined) continue;
    lowest = any ? std::min(lowest, r.value) : r.value;
    any = true;
  }
  return any ? lowest : -1.0;
}

struct RunOutput {
  ResultRow row;
  Model model;
};

RunOutput run_one(const ExperimentConfig& config, std::uint64_t seed,
                  const Dataset& data, std::ostream* log) {
  const auto wall_start = std::chrono::steady_clock::now();

  RngStream root = RngStream::from_seed(seed);
  RngStream model_stream = root.fork("model");
  Model model = build_model(config.model, model_stream);

  std::vector<Tensor> params = config.method == Method::full_ft
                                   ? full_ft_params(model)
                                   : model.trainable_params();
  OptimConfig oc = config.optimizer;
  if (oc.cosine_decay) oc.total_steps = config.steps;
  Optimizer opt(std::move(params), oc);

  SigmaSchedule schedule;
  schedule.sigma_max = config.effective_sigma();
  schedule.total_steps = config.steps;
  schedule.kind = config.sigma_schedule;
  RngStream noise = root.fork("noise");

  SamConfig sam;
  sam.rho = config.effective_rho();
  sam.per_layer = config.sam_per_layer;
  sam.space = config.method == Method::lora_sam ? SamConfig::Space::lora_ab
                                                : SamConfig::Space::full_w;

  ResultRow row;
  row.method = method_name(config.method);
  row.seed = seed;
  if (config.method == Method::flat_lora)
    row.noise_scale = config.effective_sigma();
  if (is_sam(config.method)) row.noise_scale = config.effective_rho();

  const std::size_t train_n = data.train.size();
  double last_train_loss = 0.0, last_train_acc = 0.0;
  double last_test_loss = 0.0, last_test_acc = 0.0;

  for (std::size_t t = 0; t < config.steps; ++t) {
    Batch mb = cyclic_slice(data.train, (t * config.batch_size) % train_n,
                            config.batch_size);

    std::optional<double> ratio;
    if (config.track_ratio && config.method == Method::lora_sam) {
      const double r = min_layer_ratio(model, mb, sam.rho);
      if (r >= 0) ratio = r;
    }

    StepReport rep;
    switch (config.method) {
      case Method::lora:
      case Method::full_ft:
        rep = lora_step(model, mb, opt);
        break;
      case Method::flat_lora:
        rep = flat_lora_step(model, mb, opt, schedule, t, noise,
                             static_cast<int>(config.flat_samples));
        break;
      case Method::sam_full:
        rep = sam_step_full(model, mb, opt, sam);
        break;
      case Method::lora_sam:
        rep = lora_sam_step(model, mb, opt, sam);
        break;
    }
    rep.step = t;
    rep.ratio = ratio;
    row.grad_evals += rep.grad_evals;
    row.extra_state_floats =
        std::max(row.extra_state_floats, rep.extra_state_floats);

    if (log) {
      json line;
      line["kind"] = "step";
      line["step"] = t;
      if (rep.clean_loss) line["clean_loss"] = *rep.clean_loss;
      if (rep.perturbed_loss) line["perturbed_loss"] = *rep.perturbed_loss;
      line["noise"] = rep.sigma_or_rho;
      line["grad_norm"] = rep.grad_norm;
      line["grad_evals"] = rep.grad_evals;
      if (rep.ratio) line["ratio"] = *rep.ratio;
      if (rep.degenerate) line["degenerate"] = true;
      *log << line.dump() << '\n';
    }

    if (t % config.eval_every == 0 || t + 1 == config.steps) {
      last_train_loss = model_loss(model, data.train).value();
      last_train_acc = model_accuracy(model, data.train);
      last_test_loss = model_loss(model, data.test).value();
      last_test_acc = model_accuracy(model, data.test);
      if (log) {
        json line;
        line["kind"] = "eval";
        line["step"] = t;
        line["train_loss"] = last_train_loss;
        line["train_acc"] = last_train_acc;
        line["test_loss"] = last_test_loss;
        line["test_acc"] = last_test_acc;
        *log << line.dump() << '\n';
      }
    }
  }

  row.train_loss = last_train_loss;
  row.train_acc = last_train_acc;
  row.test_loss = last_test_loss;
  row.test_acc = last_test_acc;
  row.gap = last_test_loss - last_train_loss;
  if (config.sharpness_radius > 0) {
    row.sharpness =
        sharpness_metric(model, data.train, config.sharpness_radius,
                         config.sharpness_samples, seed);
  }
  row.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    wall_start)
          .count();
  return RunOutput{std::move(row), std::move(model)};
}

ResultsTable run_rows(const ExperimentConfig& config) {
  validate_config(config);
  const std::string dir = resolve_output_dir(config.output_dir);
  if (!dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
      throw StateError("cannot create output directory '" + dir +
                       "': " + ec.message());
  }

  const Dataset data = make_dataset(config.dataset);
  const std::string config_echo = config_to_json_text(config);

  ResultsTable table;
  for (std::uint64_t seed : config.seeds) {
    const std::string stem =
        config.name + "_" + method_name(config.method) + "_s" +
        std::to_string(seed);
    try {
      std::ofstream log_file;
      std::ostream* log = nullptr;
      if (!dir.empty()) {
        log_file.open(fs::path(dir) / (stem + ".jsonl"));
        if (!log_file)
          throw StateError("cannot open step log for run '" + stem + "'");
        log = &log_file;
      }
      RunOutput out = run_one(config, seed, data, log);
      if (!dir.empty()) {
        save_checkpoint((fs::path(dir) / (stem + ".ckpt")).string(), out.model,
                        seed, {}, config_echo);
      }
      table.rows.push_back(std::move(out.row));
    } catch (const std::exception& e) {
      ResultRow row;
      row.method = method_name(config.method);
      row.seed = seed;
      if (config.method == Method::flat_lora)
        row.noise_scale = config.effective_sigma();
      if (is_sam(config.method)) row.noise_scale = config.effective_rho();
      row.failed = true;
      row.note = e.what();
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

void write_tables(const ResultsTable& table, const std::string& dir) {
  if (dir.empty()) return;
  std::ofstream results(fs::path(dir) / "results.csv");
  results << table.csv();
  std::ofstream agg(fs::path(dir) / "aggregate.csv");
  agg << table.aggregate_csv();
}

}  // namespace

ResultsTable run_experiment(const ExperimentConfig& config) {
  ResultsTable table = run_rows(config);
  write_tables(table, resolve_output_dir(config.output_dir));
  return table;
}

// ---------- sweeps ----------

std::string sweep_parameter_name(SweepParameter p) {
  switch (p) {
    case SweepParameter::sigma: return "sigma";
    case SweepParameter::rho: return "rho";
    case SweepParameter::rank: return "rank";
  }
  throw ContractError("unreachable sweep parameter");
}

SweepParameter sweep_parameter_from_name(const std::string& name) {
  if (name == "sigma") return SweepParameter::sigma;
  if (name == "rho") return SweepParameter::rho;
  if (name == "rank") return SweepParameter::rank;
  throw ConfigError("sweep parameter: unknown name '" + name + "'");
}

std::vector<double> default_sweep_values(SweepParameter p) {
  switch (p) {
    case SweepParameter::sigma:
    case SweepParameter::rho:
      return {0.0, 0.01, 0.05, 0.10, 0.15, 0.20};
    case SweepParameter::rank:
      return {1, 4, 16, 64};
  }
  throw ContractError("unreachable sweep parameter");
}

ResultsTable sweep(const ExperimentConfig& config, SweepParameter param,
                   std::vector<double> values) {
  validate_config(config);
  if (values.empty()) throw ConfigError("sweep: values must be nonempty");

  switch (param) {
    case SweepParameter::sigma:
      if (config.method != Method::flat_lora)
        throw ConfigError("sweep: sigma sweeps require method flat_lora");
      for (double v : values)
        if (v < 0) throw ConfigError("sweep: sigma values must be >= 0");
      break;
    case SweepParameter::rho:
      if (!is_sam(config.method))
        throw ConfigError("sweep: rho sweeps require sam_full or lora_sam");
      for (double v : values)
        if (v <= 0) throw ConfigError("sweep: rho values must be > 0");
      break;
    case SweepParameter::rank:
      if (config.method == Method::full_ft)
        throw ConfigError("sweep: rank sweeps do not apply to full_ft");
      for (double v : values)
        if (v < 1 || v != std::floor(v))
          throw ConfigError("sweep: rank values must be positive integers");
      break;
  }

  ResultsTable table;
  for (double value : values) {
    ExperimentConfig sub = config;
    sub.name =
        config.name + "_" + sweep_parameter_name(param) + fmt_value(value);
    switch (param) {
      case SweepParameter::sigma:
        sub.sigma = value;
        break;
      case SweepParameter::rho:
        sub.rho = value;
        break;
      case SweepParameter::rank:
        sub.model.rank = static_cast<std::size_t>(value);
        sub.model.alpha = value;  // keep the alpha/r scaling at 1
        break;
    }
    ResultsTable part = run_rows(sub);
    for (ResultRow& row : part.rows) {
      row.sweep_value = value;
      row.has_sweep_value = true;
      table.rows.push_back(std::move(row));
    }
  }
  write_tables(table, resolve_output_dir(config.output_dir));
  return table;
}

}  // namespace flatlora
