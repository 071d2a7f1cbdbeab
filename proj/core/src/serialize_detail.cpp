#include "serialize_detail.hpp"

#include <algorithm>

#include "flatlora/errors.hpp"

namespace flatlora::detail {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object())
    throw ConfigError(where + ": expected a JSON object");
  std::string bad;
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      bad += (bad.empty() ? "" : ", ") + key;
  }
  if (!bad.empty())
    throw ConfigError(where + ": unknown keys: " + bad);
}

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["arch"] =
      spec.arch == Architecture::mlp ? "mlp" : "tiny_transformer";
  j["mlp_dims"] = spec.mlp_dims;
  j["vocab"] = spec.vocab;
  j["seq_len"] = spec.seq_len;
  j["d_model"] = spec.d_model;
  j["d_ff"] = spec.d_ff;
  j["heads"] = spec.heads;
  j["classes"] = spec.classes;
  j["rank"] = spec.rank;
  j["alpha"] = spec.alpha;
  j["adapt_head"] = spec.adapt_head;
  j["train_norms"] = spec.train_norms;
  j["normal_init"] = spec.normal_init;
  return j;
}

ModelSpec spec_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"arch", "mlp_dims", "vocab", "seq_len", "d_model",
                       "d_ff", "heads", "classes", "rank", "alpha",
                       "adapt_head", "train_norms", "normal_init"},
                      "model");
  ModelSpec spec;
  const std::string arch = j.value("arch", "mlp");
  if (arch == "mlp") {
    spec.arch = Architecture::mlp;
  } else if (arch == "tiny_transformer") {
    spec.arch = Architecture::tiny_transformer;
  } else {
    throw ConfigError("model.arch: unknown architecture '" + arch + "'");
  }
  spec.mlp_dims = j.value("mlp_dims", spec.mlp_dims);
  spec.vocab = j.value("vocab", spec.vocab);
  spec.seq_len = j.value("seq_len", spec.seq_len);
  spec.d_model = j.value("d_model", spec.d_model);
  spec.d_ff = j.value("d_ff", spec.d_ff);
  spec.heads = j.value("heads", spec.heads);
  spec.classes = j.value("classes", spec.classes);
  spec.rank = j.value("rank", spec.rank);
  spec.alpha = j.value("alpha", spec.alpha);
  spec.adapt_head = j.value("adapt_head", spec.adapt_head);
  spec.train_norms = j.value("train_norms", spec.train_norms);
  spec.normal_init = j.value("normal_init", spec.normal_init);
  return spec;
}

json dataset_to_json(const DatasetSpec& spec) {
  json j;
  switch (spec.kind) {
    case DatasetKind::gaussian_blobs:
      j["kind"] = "gaussian_blobs";
      break;
    case DatasetKind::two_spirals:
      j["kind"] = "two_spirals";
      break;
    case DatasetKind::token_sequence_parity:
      j["kind"] = "token_sequence_parity";
      break;
  }
  j["size"] = spec.size;
  j["classes"] = spec.classes;
  j["noise"] = spec.noise;
  j["train_fraction"] = spec.train_fraction;
  j["seed"] = spec.seed;
  j["seq_len"] = spec.seq_len;
  j["vocab"] = spec.vocab;
  return j;
}

DatasetSpec dataset_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"kind", "size", "classes", "noise", "train_fraction",
                       "seed", "seq_len", "vocab"},
                      "dataset");
  DatasetSpec spec;
  const std::string kind = j.value("kind", "gaussian_blobs");
  if (kind == "gaussian_blobs") {
    spec.kind = DatasetKind::gaussian_blobs;
  } else if (kind == "two_spirals") {
    spec.kind = DatasetKind::two_spirals;
  } else if (kind == "token_sequence_parity") {
    spec.kind = DatasetKind::token_sequence_parity;
  } else {
    throw ConfigError("dataset.kind: unknown kind '" + kind + "'");
  }
  spec.size = j.value("size", spec.size);
  spec.classes = j.value("classes", spec.classes);
  spec.noise = j.value("noise", spec.noise);
  spec.train_fraction = j.value("train_fraction", spec.train_fraction);
  spec.seed = j.value("seed", spec.seed);
  spec.seq_len = j.value("seq_len", spec.seq_len);
  spec.vocab = j.value("vocab", spec.vocab);
  return spec;
}

json record_to_json(const PerturbationRecord& r) {
  json j;
  j["layer"] = r.layer;
  j["seed"] = r.seed;
  j["counter"] = r.counter;
  j["sigma"] = r.sigma;
  j["input_dim"] = r.input_dim;
  j["filter_norms"] = r.filter_norms;
  return j;
}

PerturbationRecord record_from_json(const json& j) {
  reject_unknown_keys(
      j, {"layer", "seed", "counter", "sigma", "input_dim", "filter_norms"},
      "perturbation record");
  PerturbationRecord r;
  r.layer = j.at("layer").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.counter = j.at("counter").get<std::uint64_t>();
  r.sigma = j.at("sigma").get<double>();
  r.input_dim = j.at("input_dim").get<std::size_t>();
  r.filter_norms = j.at("filter_norms").get<std::vector<double>>();
  return r;
}

}  // namespace flatlora::detail
