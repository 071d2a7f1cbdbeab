#include "flatlora/data.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "flatlora/errors.hpp"
#include "flatlora/rng.hpp"

namespace flatlora {
namespace {

void validate(const DatasetSpec& spec) {
  if (spec.classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (spec.size < spec.classes)
    throw ConfigError("dataset size " + std::to_string(spec.size) +
                      " is smaller than class count " +
                      std::to_string(spec.classes));
  if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0)
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  if (spec.noise < 0.0) throw ConfigError("noise level must be nonnegative");
  if (spec.kind != DatasetKind::gaussian_blobs && spec.classes != 2)
    throw ConfigError("this dataset kind is binary; set classes to 2");
  if (spec.kind == DatasetKind::token_sequence_parity) {
    if (spec.seq_len == 0) throw ConfigError("seq_len must be positive");
    if (spec.vocab < 2) throw ConfigError("vocab must be at least 2");
  }
}

struct Raw {
  std::vector<double> features;  // empty for token data
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::size_t> labels;
  std::size_t feat_dim = 0;
};

Raw gen_blobs(const DatasetSpec& spec) {
  Raw raw;
  raw.feat_dim = 2;
  auto stream = RngStream::from_seed(spec.seed).fork("blobs");
  const auto normals = seeded_normal(stream, 2 * spec.size);
  for (std::size_t i = 0; i < spec.size; ++i) {
    const std::size_t c = i % spec.classes;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                         static_cast<double>(spec.classes);
    raw.features.push_back(2.5 * std::cos(angle) +
                           spec.noise * normals[2 * i]);
    raw.features.push_back(2.5 * std::sin(angle) +
                           spec.noise * normals[2 * i + 1]);
    raw.labels.push_back(c);
  }
  return raw;
}

Raw gen_spirals(const DatasetSpec& spec) {
  Raw raw;
  raw.feat_dim = 2;
  auto stream = RngStream::from_seed(spec.seed).fork("spirals");
  const auto u = seeded_uniform(stream, spec.size, 0.05, 1.0);
  const auto normals = seeded_normal(stream, 2 * spec.size);
  for (std::size_t i = 0; i < spec.size; ++i) {
    const std::size_t c = i % 2;
    const double theta = 3.0 * std::numbers::pi * u[i];
    const double r = 0.3 + 2.2 * u[i];
    const double rot = theta + (c == 1 ? std::numbers::pi : 0.0);
    raw.features.push_back(r * std::cos(rot) + spec.noise * normals[2 * i]);
    raw.features.push_back(r * std::sin(rot) + spec.noise * normals[2 * i + 1]);
    raw.labels.push_back(c);
  }
  return raw;
}

Raw gen_parity(const DatasetSpec& spec) {
  Raw raw;
  auto stream = RngStream::from_seed(spec.seed).fork("parity");
  const auto u =
      seeded_uniform(stream, spec.size * spec.seq_len, 0.0, 1.0);
  for (std::size_t i = 0; i < spec.size; ++i) {
    std::vector<std::size_t> seq(spec.seq_len);
    std::size_t ones = 0;
    for (std::size_t t = 0; t < spec.seq_len; ++t) {
      seq[t] = std::min(
          spec.vocab - 1,
          static_cast<std::size_t>(u[i * spec.seq_len + t] *
                                   static_cast<double>(spec.vocab)));
      if (seq[t] == 1) ++ones;
    }
    raw.tokens.push_back(std::move(seq));
    raw.labels.push_back(ones % 2);
  }
  return raw;
}

Batch slice_raw(const Raw& raw, std::size_t start, std::size_t count) {
  Batch b;
  if (raw.feat_dim > 0) {
    std::vector<double> xs(raw.features.begin() + start * raw.feat_dim,
                           raw.features.begin() + (start + count) * raw.feat_dim);
    b.features = Tensor::from({count, raw.feat_dim}, std::move(xs));
  } else {
    b.tokens.assign(raw.tokens.begin() + start,
                    raw.tokens.begin() + start + count);
  }
  b.labels.assign(raw.labels.begin() + start,
                  raw.labels.begin() + start + count);
  return b;
}

}  // namespace

Dataset make_dataset(const DatasetSpec& spec) {
  validate(spec);
  Raw raw;
  switch (spec.kind) {
    case DatasetKind::gaussian_blobs:
      raw = gen_blobs(spec);
      break;
    case DatasetKind::two_spirals:
      raw = gen_spirals(spec);
      break;
    case DatasetKind::token_sequence_parity:
      raw = gen_parity(spec);
      break;
  }

  std::size_t n_train = static_cast<std::size_t>(
      std::floor(spec.train_fraction * static_cast<double>(spec.size)));
  n_train = std::max<std::size_t>(1, std::min(n_train, spec.size - 1));

  Dataset out;
  out.train = slice_raw(raw, 0, n_train);
  out.test = slice_raw(raw, n_train, spec.size - n_train);
  return out;
}

Batch cyclic_slice(const Batch& full, std::size_t start, std::size_t count) {
  const std::size_t n = full.size();
  if (n == 0) throw ContractError("cyclic_slice of an empty batch");
  if (count == 0) throw ContractError("cyclic_slice needs a positive count");

  Batch b;
  b.labels.resize(count);
  const bool tokens = !full.tokens.empty();
  if (tokens) {
    b.tokens.resize(count);
  } else {
    b.features = Tensor::zeros({count, full.features.dim(1)});
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = (start + i) % n;
    b.labels[i] = full.labels[src];
    if (tokens) {
      b.tokens[i] = full.tokens[src];
    } else {
      for (std::size_t j = 0; j < full.features.dim(1); ++j)
        b.features.at(i, j) = full.features.at(src, j);
    }
  }
  return b;
}

}  // namespace flatlora
