#pragma once

#include <cstddef>
#include <cstdint>

#include "flatlora/model.hpp"

namespace flatlora {

enum class DatasetKind { gaussian_blobs, two_spirals, token_sequence_parity };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian_blobs;
  std::size_t size = 2000;  // total examples across both splits
  std::size_t classes = 2;
  double noise = 1.0;           // blob std / spiral jitter std
  double train_fraction = 0.8;  // leading fraction goes to train
  std::uint64_t seed = 1;
  std::size_t seq_len = 16;  // parity task only
  std::size_t vocab = 4;     // parity task only
};

struct Dataset {
  Batch train;
  Batch test;
};

// Deterministic in spec.seed; examples are generated class-interleaved and
// split by position, so the two splits are disjoint by construction.
Dataset make_dataset(const DatasetSpec& spec);

// Rows [start, start+count) of a batch, indices taken modulo its size.
Batch cyclic_slice(const Batch& full, std::size_t start, std::size_t count);

}  // namespace flatlora
