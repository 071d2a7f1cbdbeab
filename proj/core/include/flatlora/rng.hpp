#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace flatlora {

// Counter-based pseudo-random source (Philox4x32-10 core). A stream is fully
// described by (seed, counter): the i-th draw is a pure function of the pair,
// so any draw can be regenerated later from the stored values alone. Distinct
// seeds derived via fork() give statistically independent streams.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  static RngStream from_seed(std::uint64_t seed) { return RngStream{seed, 0}; }

  // Derived sub-stream for a labelled purpose (per layer, per step, ...).
  // Children of distinct labels are disjoint; the child counter starts at 0.
  RngStream fork(std::uint64_t label) const;
  RngStream fork(std::uint64_t a, std::uint64_t b) const;
  RngStream fork(std::string_view label) const;
};

// 64-bit avalanche mix used for label hashing and seed derivation.
std::uint64_t mix64(std::uint64_t x);

// FNV-1a over bytes, for string stream labels.
std::uint64_t hash_label(std::string_view s);

// The raw 64-bit word at absolute position `index` of the stream keyed by
// `seed`. Deterministic across runs; two words per Philox block.
std::uint64_t stream_word(std::uint64_t seed, std::uint64_t index);

// i.i.d. N(0,1) draws (Box-Muller over Philox words). Draw i of a stream is
// a pure function of (seed, counter + i); the call advances the counter by
// `count` so successive calls never overlap.
std::vector<double> seeded_normal(RngStream& stream, std::size_t count);

// Uniform draws on [lo, hi), same addressing scheme as seeded_normal.
std::vector<double> seeded_uniform(RngStream& stream, std::size_t count,
                                   double lo, double hi);

// Single draws at an absolute position, without touching a stream's counter.
// Used by replay paths that must regenerate historical values.
double normal_at(std::uint64_t seed, std::uint64_t index);
double uniform_at(std::uint64_t seed, std::uint64_t index, double lo, double hi);

// Bulk form of normal_at: fills out[0..count) with the draws at positions
// [start, start+count). Bit-identical to per-index normal_at calls.
void normals_at(std::uint64_t seed, std::uint64_t start, std::size_t count,
                double* out);

}  // namespace flatlora
