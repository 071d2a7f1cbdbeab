#include "flatlora/rng.hpp"

#include <cmath>

namespace flatlora {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

struct Block {
  std::uint32_t v[4];
};

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// Philox4x32-10: key = seed split into two 32-bit words, counter = block index.
Block philox(std::uint64_t seed, std::uint64_t block_index) {
  std::uint32_t c0 = static_cast<std::uint32_t>(block_index);
  std::uint32_t c1 = static_cast<std::uint32_t>(block_index >> 32);
  std::uint32_t c2 = 0, c3 = 0;
  std::uint32_t k0 = static_cast<std::uint32_t>(seed);
  std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32);
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, c0, hi0, lo0);
    mulhilo(kPhiloxM1, c2, hi1, lo1);
    const std::uint32_t n0 = hi1 ^ c1 ^ k0;
    const std::uint32_t n1 = lo1;
    const std::uint32_t n2 = hi0 ^ c3 ^ k1;
    const std::uint32_t n3 = lo0;
    c0 = n0;
    c1 = n1;
    c2 = n2;
    c3 = n3;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return Block{{c0, c1, c2, c3}};
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Normals come in Box-Muller pairs; draw i lives in block i/2, slot i%2.
inline void normal_pair(std::uint64_t seed, std::uint64_t block_index,
                        double& z0, double& z1) {
  const Block b = philox(seed, block_index);
  const std::uint64_t w0 =
      (static_cast<std::uint64_t>(b.v[1]) << 32) | b.v[0];
  const std::uint64_t w1 =
      (static_cast<std::uint64_t>(b.v[3]) << 32) | b.v[2];
  const double u1 = (static_cast<double>(w0 >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
  const double u2 = static_cast<double>(w1 >> 11) * 0x1.0p-53;          // [0,1)
  const double r = std::sqrt(-2.0 * std::log(u1));
  z0 = r * std::cos(kTwoPi * u2);
  z1 = r * std::sin(kTwoPi * u2);
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

RngStream RngStream::fork(std::uint64_t label) const {
  return RngStream{mix64(seed ^ mix64(label)), 0};
}

RngStream RngStream::fork(std::uint64_t a, std::uint64_t b) const {
  return fork(a).fork(b);
}

RngStream RngStream::fork(std::string_view label) const {
  return fork(hash_label(label));
}

std::uint64_t stream_word(std::uint64_t seed, std::uint64_t index) {
  const Block b = philox(seed, index >> 1);
  const int slot = static_cast<int>(index & 1u) * 2;
  return (static_cast<std::uint64_t>(b.v[slot + 1]) << 32) | b.v[slot];
}

void normals_at(std::uint64_t seed, std::uint64_t start, std::size_t count,
                double* out) {
  std::size_t i = 0;
  if (count > 0 && (start & 1u)) {
    double z0, z1;
    normal_pair(seed, start >> 1, z0, z1);
    out[i++] = z1;
  }
  while (i + 1 < count) {
    double z0, z1;
    normal_pair(seed, (start + i) >> 1, z0, z1);
    out[i] = z0;
    out[i + 1] = z1;
    i += 2;
  }
  if (i < count) {
    double z0, z1;
    normal_pair(seed, (start + i) >> 1, z0, z1);
    out[i] = ((start + i) & 1u) ? z1 : z0;
  }
}

std::vector<double> seeded_normal(RngStream& stream, std::size_t count) {
  std::vector<double> out(count);
  normals_at(stream.seed, stream.counter, count, out.data());
  stream.counter += count;
  return out;
}

std::vector<double> seeded_uniform(RngStream& stream, std::size_t count,
                                   double lo, double hi) {
  std::vector<double> out(count);
  const double span = hi - lo;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t w = stream_word(stream.seed, stream.counter + i);
    out[i] = lo + span * (static_cast<double>(w >> 11) * 0x1.0p-53);
  }
  stream.counter += count;
  return out;
}

double normal_at(std::uint64_t seed, std::uint64_t index) {
  double z0, z1;
  normal_pair(seed, index >> 1, z0, z1);
  return (index & 1u) ? z1 : z0;
}

double uniform_at(std::uint64_t seed, std::uint64_t index, double lo,
                  double hi) {
  const std::uint64_t w = stream_word(seed, index);
  return lo + (hi - lo) * (static_cast<double>(w >> 11) * 0x1.0p-53);
}

}  // namespace flatlora
