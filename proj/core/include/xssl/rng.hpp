#pragma once

#include <cstdint>
#include <vector>

namespace xssl {

// Counter-based 64-bit generator. Output n is the SplitMix64 finalizer
// applied to key + n*golden-gamma, so a stream is a pure function of
// (key, counter) and never carries hidden state across forks. Sub-streams
// derived with fork() are keyed by a tag, which keeps every consumer of
// randomness (mask sampling, init, crops, ...) on its own stream: adding
// or removing one consumer cannot shift the draws seen by another.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(seed) {}

  // Independent stream addressed by (this stream's key, tag).
  Rng fork(uint64_t tag) const;

  uint64_t next_u64();

  // Uniform on [0, 1), 53 random bits.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);
  // Standard normal via Box-Muller (two uniforms per pair, second cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Truncated normal: redraw while |z| > 2 (matches common init recipes).
  double truncated_normal(double stddev);

  // Fisher-Yates over [0, n) using this stream.
  std::vector<int64_t> permutation(int64_t n);

  uint64_t counter() const { return counter_; }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// SplitMix64 finalizer; also used as the general-purpose 64-bit mixer.
uint64_t mix64(uint64_t x);

// FNV-1a over raw bytes; used for content hashes and config digests.
uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace xssl
