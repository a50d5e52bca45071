#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace incfsl {

// Purpose tag for a random draw. Every consumer of randomness gets its own
// substream keyed by (stream_seed, index, purpose, subindex), so any episode
// or training step can be regenerated without replaying the ones before it.
enum class Draw : uint64_t {
  NovelClassChoice = 1,
  SupportDraw = 2,
  NovelQueryDraw = 3,
  BaseQueryDraw = 4,
  UnlabeledNovelDraw = 5,
  UnlabeledBaseDraw = 6,
  ParamInit = 7,
  PretrainBatch = 8,
  AdaptBatch = 9,
  AugmentViews = 10,
  CenterPlacement = 11,
  SampleNoise = 12,
  FixMatchBatch = 13,
};

// Counter-based generator: a splitmix64 stream whose initial state is a hash
// of the four key components. Sampling primitives are implemented here rather
// than via <random> distributions so the byte stream does not depend on the
// standard library implementation.
class CounterRng {
 public:
  CounterRng(uint64_t stream_seed, uint64_t index, Draw purpose, uint64_t subindex = 0) {
    state_ = mix(stream_seed);
    state_ = mix(state_ ^ (index * 0xA24BAED4963EE407ULL));
    state_ = mix(state_ ^ (static_cast<uint64_t>(purpose) * 0x9FB21C651E98DF25ULL));
    state_ = mix(state_ ^ (subindex * 0xD6E8FEB86659FD93ULL));
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound). Rejection sampling keeps it unbiased.
  int next_int(int bound) {
    if (bound <= 0) throw std::invalid_argument("CounterRng::next_int: bound must be positive");
    const uint64_t b = static_cast<uint64_t>(bound);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % b;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return static_cast<int>(r % b);
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double next_gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // First `count` entries of a Fisher-Yates shuffle of {0, ..., population-1}.
  std::vector<int> sample_without_replacement(int population, int count) {
    if (count < 0 || count > population)
      throw std::invalid_argument("sample_without_replacement: count out of range");
    std::vector<int> idx(static_cast<size_t>(population));
    for (int i = 0; i < population; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < count; ++i) {
      const int j = i + next_int(population - i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(count));
    return idx;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    const int n = static_cast<int>(v.size());
    for (int i = n - 1; i > 0; --i) {
      const int j = next_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  static uint64_t mix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  uint64_t state_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace incfsl
