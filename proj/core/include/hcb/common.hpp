#ifndef HCB_COMMON_HPP
#define HCB_COMMON_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcb {

// Error taxonomy. Validation problems (bad inputs, bad config) are kept apart
// from runtime failures so the CLI can map them onto distinct exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file content (bad magic, truncation, count mismatch).
struct ParseError : Error {
  using Error::Error;
};

/// Precondition or configuration violation detected before any work is done.
struct ValidationError : Error {
  using Error::Error;
};

/// Trigger patch (or other geometry) does not fit inside the image.
struct GeometryError : ValidationError {
  using ValidationError::ValidationError;
};

/// A sampling pool is too small for the requested quota.
struct PoolError : Error {
  using Error::Error;
};

/// Degenerate statistics (zero spread, prevalence rounding to zero, ...).
struct DegenerateError : Error {
  using Error::Error;
};

/// Training produced a non-finite loss.
struct DivergenceError : Error {
  int epoch;
  DivergenceError(const std::string& msg, int epoch_index)
      : Error(msg), epoch(epoch_index) {}
};

// Deterministic random source. std::mt19937_64 has a standard-specified
// output sequence; the derived draws below are hand-rolled because the
// standard <random> distributions are implementation-defined. Everything
// seeded through Rng therefore replays bit-exactly on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next() { return eng_(); }

  /// Uniform integer in [0, bound). bound must be > 0.
  uint64_t below(uint64_t bound) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % bound;
  }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t range_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  /// Uniform real in [0, 1).
  double unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  /// Uniform real in [lo, hi).
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }

  /// Fisher-Yates shuffle with explicit index draws.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices drawn uniformly without replacement from [0, n).
  std::vector<size_t> sample_indices(size_t n, size_t k) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    shuffle(idx);
    idx.resize(std::min(k, n));
    return idx;
  }

 private:
  std::mt19937_64 eng_;
};

/// Derive a stage-specific seed from a run seed, so that independent stages
/// (poison selection, weight init, batch order) never share a stream.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over the pair
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace hcb

#endif  // HCB_COMMON_HPP
