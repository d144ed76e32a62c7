#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dacl {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto exit codes, everything else just
// throws and lets the caller decide.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape or dimension mismatch between tensors.
struct DimensionError : Error {
  using Error::Error;
};

/// API misuse: backward on a non-scalar, tau <= 0, mismatched parameter sets.
struct ContractError : Error {
  using Error::Error;
};

/// Bad data: out-of-range values, malformed files, protocol violations.
struct DataError : Error {
  using Error::Error;
};

/// Non-finite values, unnormalizable embeddings, diverged training.
struct NumericError : Error {
  using Error::Error;
};

/// Bad configuration file or flag combination.
struct ConfigError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937 is portable but the distributions are not,
// so we own the whole stack: splitmix64 stream + fixed-mantissa uniforms +
// Box-Muller normals. Bit-identical on every platform.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Mix a seed with a stream tag so independent consumers get independent
/// streams from one run seed.
inline uint64_t seed_chain(uint64_t seed, uint64_t tag) {
  uint64_t s = seed ^ (0x9E3779B97F4A7C15ull * (tag + 1));
  splitmix64(s);
  return splitmix64(s);
}

inline uint64_t seed_chain(uint64_t seed, const std::string& tag) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return seed_chain(seed, h);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int64_t(next_u64() % span);
  }

  /// Standard normal via Box-Muller; caches the second value.
  double normal() {
    if (has_cache_) {
      has_cache_ = false;
      return cache_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cache_ = r * std::sin(a);
    has_cache_ = true;
    return r * std::cos(a);
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  double cache_ = 0.0;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Worker parallelism for embarrassingly parallel jobs (scene rendering,
// per-sample evaluation). Capped by DACL_THREADS. Training loops stay
// single-threaded; callers must write to disjoint slots so results do not
// depend on the thread count.
// ---------------------------------------------------------------------------

inline int worker_threads() {
  if (const char* env = std::getenv("DACL_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

template <class F>
void parallel_for(int64_t n, F&& fn) {
  int threads = worker_threads();
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (int64_t(threads) > n) threads = int(n);
  std::vector<std::thread> pool;
  pool.reserve(size_t(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int64_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace dacl
