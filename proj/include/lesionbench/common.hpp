#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lesionbench {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : Error { using Error::Error; };              // unreadable/unwritable files, bad formats
struct ValidationError : Error { using Error::Error; };      // shape / contract violations on inputs
struct ConfigError : Error { using Error::Error; };          // unsupported settings
struct IntegrityError : Error { using Error::Error; };       // stored data inconsistent with its sidecar
struct PlacementError : Error { using Error::Error; };       // lesion placement exhausted retries
struct DegenerateDataError : Error { using Error::Error; };  // empty datasets, zero-variance slices, single-class labels
struct ContractError : Error { using Error::Error; };        // operation called on the wrong model kind etc.
struct TrainingDiverged : Error { using Error::Error; };

/// Dense row-major 2D array. The one image type every module shares.
template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Grid() = default;
  Grid(int r, int c, T fill = T{}) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

  T& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return v.size(); }
  bool same_shape(int r, int c) const { return rows == r && cols == c; }

  template <typename U>
  bool same_shape(const Grid<U>& o) const { return rows == o.rows && cols == o.cols; }

  bool operator==(const Grid& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

// PCG32 (O'Neill). Self-contained so generated data is bit-identical everywhere,
// unlike std::normal_distribution whose algorithm is implementation-defined.
class Pcg32 {
 public:
  Pcg32() : Pcg32(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL) {}
  explicit Pcg32(uint64_t seed, uint64_t stream = 1) { reseed(seed, stream); }

  void reseed(uint64_t seed, uint64_t stream) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
    have_spare_ = false;
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    auto xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    auto rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  /// Uniform in [0, 1).
  double next_double() { return next_u32() * (1.0 / 4294967296.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// i in [0, n)
  uint32_t next_below(uint32_t n) {
    // rejection sampling keeps this unbiased
    uint32_t threshold = (-n) % n;
    for (;;) {
      uint32_t r = next_u32();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller (pair cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = next_double();
    } while (u1 <= 1e-300);
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 1;
  double spare_ = 0;
  bool have_spare_ = false;
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 1469598103934665603ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[x & 0xf];
    x >>= 4;
  }
  return out;
}

/// Static contiguous split of [0, n) over `threads` workers. The caller owns
/// per-thread accumulators and reduces them in thread order, which keeps
/// results independent of scheduling for a fixed thread count.
inline void parallel_chunks(int n, int threads,
                            const std::function<void(int thread, int begin, int end)>& fn) {
  if (threads <= 1 || n <= 1) {
    fn(0, 0, n);
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  int base = n / threads, rem = n % threads, begin = 0;
  for (int t = 0; t < threads; ++t) {
    int len = base + (t < rem ? 1 : 0);
    pool.emplace_back(fn, t, begin, begin + len);
    begin += len;
  }
  for (auto& th : pool) th.join();
}

}  // namespace lesionbench
