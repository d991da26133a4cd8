#pragma once

// Shared primitives: small vectors, the project PRNG, coordinate packing,
// error taxonomy, hashing, and a deterministic row-parallel helper.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rcf {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors. The CLI maps these to exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. Anything else is a plain failure.
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::logic_error {
  explicit DimensionError(const std::string& msg) : std::logic_error(msg) {}
};

// ---------------------------------------------------------------------------
// Small fixed vectors.
// ---------------------------------------------------------------------------

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

using Feature = std::vector<double>;

// ---------------------------------------------------------------------------
// SplitMix64. All stochastic paths in the project draw from this generator so
// that results are reproducible across platforms. Reference sequence:
// seed 0 -> first outputs 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4.
// ---------------------------------------------------------------------------

class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }

 private:
  uint64_t state_;
};

// FNV-1a 64-bit, used for name-keyed seeding and artifact hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 14695981039346656037ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// Per-tensor seed derived from a global seed and the tensor name, so that a
// layer shared by two configurations receives identical weights in both.
inline uint64_t name_seed(uint64_t global_seed, const std::string& name) {
  uint64_t h = fnv1a64(&global_seed, sizeof(global_seed));
  return fnv1a64(name, h);
}

// ---------------------------------------------------------------------------
// Voxel coordinate packing: 21 bits per axis, (z, y, x) major-to-minor, so
// ascending key order equals lexicographic (z, y, x) order. Collision-free
// for non-negative coordinates below 2^21 per axis.
// ---------------------------------------------------------------------------

inline constexpr int kCoordBits = 21;
inline constexpr int64_t kCoordLimit = int64_t{1} << kCoordBits;

inline uint64_t pack_coord(int32_t z, int32_t y, int32_t x) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(z)) << (2 * kCoordBits)) |
         (static_cast<uint64_t>(static_cast<uint32_t>(y)) << kCoordBits) |
         static_cast<uint64_t>(static_cast<uint32_t>(x));
}

inline std::array<int32_t, 3> unpack_coord(uint64_t key) {
  constexpr uint64_t mask = (uint64_t{1} << kCoordBits) - 1;
  return {static_cast<int32_t>((key >> (2 * kCoordBits)) & mask),
          static_cast<int32_t>((key >> kCoordBits) & mask),
          static_cast<int32_t>(key & mask)};
}

// ---------------------------------------------------------------------------
// Deterministic parallelism: each index is processed exactly once and writes
// only its own outputs, so results are bitwise identical for any thread count.
// ---------------------------------------------------------------------------

template <typename Fn>
void parallel_rows(int64_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<int64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int64_t lo = w * chunk;
    const int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// NaN/Inf tripwire; `stage` names the pipeline stage for the error message.
inline void check_finite(std::span<const double> values, const std::string& stage) {
  for (size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(stage + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * M_PI;
  a = std::fmod(a, two_pi);
  if (a <= -M_PI) a += two_pi;
  if (a > M_PI) a -= two_pi;
  return a;
}

}  // namespace rcf
