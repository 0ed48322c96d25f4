#pragma once

// Shared primitives: 3-vectors, error types, seeded randomness and the
// deterministic worker pool used by training and batch evaluation.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pcadv {

inline constexpr const char* kVersion = "0.1.0";

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }
inline double dist2(const Vec3& a, const Vec3& b) { return norm2(a - b); }
inline double dist(const Vec3& a, const Vec3& b) { return std::sqrt(dist2(a, b)); }
inline bool finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

// Attack taxonomy used across the attack, eval and CLI layers.
enum class Family { vision, caption };
enum class Setting { untargeted, targeted };

const char* to_string(Family f);
const char* to_string(Setting s);
Family family_from_string(const std::string& s);    // throws std::invalid_argument
Setting setting_from_string(const std::string& s);  // throws std::invalid_argument

// Error taxonomy. Everything user-recoverable derives from std::runtime_error
// so the CLI can map it to a nonzero exit code with a readable message.
struct ParseError : std::runtime_error {
  ParseError(const std::string& file, long line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        line_number(line) {}
  long line_number;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingFailedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64; used to derive independent stream seeds from one root seed.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d649bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic random stream. All distribution transforms are written out
// here (not delegated to std:: distributions) so that two builds of the
// project produce bit-identical streams regardless of standard library.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : seed_base_(mix64(seed)), eng_(mix64(seed) ^ 0xd1b54a32d192ed03ull) {}

  // Child stream independent of this one; used to give each sample / cloud
  // its own stream so parallel order does not matter.
  RandomStream derive(uint64_t stream_id) const {
    return RandomStream(mix64(seed_base_ ^ mix64(stream_id + 0x51ed2701)));
  }

  uint64_t bits() { return eng_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(bits() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  uint64_t below(uint64_t n) {
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = bits();
      if (r >= threshold) return r % n;
    }
  }

  double normal() {  // Box-Muller, one value per call (second discarded)
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  struct Engine {
    explicit Engine(uint64_t s) : state(s ? s : 0x2545f4914f6cdd1dull) {}
    uint64_t operator()() {  // xorshift64*
      state ^= state >> 12;
      state ^= state << 25;
      state ^= state >> 27;
      return state * 0x2545f4914f6cdd1dull;
    }
    uint64_t state;
  };
  uint64_t seed_base_ = 0;
  Engine eng_;
};

// Deterministic parallel loop: [0, n) is split into fixed chunks and chunk
// results must be combined in chunk order by the caller. With threads == 1
// (the default on single-core hosts) it degenerates to a plain loop.
void parallel_for(size_t n, int threads, const std::function<void(size_t, size_t)>& chunk_fn);

int default_thread_count();

}  // namespace pcadv
