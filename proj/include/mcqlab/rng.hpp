#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace mcqlab {

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Derives an independent stream seed from a parent seed and a stream index.
// Stages and per-unit streams (one per header, one per student) use this so a
// change in one stream's draw count never shifts another stream.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) noexcept;

// Named stream ids for the master-seed expansion.
namespace stream {
inline constexpr std::uint64_t kBank = 1;
inline constexpr std::uint64_t kCohort = 2;
inline constexpr std::uint64_t kProfiles = 3;
inline constexpr std::uint64_t kStudents = 4;
}  // namespace stream

// Seeded generator. The engine output is fixed by the standard, and every
// distribution below is implemented here so draws are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer on [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  // Uniform integer on [lo, hi].
  long long uniform_int(long long lo, long long hi);

  bool bernoulli(double p) { return uniform() < p; }

  double normal(double mean, double sd);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace mcqlab
