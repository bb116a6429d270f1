#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace icl {

/// Seeded random stream. A stream is identified by a root seed plus a path of
/// counters (e.g. {trial, sequence}), so an individual sequence never depends
/// on how many draws other sequences consumed.
class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t root, std::initializer_list<std::uint64_t> path = {});
  Rng(std::uint64_t root, const std::vector<std::uint64_t>& path);

  /// Uniform integer in the closed range [lo, hi].
  int uniform_int(int lo, int hi);
  /// Uniform real in [0, 1).
  double uniform();
  bool bernoulli(double p);
  double normal();

  engine_type& engine() noexcept { return engine_; }

 private:
  engine_type engine_;
};

}  // namespace icl
