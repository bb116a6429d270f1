#include "icl/rng.hpp"

namespace icl {
namespace {

std::mt19937_64 seeded(std::uint64_t root, const std::uint64_t* path, std::size_t len) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (len + 1) + 1);
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(root);
  words.push_back(static_cast<std::uint32_t>(len));
  for (std::size_t i = 0; i < len; ++i) push(path[i]);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t root, std::initializer_list<std::uint64_t> path)
    : engine_(seeded(root, path.begin(), path.size())) {}

Rng::Rng(std::uint64_t root, const std::vector<std::uint64_t>& path)
    : engine_(seeded(root, path.data(), path.size())) {}

int Rng::uniform_int(int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(engine_);
}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

}  // namespace icl
