#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <ATen/core/Generator.h>

namespace segdiff {

/// Seeded random state shared by one training or sampling stream: a 64-bit
/// engine for host-side draws and a torch CPU generator for tensor noise.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::mt19937_64& engine() { return engine_; }
  at::Generator& generator() { return generator_; }

  double uniform(double lo, double hi);
  std::uint64_t next_u64() { return engine_(); }

  /// Opaque textual state (engine + torch generator) for checkpoints.
  std::string serialize() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
  at::Generator generator_;
};

/// Stable derivation of child seeds (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace segdiff
