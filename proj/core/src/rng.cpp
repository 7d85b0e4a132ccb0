#include "segdiff/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <ATen/core/Tensor.h>

#include <sstream>

#include "segdiff/error.hpp"

namespace segdiff {

Rng::Rng(std::uint64_t seed)
    : engine_(seed), generator_(at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, 1))) {}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << '\n';
  at::Tensor state = generator_.get_state();
  const auto* bytes = state.data_ptr<std::uint8_t>();
  os << state.numel();
  for (std::int64_t i = 0; i < state.numel(); ++i) os << ' ' << static_cast<int>(bytes[i]);
  return os.str();
}

void Rng::restore(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  std::int64_t n = 0;
  is >> n;
  if (!is || n <= 0) throw ValidationError("corrupt rng state");
  at::Tensor state = generator_.get_state();
  if (state.numel() != n) throw ValidationError("rng state size mismatch");
  auto* bytes = state.data_ptr<std::uint8_t>();
  for (std::int64_t i = 0; i < n; ++i) {
    int v = 0;
    is >> v;
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  if (!is) throw ValidationError("corrupt rng state");
  generator_.set_state(state);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace segdiff
