#include "iwadv/autodiff/random.hpp"

#include <sstream>
#include <stdexcept>

namespace iwadv::ad {

RandomSource::RandomSource(std::uint64_t seed) : engine_(seed) {}

double RandomSource::gaussian() { return normal_(engine_); }

double RandomSource::uniform() { return unit_(engine_); }

bool RandomSource::bernoulli(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("bernoulli probability outside [0, 1]");
  return uniform() < p;
}

std::uint64_t RandomSource::next_u64() { return engine_(); }

std::size_t RandomSource::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("index draw from an empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

Tensor RandomSource::gaussian(Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = gaussian();
  return Tensor(std::move(shape), std::move(v));
}

Tensor RandomSource::uniform(Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = uniform();
  return Tensor(std::move(shape), std::move(v));
}

Tensor RandomSource::bernoulli(Shape shape, double p) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = bernoulli(p) ? 1.0 : 0.0;
  return Tensor(std::move(shape), std::move(v));
}

RandomSource RandomSource::split() { return RandomSource(next_u64() ^ 0x9e3779b97f4a7c15ULL); }

std::string RandomSource::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << engine_ << '\n' << normal_ << '\n' << unit_;
  return os.str();
}

RandomSource RandomSource::deserialize(const std::string& state) {
  RandomSource r;
  std::istringstream is(state);
  is >> r.engine_ >> r.normal_ >> r.unit_;
  if (!is) throw std::runtime_error("malformed random-source state");
  return r;
}

bool RandomSource::operator==(const RandomSource& other) const {
  return engine_ == other.engine_ && normal_ == other.normal_;
}

}  // namespace iwadv::ad
