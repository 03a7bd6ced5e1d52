#include "iwadv/networks/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iwadv::nn {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Tensor activate(const Tensor& x, Activation a) {
  return a == Activation::relu ? ad::relu(x) : ad::tanh(x);
}

namespace {
void require_positive(const std::vector<std::size_t>& v, const char* what) {
  for (auto x : v) {
    if (x == 0) throw std::invalid_argument(std::string(what) + " must all be positive");
  }
}
}  // namespace

void ArchitectureConfig::validate_dense() const {
  if (input_dim == 0) throw std::invalid_argument("input_dim must be positive");
  if (latent_dim == 0) throw std::invalid_argument("latent_dim must be positive");
  require_positive(hidden, "hidden widths");
  if (!noise_layers.empty() && noise_dim == 0) {
    throw std::invalid_argument("noise injection needs noise_dim > 0");
  }
  for (auto l : noise_layers) {
    if (l > hidden.size()) throw std::invalid_argument("noise layer index beyond the network depth");
  }
}

void ArchitectureConfig::validate_conv() const {
  if (conv_widths.empty()) throw std::invalid_argument("conv network needs at least one layer");
  if (conv_widths.size() != filters.size()) {
    throw std::invalid_argument("conv_widths and filters must have the same length");
  }
  require_positive(conv_widths, "conv widths");
  require_positive(filters, "filter counts");
  if (!noise_layers.empty() && noise_channels == 0) {
    throw std::invalid_argument("noise injection needs noise_channels > 0");
  }
  for (auto l : noise_layers) {
    if (l >= conv_widths.size()) throw std::invalid_argument("noise layer index beyond the network depth");
  }
  if (ar_window == 0) throw std::invalid_argument("ar_window must be positive");
}

Json ArchitectureConfig::to_json() const {
  return Json{{"input_dim", input_dim},       {"latent_dim", latent_dim},
              {"hidden", hidden},             {"conv_widths", conv_widths},
              {"filters", filters},           {"noise_layers", noise_layers},
              {"noise_dim", noise_dim},       {"noise_channels", noise_channels},
              {"ar_window", ar_window},       {"activation", to_string(activation)}};
}

ArchitectureConfig ArchitectureConfig::from_json(const Json& j) {
  ArchitectureConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.conv_widths = j.value("conv_widths", c.conv_widths);
  c.filters = j.value("filters", c.filters);
  c.noise_layers = j.value("noise_layers", c.noise_layers);
  c.noise_dim = j.value("noise_dim", c.noise_dim);
  c.noise_channels = j.value("noise_channels", c.noise_channels);
  c.ar_window = j.value("ar_window", c.ar_window);
  c.activation = parse_activation(j.value("activation", std::string("relu")));
  return c;
}

Tensor uniform_init(Shape shape, std::size_t fan_in, RandomSource& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Dense::Dense(std::size_t in, std::size_t out, RandomSource& rng)
    : weight(uniform_init({in, out}, in, rng)), bias(uniform_init({out}, in, rng)) {}

Tensor Dense::forward(const Tensor& x, bool frozen) const {
  return ad::add(ad::matmul(x, use(weight, frozen)), use(bias, frozen));
}

void Dense::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv::Conv(std::size_t in, std::size_t out, std::size_t width, RandomSource& rng)
    : weight(uniform_init({out, in, width}, in * width, rng)), bias(uniform_init({out}, in * width, rng)) {}

Tensor Conv::forward(const Tensor& x, bool frozen) const {
  return forward(x, frozen, ad::Padding::same(width()));
}

Tensor Conv::forward(const Tensor& x, bool frozen, ad::Padding padding) const {
  return ad::conv1d(x, use(weight, frozen), use(bias, frozen), padding);
}

void Conv::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

void check_finite(const Tensor& t, const std::string& what) {
  auto v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ad::DomainError(what + " is non-finite (" + std::to_string(v[i]) + ") at index " +
                            std::to_string(i) + " of shape " + ad::shape_str(t.shape()));
    }
  }
}

}  // namespace iwadv::nn
