#pragma once

#include <memory>
#include <string>
#include <vector>

#include "iwadv/autodiff/ops.hpp"
#include "iwadv/autodiff/random.hpp"
#include "json.hpp"

namespace iwadv::nn {

using ad::RandomSource;
using ad::Shape;
using ad::Tensor;
using Json = nlohmann::json;

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

class Module {
 public:
  virtual ~Module() = default;
  virtual ParameterList parameters() const = 0;
  virtual Json descriptor() const = 0;
};

/// `p` itself, or a detached copy when `frozen` so no gradient reaches it.
inline Tensor use(const Tensor& p, bool frozen) { return frozen ? ad::detach(p) : p; }

enum class Activation { relu, tanh };
Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
Tensor activate(const Tensor& x, Activation a);

/// Sizes for every network family; each network reads the fields it needs.
struct ArchitectureConfig {
  std::size_t input_dim = 0;
  std::size_t latent_dim = 0;
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> conv_widths{31, 21, 21, 11};
  std::vector<std::size_t> filters{20, 20, 20, 20};
  std::vector<std::size_t> noise_layers;  // layer indices whose input gets the noise concatenated
  std::size_t noise_dim = 0;              // dense: noise features per injection site
  std::size_t noise_channels = 1;         // conv: noise channels per injection site
  std::size_t ar_window = 10;
  Activation activation = Activation::relu;

  void validate_dense() const;
  void validate_conv() const;
  Json to_json() const;
  static ArchitectureConfig from_json(const Json& j);
};

/// Fully connected layer, weight [in, out]; init U(-1/sqrt(in), 1/sqrt(in)).
struct Dense {
  Tensor weight, bias;
  Dense() = default;
  Dense(std::size_t in, std::size_t out, RandomSource& rng);
  Tensor forward(const Tensor& x, bool frozen) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// 1-D convolution layer, weight [out, in, width]; init U(+-1/sqrt(in * width)).
struct Conv {
  Tensor weight, bias;
  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t width, RandomSource& rng);
  Tensor forward(const Tensor& x, bool frozen) const;
  Tensor forward(const Tensor& x, bool frozen, ad::Padding padding) const;
  std::size_t width() const { return weight.dim(2); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

Tensor uniform_init(Shape shape, std::size_t fan_in, RandomSource& rng);

bool contains(const std::vector<std::size_t>& v, std::size_t x);

void check_finite(const Tensor& t, const std::string& what);

}  // namespace iwadv::nn
