#include "iwadv/networks/discriminators.hpp"

#include <stdexcept>

namespace iwadv::nn {

DenseDiscriminator::DenseDiscriminator(DiscriminatorMode mode, std::size_t x_dim, std::size_t z_dim,
                                       std::vector<std::size_t> hidden, Activation activation, RandomSource& rng)
    : Discriminator(mode), x_dim_(x_dim), z_dim_(z_dim), hidden_(std::move(hidden)), activation_(activation) {
  if (z_dim_ == 0 || (mode == DiscriminatorMode::joint && x_dim_ == 0)) {
    throw std::invalid_argument("discriminator input sizes must be positive");
  }
  std::size_t in = z_dim_ + (mode == DiscriminatorMode::joint ? x_dim_ : 0);
  for (auto h : hidden_) {
    if (h == 0) throw std::invalid_argument("discriminator hidden widths must be positive");
    layers_.emplace_back(in, h, rng);
    in = h;
  }
  layers_.emplace_back(in, 1, rng);
}

Tensor DenseDiscriminator::logit_impl(const Tensor* x, const Tensor& z, bool frozen) const {
  Tensor h = x ? ad::concat({*x, z}, 1) : z;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l].forward(h, frozen);
    if (l + 1 < layers_.size()) h = activate(h, activation_);
  }
  return ad::reshape(h, {h.dim(0)});
}

ParameterList DenseDiscriminator::parameters() const {
  ParameterList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("dense" + std::to_string(l), out);
  return out;
}

Json DenseDiscriminator::descriptor() const {
  return {{"type", "dense_discriminator"}, {"mode", to_string(mode())}, {"x_dim", x_dim_},
          {"z_dim", z_dim_},               {"hidden", hidden_},         {"activation", to_string(activation_)}};
}

ConvDiscriminator::ConvDiscriminator(DiscriminatorMode mode, const ArchitectureConfig& config, RandomSource& rng)
    : Discriminator(mode), config_(config) {
  config_.noise_layers.clear();
  config_.validate_conv();
  std::size_t in = mode == DiscriminatorMode::joint ? 2 : 1;
  for (std::size_t l = 0; l < config_.conv_widths.size(); ++l) {
    layers_.emplace_back(in, config_.filters[l], config_.conv_widths[l], rng);
    in = config_.filters[l];
  }
  out_ = Conv(in, 1, 1, rng);
}

Tensor ConvDiscriminator::logit_impl(const Tensor* x, const Tensor& z, bool frozen) const {
  if (z.rank() != 2) throw ad::ShapeError("conv discriminator expects [batch, frames], got " + ad::shape_str(z.shape()));
  const std::size_t batch = z.dim(0), frames = z.dim(1);
  Tensor h = ad::reshape(z, {batch, 1, frames});
  if (x) {
    if (x->shape() != z.shape()) throw ad::ShapeError("x " + ad::shape_str(x->shape()) + " vs z " + ad::shape_str(z.shape()));
    h = ad::concat({ad::reshape(*x, {batch, 1, frames}), h}, 1);
  }
  for (const auto& layer : layers_) h = activate(layer.forward(h, frozen), config_.activation);
  return ad::reshape(ad::sum(out_.forward(h, frozen), 2), {batch});
}

ParameterList ConvDiscriminator::parameters() const {
  ParameterList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("conv" + std::to_string(l), out);
  out_.collect("head", out);
  return out;
}

Json ConvDiscriminator::descriptor() const {
  return {{"type", "conv_discriminator"}, {"mode", to_string(mode())}, {"arch", config_.to_json()}};
}

}  // namespace iwadv::nn
