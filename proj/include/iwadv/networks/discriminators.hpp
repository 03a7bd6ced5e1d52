#pragma once

#include <functional>

#include "iwadv/networks/interfaces.hpp"

namespace iwadv::nn {

/// MLP over concat(x, z) (joint) or z alone (latent-only).
class DenseDiscriminator : public Discriminator {
 public:
  DenseDiscriminator(DiscriminatorMode mode, std::size_t x_dim, std::size_t z_dim,
                     std::vector<std::size_t> hidden, Activation activation, RandomSource& rng);
  ParameterList parameters() const override;
  Json descriptor() const override;
  std::vector<Dense>& layers() { return layers_; }

 protected:
  Tensor logit_impl(const Tensor* x, const Tensor& z, bool frozen) const override;

 private:
  std::size_t x_dim_, z_dim_;
  std::vector<std::size_t> hidden_;
  Activation activation_;
  std::vector<Dense> layers_;
};

/// Convolutional discriminator over time series: channels (x, z) or z alone,
/// per-frame outputs summed over frames.
class ConvDiscriminator : public Discriminator {
 public:
  ConvDiscriminator(DiscriminatorMode mode, const ArchitectureConfig& config, RandomSource& rng);
  ParameterList parameters() const override;
  Json descriptor() const override;

 protected:
  Tensor logit_impl(const Tensor* x, const Tensor& z, bool frozen) const override;

 private:
  ArchitectureConfig config_;
  std::vector<Conv> layers_;
  Conv out_;
};

/// A fixed function in place of a trained network, e.g. an analytic log ratio.
class FunctionDiscriminator : public Discriminator {
 public:
  using Fn = std::function<Tensor(const Tensor* x, const Tensor& z)>;
  FunctionDiscriminator(DiscriminatorMode mode, Fn fn) : Discriminator(mode), fn_(std::move(fn)) {}
  ParameterList parameters() const override { return {}; }
  Json descriptor() const override { return {{"type", "function"}, {"mode", to_string(mode())}}; }

 protected:
  Tensor logit_impl(const Tensor* x, const Tensor& z, bool) const override { return fn_(x, z); }

 private:
  Fn fn_;
};

}  // namespace iwadv::nn
