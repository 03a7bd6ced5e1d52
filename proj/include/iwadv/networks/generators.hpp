#pragma once

#include "iwadv/networks/interfaces.hpp"
#include "iwadv/spikesim/biophys.hpp"

namespace iwadv::nn {

/// x | z ~ N(mlp(z), diag sigma^2) with a learned per-dimension log sigma.
class DenseGaussianDecoder : public Generator {
 public:
  DenseGaussianDecoder(const ArchitectureConfig& config, RandomSource& rng, double init_log_sigma = 0.0,
                       bool learn_sigma = true);
  Tensor sample(const Tensor& z, RandomSource& rng) const override;
  Shape data_shape(const Shape& latent) const override { return {latent.at(0), config_.input_dim}; }
  ParameterList parameters() const override;
  Json descriptor() const override;

  Tensor mean(const Tensor& z, bool frozen) const;
  std::vector<Dense>& layers() { return layers_; }
  Tensor& log_sigma() { return log_sigma_; }

 protected:
  Tensor log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const override;

 private:
  ArchitectureConfig config_;
  std::vector<Dense> layers_;
  Tensor log_sigma_;
  bool learn_sigma_;
};

/// x | z ~ prod Bernoulli(sigmoid(mlp(z))).
class DenseBernoulliDecoder : public Generator {
 public:
  DenseBernoulliDecoder(const ArchitectureConfig& config, RandomSource& rng);
  Tensor sample(const Tensor& z, RandomSource& rng) const override;
  Shape data_shape(const Shape& latent) const override { return {latent.at(0), config_.input_dim}; }
  ParameterList parameters() const override;
  Json descriptor() const override;

  Tensor logits(const Tensor& z, bool frozen) const;
  std::vector<Dense>& layers() { return layers_; }

 protected:
  Tensor log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const override;

 private:
  ArchitectureConfig config_;
  std::vector<Dense> layers_;
};

/// Calcium fluorescence model: z is a spike train [batch, frames], x the trace.
/// alpha, beta, log sigma and log tau are parameters; each can be frozen.
class BiophysicalGenerator : public Generator {
 public:
  struct Learnable {
    bool alpha = false, beta = false, sigma = false, tau = false;
  };
  BiophysicalGenerator(const spike::BiophysParams& params, Learnable learn);

  Tensor sample(const Tensor& z, RandomSource& rng) const override;
  Shape data_shape(const Shape& latent) const override { return latent; }
  ParameterList parameters() const override;
  Json descriptor() const override;

  spike::BiophysParams current() const;

 protected:
  Tensor log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const override;

 private:
  spike::BiophysParams base_;
  Learnable learn_;
  Tensor alpha_, beta_, log_sigma_, log_tau_;
};

/// p(x | z) from a table of logits [nz, nx]; x, z are [batch, 1] indices.
class TabularGenerator : public Generator {
 public:
  TabularGenerator(std::size_t nz, std::size_t nx, RandomSource& rng);
  explicit TabularGenerator(Tensor logits);
  Tensor sample(const Tensor& z, RandomSource& rng) const override;
  Shape data_shape(const Shape& latent) const override { return {latent.at(0), 1}; }
  ParameterList parameters() const override { return {{"logits", logits_}}; }
  Json descriptor() const override;
  Tensor log_table(bool frozen) const;

 protected:
  Tensor log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const override;

 private:
  Tensor logits_;
};

class StandardNormalPrior : public LatentPrior {
 public:
  Tensor sample(const Shape& shape, RandomSource& rng) const override { return rng.gaussian(shape); }
  Tensor log_density(const Tensor& z) const override;
  Json descriptor() const override { return {{"type", "standard_normal"}}; }
};

/// Independent Bernoulli(rate) per coordinate.
class BernoulliPrior : public LatentPrior {
 public:
  explicit BernoulliPrior(double rate);
  Tensor sample(const Shape& shape, RandomSource& rng) const override { return rng.bernoulli(shape, rate_); }
  Tensor log_density(const Tensor& z) const override;
  Json descriptor() const override { return {{"type", "bernoulli"}, {"rate", rate_}}; }
  double rate() const { return rate_; }

 private:
  double rate_;
};

/// Categorical prior over {0, ..., n-1}; z is [batch, 1].
class CategoricalPrior : public LatentPrior {
 public:
  explicit CategoricalPrior(std::vector<double> probs);
  Tensor sample(const Shape& shape, RandomSource& rng) const override;
  Tensor log_density(const Tensor& z) const override;
  Json descriptor() const override { return {{"type", "categorical"}, {"probs", probs_}}; }

 private:
  std::vector<double> probs_;
};

}  // namespace iwadv::nn
