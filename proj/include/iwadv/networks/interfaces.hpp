#pragma once

#include <functional>
#include <memory>
#include <string>

#include "iwadv/networks/core.hpp"

namespace iwadv::nn {

enum class Head { gaussian, bernoulli, implicit, categorical };
Head parse_head(const std::string& name);
std::string to_string(Head h);

/// Noise consumed by one posterior draw. `injected` feeds hidden layers,
/// `head` feeds the output distribution (Gaussian eps or uniform u).
struct PosteriorNoise {
  Tensor injected;
  Tensor head;
};

struct PosteriorSample {
  Tensor z;       // latent sample, differentiable w.r.t. phi where the head allows it
  Tensor log_q;   // [batch]; defined only for tractable networks
  Tensor probs;   // Bernoulli heads
  Tensor logits;  // Bernoulli heads
  Tensor mean;    // Gaussian heads
  Tensor log_std;
  Tensor hard;    // discrete heads: the sample with no gradient path
};

/// q_phi(z | x) as a differentiable map of (x, noise).
class InferenceNetwork : public Module {
 public:
  virtual Head head() const = 0;
  virtual bool tractable() const = 0;
  virtual Shape latent_shape(const Tensor& x) const = 0;

  virtual PosteriorNoise draw_noise(const Tensor& x, RandomSource& rng) const = 0;
  virtual PosteriorSample sample(const Tensor& x, const PosteriorNoise& noise,
                                 bool frozen = false) const = 0;
  PosteriorSample sample(const Tensor& x, RandomSource& rng, bool frozen = false) const {
    return sample(x, draw_noise(x, rng), frozen);
  }

  /// log q(z | x) per row, with z held fixed (the score-function form).
  virtual Tensor log_density(const Tensor& x, const Tensor& z, bool frozen = false) const;

  /// Per-row KL(q(z|x) || prior) in closed form, where the pair admits one.
  virtual Tensor analytic_kl(const Tensor& x, const Json& prior, bool frozen = false) const;
};

/// p_theta(x | z).
class Generator : public Module {
 public:
  /// Per-row log-likelihood; throws DomainError naming the row if non-finite.
  Tensor log_likelihood(const Tensor& x, const Tensor& z, bool frozen = false) const;
  virtual Tensor sample(const Tensor& z, RandomSource& rng) const = 0;
  /// Input shape for a batch of latents.
  virtual Shape data_shape(const Shape& latent) const = 0;

 protected:
  virtual Tensor log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const = 0;
};

class LatentPrior {
 public:
  virtual ~LatentPrior() = default;
  virtual Tensor sample(const Shape& shape, RandomSource& rng) const = 0;
  virtual Tensor log_density(const Tensor& z) const = 0;  // [batch]
  virtual Json descriptor() const = 0;
};

enum class DiscriminatorMode { joint, latent_only };
std::string to_string(DiscriminatorMode m);
DiscriminatorMode parse_discriminator_mode(const std::string& name);

/// T_psi(x, z) or T_psi(z): one unconstrained logit per row.
class Discriminator : public Module {
 public:
  explicit Discriminator(DiscriminatorMode mode) : mode_(mode) {}
  DiscriminatorMode mode() const { return mode_; }

  /// `x` must be null in latent-only mode and non-null in joint mode.
  Tensor logit(const Tensor* x, const Tensor& z, bool frozen = false) const;

 protected:
  virtual Tensor logit_impl(const Tensor* x, const Tensor& z, bool frozen) const = 0;

 private:
  DiscriminatorMode mode_;
};

struct ModelTriple {
  std::shared_ptr<InferenceNetwork> encoder;
  std::shared_ptr<Generator> generator;
  std::shared_ptr<LatentPrior> prior;
  std::shared_ptr<Discriminator> discriminator;  // null for VAE / IWAE / VIMCO

  ParameterList parameters() const;  // prefixed "phi.", "theta.", "psi."
  Json descriptor() const;
};

}  // namespace iwadv::nn
