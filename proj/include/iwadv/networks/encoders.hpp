#pragma once

#include "iwadv/networks/interfaces.hpp"

namespace iwadv::nn {

/// MLP encoder over [batch, input_dim] data. With a Gaussian head and no noise
/// injection it is the usual reparameterized encoder z = mu(x) + sigma(x) * eps.
/// Injection concatenates fresh Gaussian noise to the input of the listed layers
/// (layer 0 is the data layer), which makes q implicit.
class DenseEncoder : public InferenceNetwork {
 public:
  DenseEncoder(const ArchitectureConfig& config, Head head, RandomSource& rng);

  Head head() const override { return head_; }
  bool tractable() const override;
  Shape latent_shape(const Tensor& x) const override;
  PosteriorNoise draw_noise(const Tensor& x, RandomSource& rng) const override;
  using InferenceNetwork::sample;
  PosteriorSample sample(const Tensor& x, const PosteriorNoise& noise, bool frozen = false) const override;
  Tensor log_density(const Tensor& x, const Tensor& z, bool frozen = false) const override;
  Tensor analytic_kl(const Tensor& x, const Json& prior, bool frozen = false) const override;
  ParameterList parameters() const override;
  Json descriptor() const override;

  const ArchitectureConfig& config() const { return config_; }
  std::vector<Dense>& layers() { return layers_; }

 private:
  Tensor trunk(const Tensor& x, const Tensor& injected, bool frozen) const;

  ArchitectureConfig config_;
  Head head_;
  std::vector<Dense> layers_;
};

/// Convolutional spike encoder: fluorescence [batch, frames] -> per-frame spike
/// probabilities. Noise channels are concatenated to the inputs of the listed
/// layers. The sample is a hard 0/1 train whose gradient is routed to the
/// probabilities (straight-through).
class ConvSpikeEncoder : public InferenceNetwork {
 public:
  ConvSpikeEncoder(const ArchitectureConfig& config, RandomSource& rng);

  Head head() const override { return Head::bernoulli; }
  bool tractable() const override { return config_.noise_layers.empty(); }
  Shape latent_shape(const Tensor& x) const override { return x.shape(); }
  PosteriorNoise draw_noise(const Tensor& x, RandomSource& rng) const override;
  using InferenceNetwork::sample;
  PosteriorSample sample(const Tensor& x, const PosteriorNoise& noise, bool frozen = false) const override;
  Tensor log_density(const Tensor& x, const Tensor& z, bool frozen = false) const override;
  Tensor analytic_kl(const Tensor& x, const Json& prior, bool frozen = false) const override;
  ParameterList parameters() const override;
  Json descriptor() const override;

  /// Per-frame logits [batch, frames].
  Tensor logits(const Tensor& x, const Tensor& injected, bool frozen) const;
  const ArchitectureConfig& config() const { return config_; }

 private:
  ArchitectureConfig config_;
  std::vector<Conv> layers_;
  Conv out_;
};

/// Spike encoder whose frame-t probability also depends on the previous
/// `ar_window` samples: logit_t = f_t(x) + sum_j a_j s_{t-j}. Sampling is
/// sequential; log q of a given train is one teacher-forced pass.
class AutoregressiveSpikeEncoder : public InferenceNetwork {
 public:
  AutoregressiveSpikeEncoder(const ArchitectureConfig& config, RandomSource& rng);

  Head head() const override { return Head::bernoulli; }
  bool tractable() const override { return true; }
  Shape latent_shape(const Tensor& x) const override { return x.shape(); }
  PosteriorNoise draw_noise(const Tensor& x, RandomSource& rng) const override;
  using InferenceNetwork::sample;
  PosteriorSample sample(const Tensor& x, const PosteriorNoise& noise, bool frozen = false) const override;
  Tensor log_density(const Tensor& x, const Tensor& z, bool frozen = false) const override;
  ParameterList parameters() const override;
  Json descriptor() const override;

  /// Data-dependent logits f(x), [batch, frames].
  Tensor base_logits(const Tensor& x, bool frozen) const;
  /// Frames of context the data network sees on each side of a frame.
  std::size_t context_left() const;
  std::size_t context_right() const;
  /// f_t evaluated from scratch on the window x[t - left, t + right] of one
  /// trace row, i.e. one full network evaluation for a single frame. Matches
  /// base_logits at every frame, edges included.
  double frame_logit(const double* x_row, std::size_t frames, std::size_t t) const;
  /// sum_j a_j s_{t-1-j} over the frames of `s_row` before t.
  double ar_term(const double* s_row, std::size_t t) const;
  const ArchitectureConfig& config() const { return config_; }

 private:
  Tensor teacher_forced_logits(const Tensor& x, const Tensor& s, bool frozen) const;

  ArchitectureConfig config_;
  std::vector<Conv> layers_;
  Conv out_;
  Tensor ar_weight_;  // [1, 1, ar_window]; entry m multiplies s_{t - ar_window + m}
};

/// Categorical q(z | x) over finite alphabets; x and z are [batch, 1] indices.
class TabularEncoder : public InferenceNetwork {
 public:
  TabularEncoder(std::size_t nx, std::size_t nz, RandomSource& rng);
  explicit TabularEncoder(Tensor logits);

  Head head() const override { return Head::categorical; }
  bool tractable() const override { return true; }
  Shape latent_shape(const Tensor& x) const override { return {x.dim(0), 1}; }
  PosteriorNoise draw_noise(const Tensor& x, RandomSource& rng) const override;
  using InferenceNetwork::sample;
  PosteriorSample sample(const Tensor& x, const PosteriorNoise& noise, bool frozen = false) const override;
  Tensor log_density(const Tensor& x, const Tensor& z, bool frozen = false) const override;
  ParameterList parameters() const override;
  Json descriptor() const override;

  Tensor log_table(bool frozen) const;  // [nx, nz], rows normalized

 private:
  Tensor logits_;
};

std::vector<std::size_t> as_indices(const Tensor& t, std::size_t bound, const char* what);

}  // namespace iwadv::nn
