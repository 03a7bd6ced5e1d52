#pragma once

#include <string>
#include <vector>

#include "iwadv/objectives/objectives.hpp"
#include "iwadv/spikesim/biophys.hpp"
#include "iwadv/trainer/trainer.hpp"

// Desk-scale experiment pipelines shared by the CLI and the acceptance runner.
namespace iwadv::exp {

using ad::RandomSource;
using ad::Tensor;

// ---------------------------------------------------------------- spikes

struct SyntheticNeuron {
  spike::SpikeTrain spikes;
  spike::FluorescenceTrace trace;
};
SyntheticNeuron simulate_neuron(const spike::BiophysParams& params, std::size_t frames, RandomSource& rng,
                                const std::string& name = "synthetic");

/// Non-overlapping rows of `length` frames, [rows, length]; a short tail is dropped.
Tensor segment_rows(const std::vector<double>& trace, std::size_t length);

struct SpikeSetup {
  spike::BiophysParams neuron;
  std::size_t frames = 36000;  // 10 min at 60 Hz, per neuron
  std::size_t segment = 60;  // 1 s at 60 Hz
  std::vector<std::size_t> conv_widths{15, 9};
  std::size_t filters = 16;
  std::vector<std::size_t> noise_layers{0, 1};  // adversarial families only
  std::vector<std::size_t> disc_widths{11, 11};
  std::size_t disc_filters = 16;
  std::size_t ar_window = 10;
  std::size_t k = 2;
  std::size_t steps = 1500;
  std::size_t batch = 80;
  double lr = 3e-3;      // theta and phi
  double lr_psi = 3e-3;
  std::size_t disc_steps = 1;
  std::size_t posterior_samples = 20;  // averaged into the marginals
  double eval_hz = 25.0;
};

/// Encoder, fixed biophysical generator and Bernoulli prior for `family`:
/// factorized conv encoder (noise-injected for adversarial families, with a
/// conv discriminator) or the autoregressive encoder for vimco-corr. The
/// encoder's output bias starts at the prior log-odds.
nn::ModelTriple spike_model(obj::Family family, const SpikeSetup& setup, RandomSource& rng);

/// Trainer settings for a spike run. The factorized ELBO baseline uses the
/// closed-form KL.
train::TrainingConfig spike_training_config(obj::Family family, const SpikeSetup& setup, std::uint64_t seed);

/// P(s_t = 1 | x) averaged over `samples` posterior draws on one trace.
std::vector<double> posterior_marginals(const nn::InferenceNetwork& q, const std::vector<double>& trace,
                                        std::size_t samples, RandomSource& rng);

struct SpikeRun {
  std::string family;
  std::uint64_t seed = 0;
  double correlation = 0;  // held-out neuron, at eval_hz
  double final_bound = 0;
  double seconds = 0;
  std::string trajectory;
};

/// Simulates a training and a held-out neuron from `seed`, trains, and scores
/// the held-out marginals.
SpikeRun run_spike_inference(obj::Family family, const SpikeSetup& setup, std::uint64_t seed);

// ---------------------------------------------------------------- 8x8 patterns

/// 8x8 "bars" images, [n, 64]: each of the 8 rows and 8 columns is lit with
/// probability 1/8, then every pixel flips with probability `flip`.
Tensor binary_patterns(std::size_t n, RandomSource& rng, double flip = 0.02);

struct PatternSetup {
  std::size_t latent = 8;
  std::vector<std::size_t> hidden{64};
  std::vector<std::size_t> disc_hidden{64, 64};
  std::size_t train_size = 2000, test_size = 500;
  std::size_t k = 8;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 1e-3, lr_psi = 1e-3;
  std::size_t eval_k = 64;
};

/// Gaussian-head dense encoder, Bernoulli decoder, N(0, I) prior and a joint
/// dense discriminator for adversarial families.
nn::ModelTriple pattern_model(obj::Family family, const PatternSetup& setup, RandomSource& rng);

struct PatternRun {
  std::string family;
  std::uint64_t seed = 0;
  double test_bound = 0;  // mean IWAE-eval_k bound on the test set
  double test_se = 0;
  double seconds = 0;
};
PatternRun run_patterns(obj::Family family, const PatternSetup& setup, std::uint64_t seed);

// ---------------------------------------------------------------- density ratio

struct RatioFit {
  std::size_t steps = 0;
  double max_abs_error = 0;  // over the evaluation grid
  std::vector<double> grid, fitted, target;
  double seconds = 0;
};

/// Trains a latent-only dense discriminator to separate q = N(q_mean, 1) from
/// p = N(0, 1) with the GAN objective (Adam, learning rate decayed linearly to
/// zero), then compares T with the exact log ratio q_mean * z - q_mean^2 / 2
/// on `grid_points` points of [-3, 3].
RatioFit fit_gaussian_ratio(std::size_t steps, std::uint64_t seed, double q_mean = 1.0, std::size_t batch = 512,
                            double lr = 3e-3, std::size_t grid_points = 61);

}  // namespace iwadv::exp
