#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "iwadv/networks/interfaces.hpp"

namespace iwadv::obj {

using ad::RandomSource;
using ad::Tensor;

enum class Family { vae, iwae, avb, iw_avb, aae, iw_aae, vimco_fact, vimco_corr };
enum class DiscriminatorUse { none, joint, latent_only };

Family parse_family(const std::string& name);  // "vae", "iw-avb", "vimco-corr", ...
std::string to_string(Family f);
DiscriminatorUse required_discriminator(Family f);
bool is_adversarial(Family f);
bool is_importance_weighted(Family f);

struct ObjectiveSpec {
  Family family = Family::vae;
  std::size_t k = 1;
  DiscriminatorUse discriminator = DiscriminatorUse::none;
  bool analytic_kl = false;        // VAE: closed-form KL instead of the sampled log q - log p
  bool single_sample_phi = false;  // phi loss from the first of the k samples only
  bool phi_through_iw = false;     // phi trained through the importance-weighted loss instead
  bool disc_uses_all_k = true;     // joint psi update on all k posterior samples (else one)

  static ObjectiveSpec make(Family f, std::size_t k);
  /// Throws std::invalid_argument when the family/discriminator pairing or k is invalid.
  void validate() const;
};

/// Raw log-weights and their softmax.
struct ImportanceWeights {
  std::vector<double> log_w;
  std::vector<double> normalized;
};
ImportanceWeights importance_weights(const std::vector<double>& log_w);

/// k posterior draws per datum. Row b*k + i of x_rep / sample.z is draw i of datum b.
struct PosteriorDraw {
  std::size_t batch = 0, k = 0;
  Tensor x, x_rep;
  nn::PosteriorSample sample;
};

PosteriorDraw draw_posterior(const nn::InferenceNetwork& q, const Tensor& x, std::size_t k, RandomSource& rng,
                             bool frozen = false);

/// [batch*k] -> [batch, k]
Tensor by_datum(const Tensor& flat, std::size_t batch, std::size_t k);

/// log p(x|z) + log p(z) - log q(z|x) per draw, [batch, k]. z enters as drawn
/// (reparameterized path intact).
Tensor log_weights(const nn::ModelTriple& m, const PosteriorDraw& d);

// Per-datum terms, [batch]. Each is a quantity to maximize.
Tensor elbo_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool analytic_kl = false);
Tensor iwae_terms(const nn::ModelTriple& m, const PosteriorDraw& d);

/// log (1/k) sum_i exp(log p(x|z_i) - T(x, z_i)) with T frozen. z is detached
/// unless `phi_through_iw`, so by default only theta receives gradient.
Tensor iwavb_generator_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool phi_through_iw = false);
/// (1/k) sum_i [log p(x|z_i) - T(x, z_i)] with theta and T frozen; gradient reaches phi through z.
Tensor avb_inference_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool single_sample = false);
/// Latent-only counterparts, T(z).
Tensor iwaae_generator_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool phi_through_iw = false);
Tensor aae_inference_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool single_sample = false);

/// E_q[log sigmoid T] + E_p[log(1 - sigmoid T)] over the two sample sets.
/// x pointers are null for latent-only discriminators. Gradient reaches psi only.
Tensor discriminator_objective(const nn::Discriminator& t, const Tensor* q_x, const Tensor& q_z, const Tensor* p_x,
                               const Tensor& p_z);

// Scalar (batch-mean) conveniences drawing fresh samples.
Tensor elbo(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng, bool analytic_kl = false);
Tensor iwae_bound(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng);
Tensor iwavb_generator_loss(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng);
Tensor avb_inference_loss(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng);
Tensor iwaae_generator_loss(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng);
Tensor aae_inference_loss(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng);

/// VIMCO for discrete tractable posteriors: a surrogate whose gradient is the
/// multi-sample score-function estimator with leave-one-out control variates
/// for phi and the importance-weighted gradient for theta.
struct VimcoTerms {
  Tensor surrogate;  // scalar, batch mean
  Tensor bound;      // [batch] multi-sample bound values (no gradient meaning)
};
VimcoTerms vimco_terms(const nn::ModelTriple& m, const PosteriorDraw& d);

using GradientSet = std::map<std::string, std::vector<double>>;
/// Gradients of the batch-mean VIMCO surrogate by parameter name. Requires k >= 2.
GradientSet vimco_gradient(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng);

/// Gradient of the batch-mean IWAE bound by parameter name.
GradientSet iwae_gradient(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng);

struct SNREstimate {
  std::string label;                          // parameter-name prefix, e.g. "theta." or "phi."
  std::vector<std::vector<double>> samples;   // [repeat][coordinate]
  std::vector<double> ratio;                  // |mean / std| per coordinate, +inf where std = 0
  double median = 0.0;                        // over finite ratios; +inf if none are finite
};

/// SNR of the IWAE gradient estimator for parameters whose name starts with `label`.
SNREstimate estimate_snr(const nn::ModelTriple& m, const Tensor& x, std::size_t k, std::size_t n_repeats,
                         const std::string& label, RandomSource& rng);

/// The (theta, phi) objective of one training step, maximized, plus the value
/// of the family's main bound for monitoring.
struct StepObjectives {
  Tensor model;  // scalar
  double bound = std::numeric_limits<double>::quiet_NaN();
};
StepObjectives step_objectives(const nn::ModelTriple& m, const ObjectiveSpec& spec, const Tensor& x,
                               RandomSource& rng);
/// The psi objective on fresh posterior and prior samples (adversarial families).
Tensor discriminator_step_objective(const nn::ModelTriple& m, const ObjectiveSpec& spec, const Tensor& x,
                                    RandomSource& rng);

}  // namespace iwadv::obj
