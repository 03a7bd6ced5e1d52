#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "iwadv/networks/encoders.hpp"

namespace iwadv::eval {

using ad::RandomSource;
using ad::Tensor;

struct LogLikEstimate {
  std::vector<double> per_datum;
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean over data; 0 for a single datum
  std::string method;  // "IWAE-<k>" or "AIS"
  std::size_t k = 0;
  std::size_t n_intermediate = 0, n_chains = 0;
  bool prior_proposal = false;
};

/// Per-datum log (1/k) sum_i p(x, z_i) / q(z_i | x). With `prior_proposal` the
/// prior replaces q (required for implicit encoders; higher variance).
LogLikEstimate iwae_loglik(const nn::ModelTriple& m, const Tensor& data, std::size_t k, RandomSource& rng,
                           bool prior_proposal = false);

/// Annealed importance sampling along p(z) p(x|z)^beta with a linear beta grid
/// of `n_intermediate` steps, one Gaussian random-walk Metropolis move per
/// temperature, chains combined per datum by log-mean-exp.
LogLikEstimate ais_loglik(const nn::ModelTriple& m, const Tensor& data, std::size_t n_intermediate,
                          std::size_t n_chains, RandomSource& rng, double proposal_std = 0.1);

struct MomentPair {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
};
/// Rows of `features` are samples.
MomentPair moments(const Eigen::MatrixXd& features);
double fid(const MomentPair& p, const MomentPair& q);
double fid(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q);
Eigen::MatrixXd to_matrix(const Tensor& t);  // [n, ...] -> n x rest
/// Fixed seeded Gaussian projection to `dim` features, scaled by 1/sqrt(in).
Eigen::MatrixXd random_projection(const Eigen::MatrixXd& features, std::size_t dim, std::uint64_t seed);

enum class Binning { count, presence };
Binning parse_binning(const std::string& name);

/// Pearson correlation between binned expected counts of `marginals` and binned
/// ground-truth spikes. Presence binning uses P(at least one spike) and 0/1 truth.
double spike_correlation(const std::vector<double>& marginals, const std::vector<double>& spikes, double source_hz = 60.0,
                         double eval_hz = 25.0, Binning binning = Binning::count);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
};
TTest paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

enum class TimingMode { parallel, sequential };
struct TimingReport {
  TimingMode mode = TimingMode::parallel;
  std::size_t frames = 0;
  std::size_t network_evaluations = 0;
  double seconds = 0.0;
  std::vector<double> logits;  // per-frame logits of the sampled train
  std::vector<double> sample;
  std::string hardware;
};

/// Posterior sampling over one trace [1, frames]. Parallel runs the encoder once
/// over all frames; sequential needs an autoregressive encoder and evaluates the
/// network from scratch for every frame.
TimingReport inference_timing(const nn::InferenceNetwork& q, const Tensor& trace, TimingMode mode, RandomSource& rng);

std::string hardware_note();

}  // namespace iwadv::eval
