#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "iwadv/autodiff/random.hpp"
#include "iwadv/autodiff/tensor.hpp"

namespace iwadv::spike {

using ad::Tensor;

/// Calcium decay and fluorescence readout parameters. Times are in seconds.
struct BiophysParams {
  double tau = 0.7;
  double alpha = 1.0;
  double beta = 0.0;
  double sigma = 0.2;
  double dt = 1.0 / 60.0;
  double rate = 0.01;  // prior spike probability per frame

  void validate() const;
  double gamma() const { return 1.0 - dt / tau; }
  double frame_rate() const { return 1.0 / dt; }
};

struct SpikeTrain {
  std::vector<double> values;  // 0 or 1 per frame
  double rate_hz = 60.0;
};

struct FluorescenceTrace {
  std::vector<double> values;
  double rate_hz = 60.0;
  std::string neuron;
};

/// c_t = gamma * c_{t-1} + s_t with c_{-1} = 0, so a spike at t0 gives c_{t0+n} = gamma^n.
std::vector<double> simulate_calcium(const BiophysParams& params, const SpikeTrain& spikes);

/// f_t = alpha c_t + beta + sigma * eta_t, eta_t standard normal.
FluorescenceTrace simulate_trace(const BiophysParams& params, const SpikeTrain& spikes,
                                 ad::RandomSource& rng);

SpikeTrain sample_spike_prior(double rate, std::size_t length, ad::RandomSource& rng,
                              double rate_hz = 60.0);

/// Differentiable calcium recursion over rows. spikes: [batch, frames], gamma: scalar.
Tensor calcium(const Tensor& spikes, const Tensor& gamma);

/// Per-row sum_t log N(f_t; alpha c_t + beta, sigma^2). trace and spikes: [batch, frames];
/// gamma, alpha, beta, sigma: scalars. Result: [batch].
Tensor trace_log_likelihood(const Tensor& trace, const Tensor& spikes, const Tensor& gamma,
                            const Tensor& alpha, const Tensor& beta, const Tensor& sigma);

double trace_log_likelihood(const BiophysParams& params, const SpikeTrain& spikes,
                            const FluorescenceTrace& trace);

/// Sums per-frame values into bins of width 1/target_hz. Each frame goes to the
/// bin containing its left edge.
std::vector<double> downsample(const std::vector<double>& per_frame, double source_hz,
                               double target_hz);

}  // namespace iwadv::spike
