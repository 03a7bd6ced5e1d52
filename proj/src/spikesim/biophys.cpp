#include "iwadv/spikesim/biophys.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "iwadv/autodiff/ops.hpp"

namespace iwadv::spike {

void BiophysParams::validate() const {
  if (!(tau > 0)) throw std::invalid_argument("tau must be positive");
  if (!(dt > 0)) throw std::invalid_argument("dt must be positive");
  if (!(dt < tau)) {
    throw std::invalid_argument("dt (" + std::to_string(dt) + ") must be below tau (" +
                                std::to_string(tau) + ") for a stable Euler update");
  }
  if (!(sigma >= 0)) throw std::invalid_argument("sigma must be non-negative");
  if (!(rate >= 0 && rate <= 1)) throw std::invalid_argument("spike rate must lie in [0, 1]");
}

std::vector<double> simulate_calcium(const BiophysParams& params, const SpikeTrain& spikes) {
  params.validate();
  const double g = params.gamma();
  std::vector<double> c(spikes.values.size());
  double prev = 0.0;
  for (std::size_t t = 0; t < c.size(); ++t) {
    prev = g * prev + spikes.values[t];
    c[t] = prev;
  }
  return c;
}

FluorescenceTrace simulate_trace(const BiophysParams& params, const SpikeTrain& spikes,
                                 ad::RandomSource& rng) {
  auto c = simulate_calcium(params, spikes);
  FluorescenceTrace f;
  f.rate_hz = spikes.rate_hz;
  f.values.resize(c.size());
  for (std::size_t t = 0; t < c.size(); ++t) {
    double noise = params.sigma > 0 ? params.sigma * rng.gaussian() : 0.0;
    f.values[t] = params.alpha * c[t] + params.beta + noise;
  }
  return f;
}

SpikeTrain sample_spike_prior(double rate, std::size_t length, ad::RandomSource& rng,
                              double rate_hz) {
  if (!(rate >= 0 && rate <= 1)) throw std::invalid_argument("spike rate must lie in [0, 1]");
  SpikeTrain s;
  s.rate_hz = rate_hz;
  s.values.resize(length);
  for (auto& v : s.values) v = rng.uniform() < rate ? 1.0 : 0.0;
  return s;
}

Tensor calcium(const Tensor& spikes, const Tensor& gamma) {
  if (spikes.rank() != 2) throw ad::ShapeError("calcium expects [batch, frames], got " + ad::shape_str(spikes.shape()));
  if (gamma.size() != 1) throw ad::ShapeError("calcium decay must be a scalar");
  const std::size_t batch = spikes.dim(0), frames = spikes.dim(1);
  const double g = gamma.item();
  auto sv = spikes.values();
  std::vector<double> c(sv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    double prev = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      prev = g * prev + sv[b * frames + t];
      c[b * frames + t] = prev;
    }
  }
  if (!ad::should_record({&spikes, &gamma})) return Tensor(spikes.shape(), std::move(c));
  auto sn = spikes.node(), gn = gamma.node();
  Tensor out(spikes.shape(), std::move(c));
  auto on = out.node();
  ad::active_tape()->record(on, {sn, gn}, [sn, gn, o = on.get(), batch, frames](std::span<const double> grad) {
    const double g = gn->value[0];
    std::span<double> gs, gg;
    if (sn->requires_grad) gs = sn->grad_buffer();
    if (gn->requires_grad) gg = gn->grad_buffer();
    double dgamma = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      double adj = 0.0;
      for (std::size_t t = frames; t-- > 0;) {
        const std::size_t i = b * frames + t;
        adj = grad[i] + g * adj;
        if (!gs.empty()) gs[i] += adj;
        if (t > 0) dgamma += adj * o->value[i - 1];
      }
    }
    if (!gg.empty()) gg[0] += dgamma;
  });
  return out;
}

Tensor trace_log_likelihood(const Tensor& trace, const Tensor& spikes, const Tensor& gamma,
                            const Tensor& alpha, const Tensor& beta, const Tensor& sigma) {
  if (trace.shape() != spikes.shape()) {
    throw ad::ShapeError("trace " + ad::shape_str(trace.shape()) + " and spikes " +
                         ad::shape_str(spikes.shape()) + " differ in shape");
  }
  const double frames = static_cast<double>(trace.dim(1));
  auto resid = ad::sub(trace, ad::add(ad::mul(alpha, calcium(spikes, gamma)), beta));
  auto sq = ad::sum(ad::square(resid), 1);
  if (!(sigma.item() > 0)) {
    for (double r : resid.values()) {
      if (r != 0.0) throw ad::DomainError("trace likelihood with sigma = 0 and a nonzero residual");
    }
    throw ad::DomainError("trace likelihood with sigma = 0 is degenerate");
  }
  auto norm = ad::mul(ad::add(ad::log(sigma), 0.5 * std::log(2 * std::numbers::pi)), -frames);
  return ad::sub(norm, ad::div(sq, ad::mul(ad::square(sigma), 2.0)));
}

double trace_log_likelihood(const BiophysParams& params, const SpikeTrain& spikes,
                            const FluorescenceTrace& trace) {
  params.validate();
  if (spikes.values.size() != trace.values.size()) {
    throw std::invalid_argument("spike train has " + std::to_string(spikes.values.size()) +
                                " frames but the trace has " + std::to_string(trace.values.size()));
  }
  const std::size_t n = trace.values.size();
  ad::NoGradScope off;
  return trace_log_likelihood(Tensor({1, n}, trace.values), Tensor({1, n}, spikes.values),
                              Tensor::scalar(params.gamma()), Tensor::scalar(params.alpha),
                              Tensor::scalar(params.beta), Tensor::scalar(params.sigma))
      .item();
}

std::vector<double> downsample(const std::vector<double>& per_frame, double source_hz,
                               double target_hz) {
  if (per_frame.empty()) throw std::invalid_argument("downsample of an empty series");
  if (!(target_hz > 0 && target_hz <= source_hz)) {
    throw std::invalid_argument("target rate must be positive and at most the source rate");
  }
  auto bin_of = [&](std::size_t i) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(i) * target_hz / source_hz + 1e-9));
  };
  std::vector<double> bins(bin_of(per_frame.size() - 1) + 1, 0.0);
  for (std::size_t i = 0; i < per_frame.size(); ++i) bins[bin_of(i)] += per_frame[i];
  return bins;
}

}  // namespace iwadv::spike
