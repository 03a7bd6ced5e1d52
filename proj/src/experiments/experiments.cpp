#include "iwadv/experiments/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "iwadv/evaluation/metrics.hpp"
#include "iwadv/networks/discriminators.hpp"
#include "iwadv/networks/encoders.hpp"
#include "iwadv/networks/generators.hpp"

namespace iwadv::exp {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nn::DiscriminatorMode mode_for(obj::Family f) {
  return obj::required_discriminator(f) == obj::DiscriminatorUse::joint ? nn::DiscriminatorMode::joint
                                                                        : nn::DiscriminatorMode::latent_only;
}

void set_bias(const nn::ParameterList& params, const std::string& name, double value) {
  for (const auto& p : params) {
    if (p.name != name) continue;
    Tensor t = p.tensor;
    for (auto& v : t.mutable_values()) v = value;
    return;
  }
  throw std::logic_error("no parameter named " + name);
}

}  // namespace

SyntheticNeuron simulate_neuron(const spike::BiophysParams& params, std::size_t frames, RandomSource& rng,
                                const std::string& name) {
  params.validate();
  SyntheticNeuron n;
  n.spikes = spike::sample_spike_prior(params.rate, frames, rng, params.frame_rate());
  n.trace = spike::simulate_trace(params, n.spikes, rng);
  n.trace.neuron = name;
  return n;
}

Tensor segment_rows(const std::vector<double>& trace, std::size_t length) {
  if (length == 0) throw std::invalid_argument("segment length must be positive");
  const std::size_t rows = trace.size() / length;
  if (rows == 0) {
    throw std::invalid_argument("trace of " + std::to_string(trace.size()) + " frames is shorter than one segment of " +
                                std::to_string(length));
  }
  return Tensor({rows, length}, std::vector<double>(trace.begin(), trace.begin() + rows * length));
}

nn::ModelTriple spike_model(obj::Family family, const SpikeSetup& setup, RandomSource& rng) {
  nn::ArchitectureConfig a;
  a.conv_widths = setup.conv_widths;
  a.filters.assign(setup.conv_widths.size(), setup.filters);
  a.ar_window = setup.ar_window;
  const bool adversarial = obj::is_adversarial(family);
  if (adversarial) a.noise_layers = setup.noise_layers;

  nn::ModelTriple m;
  const double prior_logit = std::log(setup.neuron.rate / (1 - setup.neuron.rate));
  if (family == obj::Family::vimco_corr) {
    auto q = std::make_shared<nn::AutoregressiveSpikeEncoder>(a, rng);
    set_bias(q->parameters(), "head.bias", prior_logit);
    m.encoder = q;
  } else {
    auto q = std::make_shared<nn::ConvSpikeEncoder>(a, rng);
    set_bias(q->parameters(), "head.bias", prior_logit);
    m.encoder = q;
  }
  m.generator = std::make_shared<nn::BiophysicalGenerator>(setup.neuron, nn::BiophysicalGenerator::Learnable{});
  m.prior = std::make_shared<nn::BernoulliPrior>(setup.neuron.rate);
  if (adversarial) {
    nn::ArchitectureConfig d;
    d.conv_widths = setup.disc_widths;
    d.filters.assign(setup.disc_widths.size(), setup.disc_filters);
    m.discriminator = std::make_shared<nn::ConvDiscriminator>(mode_for(family), d, rng);
  }
  return m;
}

train::TrainingConfig spike_training_config(obj::Family family, const SpikeSetup& setup, std::uint64_t seed) {
  train::TrainingConfig c;
  const std::size_t k = family == obj::Family::vae ? 1 : setup.k;
  c.objective = obj::ObjectiveSpec::make(family, k);
  if (family == obj::Family::vae) c.objective.analytic_kl = true;
  c.batch_size = setup.batch;
  c.max_steps = setup.steps;
  c.lr_theta = c.lr_phi = setup.lr;
  c.lr_psi = setup.lr_psi;
  c.disc_steps = setup.disc_steps;
  c.seed = seed;
  return c;
}

std::vector<double> posterior_marginals(const nn::InferenceNetwork& q, const std::vector<double>& trace,
                                        std::size_t samples, RandomSource& rng) {
  if (samples == 0) throw std::invalid_argument("posterior_marginals needs at least one sample");
  if (trace.empty()) throw std::invalid_argument("posterior_marginals: empty trace");
  ad::NoGradScope off;
  const std::size_t n = trace.size();
  Tensor x({1, n}, trace);
  std::vector<double> marg(n, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    auto draw = q.sample(x, rng, true);
    const Tensor probs = draw.probs;
    auto p = probs.values();
    for (std::size_t t = 0; t < n; ++t) marg[t] += p[t] / static_cast<double>(samples);
  }
  return marg;
}

SpikeRun run_spike_inference(obj::Family family, const SpikeSetup& setup, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RandomSource rng(seed);
  auto train_neuron = simulate_neuron(setup.neuron, setup.frames, rng, "train");
  auto test_neuron = simulate_neuron(setup.neuron, setup.frames, rng, "test");
  auto model = spike_model(family, setup, rng);
  auto config = spike_training_config(family, setup, seed);
  auto state = train::train(segment_rows(train_neuron.trace.values, setup.segment), config, model);

  SpikeRun r;
  r.family = obj::to_string(family);
  r.seed = seed;
  r.final_bound = state.history.empty() ? 0.0 : state.history.back().bound;
  r.trajectory = train::trajectory_text(state);
  auto marg = posterior_marginals(*state.model.encoder, test_neuron.trace.values, setup.posterior_samples, rng);
  r.correlation =
      eval::spike_correlation(marg, test_neuron.spikes.values, setup.neuron.frame_rate(), setup.eval_hz);
  r.seconds = seconds_since(t0);
  return r;
}

Tensor binary_patterns(std::size_t n, RandomSource& rng, double flip) {
  if (!(flip >= 0 && flip <= 0.5)) throw std::invalid_argument("pattern flip probability must lie in [0, 0.5]");
  std::vector<double> v(n * 64, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* img = v.data() + i * 64;
    for (std::size_t r = 0; r < 8; ++r) {
      if (rng.bernoulli(0.125)) {
        for (std::size_t c = 0; c < 8; ++c) img[r * 8 + c] = 1;
      }
    }
    for (std::size_t c = 0; c < 8; ++c) {
      if (rng.bernoulli(0.125)) {
        for (std::size_t r = 0; r < 8; ++r) img[r * 8 + c] = 1;
      }
    }
    for (std::size_t p = 0; p < 64; ++p) {
      if (rng.bernoulli(flip)) img[p] = 1 - img[p];
    }
  }
  return Tensor({n, 64}, std::move(v));
}

nn::ModelTriple pattern_model(obj::Family family, const PatternSetup& setup, RandomSource& rng) {
  nn::ArchitectureConfig a;
  a.input_dim = 64;
  a.latent_dim = setup.latent;
  a.hidden = setup.hidden;
  a.activation = nn::Activation::tanh;
  nn::ModelTriple m;
  m.encoder = std::make_shared<nn::DenseEncoder>(a, nn::Head::gaussian, rng);
  m.generator = std::make_shared<nn::DenseBernoulliDecoder>(a, rng);
  m.prior = std::make_shared<nn::StandardNormalPrior>();
  if (obj::is_adversarial(family)) {
    m.discriminator = std::make_shared<nn::DenseDiscriminator>(mode_for(family), 64, setup.latent,
                                                               setup.disc_hidden, nn::Activation::relu, rng);
  }
  return m;
}

PatternRun run_patterns(obj::Family family, const PatternSetup& setup, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  RandomSource rng(seed);
  auto train_x = binary_patterns(setup.train_size, rng);
  auto test_x = binary_patterns(setup.test_size, rng);
  auto model = pattern_model(family, setup, rng);
  train::TrainingConfig c;
  c.objective = obj::ObjectiveSpec::make(family, setup.k);
  c.batch_size = setup.batch;
  c.max_steps = setup.steps;
  c.lr_theta = c.lr_phi = setup.lr;
  c.lr_psi = setup.lr_psi;
  c.seed = seed;
  auto state = train::train(train_x, c, model);
  auto est = eval::iwae_loglik(state.model, test_x, setup.eval_k, rng);
  PatternRun r;
  r.family = obj::to_string(family);
  r.seed = seed;
  r.test_bound = est.mean;
  r.test_se = est.se;
  r.seconds = seconds_since(t0);
  return r;
}

RatioFit fit_gaussian_ratio(std::size_t steps, std::uint64_t seed, double q_mean, std::size_t batch, double lr,
                            std::size_t grid_points) {
  if (batch == 0 || grid_points < 2) throw std::invalid_argument("fit_gaussian_ratio: empty batch or grid");
  const auto t0 = std::chrono::steady_clock::now();
  RandomSource rng(seed);
  nn::DenseDiscriminator t(nn::DiscriminatorMode::latent_only, 0, 1, {32, 32}, nn::Activation::relu, rng);
  const auto params = t.parameters();

  // Adam ascent on E_q[log sigmoid T] + E_p[log(1 - sigmoid T)].
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<std::vector<double>> m1, m2;
  for (const auto& p : params) {
    m1.emplace_back(p.tensor.size(), 0.0);
    m2.emplace_back(p.tensor.size(), 0.0);
  }
  for (std::size_t s = 1; s <= steps; ++s) {
    auto qz = ad::add(rng.gaussian({batch, 1}), q_mean);
    auto pz = rng.gaussian({batch, 1});
    for (const auto& p : params) {
      Tensor h = p.tensor;
      h.zero_grad();
    }
    ad::Tape tape;
    {
      ad::TapeScope scope(tape);
      auto objective = obj::discriminator_objective(t, nullptr, qz, nullptr, pz);
      tape.backward(objective);
    }
    // linear decay to zero so the final iterate is not dominated by minibatch noise
    const double step_lr = lr * (1.0 - static_cast<double>(s - 1) / static_cast<double>(steps));
    const double c1 = 1 - std::pow(b1, static_cast<double>(s));
    const double c2 = 1 - std::pow(b2, static_cast<double>(s));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor w = params[i].tensor;
      if (!w.has_grad()) continue;
      auto g = w.grad();
      auto v = w.mutable_values();
      for (std::size_t j = 0; j < v.size(); ++j) {
        m1[i][j] = b1 * m1[i][j] + (1 - b1) * g[j];
        m2[i][j] = b2 * m2[i][j] + (1 - b2) * g[j] * g[j];
        v[j] += step_lr * (m1[i][j] / c1) / (std::sqrt(m2[i][j] / c2) + eps);
      }
    }
  }

  RatioFit fit;
  fit.steps = steps;
  ad::NoGradScope off;
  std::vector<double> z(grid_points);
  for (std::size_t i = 0; i < grid_points; ++i) z[i] = -3.0 + 6.0 * static_cast<double>(i) / (grid_points - 1);
  const Tensor out = t.logit(nullptr, Tensor({grid_points, 1}, z));
  auto vals = out.values();
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double target = q_mean * z[i] - 0.5 * q_mean * q_mean;
    fit.grid.push_back(z[i]);
    fit.fitted.push_back(vals[i]);
    fit.target.push_back(target);
    fit.max_abs_error = std::max(fit.max_abs_error, std::abs(vals[i] - target));
  }
  fit.seconds = seconds_since(t0);
  return fit;
}

}  // namespace iwadv::exp
