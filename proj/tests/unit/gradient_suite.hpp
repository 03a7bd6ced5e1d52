#pragma once

// Finite-difference sweeps shared by the unit tests and the acceptance runner.

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "iwadv/autodiff/random.hpp"
#include "iwadv/networks/discriminators.hpp"
#include "iwadv/networks/encoders.hpp"
#include "iwadv/networks/generators.hpp"
#include "iwadv/objectives/objectives.hpp"

namespace iwadv::fd {

using ad::RandomSource;
using ad::Shape;
using ad::Tensor;

inline Tensor random_tensor(RandomSource& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor(std::move(shape), std::move(v));
}

// Values bounded away from the relu kink so central differences stay smooth.
inline Tensor away_from_zero(RandomSource& rng, Shape shape) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) {
    double u = 0.1 + 1.9 * rng.uniform();
    x = rng.uniform() < 0.5 ? -u : u;
  }
  return Tensor(std::move(shape), std::move(v));
}

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

struct OpCase {
  const char* name;
  Fn f;
  std::function<std::vector<Tensor>(RandomSource&)> make;
};

inline std::vector<OpCase> op_cases() {
  using namespace iwadv::ad;
  return {
      {"add", [](auto& in) { return sum(square(add(in[0], in[1]))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {3, 4}, -2, 2), random_tensor(r, {4}, -2, 2)}; }},
      {"sub", [](auto& in) { return sum(square(sub(in[0], in[1]))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {3, 1}, -2, 2), random_tensor(r, {3, 4}, -2, 2)}; }},
      {"mul", [](auto& in) { return sum(mul(in[0], in[1])); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {2, 3}, -2, 2), random_tensor(r, {2, 3}, -2, 2)}; }},
      {"div", [](auto& in) { return sum(div(in[0], in[1])); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {2, 3}, -2, 2), random_tensor(r, {2, 3}, 0.5, 2)}; }},
      {"scalar_affine", [](auto& in) { return sum(square(add(mul(in[0], -1.5), 0.25))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {4}, -2, 2)}; }},
      {"neg_exp", [](auto& in) { return sum(exp(neg(in[0]))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {5}, -2, 2)}; }},
      {"log", [](auto& in) { return sum(log(in[0])); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {5}, 0.2, 3)}; }},
      {"sigmoid", [](auto& in) { return sum(square(sigmoid(in[0]))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {5}, -4, 4)}; }},
      {"log_sigmoid", [](auto& in) { return sum(log_sigmoid(in[0])); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {5}, -4, 4)}; }},
      {"softplus", [](auto& in) { return sum(softplus(in[0])); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {5}, -4, 4)}; }},
      {"relu", [](auto& in) { return sum(square(relu(in[0]))); },
       [](RandomSource& r) { return std::vector{away_from_zero(r, {6})}; }},
      {"tanh", [](auto& in) { return sum(tanh(in[0])); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {5}, -2, 2)}; }},
      {"pow", [](auto& in) { return sum(iwadv::ad::pow(in[0], 1.7)); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {5}, 0.3, 2)}; }},
      {"sum_axis", [](auto& in) { return sum(square(sum(in[0], 1))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {2, 3, 2}, -1, 1)}; }},
      {"mean", [](auto& in) { return square(mean(in[0])); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {2, 3}, -1, 1)}; }},
      {"mean_axis", [](auto& in) { return sum(square(mean(in[0], 0, true))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {3, 2}, -1, 1)}; }},
      {"logsumexp", [](auto& in) { return sum(square(logsumexp(in[0], 1))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {2, 4, 3}, -3, 3)}; }},
      {"matmul", [](auto& in) { return sum(square(matmul(in[0], in[1]))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {2, 3}, -1, 1), random_tensor(r, {3, 4}, -1, 1)}; }},
      {"conv1d", [](auto& in) { return sum(square(conv1d(in[0], in[1], in[2]))); },
       [](RandomSource& r) {
         return std::vector{random_tensor(r, {2, 2, 7}, -1, 1), random_tensor(r, {3, 2, 4}, -1, 1),
                            random_tensor(r, {3}, -1, 1)};
       }},
      {"conv1d_valid", [](auto& in) { return sum(square(conv1d(in[0], in[1], in[2], Padding::valid()))); },
       [](RandomSource& r) {
         return std::vector{random_tensor(r, {1, 2, 6}, -1, 1), random_tensor(r, {2, 2, 3}, -1, 1),
                            random_tensor(r, {2}, -1, 1)};
       }},
      {"concat", [](auto& in) { return sum(square(concat({in[0], in[1]}, 1))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {2, 2, 3}, -1, 1), random_tensor(r, {2, 1, 3}, -1, 1)}; }},
      {"reshape_slice", [](auto& in) { return sum(square(slice(reshape(in[0], {3, 4}), 1, 1, 3))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {2, 6}, -1, 1)}; }},
      {"gather_repeat", [](auto& in) { return sum(square(gather_rows(repeat_rows(in[0], 2), {0, 3, 3, 5}))); },
       [](RandomSource& r) { return std::vector{random_tensor(r, {3, 2}, -1, 1)}; }},
  };
}

/// Worst relative error of one op over `trials` random instances. A random
/// linear term is added to the output so every input coordinate matters.
inline double worst_op_error(const OpCase& c, RandomSource& rng, int trials = 100) {
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    auto inputs = c.make(rng);
    auto salt = rng.split();
    auto seed_state = salt.serialize();
    Fn f = [&](const std::vector<Tensor>& in) {
      auto r = RandomSource::deserialize(seed_state);
      return ad::add(c.f(in), ad::sum(ad::mul(in[0], random_tensor(r, in[0].shape(), -1, 1))));
    };
    worst = std::max(worst, gradcheck(f, inputs).max_rel_err);
  }
  return worst;
}

inline nn::ArchitectureConfig dense_arch(std::size_t in, std::size_t latent, std::vector<std::size_t> hidden) {
  nn::ArchitectureConfig a;
  a.input_dim = in;
  a.latent_dim = latent;
  a.hidden = std::move(hidden);
  a.activation = nn::Activation::tanh;
  return a;
}

// Small smooth model; `implicit` injects noise at the data layer.
inline nn::ModelTriple small_model(RandomSource& rng, bool implicit, nn::DiscriminatorMode mode) {
  auto arch = dense_arch(3, 2, {4});
  if (implicit) {
    arch.noise_layers = {0};
    arch.noise_dim = 2;
  }
  auto enc = std::make_shared<nn::DenseEncoder>(arch, implicit ? nn::Head::implicit : nn::Head::gaussian, rng);
  auto dec = std::make_shared<nn::DenseGaussianDecoder>(arch, rng, 0.1 * rng.gaussian(), true);
  auto disc = std::make_shared<nn::DenseDiscriminator>(mode, 3, 2, std::vector<std::size_t>{4}, nn::Activation::tanh, rng);
  return {enc, dec, std::make_shared<nn::StandardNormalPrior>(), disc};
}

inline std::vector<Tensor> tensors_with_prefix(const nn::ModelTriple& m, const std::string& prefix) {
  std::vector<Tensor> out;
  for (auto& p : m.parameters()) {
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p.tensor);
  }
  return out;
}

struct LossCheck {
  std::string name;
  double worst = 0.0;
};

/// Every training loss against central differences, each on `instances`
/// random models with the sampling noise held fixed.
inline std::vector<LossCheck> end_to_end_checks(int instances = 100) {
  using namespace iwadv::obj;
  std::vector<LossCheck> out{{"elbo"},           {"iwae"},          {"iw-avb generator"},
                             {"avb inference"},  {"iw-aae generator"}, {"aae inference"},
                             {"discriminator"},  {"bernoulli iwae"},   {"biophysical likelihood"}};
  for (int inst = 0; inst < instances; ++inst) {
    RandomSource rng(1000 + inst);
    const auto seed = rng.next_u64();
    auto joint = small_model(rng, true, nn::DiscriminatorMode::joint);
    auto latent = small_model(rng, true, nn::DiscriminatorMode::latent_only);
    auto explicit_q = small_model(rng, false, nn::DiscriminatorMode::joint);
    auto x = rng.gaussian({2, 3});
    std::size_t slot = 0;
    auto check = [&](auto f, std::vector<Tensor> inputs) {
      auto fixed = [seed, f](const std::vector<Tensor>&) {
        RandomSource r(seed);
        return f(r);
      };
      auto& c = out[slot++];
      c.worst = std::max(c.worst, gradcheck(fixed, std::move(inputs)).max_rel_err);
    };
    auto all = tensors_with_prefix(explicit_q, "phi.");
    for (auto& t : tensors_with_prefix(explicit_q, "theta.")) all.push_back(t);
    check([&](RandomSource& r) { return elbo(explicit_q, x, 3, r); }, all);
    check([&](RandomSource& r) { return iwae_bound(explicit_q, x, 3, r); }, all);
    check([&](RandomSource& r) { return iwavb_generator_loss(joint, x, 3, r); }, tensors_with_prefix(joint, "theta."));
    check([&](RandomSource& r) { return avb_inference_loss(joint, x, 3, r); }, tensors_with_prefix(joint, "phi."));
    check([&](RandomSource& r) { return iwaae_generator_loss(latent, x, 3, r); },
          tensors_with_prefix(latent, "theta."));
    check([&](RandomSource& r) { return aae_inference_loss(latent, x, 3, r); }, tensors_with_prefix(latent, "phi."));
    auto spec = ObjectiveSpec::make(Family::iw_avb, 3);
    check([&](RandomSource& r) { return discriminator_step_objective(joint, spec, x, r); },
          tensors_with_prefix(joint, "psi."));

    // Binary data through a Bernoulli decoder.
    auto arch = dense_arch(4, 2, {3});
    nn::ModelTriple bern{std::make_shared<nn::DenseEncoder>(arch, nn::Head::gaussian, rng),
                         std::make_shared<nn::DenseBernoulliDecoder>(arch, rng),
                         std::make_shared<nn::StandardNormalPrior>(), nullptr};
    auto xb = rng.bernoulli({2, 4}, 0.5);
    auto bern_params = tensors_with_prefix(bern, "phi.");
    for (auto& t : tensors_with_prefix(bern, "theta.")) bern_params.push_back(t);
    check([&](RandomSource& r) { return iwae_bound(bern, xb, 3, r); }, bern_params);

    // Calcium likelihood in (alpha, beta, sigma, tau) for a fixed spike train.
    spike::BiophysParams bp;
    bp.alpha = 0.5 + rng.uniform();
    bp.beta = rng.gaussian() * 0.1;
    bp.sigma = 0.1 + 0.3 * rng.uniform();
    bp.tau = 0.3 + rng.uniform();
    auto gen = std::make_shared<nn::BiophysicalGenerator>(bp, nn::BiophysicalGenerator::Learnable{true, true, true, true});
    auto spikes = rng.bernoulli({2, 40}, 0.1);
    auto trace = gen->sample(spikes, rng);
    std::vector<Tensor> gp;
    for (auto& p : gen->parameters()) gp.push_back(p.tensor);
    check([&](RandomSource&) { return ad::sum(gen->log_likelihood(trace, spikes)); }, gp);
  }
  return out;
}

}  // namespace iwadv::fd
