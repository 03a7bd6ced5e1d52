#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gradient_suite.hpp"
#include "iwadv/networks/discriminators.hpp"
#include "iwadv/networks/reference_models.hpp"
#include "iwadv/objectives/objectives.hpp"

using namespace iwadv;
using namespace iwadv::nn;
using namespace iwadv::obj;

using fd::dense_arch;
using fd::small_model;
using fd::tensors_with_prefix;

namespace {

double log_sum_exp(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end()), s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

struct Stats {
  double mean = 0, se = 0;
};

Stats stats_of(const Tensor& t) {
  const auto& v = t.values();
  const double n = static_cast<double>(v.size());
  Stats s;
  for (double x : v) s.mean += x;
  s.mean /= n;
  double ss = 0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.se = std::sqrt(ss / (n - 1) / n);
  return s;
}

// Discrete model with nx observations and nz latent states, all tables explicit.
struct Tabular {
  std::shared_ptr<TabularEncoder> enc;
  std::shared_ptr<TabularGenerator> gen;
  std::shared_ptr<CategoricalPrior> prior;
  std::vector<double> prior_probs;
  ModelTriple model;

  double log_p_xz(std::size_t x, std::size_t z) const {
    return std::log(prior_probs[z]) + gen->log_table(true).at(z * gen->log_table(true).dim(1) + x);
  }
  double log_q(std::size_t x, std::size_t z) const {
    auto t = enc->log_table(true);
    return t.at(x * t.dim(1) + z);
  }
  double log_marginal(std::size_t x) const {
    std::vector<double> v;
    for (std::size_t z = 0; z < prior_probs.size(); ++z) v.push_back(log_p_xz(x, z));
    return log_sum_exp(v);
  }
  double exact_elbo(std::size_t x) const {
    double e = 0;
    for (std::size_t z = 0; z < prior_probs.size(); ++z) e += std::exp(log_q(x, z)) * (log_p_xz(x, z) - log_q(x, z));
    return e;
  }
};

Tabular tabular(std::size_t nx, std::size_t nz, RandomSource& rng) {
  Tabular t;
  std::vector<double> p(nz);
  double total = 0;
  for (auto& v : p) total += v = 0.2 + rng.uniform();
  for (auto& v : p) v /= total;
  t.prior_probs = p;
  t.prior = std::make_shared<CategoricalPrior>(p);
  t.gen = std::make_shared<TabularGenerator>(rng.gaussian({nz, nx}));
  t.enc = std::make_shared<TabularEncoder>(rng.gaussian({nx, nz}));
  t.model = ModelTriple{t.enc, t.gen, t.prior, nullptr};
  return t;
}

Tensor indices(std::size_t n, double value) { return Tensor::full({n, 1}, value); }

std::shared_ptr<FunctionDiscriminator> analytic_ratio(const ModelTriple& m) {
  auto enc = m.encoder;
  auto prior = m.prior;
  return std::make_shared<FunctionDiscriminator>(DiscriminatorMode::joint, [enc, prior](const Tensor* x, const Tensor& z) {
    return ad::sub(enc->log_density(*x, z, true), prior->log_density(z));
  });
}

template <class F>
GradientSet tape_gradients(const ModelTriple& m, F objective) {
  for (auto& p : m.parameters()) p.tensor.zero_grad();
  GradientSet out;
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    tape.backward(objective());
  }
  for (auto& p : m.parameters()) {
    out[p.name] = p.tensor.has_grad() ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                                      : std::vector<double>(p.tensor.size(), 0.0);
    p.tensor.zero_grad();
  }
  return out;
}

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST(Spec, FamiliesAndModes) {
  EXPECT_EQ(parse_family("IW-AVB"), Family::iw_avb);
  EXPECT_EQ(parse_family("vimco_corr"), Family::vimco_corr);
  EXPECT_THROW(parse_family("gan"), std::invalid_argument);
  for (auto f : {Family::vae, Family::iwae, Family::avb, Family::iw_avb, Family::aae, Family::iw_aae,
                 Family::vimco_fact, Family::vimco_corr}) {
    EXPECT_EQ(parse_family(to_string(f)), f);
    auto s = ObjectiveSpec::make(f, 4);
    EXPECT_NO_THROW(s.validate());
  }
  auto s = ObjectiveSpec::make(Family::avb, 1);
  s.discriminator = DiscriminatorUse::latent_only;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = ObjectiveSpec::make(Family::vae, 1);
  s.discriminator = DiscriminatorUse::joint;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_THROW(ObjectiveSpec::make(Family::iwae, 0).validate(), std::invalid_argument);
  EXPECT_THROW(ObjectiveSpec::make(Family::vimco_fact, 1).validate(), std::invalid_argument);
}

TEST(Weights, NormalizedFromExtremeLogWeights) {
  auto w = importance_weights({-1e4, 0.0, 3.0, -800.0, 1e3});
  double total = 0;
  for (double v : w.normalized) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_EQ(w.normalized[4], 1.0);
  auto u = importance_weights({2.0, 2.0});
  EXPECT_EQ(u.normalized[0], 0.5);
  EXPECT_THROW(importance_weights({}), std::invalid_argument);
}

TEST(Elbo, ExactPosteriorRecoversMarginal) {
  RandomSource rng(1);
  auto m = linear_gaussian(1, 0.0, rng);
  auto x = Tensor::zeros({1, 1});
  const double value = elbo(m, x, 10000, rng).item();
  EXPECT_NEAR(value, -0.5 * std::log(4 * std::numbers::pi), 0.02);
  EXPECT_NEAR(-0.5 * std::log(4 * std::numbers::pi), -1.2655, 1e-4);
}

TEST(Elbo, PriorProposalWithFlatLikelihoodIsExact) {
  RandomSource rng(2);
  auto m = linear_gaussian(2, 0.0, rng);
  auto& e = std::static_pointer_cast<DenseEncoder>(m.encoder)->layers().front();
  for (auto& v : e.weight.mutable_values()) v = 0;
  for (auto& v : e.bias.mutable_values()) v = 0;
  auto& d = std::static_pointer_cast<DenseGaussianDecoder>(m.generator)->layers().front();
  for (auto& v : d.weight.mutable_values()) v = 0;
  Tensor x({1, 2}, {0.3, -1.1});
  const double exact = -std::log(2 * std::numbers::pi) - 0.5 * (0.09 + 1.21);
  auto d1 = draw_posterior(*m.encoder, x, 500, rng);
  auto lw = log_weights(m, d1);
  for (double v : lw.values()) EXPECT_NEAR(v, exact, 1e-12);
  EXPECT_NEAR(elbo(m, x, 500, rng).item(), exact, 1e-12);
}

TEST(Elbo, ImplicitEncoderRejected) {
  RandomSource rng(3);
  auto m = small_model(rng, true, DiscriminatorMode::joint);
  auto x = rng.gaussian({2, 3});
  try {
    elbo(m, x, 2, rng);
    FAIL();
  } catch (const std::logic_error& e) {
    EXPECT_STREQ(e.what(), "ELBO requires tractable q");
  }
  EXPECT_THROW(iwae_bound(m, x, 2, rng), std::logic_error);
}

TEST(Elbo, AnalyticKlAgreesWithSampledOnAverage) {
  RandomSource rng(4);
  auto m = linear_gaussian(3, 0.2, rng);
  auto x = sample_linear_gaussian(1, 3, rng);
  auto sampled = stats_of(elbo_terms(m, draw_posterior(*m.encoder, ad::repeat_rows(x, 20000), 1, rng)));
  auto analytic = stats_of(elbo_terms(m, draw_posterior(*m.encoder, ad::repeat_rows(x, 20000), 1, rng), true));
  EXPECT_NEAR(sampled.mean, analytic.mean, 3 * std::hypot(sampled.se, analytic.se));
  EXPECT_LT(analytic.se, sampled.se);
}

TEST(Iwae, SingleSampleBitIdenticalToElbo) {
  RandomSource rng(5);
  auto m = linear_gaussian(4, 0.3, rng);
  auto x = sample_linear_gaussian(16, 4, rng);
  auto d = draw_posterior(*m.encoder, x, 1, rng);
  auto e = elbo_terms(m, d), w = iwae_terms(m, d);
  for (std::size_t b = 0; b < 16; ++b) EXPECT_EQ(e.at(b), w.at(b));
  RandomSource a(9), b(9);
  EXPECT_EQ(elbo(m, x, 1, a).item(), iwae_bound(m, x, 1, b).item());
}

TEST(Iwae, EnumerableModelTightensWithK) {
  RandomSource rng(6);
  auto t = tabular(3, 2, rng);
  const std::size_t reps = 10000;
  for (std::size_t xv = 0; xv < 3; ++xv) {
    auto x = indices(reps, static_cast<double>(xv));
    auto e = stats_of(elbo_terms(t.model, draw_posterior(*t.enc, x, 1, rng)));
    EXPECT_NEAR(e.mean, t.exact_elbo(xv), 3 * e.se);
    const double lp = t.log_marginal(xv);
    double prev = -INFINITY;
    for (std::size_t k : {1, 5, 50}) {
      auto s = stats_of(iwae_terms(t.model, draw_posterior(*t.enc, x, k, rng)));
      EXPECT_GT(s.mean, prev) << "k=" << k;
      EXPECT_LE(s.mean, lp + 3 * s.se);
      prev = s.mean;
      if (k == 50) {
        EXPECT_LT(lp - s.mean, 0.01);
      }
    }
  }
}

TEST(Iwae, ExactPosteriorHasZeroVariance) {
  RandomSource rng(7);
  auto t = tabular(4, 3, rng);
  std::vector<double> post(12);
  for (std::size_t x = 0; x < 4; ++x) {
    for (std::size_t z = 0; z < 3; ++z) post[x * 3 + z] = t.log_p_xz(x, z);
  }
  auto exact = std::make_shared<TabularEncoder>(Tensor({4, 3}, post));
  ModelTriple m{exact, t.gen, t.prior, nullptr};
  for (std::size_t xv = 0; xv < 4; ++xv) {
    for (std::size_t k : {1, 3, 20}) {
      auto v = iwae_terms(m, draw_posterior(*exact, indices(50, static_cast<double>(xv)), k, rng));
      for (double b : v.values()) EXPECT_NEAR(b, t.log_marginal(xv), 1e-12);
    }
  }
}

TEST(DiscriminatorObjective, CoincidingDistributionsAtZero) {
  FunctionDiscriminator zero(DiscriminatorMode::latent_only,
                             [](const Tensor*, const Tensor& z) { return Tensor::zeros({z.dim(0)}); });
  RandomSource rng(8);
  auto v = discriminator_objective(zero, nullptr, rng.gaussian({10, 2}), nullptr, rng.gaussian({7, 2}));
  EXPECT_NEAR(v.item(), 2 * std::log(0.5), 1e-15);
  EXPECT_NEAR(v.item(), -1.3863, 1e-4);
  EXPECT_THROW(discriminator_objective(zero, nullptr, Tensor::zeros({0, 2}), nullptr, rng.gaussian({7, 2})),
               std::invalid_argument);
}

TEST(DiscriminatorObjective, SeparatedSupportsApproachZero) {
  RandomSource rng(9);
  auto q = rng.uniform({50, 1});
  auto p = ad::add(rng.uniform({50, 1}), -2.0);
  double prev = -INFINITY;
  for (double scale : {1.0, 5.0, 20.0, 80.0}) {
    FunctionDiscriminator t(DiscriminatorMode::latent_only, [scale](const Tensor*, const Tensor& z) {
      return ad::reshape(ad::mul(ad::add(z, 0.5), scale), {z.dim(0)});
    });
    const double v = discriminator_objective(t, nullptr, q, nullptr, p).item();
    EXPECT_LT(v, 0.0);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_GT(prev, -1e-15 - 2 * std::exp(-80.0 * 0.5));
}

TEST(Substitution, AnalyticRatioRecoversIwaeAndElbo) {
  RandomSource rng(10);
  auto m = linear_gaussian(3, 0.3, rng);
  m.discriminator = analytic_ratio(m);
  auto x = sample_linear_gaussian(8, 3, rng);
  for (std::size_t k : {1, 2, 4, 16}) {
    auto d = draw_posterior(*m.encoder, x, k, rng);
    auto iw = iwavb_generator_terms(m, d), ref = iwae_terms(m, d);
    auto avb = avb_inference_terms(m, d), el = elbo_terms(m, d);
    for (std::size_t b = 0; b < 8; ++b) {
      EXPECT_NEAR(iw.at(b), ref.at(b), 1e-10);
      EXPECT_NEAR(avb.at(b), el.at(b), 1e-10);
    }
  }
}

TEST(Substitution, SingleSampleIsTheAvbIntegrand) {
  RandomSource rng(11);
  auto m = small_model(rng, true, DiscriminatorMode::joint);
  auto x = rng.gaussian({6, 3});
  auto d = draw_posterior(*m.encoder, x, 1, rng);
  auto integrand = ad::sub(m.generator->log_likelihood(x, d.sample.z), m.discriminator->logit(&x, d.sample.z));
  auto iw = iwavb_generator_terms(m, d);
  auto avb = avb_inference_terms(m, d);
  for (std::size_t b = 0; b < 6; ++b) {
    EXPECT_NEAR(iw.at(b), integrand.at(b), 1e-12);
    EXPECT_NEAR(avb.at(b), integrand.at(b), 1e-12);
  }
}

TEST(Substitution, ZeroDiscriminatorLeavesReconstruction) {
  RandomSource rng(12);
  auto m = small_model(rng, true, DiscriminatorMode::latent_only);
  m.discriminator = std::make_shared<FunctionDiscriminator>(
      DiscriminatorMode::latent_only, [](const Tensor*, const Tensor& z) { return Tensor::zeros({z.dim(0)}); });
  auto x = rng.gaussian({5, 3});
  auto d = draw_posterior(*m.encoder, x, 3, rng);
  auto ll = by_datum(m.generator->log_likelihood(d.x_rep, d.sample.z), 5, 3);
  auto recon = ad::mean(ll, 1);
  auto terms = aae_inference_terms(m, d);
  for (std::size_t b = 0; b < 5; ++b) EXPECT_NEAR(terms.at(b), recon.at(b), 1e-12);
  auto first = aae_inference_terms(m, d, true);
  for (std::size_t b = 0; b < 5; ++b) EXPECT_NEAR(first.at(b), ll.at(b * 3), 1e-12);
}

TEST(Substitution, LatentOnlyTermIgnoresData) {
  RandomSource rng(13);
  auto m = small_model(rng, true, DiscriminatorMode::latent_only);
  auto x = rng.gaussian({4, 3});
  auto d = draw_posterior(*m.encoder, x, 1, rng);
  auto permuted = d;
  permuted.x_rep = ad::gather_rows(d.x_rep, {2, 0, 3, 1});
  auto t_term = [&](const PosteriorDraw& draw) {
    return ad::sub(aae_inference_terms(m, draw), m.generator->log_likelihood(draw.x_rep, draw.sample.z));
  };
  auto a = t_term(d), b = t_term(permuted);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
}

TEST(Substitution, ModeMismatchRejected) {
  RandomSource rng(14);
  auto joint = small_model(rng, true, DiscriminatorMode::joint);
  auto latent = small_model(rng, true, DiscriminatorMode::latent_only);
  auto x = rng.gaussian({2, 3});
  EXPECT_THROW(iwavb_generator_loss(latent, x, 2, rng), std::invalid_argument);
  EXPECT_THROW(avb_inference_loss(latent, x, 2, rng), std::invalid_argument);
  EXPECT_THROW(iwaae_generator_loss(joint, x, 2, rng), std::invalid_argument);
  EXPECT_THROW(aae_inference_loss(joint, x, 2, rng), std::invalid_argument);
  joint.discriminator = nullptr;
  EXPECT_THROW(iwavb_generator_loss(joint, x, 2, rng), std::invalid_argument);
}

TEST(Gradients, EndToEndFiniteDifferences) {
  for (const auto& c : fd::end_to_end_checks(100)) EXPECT_LT(c.worst, 1e-3) << c.name;
}

TEST(Gradients, FrozenPartsReceiveNothing) {
  RandomSource rng(15);
  auto m = small_model(rng, true, DiscriminatorMode::joint);
  auto x = rng.gaussian({3, 3});
  auto gen = tape_gradients(m, [&] { return iwavb_generator_loss(m, x, 4, rng); });
  auto inf = tape_gradients(m, [&] { return avb_inference_loss(m, x, 4, rng); });
  auto disc = tape_gradients(m, [&] { return discriminator_step_objective(m, ObjectiveSpec::make(Family::iw_avb, 4), x, rng); });
  for (auto& [name, g] : gen) {
    if (name.rfind("theta.", 0) != 0) {
      EXPECT_EQ(max_abs(g), 0.0) << name;
    }
  }
  for (auto& [name, g] : inf) {
    if (name.rfind("phi.", 0) != 0) {
      EXPECT_EQ(max_abs(g), 0.0) << name;
    }
  }
  for (auto& [name, g] : disc) {
    if (name.rfind("psi.", 0) != 0) {
      EXPECT_EQ(max_abs(g), 0.0) << name;
    }
  }
  EXPECT_GT(max_abs(gen.at("theta.dense0.weight")), 0.0);
  EXPECT_GT(max_abs(inf.at("phi.dense0.weight")), 0.0);
}

TEST(StepObjectives, SingleTapeSplitsGeneratorAndInferenceGradients) {
  for (auto family : {Family::iw_avb, Family::iw_aae}) {
    RandomSource rng(16);
    auto mode = family == Family::iw_avb ? DiscriminatorMode::joint : DiscriminatorMode::latent_only;
    auto m = small_model(rng, true, mode);
    auto x = rng.gaussian({3, 3});
    auto spec = ObjectiveSpec::make(family, 4);
    RandomSource a(77), b(77), c(77);
    auto joint = tape_gradients(m, [&] { return step_objectives(m, spec, x, a).model; });
    auto gen = tape_gradients(m, [&] {
      auto d = draw_posterior(*m.encoder, x, 4, b);
      return ad::mean(family == Family::iw_avb ? iwavb_generator_terms(m, d) : iwaae_generator_terms(m, d));
    });
    auto inf = tape_gradients(m, [&] {
      auto d = draw_posterior(*m.encoder, x, 4, c);
      return ad::mean(family == Family::iw_avb ? avb_inference_terms(m, d) : aae_inference_terms(m, d));
    });
    for (auto& [name, g] : joint) {
      const auto& ref = name.rfind("theta.", 0) == 0 ? gen.at(name) : name.rfind("phi.", 0) == 0 ? inf.at(name)
                                                                                                 : std::vector<double>(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], ref[i], 1e-12) << name;
    }
  }
}

TEST(StepObjectives, BoundsMatchTheFamily) {
  RandomSource rng(17);
  auto m = linear_gaussian(2, 0.2, rng);
  auto x = sample_linear_gaussian(4, 2, rng);
  RandomSource a(3), b(3);
  auto step = step_objectives(m, ObjectiveSpec::make(Family::iwae, 5), x, a);
  EXPECT_EQ(step.bound, iwae_bound(m, x, 5, b).item());
  EXPECT_EQ(step.model.item(), step.bound);
  EXPECT_THROW(discriminator_step_objective(m, ObjectiveSpec::make(Family::iwae, 5), x, rng), std::invalid_argument);
}

// ---------------------------------------------------------------- VIMCO

namespace {

ArchitectureConfig tiny_conv() {
  ArchitectureConfig a;
  a.conv_widths = {3};
  a.filters = {3};
  a.activation = Activation::tanh;
  a.ar_window = 2;
  return a;
}

ModelTriple spike_model(RandomSource& rng, bool autoregressive) {
  std::shared_ptr<InferenceNetwork> enc;
  if (autoregressive) {
    enc = std::make_shared<AutoregressiveSpikeEncoder>(tiny_conv(), rng);
  } else {
    enc = std::make_shared<ConvSpikeEncoder>(tiny_conv(), rng);
  }
  spike::BiophysParams p;
  p.sigma = 0.4;
  auto gen = std::make_shared<BiophysicalGenerator>(p, BiophysicalGenerator::Learnable{true, true, false, false});
  return {enc, gen, std::make_shared<BernoulliPrior>(0.2), nullptr};
}

}  // namespace

TEST(Vimco, MinimalKAndPreconditions) {
  RandomSource rng(18);
  for (bool ar : {false, true}) {
    auto m = spike_model(rng, ar);
    auto x = rng.gaussian({2, 12});
    auto g = vimco_gradient(m, x, 2, rng);
    EXPECT_FALSE(g.empty());
    for (auto& [name, v] : g) {
      for (double e : v) EXPECT_TRUE(std::isfinite(e)) << name;
    }
    EXPECT_THROW(vimco_gradient(m, x, 1, rng), std::invalid_argument);
  }
  auto gauss = linear_gaussian(2, 0.1, rng);
  EXPECT_THROW(vimco_gradient(gauss, rng.gaussian({2, 2}), 3, rng), std::logic_error);
}

TEST(Vimco, DeterministicPosteriorHasNoScoreTerm) {
  RandomSource rng(19);
  auto m = spike_model(rng, false);
  // Saturate the output layer: probabilities are exactly 0 or 1 in double precision.
  for (auto& p : m.encoder->parameters()) {
    for (auto& v : p.tensor.mutable_values()) v = 0;
  }
  auto params = m.encoder->parameters();
  auto& out_bias = params.back().tensor;
  out_bias.mutable_values()[0] = -60.0;
  auto x = rng.gaussian({3, 8});
  auto g = vimco_gradient(m, x, 4, rng);
  for (auto& [name, v] : g) {
    if (name.rfind("phi.", 0) == 0) {
      EXPECT_LT(max_abs(v), 1e-20) << name;
    }
  }
}

TEST(Vimco, UnbiasedAgainstEnumeration) {
  RandomSource rng(20);
  auto m = spike_model(rng, false);
  Tensor x({1, 3}, {0.9, 0.7, 1.3});
  const std::size_t k = 2, states = 8;
  // all k-tuples of 3-frame spike trains
  std::vector<std::vector<double>> z(k, std::vector<double>());
  for (std::size_t c = 0; c < states * states; ++c) {
    const std::size_t s[2] = {c / states, c % states};
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t t = 0; t < 3; ++t) z[i].push_back(static_cast<double>((s[i] >> t) & 1));
    }
  }
  const std::size_t combos = states * states;
  auto exact = tape_gradients(m, [&] {
    auto xr = ad::repeat_rows(x, combos);
    std::vector<Tensor> lw, lq;
    for (std::size_t i = 0; i < k; ++i) {
      Tensor zi({combos, 3}, z[i]);
      auto q = m.encoder->log_density(xr, zi);
      lq.push_back(q);
      lw.push_back(ad::reshape(ad::sub(ad::add(m.generator->log_likelihood(xr, zi), m.prior->log_density(zi)), q),
                               {combos, 1}));
    }
    auto bound = ad::add(ad::logsumexp(ad::concat(lw, 1), 1), -std::log(2.0));
    return ad::sum(ad::mul(ad::exp(ad::add(lq[0], lq[1])), bound));
  });

  const std::size_t groups = 200, per_group = 500;
  auto xr = ad::repeat_rows(x, per_group);
  std::map<std::string, std::vector<double>> sum, sum2;
  for (std::size_t g = 0; g < groups; ++g) {
    for (auto& [name, v] : vimco_gradient(m, xr, k, rng)) {
      if (name.rfind("phi.", 0) != 0) continue;
      sum[name].resize(v.size());
      sum2[name].resize(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        sum[name][i] += v[i];
        sum2[name][i] += v[i] * v[i];
      }
    }
  }
  std::size_t checked = 0;
  for (auto& [name, s] : sum) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double mean = s[i] / groups;
      const double se = std::sqrt((sum2[name][i] / groups - mean * mean) / (groups - 1));
      EXPECT_NEAR(mean, exact.at(name)[i], 3 * se) << name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 10u);
}

// ---------------------------------------------------------------- SNR

TEST(Snr, DeterministicGradientIsInfinite) {
  RandomSource rng(21);
  auto m = linear_gaussian(2, 0.1, rng);
  auto& e = std::static_pointer_cast<DenseEncoder>(m.encoder)->layers().front();
  auto w = e.weight.mutable_values();
  auto b = e.bias.mutable_values();
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 2; j < 4; ++j) w[i * 4 + j] = 0;
    b[2 + i] = -1000;
  }
  auto x = sample_linear_gaussian(1, 2, rng);
  auto s = estimate_snr(m, x, 1, 30, "theta.", rng);
  EXPECT_TRUE(std::isinf(s.median));
  for (double r : s.ratio) EXPECT_TRUE(std::isinf(r));
  EXPECT_THROW(estimate_snr(m, x, 1, 29, "theta.", rng), std::invalid_argument);
  EXPECT_THROW(estimate_snr(m, x, 1, 30, "nothing.", rng), std::invalid_argument);
}

TEST(Snr, LinearGaussianScaling) {
  RandomSource rng(22);
  auto m = linear_gaussian(20, 0.01, rng);
  auto x = sample_linear_gaussian(1, 20, rng);
  std::vector<double> theta, phi;
  for (std::size_t k : {1, 4, 16, 64}) {
    theta.push_back(estimate_snr(m, x, k, 300, "theta.", rng).median);
    phi.push_back(estimate_snr(m, x, k, 300, "phi.", rng).median);
  }
  int phi_non_increase = 0;
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_GT(theta[i], theta[i - 1]) << "k step " << i;
    phi_non_increase += phi[i] <= phi[i - 1];
  }
  EXPECT_GE(phi_non_increase, 2);
}
