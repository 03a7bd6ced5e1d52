#include "iwadv/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iwadv::obj {

namespace {

const nn::Discriminator& require_discriminator(const nn::ModelTriple& m, nn::DiscriminatorMode mode) {
  if (!m.discriminator) throw std::invalid_argument("objective needs a discriminator");
  if (m.discriminator->mode() != mode) {
    throw std::invalid_argument("objective needs a " + nn::to_string(mode) + " discriminator, got " +
                                nn::to_string(m.discriminator->mode()));
  }
  return *m.discriminator;
}

Tensor log_mean_exp(const Tensor& by_datum_values, std::size_t k) {
  return ad::add(ad::logsumexp(by_datum_values, 1), -std::log(static_cast<double>(k)));
}

// log p(x|z) - T, [batch, k]. x is given to T only in joint mode.
Tensor adversarial_integrand(const nn::ModelTriple& m, const PosteriorDraw& d, nn::DiscriminatorMode mode,
                             bool z_live, bool generator_frozen) {
  const auto& t = require_discriminator(m, mode);
  auto z = z_live ? d.sample.z : ad::detach(d.sample.z);
  auto ll = m.generator->log_likelihood(d.x_rep, z, generator_frozen);
  auto logit = t.logit(mode == nn::DiscriminatorMode::joint ? &d.x_rep : nullptr, z, true);
  return by_datum(ad::sub(ll, logit), d.batch, d.k);
}

Tensor k_average(const Tensor& v, bool single_sample) {
  if (single_sample) return ad::reshape(ad::slice(v, 1, 0, 1), {v.dim(0)});
  return ad::mean(v, 1);
}

GradientSet collect_gradients(const nn::ParameterList& params) {
  GradientSet out;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) {
      out[p.name].assign(p.tensor.grad().begin(), p.tensor.grad().end());
    } else {
      out[p.name].assign(p.tensor.size(), 0.0);
    }
  }
  return out;
}

nn::ParameterList model_parameters(const nn::ModelTriple& m) {
  nn::ParameterList out;
  for (auto& p : m.parameters()) {
    if (p.name.rfind("psi.", 0) != 0) out.push_back(p);
  }
  return out;
}

template <class F>
GradientSet gradient_of(const nn::ModelTriple& m, F objective) {
  auto params = model_parameters(m);
  for (auto& p : params) p.tensor.zero_grad();
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    auto value = objective();
    if (value.requires_grad()) tape.backward(value);
  }
  auto out = collect_gradients(params);
  for (auto& p : params) p.tensor.zero_grad();
  return out;
}

}  // namespace

Family parse_family(const std::string& raw) {
  std::string name = raw;
  std::replace(name.begin(), name.end(), '_', '-');
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "vae") return Family::vae;
  if (name == "iwae") return Family::iwae;
  if (name == "avb") return Family::avb;
  if (name == "iw-avb") return Family::iw_avb;
  if (name == "aae") return Family::aae;
  if (name == "iw-aae") return Family::iw_aae;
  if (name == "vimco-fact") return Family::vimco_fact;
  if (name == "vimco-corr") return Family::vimco_corr;
  throw std::invalid_argument("unknown objective '" + raw + "'");
}

std::string to_string(Family f) {
  switch (f) {
    case Family::vae:
      return "vae";
    case Family::iwae:
      return "iwae";
    case Family::avb:
      return "avb";
    case Family::iw_avb:
      return "iw-avb";
    case Family::aae:
      return "aae";
    case Family::iw_aae:
      return "iw-aae";
    case Family::vimco_fact:
      return "vimco-fact";
    default:
      return "vimco-corr";
  }
}

DiscriminatorUse required_discriminator(Family f) {
  switch (f) {
    case Family::avb:
    case Family::iw_avb:
      return DiscriminatorUse::joint;
    case Family::aae:
    case Family::iw_aae:
      return DiscriminatorUse::latent_only;
    default:
      return DiscriminatorUse::none;
  }
}

bool is_adversarial(Family f) { return required_discriminator(f) != DiscriminatorUse::none; }

bool is_importance_weighted(Family f) {
  return f == Family::iwae || f == Family::iw_avb || f == Family::iw_aae || f == Family::vimco_fact ||
         f == Family::vimco_corr;
}

ObjectiveSpec ObjectiveSpec::make(Family f, std::size_t k) {
  ObjectiveSpec s;
  s.family = f;
  s.k = k;
  s.discriminator = required_discriminator(f);
  return s;
}

void ObjectiveSpec::validate() const {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  if (discriminator != required_discriminator(family)) {
    throw std::invalid_argument("objective " + to_string(family) + " does not match the discriminator mode");
  }
  if ((family == Family::vimco_fact || family == Family::vimco_corr) && k < 2) {
    throw std::invalid_argument("VIMCO needs k >= 2 for its leave-one-out control variate");
  }
  if (analytic_kl && family != Family::vae) throw std::invalid_argument("analytic KL applies to the VAE objective only");
}

ImportanceWeights importance_weights(const std::vector<double>& log_w) {
  if (log_w.empty()) throw std::invalid_argument("importance weights of an empty sample");
  ImportanceWeights w{log_w, std::vector<double>(log_w.size())};
  const double m = *std::max_element(log_w.begin(), log_w.end());
  double total = 0.0;
  for (std::size_t i = 0; i < log_w.size(); ++i) total += w.normalized[i] = std::exp(log_w[i] - m);
  for (auto& v : w.normalized) v /= total;
  return w;
}

PosteriorDraw draw_posterior(const nn::InferenceNetwork& q, const Tensor& x, std::size_t k, RandomSource& rng,
                             bool frozen) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  PosteriorDraw d;
  d.batch = x.dim(0);
  d.k = k;
  d.x = x;
  d.x_rep = k == 1 ? x : ad::repeat_rows(x, k);
  d.sample = q.sample(d.x_rep, q.draw_noise(d.x_rep, rng), frozen);
  return d;
}

Tensor by_datum(const Tensor& flat, std::size_t batch, std::size_t k) { return ad::reshape(flat, {batch, k}); }

Tensor log_weights(const nn::ModelTriple& m, const PosteriorDraw& d) {
  if (!m.encoder->tractable() || !d.sample.log_q.defined()) {
    throw std::logic_error("ELBO requires tractable q");
  }
  auto lp = ad::add(m.generator->log_likelihood(d.x_rep, d.sample.z), m.prior->log_density(d.sample.z));
  return by_datum(ad::sub(lp, d.sample.log_q), d.batch, d.k);
}

Tensor elbo_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool analytic_kl) {
  if (!analytic_kl) return ad::mean(log_weights(m, d), 1);
  if (!m.encoder->tractable()) throw std::logic_error("ELBO requires tractable q");
  auto recon = ad::mean(by_datum(m.generator->log_likelihood(d.x_rep, d.sample.z), d.batch, d.k), 1);
  return ad::sub(recon, m.encoder->analytic_kl(d.x, m.prior->descriptor()));
}

Tensor iwae_terms(const nn::ModelTriple& m, const PosteriorDraw& d) { return log_mean_exp(log_weights(m, d), d.k); }

Tensor iwavb_generator_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool phi_through_iw) {
  return log_mean_exp(adversarial_integrand(m, d, nn::DiscriminatorMode::joint, phi_through_iw, false), d.k);
}

Tensor avb_inference_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool single_sample) {
  return k_average(adversarial_integrand(m, d, nn::DiscriminatorMode::joint, true, true), single_sample);
}

Tensor iwaae_generator_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool phi_through_iw) {
  return log_mean_exp(adversarial_integrand(m, d, nn::DiscriminatorMode::latent_only, phi_through_iw, false), d.k);
}

Tensor aae_inference_terms(const nn::ModelTriple& m, const PosteriorDraw& d, bool single_sample) {
  return k_average(adversarial_integrand(m, d, nn::DiscriminatorMode::latent_only, true, true), single_sample);
}

Tensor discriminator_objective(const nn::Discriminator& t, const Tensor* q_x, const Tensor& q_z, const Tensor* p_x,
                               const Tensor& p_z) {
  if (q_z.rank() == 0 || q_z.dim(0) == 0 || p_z.rank() == 0 || p_z.dim(0) == 0) {
    throw std::invalid_argument("discriminator objective needs non-empty sample batches");
  }
  auto tq = t.logit(q_x, ad::detach(q_z));
  auto tp = t.logit(p_x, ad::detach(p_z));
  return ad::add(ad::mean(ad::log_sigmoid(tq)), ad::mean(ad::log_sigmoid(ad::neg(tp))));
}

Tensor elbo(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng, bool analytic_kl) {
  return ad::mean(elbo_terms(m, draw_posterior(*m.encoder, x, k, rng), analytic_kl));
}

Tensor iwae_bound(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng) {
  return ad::mean(iwae_terms(m, draw_posterior(*m.encoder, x, k, rng)));
}

Tensor iwavb_generator_loss(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng) {
  return ad::mean(iwavb_generator_terms(m, draw_posterior(*m.encoder, x, k, rng)));
}

Tensor avb_inference_loss(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng) {
  return ad::mean(avb_inference_terms(m, draw_posterior(*m.encoder, x, k, rng)));
}

Tensor iwaae_generator_loss(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng) {
  return ad::mean(iwaae_generator_terms(m, draw_posterior(*m.encoder, x, k, rng)));
}

Tensor aae_inference_loss(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng) {
  return ad::mean(aae_inference_terms(m, draw_posterior(*m.encoder, x, k, rng)));
}

VimcoTerms vimco_terms(const nn::ModelTriple& m, const PosteriorDraw& d) {
  if (d.k < 2) throw std::invalid_argument("VIMCO needs k >= 2 for its leave-one-out control variate");
  if (!m.encoder->tractable() || !d.sample.log_q.defined()) {
    throw std::logic_error("VIMCO requires a tractable posterior");
  }
  const auto head = m.encoder->head();
  if (head != nn::Head::bernoulli && head != nn::Head::categorical) {
    throw std::logic_error("VIMCO requires a discrete posterior head");
  }
  const Tensor h = d.sample.hard.defined() ? d.sample.hard : ad::detach(d.sample.z);
  auto lq = by_datum(d.sample.log_q, d.batch, d.k);
  auto lp = by_datum(ad::add(m.generator->log_likelihood(d.x_rep, h), m.prior->log_density(h)), d.batch, d.k);
  auto lw = ad::sub(lp, lq);
  auto bound = log_mean_exp(lw, d.k);

  // Learning signal L - L_{-i}, where L_{-i} replaces log w_i by the mean of the others.
  const std::size_t k = d.k;
  std::vector<double> signal(d.batch * k);
  std::vector<double> row(k);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t i = 0; i < k; ++i) row[i] = lw.at(b * k + i);
    double total = 0.0;
    for (double v : row) total += v;
    const double full = bound.at(b);
    for (std::size_t i = 0; i < k; ++i) {
      const double replaced = (total - row[i]) / static_cast<double>(k - 1);
      double mx = replaced;
      for (std::size_t j = 0; j < k; ++j) {
        if (j != i) mx = std::max(mx, row[j]);
      }
      double acc = std::exp(replaced - mx);
      for (std::size_t j = 0; j < k; ++j) {
        if (j != i) acc += std::exp(row[j] - mx);
      }
      const double loo = mx + std::log(acc) - std::log(static_cast<double>(k));
      signal[b * k + i] = full - loo;
    }
  }
  auto score = ad::sum(ad::mul(lq, Tensor({d.batch, k}, std::move(signal))), 1);
  return {ad::mean(ad::add(bound, score)), bound};
}

GradientSet vimco_gradient(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng) {
  if (k < 2) throw std::invalid_argument("VIMCO needs k >= 2 for its leave-one-out control variate");
  return gradient_of(m, [&] { return vimco_terms(m, draw_posterior(*m.encoder, x, k, rng)).surrogate; });
}

GradientSet iwae_gradient(const nn::ModelTriple& m, const Tensor& x, std::size_t k, RandomSource& rng) {
  return gradient_of(m, [&] { return iwae_bound(m, x, k, rng); });
}

SNREstimate estimate_snr(const nn::ModelTriple& m, const Tensor& x, std::size_t k, std::size_t n_repeats,
                         const std::string& label, RandomSource& rng) {
  if (n_repeats < 30) throw std::invalid_argument("SNR estimation needs at least 30 repeats");
  SNREstimate est;
  est.label = label;
  for (std::size_t r = 0; r < n_repeats; ++r) {
    auto g = iwae_gradient(m, x, k, rng);
    std::vector<double> flat;
    for (const auto& p : model_parameters(m)) {
      if (p.name.rfind(label, 0) != 0) continue;
      const auto& v = g.at(p.name);
      flat.insert(flat.end(), v.begin(), v.end());
    }
    if (flat.empty()) throw std::invalid_argument("no parameters match label '" + label + "'");
    est.samples.push_back(std::move(flat));
  }
  const std::size_t dims = est.samples.front().size();
  const auto n = static_cast<double>(n_repeats);
  std::vector<double> finite;
  for (std::size_t c = 0; c < dims; ++c) {
    double mean = 0.0, lo = est.samples.front()[c], hi = lo;
    for (const auto& s : est.samples) {
      mean += s[c];
      lo = std::min(lo, s[c]);
      hi = std::max(hi, s[c]);
    }
    mean /= n;
    double ss = 0.0;
    for (const auto& s : est.samples) ss += (s[c] - mean) * (s[c] - mean);
    // Identical samples have zero spread even if the running mean rounds.
    const double sd = lo == hi ? 0.0 : std::sqrt(ss / (n - 1));
    const double ratio = sd > 0 ? std::abs(mean) / sd : std::numeric_limits<double>::infinity();
    est.ratio.push_back(ratio);
    if (std::isfinite(ratio)) finite.push_back(ratio);
  }
  if (finite.empty()) {
    est.median = std::numeric_limits<double>::infinity();
  } else {
    std::sort(finite.begin(), finite.end());
    const std::size_t h = finite.size() / 2;
    est.median = finite.size() % 2 ? finite[h] : 0.5 * (finite[h - 1] + finite[h]);
  }
  return est;
}

StepObjectives step_objectives(const nn::ModelTriple& m, const ObjectiveSpec& spec, const Tensor& x,
                               RandomSource& rng) {
  spec.validate();
  auto d = draw_posterior(*m.encoder, x, spec.k, rng);
  StepObjectives out;
  auto finish = [&](const Tensor& model, const Tensor& bound_terms) {
    out.model = model;
    out.bound = ad::mean(bound_terms).item();
  };
  switch (spec.family) {
    case Family::vae: {
      auto t = elbo_terms(m, d, spec.analytic_kl);
      finish(ad::mean(t), t);
      break;
    }
    case Family::iwae: {
      auto t = iwae_terms(m, d);
      finish(ad::mean(t), t);
      break;
    }
    case Family::avb:
    case Family::aae: {
      const auto mode = spec.family == Family::avb ? nn::DiscriminatorMode::joint : nn::DiscriminatorMode::latent_only;
      auto t = k_average(adversarial_integrand(m, d, mode, true, false), spec.single_sample_phi);
      finish(ad::mean(t), t);
      break;
    }
    case Family::iw_avb:
    case Family::iw_aae: {
      const bool joint = spec.family == Family::iw_avb;
      auto gen = joint ? iwavb_generator_terms(m, d, spec.phi_through_iw) : iwaae_generator_terms(m, d, spec.phi_through_iw);
      if (spec.phi_through_iw) {
        finish(ad::mean(gen), gen);
      } else {
        auto inf = joint ? avb_inference_terms(m, d, spec.single_sample_phi)
                         : aae_inference_terms(m, d, spec.single_sample_phi);
        finish(ad::add(ad::mean(gen), ad::mean(inf)), gen);
      }
      break;
    }
    default: {
      auto v = vimco_terms(m, d);
      finish(v.surrogate, v.bound);
    }
  }
  return out;
}

Tensor discriminator_step_objective(const nn::ModelTriple& m, const ObjectiveSpec& spec, const Tensor& x,
                                    RandomSource& rng) {
  spec.validate();
  if (spec.discriminator == DiscriminatorUse::none) {
    throw std::invalid_argument("objective " + to_string(spec.family) + " has no discriminator");
  }
  if (spec.discriminator == DiscriminatorUse::joint) {
    const auto& t = require_discriminator(m, nn::DiscriminatorMode::joint);
    auto d = draw_posterior(*m.encoder, x, spec.disc_uses_all_k ? spec.k : 1, rng, true);
    auto p_z = m.prior->sample(m.encoder->latent_shape(d.x_rep), rng);
    return discriminator_objective(t, &d.x_rep, d.sample.z, &d.x_rep, p_z);
  }
  // Aggregate posterior: one fresh z per datum.
  const auto& t = require_discriminator(m, nn::DiscriminatorMode::latent_only);
  auto d = draw_posterior(*m.encoder, x, 1, rng, true);
  auto p_z = m.prior->sample(m.encoder->latent_shape(x), rng);
  return discriminator_objective(t, nullptr, d.sample.z, nullptr, p_z);
}

}  // namespace iwadv::obj
