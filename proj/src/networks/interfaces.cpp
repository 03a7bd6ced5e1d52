#include "iwadv/networks/interfaces.hpp"

#include <stdexcept>

namespace iwadv::nn {

Head parse_head(const std::string& name) {
  if (name == "gaussian") return Head::gaussian;
  if (name == "bernoulli") return Head::bernoulli;
  if (name == "implicit") return Head::implicit;
  if (name == "categorical") return Head::categorical;
  throw std::invalid_argument("unknown encoder head '" + name + "'");
}

std::string to_string(Head h) {
  switch (h) {
    case Head::gaussian:
      return "gaussian";
    case Head::bernoulli:
      return "bernoulli";
    case Head::implicit:
      return "implicit";
    default:
      return "categorical";
  }
}

std::string to_string(DiscriminatorMode m) { return m == DiscriminatorMode::joint ? "joint" : "latent_only"; }

DiscriminatorMode parse_discriminator_mode(const std::string& name) {
  if (name == "joint") return DiscriminatorMode::joint;
  if (name == "latent_only") return DiscriminatorMode::latent_only;
  throw std::invalid_argument("unknown discriminator mode '" + name + "'");
}

Tensor InferenceNetwork::log_density(const Tensor&, const Tensor&, bool) const {
  throw std::logic_error("this inference network has no tractable density");
}

Tensor InferenceNetwork::analytic_kl(const Tensor&, const Json& prior, bool) const {
  throw std::logic_error("no closed-form KL between this encoder and prior " + prior.dump());
}

Tensor Generator::log_likelihood(const Tensor& x, const Tensor& z, bool frozen) const {
  auto ll = log_likelihood_impl(x, z, frozen);
  check_finite(ll, "log p(x|z)");
  return ll;
}

Tensor Discriminator::logit(const Tensor* x, const Tensor& z, bool frozen) const {
  if (mode_ == DiscriminatorMode::latent_only && x) {
    throw std::invalid_argument("latent-only discriminator must not be given x");
  }
  if (mode_ == DiscriminatorMode::joint) {
    if (!x) throw std::invalid_argument("joint discriminator needs x");
    if (x->dim(0) != z.dim(0)) {
      throw ad::ShapeError("discriminator batch mismatch: x " + ad::shape_str(x->shape()) + ", z " +
                           ad::shape_str(z.shape()));
    }
  }
  auto t = logit_impl(x, z, frozen);
  check_finite(t, "discriminator logit");
  return t;
}

ParameterList ModelTriple::parameters() const {
  ParameterList out;
  auto add = [&](const char* prefix, const Module* m) {
    if (!m) return;
    for (auto& p : m->parameters()) out.push_back({prefix + p.name, p.tensor});
  };
  add("phi.", encoder.get());
  add("theta.", generator.get());
  add("psi.", discriminator.get());
  return out;
}

Json ModelTriple::descriptor() const {
  Json j;
  j["encoder"] = encoder ? encoder->descriptor() : Json();
  j["generator"] = generator ? generator->descriptor() : Json();
  j["prior"] = prior ? prior->descriptor() : Json();
  j["discriminator"] = discriminator ? discriminator->descriptor() : Json();
  return j;
}

}  // namespace iwadv::nn
