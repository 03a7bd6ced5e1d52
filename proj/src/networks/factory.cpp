#include "iwadv/networks/factory.hpp"

#include <map>
#include <stdexcept>

namespace iwadv::nn {

namespace {
std::string type_of(const Json& desc, const char* what) {
  if (!desc.is_object() || !desc.contains("type")) {
    throw std::invalid_argument(std::string(what) + " descriptor has no 'type'");
  }
  return desc.at("type").get<std::string>();
}
}  // namespace

std::shared_ptr<InferenceNetwork> make_encoder(const Json& desc, RandomSource& rng) {
  const auto type = type_of(desc, "encoder");
  if (type == "dense_encoder") {
    return std::make_shared<DenseEncoder>(ArchitectureConfig::from_json(desc.at("arch")),
                                          parse_head(desc.at("head")), rng);
  }
  if (type == "conv_spike_encoder") {
    return std::make_shared<ConvSpikeEncoder>(ArchitectureConfig::from_json(desc.at("arch")), rng);
  }
  if (type == "autoregressive_spike_encoder") {
    return std::make_shared<AutoregressiveSpikeEncoder>(ArchitectureConfig::from_json(desc.at("arch")), rng);
  }
  if (type == "tabular_encoder") {
    return std::make_shared<TabularEncoder>(desc.at("nx").get<std::size_t>(), desc.at("nz").get<std::size_t>(), rng);
  }
  throw std::invalid_argument("unknown encoder type '" + type + "'");
}

std::shared_ptr<Generator> make_generator(const Json& desc, RandomSource& rng) {
  const auto type = type_of(desc, "generator");
  if (type == "dense_gaussian_decoder") {
    return std::make_shared<DenseGaussianDecoder>(ArchitectureConfig::from_json(desc.at("arch")), rng,
                                                  desc.value("init_log_sigma", 0.0), desc.value("learn_sigma", true));
  }
  if (type == "dense_bernoulli_decoder") {
    return std::make_shared<DenseBernoulliDecoder>(ArchitectureConfig::from_json(desc.at("arch")), rng);
  }
  if (type == "biophysical") {
    spike::BiophysParams p;
    const auto& j = desc.at("params");
    p.tau = j.value("tau", p.tau);
    p.alpha = j.value("alpha", p.alpha);
    p.beta = j.value("beta", p.beta);
    p.sigma = j.value("sigma", p.sigma);
    p.dt = j.value("dt", p.dt);
    p.rate = j.value("rate", p.rate);
    BiophysicalGenerator::Learnable learn;
    if (desc.contains("learn")) {
      const auto& l = desc.at("learn");
      learn.alpha = l.value("alpha", false);
      learn.beta = l.value("beta", false);
      learn.sigma = l.value("sigma", false);
      learn.tau = l.value("tau", false);
    }
    return std::make_shared<BiophysicalGenerator>(p, learn);
  }
  if (type == "tabular_generator") {
    return std::make_shared<TabularGenerator>(desc.at("nz").get<std::size_t>(), desc.at("nx").get<std::size_t>(), rng);
  }
  throw std::invalid_argument("unknown generator type '" + type + "'");
}

std::shared_ptr<Discriminator> make_discriminator(const Json& desc, RandomSource& rng) {
  if (desc.is_null()) return nullptr;
  const auto type = type_of(desc, "discriminator");
  const auto mode = parse_discriminator_mode(desc.at("mode"));
  if (type == "dense_discriminator") {
    return std::make_shared<DenseDiscriminator>(mode, desc.value("x_dim", std::size_t{0}), desc.at("z_dim").get<std::size_t>(),
                                                desc.value("hidden", std::vector<std::size_t>{}),
                                                parse_activation(desc.value("activation", std::string("relu"))), rng);
  }
  if (type == "conv_discriminator") {
    return std::make_shared<ConvDiscriminator>(mode, ArchitectureConfig::from_json(desc.at("arch")), rng);
  }
  throw std::invalid_argument("discriminator type '" + type + "' cannot be rebuilt from a descriptor");
}

std::shared_ptr<LatentPrior> make_prior(const Json& desc) {
  const auto type = type_of(desc, "prior");
  if (type == "standard_normal") return std::make_shared<StandardNormalPrior>();
  if (type == "bernoulli") return std::make_shared<BernoulliPrior>(desc.at("rate").get<double>());
  if (type == "categorical") return std::make_shared<CategoricalPrior>(desc.at("probs").get<std::vector<double>>());
  throw std::invalid_argument("unknown prior type '" + type + "'");
}

ModelTriple make_model(const Json& desc, RandomSource& rng) {
  ModelTriple m;
  m.encoder = make_encoder(desc.at("encoder"), rng);
  m.generator = make_generator(desc.at("generator"), rng);
  m.prior = make_prior(desc.at("prior"));
  m.discriminator = make_discriminator(desc.value("discriminator", Json()), rng);
  return m;
}

void assign_parameters(const ParameterList& dst, const ParameterList& src) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& p : src) by_name[p.name] = &p.tensor;
  for (const auto& p : dst) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::invalid_argument("parameter '" + p.name + "' missing from source");
    if (it->second->shape() != p.tensor.shape()) {
      throw ad::ShapeError("parameter '" + p.name + "' has shape " + ad::shape_str(p.tensor.shape()) +
                           " but the source has " + ad::shape_str(it->second->shape()));
    }
    Tensor target = p.tensor;
    auto v = target.mutable_values();
    auto s = it->second->values();
    std::copy(s.begin(), s.end(), v.begin());
  }
}

}  // namespace iwadv::nn
