#pragma once

#include "iwadv/networks/discriminators.hpp"
#include "iwadv/networks/encoders.hpp"
#include "iwadv/networks/generators.hpp"

namespace iwadv::nn {

/// Builders from descriptor JSON, the inverse of Module::descriptor(). Weights
/// are freshly initialized from `rng`; checkpoints overwrite them by name.
std::shared_ptr<InferenceNetwork> make_encoder(const Json& desc, RandomSource& rng);
std::shared_ptr<Generator> make_generator(const Json& desc, RandomSource& rng);
std::shared_ptr<Discriminator> make_discriminator(const Json& desc, RandomSource& rng);
std::shared_ptr<LatentPrior> make_prior(const Json& desc);
ModelTriple make_model(const Json& desc, RandomSource& rng);

/// Copies values from `src` into same-named tensors of `dst`; throws naming any
/// missing parameter or shape mismatch.
void assign_parameters(const ParameterList& dst, const ParameterList& src);

}  // namespace iwadv::nn
