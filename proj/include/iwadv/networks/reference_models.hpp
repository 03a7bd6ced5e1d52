#pragma once

#include "iwadv/networks/encoders.hpp"
#include "iwadv/networks/generators.hpp"

namespace iwadv::nn {

/// p(z) = N(0, I), p(x|z) = N(z, s^2 I) in `dim` dimensions, with linear networks
/// set to the exact posterior q(z|x) = N(x / (1 + s^2), s^2 / (1 + s^2) I). Every
/// weight is then moved by N(0, perturbation^2) noise. The decoder's sigma is fixed.
ModelTriple linear_gaussian(std::size_t dim, double perturbation, RandomSource& rng, double obs_std = 1.0);

/// log N(x; 0, (1 + s^2) I) per row, the exact marginal of the unperturbed model.
std::vector<double> linear_gaussian_log_marginal(const Tensor& x, double obs_std = 1.0);

/// Rows drawn from the unperturbed model's marginal.
Tensor sample_linear_gaussian(std::size_t batch, std::size_t dim, RandomSource& rng, double obs_std = 1.0);

}  // namespace iwadv::nn
