#include "iwadv/networks/reference_models.hpp"

#include <cmath>
#include <numbers>

namespace iwadv::nn {

ModelTriple linear_gaussian(std::size_t dim, double perturbation, RandomSource& rng, double obs_std) {
  if (!(obs_std > 0)) throw std::invalid_argument("observation std must be positive");
  const double var = obs_std * obs_std;
  ArchitectureConfig arch;
  arch.input_dim = dim;
  arch.latent_dim = dim;
  auto enc = std::make_shared<DenseEncoder>(arch, Head::gaussian, rng);
  auto dec = std::make_shared<DenseGaussianDecoder>(arch, rng, std::log(obs_std), false);

  // encoder weight [dim, 2 dim]: mean columns first, then log std columns
  auto& e = enc->layers().front();
  auto ew = e.weight.mutable_values();
  auto eb = e.bias.mutable_values();
  std::fill(ew.begin(), ew.end(), 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    ew[i * 2 * dim + i] = 1.0 / (1.0 + var);
    eb[i] = 0.0;
    eb[dim + i] = 0.5 * std::log(var / (1.0 + var));
  }
  auto& d = dec->layers().front();
  auto dw = d.weight.mutable_values();
  std::fill(dw.begin(), dw.end(), 0.0);
  for (std::size_t i = 0; i < dim; ++i) dw[i * dim + i] = 1.0;
  auto db = d.bias.mutable_values();
  std::fill(db.begin(), db.end(), 0.0);

  ModelTriple m{enc, dec, std::make_shared<StandardNormalPrior>(), nullptr};
  if (perturbation > 0) {
    for (auto& p : m.parameters()) {
      for (auto& v : p.tensor.mutable_values()) v += perturbation * rng.gaussian();
    }
  }
  return m;
}

std::vector<double> linear_gaussian_log_marginal(const Tensor& x, double obs_std) {
  const double v = 1.0 + obs_std * obs_std;
  const std::size_t n = x.dim(0), dim = x.dim(1);
  std::vector<double> out(n);
  for (std::size_t b = 0; b < n; ++b) {
    double ss = 0.0;
    for (std::size_t j = 0; j < dim; ++j) ss += x.at(b * dim + j) * x.at(b * dim + j);
    out[b] = -0.5 * static_cast<double>(dim) * std::log(2 * std::numbers::pi * v) - ss / (2 * v);
  }
  return out;
}

Tensor sample_linear_gaussian(std::size_t batch, std::size_t dim, RandomSource& rng, double obs_std) {
  auto x = rng.gaussian({batch, dim});
  for (auto& v : x.mutable_values()) v *= std::sqrt(1.0 + obs_std * obs_std);
  return x;
}

}  // namespace iwadv::nn
