#include "iwadv/networks/generators.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "iwadv/networks/encoders.hpp"

namespace iwadv::nn {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2 * std::numbers::pi);

std::vector<Dense> build_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                             RandomSource& rng) {
  std::vector<Dense> layers;
  for (auto h : hidden) {
    layers.emplace_back(in, h, rng);
    in = h;
  }
  layers.emplace_back(in, out, rng);
  return layers;
}

Tensor run_mlp(const std::vector<Dense>& layers, Tensor h, Activation act, bool frozen) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = layers[l].forward(h, frozen);
    if (l + 1 < layers.size()) h = activate(h, act);
  }
  return h;
}

void collect_mlp(const std::vector<Dense>& layers, ParameterList& out) {
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect("dense" + std::to_string(l), out);
}

void check_latent(const Tensor& z, std::size_t dim) {
  if (z.rank() != 2 || z.dim(1) != dim) {
    throw ad::ShapeError("latent must be [batch, " + std::to_string(dim) + "], got " + ad::shape_str(z.shape()));
  }
}

Tensor scalar_param(double v, bool learn) {
  auto t = Tensor::scalar(v);
  t.set_requires_grad(learn);
  return t;
}

}  // namespace

// ---------------------------------------------------------------- Gaussian

DenseGaussianDecoder::DenseGaussianDecoder(const ArchitectureConfig& config, RandomSource& rng,
                                           double init_log_sigma, bool learn_sigma)
    : config_(config), learn_sigma_(learn_sigma) {
  if (config_.input_dim == 0 || config_.latent_dim == 0) throw std::invalid_argument("decoder sizes must be positive");
  layers_ = build_mlp(config_.latent_dim, config_.hidden, config_.input_dim, rng);
  log_sigma_ = Tensor::full({config_.input_dim}, init_log_sigma);
  log_sigma_.set_requires_grad(learn_sigma);
}

Tensor DenseGaussianDecoder::mean(const Tensor& z, bool frozen) const {
  check_latent(z, config_.latent_dim);
  return run_mlp(layers_, z, config_.activation, frozen);
}

Tensor DenseGaussianDecoder::log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const {
  auto m = mean(z, frozen);
  if (x.shape() != m.shape()) throw ad::ShapeError("data " + ad::shape_str(x.shape()) + " vs decoder output " + ad::shape_str(m.shape()));
  auto ls = use(log_sigma_, frozen);
  auto u = ad::mul(ad::sub(x, m), ad::exp(ad::neg(ls)));
  return ad::sum(ad::add(ad::sub(ad::mul(ad::square(u), -0.5), ls), -kHalfLog2Pi), 1);
}

Tensor DenseGaussianDecoder::sample(const Tensor& z, RandomSource& rng) const {
  ad::NoGradScope off;
  auto m = mean(z, true);
  auto eps = rng.gaussian(m.shape());
  return ad::add(m, ad::mul(eps, ad::exp(log_sigma_)));
}

ParameterList DenseGaussianDecoder::parameters() const {
  ParameterList out;
  collect_mlp(layers_, out);
  if (learn_sigma_) out.push_back({"log_sigma", log_sigma_});
  return out;
}

Json DenseGaussianDecoder::descriptor() const {
  return {{"type", "dense_gaussian_decoder"},
          {"arch", config_.to_json()},
          {"init_log_sigma", log_sigma_.at(0)},
          {"learn_sigma", learn_sigma_}};
}

// ---------------------------------------------------------------- Bernoulli

DenseBernoulliDecoder::DenseBernoulliDecoder(const ArchitectureConfig& config, RandomSource& rng) : config_(config) {
  if (config_.input_dim == 0 || config_.latent_dim == 0) throw std::invalid_argument("decoder sizes must be positive");
  layers_ = build_mlp(config_.latent_dim, config_.hidden, config_.input_dim, rng);
}

Tensor DenseBernoulliDecoder::logits(const Tensor& z, bool frozen) const {
  check_latent(z, config_.latent_dim);
  return run_mlp(layers_, z, config_.activation, frozen);
}

Tensor DenseBernoulliDecoder::log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const {
  auto l = logits(z, frozen);
  if (x.shape() != l.shape()) throw ad::ShapeError("data " + ad::shape_str(x.shape()) + " vs decoder output " + ad::shape_str(l.shape()));
  auto lp = ad::add(ad::mul(x, ad::log_sigmoid(l)), ad::mul(ad::add(ad::neg(x), 1.0), ad::log_sigmoid(ad::neg(l))));
  return ad::sum(lp, 1);
}

Tensor DenseBernoulliDecoder::sample(const Tensor& z, RandomSource& rng) const {
  ad::NoGradScope off;
  auto p = ad::sigmoid(logits(z, true));
  std::vector<double> v(p.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform() < p.at(i) ? 1.0 : 0.0;
  return Tensor(p.shape(), std::move(v));
}

ParameterList DenseBernoulliDecoder::parameters() const {
  ParameterList out;
  collect_mlp(layers_, out);
  return out;
}

Json DenseBernoulliDecoder::descriptor() const {
  return {{"type", "dense_bernoulli_decoder"}, {"arch", config_.to_json()}};
}

// ---------------------------------------------------------------- biophysical

BiophysicalGenerator::BiophysicalGenerator(const spike::BiophysParams& params, Learnable learn)
    : base_(params), learn_(learn) {
  params.validate();
  if (!(params.sigma > 0)) throw std::invalid_argument("biophysical generator needs sigma > 0");
  alpha_ = scalar_param(params.alpha, learn.alpha);
  beta_ = scalar_param(params.beta, learn.beta);
  log_sigma_ = scalar_param(std::log(params.sigma), learn.sigma);
  log_tau_ = scalar_param(std::log(params.tau), learn.tau);
}

spike::BiophysParams BiophysicalGenerator::current() const {
  auto p = base_;
  p.alpha = alpha_.item();
  p.beta = beta_.item();
  p.sigma = std::exp(log_sigma_.item());
  p.tau = std::exp(log_tau_.item());
  return p;
}

Tensor BiophysicalGenerator::log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const {
  auto gamma = ad::add(ad::mul(ad::exp(ad::neg(use(log_tau_, frozen))), -base_.dt), 1.0);
  if (!(gamma.item() > 0 && gamma.item() < 1)) throw ad::DomainError("calcium decay left (0, 1): tau too small for dt");
  return spike::trace_log_likelihood(x, z, gamma, use(alpha_, frozen), use(beta_, frozen),
                                     ad::exp(use(log_sigma_, frozen)));
}

Tensor BiophysicalGenerator::sample(const Tensor& z, RandomSource& rng) const {
  auto p = current();
  const std::size_t batch = z.dim(0), frames = z.dim(1);
  std::vector<double> out;
  out.reserve(z.size());
  for (std::size_t b = 0; b < batch; ++b) {
    spike::SpikeTrain s{{z.values().begin() + static_cast<std::ptrdiff_t>(b * frames),
                         z.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * frames)},
                        p.frame_rate()};
    auto f = spike::simulate_trace(p, s, rng);
    out.insert(out.end(), f.values.begin(), f.values.end());
  }
  return Tensor(z.shape(), std::move(out));
}

ParameterList BiophysicalGenerator::parameters() const {
  ParameterList out;
  if (learn_.alpha) out.push_back({"alpha", alpha_});
  if (learn_.beta) out.push_back({"beta", beta_});
  if (learn_.sigma) out.push_back({"log_sigma", log_sigma_});
  if (learn_.tau) out.push_back({"log_tau", log_tau_});
  return out;
}

Json BiophysicalGenerator::descriptor() const {
  auto p = current();
  return {{"type", "biophysical"},
          {"params",
           {{"tau", p.tau}, {"alpha", p.alpha}, {"beta", p.beta}, {"sigma", p.sigma}, {"dt", p.dt}, {"rate", p.rate}}},
          {"learn", {{"alpha", learn_.alpha}, {"beta", learn_.beta}, {"sigma", learn_.sigma}, {"tau", learn_.tau}}}};
}

// ---------------------------------------------------------------- tabular

TabularGenerator::TabularGenerator(std::size_t nz, std::size_t nx, RandomSource& rng)
    : logits_(uniform_init({nz, nx}, 1, rng)) {}

TabularGenerator::TabularGenerator(Tensor logits) : logits_(std::move(logits)) {
  if (logits_.rank() != 2) throw ad::ShapeError("tabular generator logits must be [nz, nx]");
  logits_.set_requires_grad(true);
}

Tensor TabularGenerator::log_table(bool frozen) const {
  auto l = use(logits_, frozen);
  return ad::sub(l, ad::logsumexp(l, 1, true));
}

Tensor TabularGenerator::log_likelihood_impl(const Tensor& x, const Tensor& z, bool frozen) const {
  const std::size_t nz = logits_.dim(0), nx = logits_.dim(1);
  auto zi = as_indices(z, nz, "z");
  auto xi = as_indices(x, nx, "x");
  if (zi.size() != xi.size()) throw ad::ShapeError("x and z batches differ");
  std::vector<double> onehot(xi.size() * nx, 0.0);
  for (std::size_t b = 0; b < xi.size(); ++b) onehot[b * nx + xi[b]] = 1.0;
  return ad::sum(ad::mul(ad::gather_rows(log_table(frozen), zi), Tensor({xi.size(), nx}, std::move(onehot))), 1);
}

Tensor TabularGenerator::sample(const Tensor& z, RandomSource& rng) const {
  const std::size_t nz = logits_.dim(0), nx = logits_.dim(1);
  auto zi = as_indices(z, nz, "z");
  auto table = log_table(true);
  std::vector<double> out(zi.size());
  for (std::size_t b = 0; b < zi.size(); ++b) {
    double u = rng.uniform(), acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < nx; ++k) {
      acc += std::exp(table.at(zi[b] * nx + k));
      if (u < acc) break;
    }
    out[b] = static_cast<double>(k);
  }
  return Tensor({zi.size(), 1}, std::move(out));
}

Json TabularGenerator::descriptor() const {
  return {{"type", "tabular_generator"}, {"nz", logits_.dim(0)}, {"nx", logits_.dim(1)}};
}

// ---------------------------------------------------------------- priors

Tensor StandardNormalPrior::log_density(const Tensor& z) const {
  if (z.rank() != 2) throw ad::ShapeError("prior expects [batch, dim] latents");
  return ad::sum(ad::add(ad::mul(ad::square(z), -0.5), -kHalfLog2Pi), 1);
}

BernoulliPrior::BernoulliPrior(double rate) : rate_(rate) {
  if (!(rate > 0 && rate < 1)) throw std::invalid_argument("Bernoulli prior rate must lie in (0, 1)");
}

Tensor BernoulliPrior::log_density(const Tensor& z) const {
  if (z.rank() != 2) throw ad::ShapeError("prior expects [batch, frames] latents");
  const double a = std::log(rate_), b = std::log1p(-rate_);
  return ad::sum(ad::add(ad::mul(z, a - b), b), 1);
}

CategoricalPrior::CategoricalPrior(std::vector<double> probs) : probs_(std::move(probs)) {
  double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
  if (probs_.empty() || std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("categorical prior must sum to 1");
  for (double p : probs_) {
    if (!(p > 0)) throw std::invalid_argument("categorical prior probabilities must be positive");
  }
}

Tensor CategoricalPrior::sample(const Shape& shape, RandomSource& rng) const {
  std::vector<double> out(ad::numel(shape));
  for (auto& v : out) {
    double u = rng.uniform(), acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < probs_.size(); ++k) {
      acc += probs_[k];
      if (u < acc) break;
    }
    v = static_cast<double>(k);
  }
  return Tensor(shape, std::move(out));
}

Tensor CategoricalPrior::log_density(const Tensor& z) const {
  auto zi = as_indices(z, probs_.size(), "z");
  std::vector<double> out(zi.size());
  for (std::size_t b = 0; b < zi.size(); ++b) out[b] = std::log(probs_[zi[b]]);
  return Tensor::vector(std::move(out));
}

}  // namespace iwadv::nn
