#include "iwadv/networks/encoders.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace iwadv::nn {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2 * std::numbers::pi);

Tensor bernoulli_log_prob(const Tensor& logits, const Tensor& s) {
  // s log sigma(l) + (1 - s) log sigma(-l), summed over frames
  auto one_minus = ad::add(ad::neg(s), 1.0);
  auto lp = ad::add(ad::mul(s, ad::log_sigmoid(logits)), ad::mul(one_minus, ad::log_sigmoid(ad::neg(logits))));
  return ad::sum(lp, 1);
}

Tensor bernoulli_kl(const Tensor& logits, double rate) {
  if (!(rate > 0 && rate < 1)) throw std::invalid_argument("Bernoulli prior rate must lie in (0, 1)");
  auto p = ad::sigmoid(logits);
  auto q = ad::add(ad::neg(p), 1.0);
  auto t1 = ad::mul(p, ad::add(ad::log_sigmoid(logits), -std::log(rate)));
  auto t2 = ad::mul(q, ad::add(ad::log_sigmoid(ad::neg(logits)), -std::log1p(-rate)));
  return ad::sum(ad::add(t1, t2), 1);
}

Tensor hard_threshold(const Tensor& probs, const Tensor& u) {
  if (probs.shape() != u.shape()) {
    throw ad::ShapeError("uniform noise " + ad::shape_str(u.shape()) + " does not match probabilities " +
                         ad::shape_str(probs.shape()));
  }
  std::vector<double> hard(probs.size());
  auto p = probs.values();
  auto uv = u.values();
  for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = uv[i] < p[i] ? 1.0 : 0.0;
  return Tensor(probs.shape(), std::move(hard));
}

void check_noise(const Tensor& noise, const Shape& expected, const char* what) {
  if (!noise.defined() || noise.shape() != expected) {
    throw ad::ShapeError(std::string(what) + " noise must have shape " + ad::shape_str(expected) + ", got " +
                         (noise.defined() ? ad::shape_str(noise.shape()) : std::string("none")));
  }
}

std::pair<std::size_t, std::size_t> same_pad(std::size_t width) {
  auto p = ad::Padding::same(width);
  return {p.left, p.right};
}

}  // namespace

std::vector<std::size_t> as_indices(const Tensor& t, std::size_t bound, const char* what) {
  std::vector<std::size_t> out(t.size());
  auto v = t.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(v[i] >= 0) || v[i] != std::floor(v[i]) || v[i] >= static_cast<double>(bound)) {
      throw std::invalid_argument(std::string(what) + " value " + std::to_string(v[i]) +
                                  " is not an index below " + std::to_string(bound));
    }
    out[i] = static_cast<std::size_t>(v[i]);
  }
  return out;
}

// ---------------------------------------------------------------- dense

DenseEncoder::DenseEncoder(const ArchitectureConfig& config, Head head, RandomSource& rng)
    : config_(config), head_(head) {
  config_.validate_dense();
  if (head == Head::categorical) throw std::invalid_argument("dense encoder has no categorical head");
  if (head == Head::implicit && config_.noise_layers.empty()) {
    throw std::invalid_argument("implicit head needs at least one noise injection site");
  }
  std::size_t in = config_.input_dim;
  const std::size_t depth = config_.hidden.size();
  for (std::size_t l = 0; l <= depth; ++l) {
    if (contains(config_.noise_layers, l)) in += config_.noise_dim;
    std::size_t out = l < depth ? config_.hidden[l]
                                : (head == Head::gaussian ? 2 * config_.latent_dim : config_.latent_dim);
    layers_.emplace_back(in, out, rng);
    in = out;
  }
}

bool DenseEncoder::tractable() const { return head_ != Head::implicit && config_.noise_layers.empty(); }

Shape DenseEncoder::latent_shape(const Tensor& x) const { return {x.dim(0), config_.latent_dim}; }

PosteriorNoise DenseEncoder::draw_noise(const Tensor& x, RandomSource& rng) const {
  PosteriorNoise n;
  const std::size_t batch = x.dim(0);
  if (!config_.noise_layers.empty()) {
    n.injected = rng.gaussian({batch, config_.noise_dim * config_.noise_layers.size()});
  }
  if (head_ == Head::gaussian) n.head = rng.gaussian({batch, config_.latent_dim});
  if (head_ == Head::bernoulli) n.head = rng.uniform({batch, config_.latent_dim});
  return n;
}

Tensor DenseEncoder::trunk(const Tensor& x, const Tensor& injected, bool frozen) const {
  if (x.rank() != 2 || x.dim(1) != config_.input_dim) {
    throw ad::ShapeError("encoder input must be [batch, " + std::to_string(config_.input_dim) + "], got " +
                         ad::shape_str(x.shape()));
  }
  if (!config_.noise_layers.empty()) {
    check_noise(injected, {x.dim(0), config_.noise_dim * config_.noise_layers.size()}, "injected");
  }
  Tensor h = x;
  std::size_t site = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (contains(config_.noise_layers, l)) {
      auto eps = ad::slice(injected, 1, site * config_.noise_dim, (site + 1) * config_.noise_dim);
      h = ad::concat({h, eps}, 1);
      ++site;
    }
    h = layers_[l].forward(h, frozen);
    if (l + 1 < layers_.size()) h = activate(h, config_.activation);
  }
  return h;
}

PosteriorSample DenseEncoder::sample(const Tensor& x, const PosteriorNoise& noise, bool frozen) const {
  auto out = trunk(x, noise.injected, frozen);
  const std::size_t d = config_.latent_dim;
  const Shape zshape{x.dim(0), d};
  PosteriorSample s;
  switch (head_) {
    case Head::gaussian: {
      check_noise(noise.head, zshape, "head");
      s.mean = ad::slice(out, 1, 0, d);
      s.log_std = ad::slice(out, 1, d, 2 * d);
      s.z = ad::add(s.mean, ad::mul(ad::exp(s.log_std), noise.head));
      if (tractable()) {
        auto per = ad::add(ad::add(ad::neg(s.log_std), ad::mul(ad::square(noise.head), -0.5)), -kHalfLog2Pi);
        s.log_q = ad::sum(per, 1);
      }
      break;
    }
    case Head::bernoulli: {
      check_noise(noise.head, zshape, "head");
      s.logits = out;
      s.probs = ad::sigmoid(out);
      s.hard = hard_threshold(s.probs, noise.head);
      s.z = ad::straight_through(s.probs, s.hard);
      if (tractable()) s.log_q = bernoulli_log_prob(s.logits, s.hard);
      break;
    }
    default:
      s.z = out;
  }
  return s;
}

Tensor DenseEncoder::log_density(const Tensor& x, const Tensor& z, bool frozen) const {
  if (!tractable()) throw std::logic_error("log density of an implicit (noise-injected) encoder");
  auto out = trunk(x, Tensor(), frozen);
  const std::size_t d = config_.latent_dim;
  if (head_ == Head::bernoulli) return bernoulli_log_prob(out, z);
  auto mean = ad::slice(out, 1, 0, d);
  auto log_std = ad::slice(out, 1, d, 2 * d);
  auto u = ad::mul(ad::sub(z, mean), ad::exp(ad::neg(log_std)));
  return ad::sum(ad::add(ad::sub(ad::mul(ad::square(u), -0.5), log_std), -kHalfLog2Pi), 1);
}

Tensor DenseEncoder::analytic_kl(const Tensor& x, const Json& prior, bool frozen) const {
  if (!tractable()) throw std::logic_error("analytic KL of an implicit encoder");
  auto out = trunk(x, Tensor(), frozen);
  const std::size_t d = config_.latent_dim;
  const std::string type = prior.at("type");
  if (head_ == Head::gaussian && type == "standard_normal") {
    auto mean = ad::slice(out, 1, 0, d);
    auto log_std = ad::slice(out, 1, d, 2 * d);
    auto per = ad::sub(ad::add(ad::add(ad::exp(ad::mul(log_std, 2.0)), ad::square(mean)), -1.0),
                       ad::mul(log_std, 2.0));
    return ad::mul(ad::sum(per, 1), 0.5);
  }
  if (head_ == Head::bernoulli && type == "bernoulli") return bernoulli_kl(out, prior.at("rate"));
  return InferenceNetwork::analytic_kl(x, prior, frozen);
}

ParameterList DenseEncoder::parameters() const {
  ParameterList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("dense" + std::to_string(l), out);
  return out;
}

Json DenseEncoder::descriptor() const {
  return {{"type", "dense_encoder"}, {"head", to_string(head_)}, {"arch", config_.to_json()}};
}

// ---------------------------------------------------------------- conv

ConvSpikeEncoder::ConvSpikeEncoder(const ArchitectureConfig& config, RandomSource& rng) : config_(config) {
  config_.validate_conv();
  std::size_t in = 1;
  for (std::size_t l = 0; l < config_.conv_widths.size(); ++l) {
    if (contains(config_.noise_layers, l)) in += config_.noise_channels;
    layers_.emplace_back(in, config_.filters[l], config_.conv_widths[l], rng);
    in = config_.filters[l];
  }
  out_ = Conv(in, 1, 1, rng);
}

PosteriorNoise ConvSpikeEncoder::draw_noise(const Tensor& x, RandomSource& rng) const {
  PosteriorNoise n;
  if (!config_.noise_layers.empty()) {
    n.injected = rng.gaussian({x.dim(0), config_.noise_channels * config_.noise_layers.size(), x.dim(1)});
  }
  n.head = rng.uniform(x.shape());
  return n;
}

Tensor ConvSpikeEncoder::logits(const Tensor& x, const Tensor& injected, bool frozen) const {
  if (x.rank() != 2) throw ad::ShapeError("spike encoder input must be [batch, frames], got " + ad::shape_str(x.shape()));
  const std::size_t batch = x.dim(0), frames = x.dim(1);
  const std::size_t nc = config_.noise_channels;
  if (!config_.noise_layers.empty()) check_noise(injected, {batch, nc * config_.noise_layers.size(), frames}, "injected");
  Tensor h = ad::reshape(x, {batch, 1, frames});
  std::size_t site = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (contains(config_.noise_layers, l)) {
      h = ad::concat({h, ad::slice(injected, 1, site * nc, (site + 1) * nc)}, 1);
      ++site;
    }
    h = activate(layers_[l].forward(h, frozen), config_.activation);
  }
  return ad::reshape(out_.forward(h, frozen), {batch, frames});
}

PosteriorSample ConvSpikeEncoder::sample(const Tensor& x, const PosteriorNoise& noise, bool frozen) const {
  PosteriorSample s;
  s.logits = logits(x, noise.injected, frozen);
  s.probs = ad::sigmoid(s.logits);
  check_noise(noise.head, x.shape(), "head");
  s.hard = hard_threshold(s.probs, noise.head);
  s.z = ad::straight_through(s.probs, s.hard);
  if (tractable()) s.log_q = bernoulli_log_prob(s.logits, s.hard);
  return s;
}

Tensor ConvSpikeEncoder::log_density(const Tensor& x, const Tensor& z, bool frozen) const {
  if (!tractable()) throw std::logic_error("log density of an implicit (noise-injected) encoder");
  return bernoulli_log_prob(logits(x, Tensor(), frozen), z);
}

Tensor ConvSpikeEncoder::analytic_kl(const Tensor& x, const Json& prior, bool frozen) const {
  if (!tractable()) throw std::logic_error("analytic KL of an implicit encoder");
  if (prior.at("type") != "bernoulli") return InferenceNetwork::analytic_kl(x, prior, frozen);
  return bernoulli_kl(logits(x, Tensor(), frozen), prior.at("rate"));
}

ParameterList ConvSpikeEncoder::parameters() const {
  ParameterList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("conv" + std::to_string(l), out);
  out_.collect("head", out);
  return out;
}

Json ConvSpikeEncoder::descriptor() const {
  return {{"type", "conv_spike_encoder"}, {"arch", config_.to_json()}};
}

// ---------------------------------------------------------------- autoregressive

AutoregressiveSpikeEncoder::AutoregressiveSpikeEncoder(const ArchitectureConfig& config, RandomSource& rng)
    : config_(config) {
  config_.noise_layers.clear();
  config_.validate_conv();
  std::size_t in = 1;
  for (std::size_t l = 0; l < config_.conv_widths.size(); ++l) {
    layers_.emplace_back(in, config_.filters[l], config_.conv_widths[l], rng);
    in = config_.filters[l];
  }
  out_ = Conv(in, 1, 1, rng);
  ar_weight_ = uniform_init({1, 1, config_.ar_window}, config_.ar_window, rng);
}

PosteriorNoise AutoregressiveSpikeEncoder::draw_noise(const Tensor& x, RandomSource& rng) const {
  PosteriorNoise n;
  n.head = rng.uniform(x.shape());
  return n;
}

Tensor AutoregressiveSpikeEncoder::base_logits(const Tensor& x, bool frozen) const {
  if (x.rank() != 2) throw ad::ShapeError("spike encoder input must be [batch, frames], got " + ad::shape_str(x.shape()));
  const std::size_t batch = x.dim(0), frames = x.dim(1);
  Tensor h = ad::reshape(x, {batch, 1, frames});
  for (const auto& layer : layers_) h = activate(layer.forward(h, frozen), config_.activation);
  return ad::reshape(out_.forward(h, frozen), {batch, frames});
}

Tensor AutoregressiveSpikeEncoder::teacher_forced_logits(const Tensor& x, const Tensor& s, bool frozen) const {
  if (s.shape() != x.shape()) throw ad::ShapeError("spike train " + ad::shape_str(s.shape()) + " vs trace " + ad::shape_str(x.shape()));
  const std::size_t batch = x.dim(0), frames = x.dim(1), w = config_.ar_window;
  auto hist = ad::conv1d(ad::reshape(s, {batch, 1, frames}), use(ar_weight_, frozen), Tensor(), ad::Padding{w, 0});
  hist = ad::reshape(ad::slice(hist, 2, 0, frames), {batch, frames});
  return ad::add(base_logits(x, frozen), hist);
}

PosteriorSample AutoregressiveSpikeEncoder::sample(const Tensor& x, const PosteriorNoise& noise, bool frozen) const {
  check_noise(noise.head, x.shape(), "head");
  const std::size_t batch = x.dim(0), frames = x.dim(1);
  Tensor base;
  {
    ad::NoGradScope off;
    base = base_logits(x, true);
  }
  auto bv = base.values();
  auto uv = noise.head.values();
  std::vector<double> hard(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row_u = uv.data() + b * frames;
    double* row_s = hard.data() + b * frames;
    for (std::size_t t = 0; t < frames; ++t) {
      const double logit = bv[b * frames + t] + ar_term(row_s, t);
      const double p = 1.0 / (1.0 + std::exp(-logit));
      row_s[t] = row_u[t] < p ? 1.0 : 0.0;
    }
  }
  PosteriorSample s;
  s.hard = Tensor(x.shape(), std::move(hard));
  s.z = s.hard;
  s.logits = teacher_forced_logits(x, s.hard, frozen);
  s.probs = ad::sigmoid(s.logits);
  s.log_q = bernoulli_log_prob(s.logits, s.hard);
  return s;
}

Tensor AutoregressiveSpikeEncoder::log_density(const Tensor& x, const Tensor& z, bool frozen) const {
  return bernoulli_log_prob(teacher_forced_logits(x, z, frozen), z);
}

double AutoregressiveSpikeEncoder::ar_term(const double* s_row, std::size_t t) const {
  const std::size_t w = config_.ar_window;
  auto a = ar_weight_.values();
  double acc = 0.0;
  for (std::size_t m = 0; m < w; ++m) {
    // entry m multiplies s_{t - w + m}
    if (t + m >= w) acc += a[m] * s_row[t + m - w];
  }
  return acc;
}

std::size_t AutoregressiveSpikeEncoder::context_left() const {
  std::size_t left = 0;
  for (auto w : config_.conv_widths) left += same_pad(w).first;
  return left;
}

std::size_t AutoregressiveSpikeEncoder::context_right() const {
  std::size_t right = 0;
  for (auto w : config_.conv_widths) right += same_pad(w).second;
  return right;
}

double AutoregressiveSpikeEncoder::frame_logit(const double* x_row, std::size_t frames, std::size_t t) const {
  ad::NoGradScope off;
  const auto left = static_cast<std::ptrdiff_t>(context_left());
  const std::size_t len = context_left() + 1 + context_right();
  std::vector<double> window(len, 0.0);
  // position i of the current window corresponds to frame `first + i`
  std::ptrdiff_t first = static_cast<std::ptrdiff_t>(t) - left;
  const auto n = static_cast<std::ptrdiff_t>(frames);
  for (std::size_t i = 0; i < len; ++i) {
    auto f = first + static_cast<std::ptrdiff_t>(i);
    if (f >= 0 && f < n) window[i] = x_row[f];
  }
  Tensor h({1, 1, len}, std::move(window));
  for (const auto& layer : layers_) {
    h = activate(layer.forward(h, true, ad::Padding::valid()), config_.activation);
    first += static_cast<std::ptrdiff_t>(same_pad(layer.width()).first);
    // positions outside the trace are the zero padding the full pass would see
    const std::size_t channels = h.dim(1), out_len = h.dim(2);
    auto v = h.mutable_values();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < out_len; ++i) {
        auto f = first + static_cast<std::ptrdiff_t>(i);
        if (f < 0 || f >= n) v[c * out_len + i] = 0.0;
      }
    }
  }
  return out_.forward(h, true).item();
}

ParameterList AutoregressiveSpikeEncoder::parameters() const {
  ParameterList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("conv" + std::to_string(l), out);
  out_.collect("head", out);
  out.push_back({"ar.weight", ar_weight_});
  return out;
}

Json AutoregressiveSpikeEncoder::descriptor() const {
  return {{"type", "autoregressive_spike_encoder"}, {"arch", config_.to_json()}};
}

// ---------------------------------------------------------------- tabular

TabularEncoder::TabularEncoder(std::size_t nx, std::size_t nz, RandomSource& rng)
    : logits_(uniform_init({nx, nz}, 1, rng)) {}

TabularEncoder::TabularEncoder(Tensor logits) : logits_(std::move(logits)) {
  if (logits_.rank() != 2) throw ad::ShapeError("tabular encoder logits must be [nx, nz]");
  logits_.set_requires_grad(true);
}

Tensor TabularEncoder::log_table(bool frozen) const {
  auto l = use(logits_, frozen);
  return ad::sub(l, ad::logsumexp(l, 1, true));
}

PosteriorNoise TabularEncoder::draw_noise(const Tensor& x, RandomSource& rng) const {
  PosteriorNoise n;
  n.head = rng.uniform({x.dim(0), 1});
  return n;
}

PosteriorSample TabularEncoder::sample(const Tensor& x, const PosteriorNoise& noise, bool frozen) const {
  const std::size_t nx = logits_.dim(0), nz = logits_.dim(1);
  auto xi = as_indices(x, nx, "x");
  check_noise(noise.head, {x.dim(0), 1}, "head");
  auto table = log_table(true);
  auto tv = table.values();
  std::vector<double> z(xi.size());
  for (std::size_t b = 0; b < xi.size(); ++b) {
    double u = noise.head.at(b), acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < nz; ++k) {
      acc += std::exp(tv[xi[b] * nz + k]);
      if (u < acc) break;
    }
    z[b] = static_cast<double>(k);
  }
  PosteriorSample s;
  s.hard = Tensor({x.dim(0), 1}, std::move(z));
  s.z = s.hard;
  s.log_q = log_density(x, s.z, frozen);
  return s;
}

Tensor TabularEncoder::log_density(const Tensor& x, const Tensor& z, bool frozen) const {
  const std::size_t nx = logits_.dim(0), nz = logits_.dim(1);
  auto xi = as_indices(x, nx, "x");
  auto zi = as_indices(z, nz, "z");
  std::vector<double> onehot(xi.size() * nz, 0.0);
  for (std::size_t b = 0; b < zi.size(); ++b) onehot[b * nz + zi[b]] = 1.0;
  auto rows = ad::gather_rows(log_table(frozen), xi);
  return ad::sum(ad::mul(rows, Tensor({xi.size(), nz}, std::move(onehot))), 1);
}

ParameterList TabularEncoder::parameters() const { return {{"logits", logits_}}; }

Json TabularEncoder::descriptor() const {
  return {{"type", "tabular_encoder"}, {"nx", logits_.dim(0)}, {"nz", logits_.dim(1)}};
}

}  // namespace iwadv::nn
