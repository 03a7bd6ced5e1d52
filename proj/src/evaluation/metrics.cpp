#include "iwadv/evaluation/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "iwadv/autodiff/ops.hpp"
#include "iwadv/spikesim/biophys.hpp"

namespace iwadv::eval {

namespace {

void summarize(LogLikEstimate& e) {
  const double n = static_cast<double>(e.per_datum.size());
  e.mean = 0;
  for (double v : e.per_datum) e.mean += v;
  e.mean /= n;
  if (e.per_datum.size() < 2) {
    e.se = 0;
    return;
  }
  double ss = 0;
  for (double v : e.per_datum) ss += (v - e.mean) * (v - e.mean);
  e.se = std::sqrt(ss / (n - 1) / n);
}

double log_mean_exp(const double* v, std::size_t n) {
  double m = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s / static_cast<double>(n));
}

bool discrete_prior(const nn::LatentPrior& p) {
  const std::string type = p.descriptor().at("type");
  return type == "bernoulli" || type == "categorical";
}

}  // namespace

LogLikEstimate iwae_loglik(const nn::ModelTriple& m, const Tensor& data, std::size_t k, RandomSource& rng,
                           bool prior_proposal) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (!prior_proposal && !m.encoder->tractable()) {
    throw std::logic_error("encoder has no density; evaluate with the prior as proposal");
  }
  ad::NoGradScope off;
  LogLikEstimate e;
  e.method = "IWAE-" + std::to_string(k);
  e.k = k;
  e.prior_proposal = prior_proposal;
  const std::size_t n = data.dim(0);
  // keep each pass around 8192 latent rows
  const std::size_t chunk = std::max<std::size_t>(1, 8192 / k);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk), b = stop - start;
    rows.resize(b);
    for (std::size_t i = 0; i < b; ++i) rows[i] = start + i;
    auto x = ad::repeat_rows(ad::gather_rows(data, rows), k);
    Tensor lw;
    if (prior_proposal) {
      auto z = m.prior->sample(m.encoder->latent_shape(x), rng);
      lw = m.generator->log_likelihood(x, z, true);
    } else {
      auto s = m.encoder->sample(x, rng, true);
      lw = ad::sub(ad::add(m.generator->log_likelihood(x, s.z, true), m.prior->log_density(s.z)), s.log_q);
    }
    auto v = lw.values();
    for (std::size_t i = 0; i < b; ++i) e.per_datum.push_back(log_mean_exp(v.data() + i * k, k));
  }
  summarize(e);
  return e;
}

LogLikEstimate ais_loglik(const nn::ModelTriple& m, const Tensor& data, std::size_t n_intermediate,
                          std::size_t n_chains, RandomSource& rng, double proposal_std) {
  if (n_intermediate < 1) throw std::invalid_argument("AIS needs at least one intermediate distribution");
  if (n_chains < 1) throw std::invalid_argument("AIS needs at least one chain");
  if (discrete_prior(*m.prior)) throw std::invalid_argument("AIS needs a continuous latent");
  ad::NoGradScope off;
  const std::size_t n = data.dim(0), rows = n * n_chains;
  auto x = ad::repeat_rows(data, n_chains);  // row b * chains + c
  auto z = m.prior->sample(m.encoder->latent_shape(x), rng);
  const std::size_t zdim = z.size() / rows;
  std::vector<double> log_w(rows, 0.0);
  auto ll = m.generator->log_likelihood(x, z, true);
  auto lp = m.prior->log_density(z);
  for (std::size_t t = 1; t <= n_intermediate; ++t) {
    const double b0 = static_cast<double>(t - 1) / static_cast<double>(n_intermediate);
    const double b1 = static_cast<double>(t) / static_cast<double>(n_intermediate);
    for (std::size_t r = 0; r < rows; ++r) {
      log_w[r] += (b1 - b0) * ll.at(r);
      if (!std::isfinite(log_w[r])) {
        throw ad::DomainError("AIS weight diverged: datum " + std::to_string(r / n_chains) + ", chain " +
                              std::to_string(r % n_chains) + ", temperature " + std::to_string(t) + " of " +
                              std::to_string(n_intermediate) + ", log p(x|z) = " + std::to_string(ll.at(r)));
      }
    }
    // one Metropolis move targeting p(z) p(x|z)^b1
    auto prop = ad::add(z, ad::mul(rng.gaussian(z.shape()), proposal_std));
    auto ll_p = m.generator->log_likelihood(x, prop, true);
    auto lp_p = m.prior->log_density(prop);
    auto zv = z.mutable_values();
    auto pv = prop.values();
    auto llv = ll.mutable_values();
    auto lpv = lp.mutable_values();
    for (std::size_t r = 0; r < rows; ++r) {
      const double log_accept = lp_p.at(r) + b1 * ll_p.at(r) - lpv[r] - b1 * llv[r];
      if (std::log(rng.uniform()) < log_accept) {
        std::copy(pv.begin() + static_cast<std::ptrdiff_t>(r * zdim), pv.begin() + static_cast<std::ptrdiff_t>((r + 1) * zdim),
                  zv.begin() + static_cast<std::ptrdiff_t>(r * zdim));
        llv[r] = ll_p.at(r);
        lpv[r] = lp_p.at(r);
      }
    }
  }
  LogLikEstimate e;
  e.method = "AIS";
  e.n_intermediate = n_intermediate;
  e.n_chains = n_chains;
  for (std::size_t b = 0; b < n; ++b) e.per_datum.push_back(log_mean_exp(log_w.data() + b * n_chains, n_chains));
  summarize(e);
  return e;
}

MomentPair moments(const Eigen::MatrixXd& f) {
  if (f.rows() < 2) throw std::invalid_argument("moments need at least 2 samples");
  MomentPair m;
  m.mean = f.colwise().mean().transpose();
  Eigen::MatrixXd c = f.rowwise() - m.mean.transpose();
  m.cov = (c.transpose() * c) / static_cast<double>(f.rows() - 1);
  return m;
}

double fid(const MomentPair& p, const MomentPair& q) {
  if (p.mean.size() != q.mean.size()) throw std::invalid_argument("feature dimensions differ");
  const double scale = std::max({1.0, p.cov.cwiseAbs().maxCoeff(), q.cov.cwiseAbs().maxCoeff()});
  auto psd_sqrt = [&](const Eigen::MatrixXd& c, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (c + c.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (ev[i] < -1e-10 * scale * scale) {
        throw std::domain_error(std::string(what) + " is not positive semi-definite (eigenvalue " +
                                std::to_string(ev[i]) + ")");
      }
      ev[i] = std::sqrt(std::max(0.0, ev[i]));
    }
    return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };
  const Eigen::MatrixXd sp = psd_sqrt(p.cov, "covariance of P");
  (void)psd_sqrt(q.cov, "covariance of Q");
  const Eigen::MatrixXd cross = psd_sqrt(sp * q.cov * sp, "C_P^1/2 C_Q C_P^1/2");
  const double value = (p.mean - q.mean).squaredNorm() + p.cov.trace() + q.cov.trace() - 2 * cross.trace();
  return std::max(0.0, value);
}

double fid(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) { return fid(moments(p), moments(q)); }

Eigen::MatrixXd to_matrix(const Tensor& t) {
  const auto rows = static_cast<Eigen::Index>(t.dim(0));
  const auto cols = static_cast<Eigen::Index>(t.size() / t.dim(0));
  Eigen::MatrixXd out(rows, cols);
  auto v = t.values();
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  }
  return out;
}

Eigen::MatrixXd random_projection(const Eigen::MatrixXd& features, std::size_t dim, std::uint64_t seed) {
  RandomSource rng(seed);
  Eigen::MatrixXd w(features.cols(), static_cast<Eigen::Index>(dim));
  const double s = 1.0 / std::sqrt(static_cast<double>(features.cols()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = s * rng.gaussian();
  }
  return features * w;
}

Binning parse_binning(const std::string& name) {
  if (name == "count") return Binning::count;
  if (name == "presence") return Binning::presence;
  throw std::invalid_argument("unknown binning '" + name + "' (expected count or presence)");
}

double spike_correlation(const std::vector<double>& marginals, const std::vector<double>& spikes, double source_hz,
                         double eval_hz, Binning binning) {
  if (marginals.size() != spikes.size()) {
    throw std::invalid_argument("predictions cover " + std::to_string(marginals.size()) + " frames, spikes " +
                                std::to_string(spikes.size()));
  }
  for (double p : marginals) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("marginal probabilities must lie in [0, 1]");
  }
  std::vector<double> pred, truth;
  if (binning == Binning::count) {
    pred = spike::downsample(marginals, source_hz, eval_hz);
    truth = spike::downsample(spikes, source_hz, eval_hz);
  } else {
    // P(no spike in bin) = prod (1 - p): bin the logs
    std::vector<double> log_none(marginals.size());
    for (std::size_t i = 0; i < marginals.size(); ++i) log_none[i] = std::log1p(-std::min(marginals[i], 1.0 - 1e-300));
    pred = spike::downsample(log_none, source_hz, eval_hz);
    for (auto& v : pred) v = -std::expm1(v);
    truth = spike::downsample(spikes, source_hz, eval_hz);
    for (auto& v : truth) v = v > 0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(pred.size());
  double mp = 0, mt = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mt += truth[i];
  }
  mp /= n;
  mt /= n;
  double spt = 0, spp = 0, stt = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    spt += (pred[i] - mp) * (truth[i] - mt);
    spp += (pred[i] - mp) * (pred[i] - mp);
    stt += (truth[i] - mt) * (truth[i] - mt);
  }
  if (spp == 0 || stt == 0) throw ad::DomainError("undefined correlation");
  return spt / std::sqrt(spp * stt);
}

TTest paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test needs equal-length samples");
  if (a.size() < 2) throw std::invalid_argument("paired t-test needs at least 2 pairs");
  const std::size_t n = a.size();
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTest r;
  r.df = n - 1;
  if (sd == 0) {
    if (mean == 0) return r;
    r.t = mean > 0 ? INFINITY : -INFINITY;
    r.p = 0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(r.df));
  r.p = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

std::string hardware_note() {
  std::string model = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      auto c = line.find(':');
      if (c != std::string::npos) model = line.substr(c + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads, single-threaded run";
}

TimingReport inference_timing(const nn::InferenceNetwork& q, const Tensor& trace, TimingMode mode, RandomSource& rng) {
  if (trace.rank() != 2 || trace.dim(0) != 1) throw ad::ShapeError("timing expects one trace [1, frames]");
  ad::NoGradScope off;
  TimingReport r;
  r.mode = mode;
  r.frames = trace.dim(1);
  r.hardware = hardware_note();
  const auto start = std::chrono::steady_clock::now();
  if (mode == TimingMode::parallel) {
    auto s = q.sample(trace, rng, true);
    r.network_evaluations = 1;
    auto hard = s.hard.defined() ? s.hard : s.z;
    r.sample.assign(hard.values().begin(), hard.values().end());
    if (s.logits.defined()) r.logits.assign(s.logits.values().begin(), s.logits.values().end());
  } else {
    const auto* ar = dynamic_cast<const nn::AutoregressiveSpikeEncoder*>(&q);
    if (!ar) throw std::invalid_argument("sequential timing needs an autoregressive encoder");
    const std::size_t frames = r.frames;
    auto u = rng.uniform({1, frames});
    const double* x = trace.values().data();
    r.sample.assign(frames, 0.0);
    r.logits.assign(frames, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      const double logit = ar->frame_logit(x, frames, t) + ar->ar_term(r.sample.data(), t);
      ++r.network_evaluations;
      r.logits[t] = logit;
      r.sample[t] = u.at(t) < 1.0 / (1.0 + std::exp(-logit)) ? 1.0 : 0.0;
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace iwadv::eval
