#include "iwadv/theory/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace iwadv::theory {

namespace {

double xlogy(double x, double y) { return x == 0 ? 0.0 : x * std::log(y); }

void check_row(const std::vector<double>& row, const std::string& what) {
  double s = 0;
  for (double v : row) {
    if (!(v >= 0)) throw std::invalid_argument(what + " has a negative or NaN entry");
    s += v;
  }
  if (std::abs(s - 1) > 1e-12) throw std::invalid_argument(what + " sums to " + std::to_string(s) + ", not 1");
}

std::size_t check_budget(std::size_t nz, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  const double count = std::pow(static_cast<double>(nz), static_cast<double>(k));
  if (count > kEnumerationBudget) {
    throw std::invalid_argument("enumerating " + std::to_string(nz) + "^" + std::to_string(k) +
                                " latent tuples exceeds the budget of 1e6; use a smaller k");
  }
  return static_cast<std::size_t>(count);
}

/// sum over z_1..z_k of prod q(z_i|x) f(tuple), skipping zero-weight tuples.
template <class F>
double expect_tuples(const EnumerableModel& m, std::size_t x, std::size_t k, F&& f) {
  const std::size_t total = check_budget(m.nz(), k);
  std::vector<std::size_t> z(k, 0);
  double acc = 0;
  for (std::size_t n = 0; n < total; ++n) {
    double w = 1;
    for (std::size_t i = 0; i < k; ++i) w *= m.posterior[x][z[i]];
    if (w > 0) acc += w * f(z);
    for (std::size_t i = 0; i < k; ++i) {
      if (++z[i] < m.nz()) break;
      z[i] = 0;
    }
  }
  return acc;
}

double log_mean(const std::vector<std::size_t>& z, const auto& term) {
  double s = 0;
  for (auto zi : z) s += term(zi);
  return std::log(s / static_cast<double>(z.size()));
}

}  // namespace

void EnumerableModel::validate() const {
  if (p_data.empty() || prior.empty()) throw std::invalid_argument("empty alphabet");
  check_row(p_data, "p_D");
  check_row(prior, "p(z)");
  if (likelihood.size() != nz()) throw std::invalid_argument("likelihood needs one row per z");
  if (posterior.size() != nx()) throw std::invalid_argument("posterior needs one row per x");
  for (std::size_t z = 0; z < nz(); ++z) {
    if (likelihood[z].size() != nx()) throw std::invalid_argument("likelihood row " + std::to_string(z) + " has wrong length");
    check_row(likelihood[z], "likelihood row z=" + std::to_string(z));
  }
  for (std::size_t x = 0; x < nx(); ++x) {
    if (posterior[x].size() != nz()) throw std::invalid_argument("posterior row " + std::to_string(x) + " has wrong length");
    check_row(posterior[x], "posterior row x=" + std::to_string(x));
  }
}

std::vector<double> EnumerableModel::aggregated_posterior() const {
  std::vector<double> q(nz(), 0.0);
  for (std::size_t x = 0; x < nx(); ++x) {
    for (std::size_t z = 0; z < nz(); ++z) q[z] += p_data[x] * posterior[x][z];
  }
  return q;
}

std::vector<double> EnumerableModel::marginal() const {
  std::vector<double> p(nx(), 0.0);
  for (std::size_t z = 0; z < nz(); ++z) {
    for (std::size_t x = 0; x < nx(); ++x) p[x] += prior[z] * likelihood[z][x];
  }
  return p;
}

Table EnumerableModel::true_posterior() const {
  const auto px = marginal();
  Table t(nx(), std::vector<double>(nz()));
  for (std::size_t x = 0; x < nx(); ++x) {
    for (std::size_t z = 0; z < nz(); ++z) t[x][z] = prior[z] * likelihood[z][x] / px[x];
  }
  return t;
}

Table random_table(std::size_t rows, std::size_t cols, ad::RandomSource& rng) {
  Table t(rows, std::vector<double>(cols));
  for (auto& row : t) {
    double s = 0;
    for (auto& v : row) {
      v = -std::log1p(-rng.uniform());  // Exp(1), i.e. Gamma(1)
      s += v;
    }
    for (auto& v : row) v /= s;
  }
  return t;
}

EnumerableModel random_model(std::size_t nx, std::size_t nz, ad::RandomSource& rng) {
  EnumerableModel m;
  m.p_data = random_table(1, nx, rng)[0];
  m.prior = random_table(1, nz, rng)[0];
  m.likelihood = random_table(nz, nx, rng);
  m.posterior = random_table(nx, nz, rng);
  return m;
}

EnumerableModel uniform_model(std::size_t nx, std::size_t nz) {
  EnumerableModel m;
  m.p_data.assign(nx, 1.0 / static_cast<double>(nx));
  m.prior.assign(nz, 1.0 / static_cast<double>(nz));
  m.likelihood.assign(nz, std::vector<double>(nx, 1.0 / static_cast<double>(nx)));
  m.posterior.assign(nx, std::vector<double>(nz, 1.0 / static_cast<double>(nz)));
  return m;
}

ExactQuantities exact_quantities(const EnumerableModel& m, std::size_t k) {
  m.validate();
  check_budget(m.nz(), k);
  const auto qz = m.aggregated_posterior();
  const auto px = m.marginal();
  ExactQuantities e;
  e.k = k;
  for (std::size_t x = 0; x < m.nx(); ++x) {
    const double pd = m.p_data[x];
    const auto& q = m.posterior[x];
    e.log_marginal.push_back(std::log(px[x]));
    e.expected_log_marginal += xlogy(pd, px[x]);
    e.data_entropy -= xlogy(pd, pd);
    double ae = 0;
    for (std::size_t z = 0; z < m.nz(); ++z) {
      if (q[z] == 0) continue;
      const double lik = m.likelihood[z][x], pz = m.prior[z];
      const double w = pd * q[z];
      e.rec_1 += w * std::log(lik);
      e.reg_joint += w * std::log(q[z] / pz);
      e.mutual_information += w * std::log(q[z] / qz[z]);
      e.kl_joint += w * std::log(pd * q[z] / (pz * lik));
      e.w_dagger += w * std::log(pz * lik);
      ae += q[z] * lik;
    }
    e.ae_log_likelihood += xlogy(pd, ae);
    if (pd == 0) continue;
    const auto& lk = m.likelihood;
    const auto& pr = m.prior;
    e.l_iwae += pd * expect_tuples(m, x, k, [&](const auto& zt) {
      return log_mean(zt, [&](std::size_t z) { return pr[z] * lk[z][x] / q[z]; });
    });
    e.l_iwaae += pd * expect_tuples(m, x, k, [&](const auto& zt) {
      return log_mean(zt, [&](std::size_t z) { return pr[z] * lk[z][x] / qz[z]; });
    });
    e.rec_k += pd * expect_tuples(m, x, k, [&](const auto& zt) {
      return log_mean(zt, [&](std::size_t z) { return lk[z][x]; });
    });
    e.w_ddagger += pd * expect_tuples(m, x, k, [&](const auto& zt) {
      return log_mean(zt, [&](std::size_t z) { return pr[z] * lk[z][x]; });
    });
  }
  for (std::size_t z = 0; z < m.nz(); ++z) e.reg_aggregate += xlogy(qz[z], qz[z] / m.prior[z]);
  e.expected_kl_to_aggregate = e.mutual_information;
  e.l_vae = e.rec_1 - e.reg_joint;
  e.l_aae = e.rec_1 - e.reg_aggregate;
  // adversarial terms at the optimal discriminator
  e.d_avb = e.reg_joint - e.rec_1;
  e.d_aae = e.reg_aggregate - e.rec_1;
  e.d_iwavb = e.reg_joint - e.rec_k;
  e.d_iwaae = e.reg_aggregate - e.rec_k;
  return e;
}

double iw_avb_objective(const EnumerableModel& m, std::size_t k, const Table& t) {
  double acc = 0;
  for (std::size_t x = 0; x < m.nx(); ++x) {
    if (m.p_data[x] == 0) continue;
    acc += m.p_data[x] * expect_tuples(m, x, k, [&](const auto& zt) {
      return log_mean(zt, [&](std::size_t z) { return m.likelihood[z][x] * std::exp(-t[x][z]); });
    });
  }
  return acc;
}

double iw_aae_objective(const EnumerableModel& m, std::size_t k, const std::vector<double>& t) {
  double acc = 0;
  for (std::size_t x = 0; x < m.nx(); ++x) {
    if (m.p_data[x] == 0) continue;
    acc += m.p_data[x] * expect_tuples(m, x, k, [&](const auto& zt) {
      return log_mean(zt, [&](std::size_t z) { return m.likelihood[z][x] * std::exp(-t[z]); });
    });
  }
  return acc;
}

Table optimal_joint_discriminator(const EnumerableModel& m) {
  Table t(m.nx(), std::vector<double>(m.nz()));
  for (std::size_t x = 0; x < m.nx(); ++x) {
    for (std::size_t z = 0; z < m.nz(); ++z) t[x][z] = std::log(m.posterior[x][z]) - std::log(m.prior[z]);
  }
  return t;
}

std::vector<double> optimal_latent_discriminator(const EnumerableModel& m) {
  auto qz = m.aggregated_posterior();
  for (std::size_t z = 0; z < m.nz(); ++z) qz[z] = std::log(qz[z]) - std::log(m.prior[z]);
  return qz;
}

double iw_primal_objective(const EnumerableModel& m, std::size_t k, const bool x_conditioned) {
  const auto qz = m.aggregated_posterior();
  double acc = 0;
  for (std::size_t x = 0; x < m.nx(); ++x) {
    if (m.p_data[x] == 0) continue;
    const auto& r = x_conditioned ? m.posterior[x] : qz;
    acc += m.p_data[x] * expect_tuples(m, x, k, [&](const auto& zt) {
      double norm = 0;
      for (auto z : zt) norm += m.prior[z] * m.likelihood[z][x] / r[z];
      norm /= static_cast<double>(zt.size());
      double s = 0;
      for (auto z : zt) {
        const double joint = m.prior[z] * m.likelihood[z][x];
        const double q_iw = joint / norm;
        s += std::log(m.likelihood[z][x] * m.prior[z] / q_iw);
      }
      return s / static_cast<double>(zt.size());
    });
  }
  return acc;
}

Theorem1Residual check_theorem1(const EnumerableModel& m) {
  const auto e = exact_quantities(m, 1);
  Theorem1Residual r;
  r.data_entropy_form = std::abs(e.l_aae - (-e.data_entropy + e.mutual_information - e.kl_joint));
  r.model_marginal_form = std::abs(e.l_aae - (e.expected_log_marginal + e.mutual_information - e.kl_joint));
  return r;
}

double check_theorem2(const EnumerableModel& m) {
  const auto e = exact_quantities(m, 1);
  // E_pD KL(q(z|x) || q(z)) summed directly, independent of the I[x,z] path
  const auto qz = m.aggregated_posterior();
  double gap = 0;
  for (std::size_t x = 0; x < m.nx(); ++x) {
    for (std::size_t z = 0; z < m.nz(); ++z) gap += m.p_data[x] * xlogy(m.posterior[x][z], m.posterior[x][z] / qz[z]);
  }
  return std::abs((e.l_aae - e.l_vae) - gap);
}

SubstitutionResidual check_optimal_discriminator_substitution(const EnumerableModel& m, std::size_t k,
                                                              double t_offset) {
  m.validate();
  auto tj = optimal_joint_discriminator(m);
  auto tl = optimal_latent_discriminator(m);
  for (auto& row : tj) {
    for (auto& v : row) v += t_offset;
  }
  for (auto& v : tl) v += t_offset;
  const auto e = exact_quantities(m, k);
  const double avb = iw_avb_objective(m, k, tj);
  const double aae = iw_aae_objective(m, k, tl);
  SubstitutionResidual r;
  r.iwavb = std::abs(avb - e.l_iwae);
  r.iwaae = std::abs(aae - iw_primal_objective(m, k, false));
  r.iwaae_x_conditioned_gap = std::abs(aae - iw_primal_objective(m, k, true));
  return r;
}

MonotonicityReport check_k_monotonicity(const EnumerableModel& m, const std::vector<std::size_t>& ks,
                                        double tolerance) {
  MonotonicityReport r;
  r.k = ks;
  std::sort(r.k.begin(), r.k.end());
  r.min_margin = INFINITY;
  auto check = [&](double slack) {
    r.min_margin = std::min(r.min_margin, slack);
    if (slack < -tolerance) ++r.violations;
  };
  for (std::size_t i = 0; i < r.k.size(); ++i) {
    const auto e = exact_quantities(m, r.k[i]);
    r.expected_log_marginal = e.expected_log_marginal;
    r.l_iwae.push_back(e.l_iwae);
    r.d_iwavb.push_back(-e.l_iwae);
    check(e.expected_log_marginal - e.l_iwae);
    check(r.d_iwavb.back() + e.expected_log_marginal);
    if (i > 0) {
      check(r.l_iwae[i] - r.l_iwae[i - 1]);
      check(r.d_iwavb[i - 1] - r.d_iwavb[i]);
    }
  }
  return r;
}

OrderingReport check_divergence_ordering(const EnumerableModel& m, std::size_t k, std::size_t grid_size,
                                         ad::RandomSource& rng, double tolerance) {
  m.validate();
  std::vector<Table> grid{m.posterior, Table(m.nx(), m.prior)};
  for (std::size_t g = 0; g < grid_size; ++g) grid.push_back(random_table(m.nx(), m.nz(), rng));
  OrderingReport r;
  r.min_margin = INFINITY;
  r.inf_avb = r.inf_aae = r.inf_iwavb = r.inf_iwaae = INFINITY;
  EnumerableModel probe = m;
  for (const auto& q : grid) {
    probe.posterior = q;
    const auto e = exact_quantities(probe, k);
    bool ok = true;
    for (double slack : {e.d_aae - e.d_iwaae, e.d_avb - e.d_aae, e.d_iwavb - e.d_iwaae, e.d_avb - e.d_iwavb}) {
      r.min_margin = std::min(r.min_margin, slack);
      ok = ok && slack >= -tolerance;
    }
    if (!ok) ++r.violations;
    if (e.w_ddagger < e.w_dagger - tolerance) ++r.jensen_violations;
    r.inf_avb = std::min(r.inf_avb, e.d_avb);
    r.inf_aae = std::min(r.inf_aae, e.d_aae);
    r.inf_iwavb = std::min(r.inf_iwavb, e.d_iwavb);
    r.inf_iwaae = std::min(r.inf_iwaae, e.d_iwaae);
    ++r.grid_points;
  }
  r.inf_chain_holds = r.inf_iwaae <= r.inf_aae + tolerance && r.inf_aae <= r.inf_avb + tolerance &&
                      r.inf_iwaae <= r.inf_iwavb + tolerance && r.inf_iwavb <= r.inf_avb + tolerance;
  return r;
}

std::vector<SuiteResult> verify_theory(std::uint64_t seed, const SuiteOptions& o) {
  std::vector<SuiteResult> out;
  ad::RandomSource rng(seed);
  using clock = std::chrono::steady_clock;
  auto finish = [&](SuiteResult s, clock::time_point start) {
    s.seconds = std::chrono::duration<double>(clock::now() - start).count();
    s.passed = s.violations == 0 && s.max_residual < s.tolerance;
    out.push_back(s);
  };

  {
    auto start = clock::now();
    SuiteResult s{"theorem1 (data entropy form)", 0, 0, 0, 1e-10};
    SuiteResult lit{"theorem1 (model marginal, p_D = p)", 0, 0, 0, 1e-10};
    SuiteResult t2{"theorem2", 0, 0, 0, 1e-10};
    for (std::size_t i = 0; i < o.identity_models; ++i) {
      auto m = random_model(o.nx, o.nz, rng);
      s.max_residual = std::max(s.max_residual, check_theorem1(m).data_entropy_form);
      t2.max_residual = std::max(t2.max_residual, check_theorem2(m));
      m.p_data = m.marginal();
      lit.max_residual = std::max(lit.max_residual, check_theorem1(m).model_marginal_form);
      ++s.instances, ++lit.instances, ++t2.instances;
    }
    finish(s, start);
    finish(lit, start);
    finish(t2, start);
  }
  {
    auto start = clock::now();
    SuiteResult avb{"substitution IW-AVB -> IWAE", 0, 0, 0, 1e-10};
    SuiteResult aae{"substitution IW-AAE -> primal", 0, 0, 0, 1e-10};
    for (std::size_t i = 0; i < o.identity_models; ++i) {
      auto m = random_model(o.nx, o.nz, rng);
      for (std::size_t k : {1, 2, 4}) {
        auto r = check_optimal_discriminator_substitution(m, k);
        avb.max_residual = std::max(avb.max_residual, r.iwavb);
        aae.max_residual = std::max(aae.max_residual, r.iwaae);
        ++avb.instances, ++aae.instances;
      }
    }
    finish(avb, start);
    finish(aae, start);
  }
  {
    auto start = clock::now();
    SuiteResult s{"IWAE bound chain k=1,2,3", 0, 0, 0, 1};
    for (std::size_t i = 0; i < o.chain_models; ++i) {
      auto m = random_model(o.nx, o.nz, rng);
      s.violations += check_k_monotonicity(m, {1, 2, 3}).violations;
      ++s.instances;
    }
    finish(s, start);
  }
  {
    auto start = clock::now();
    SuiteResult s{"divergence ordering k=3", 0, 0, 0, 1};
    SuiteResult j{"Jensen W-double-dagger >= W-dagger", 0, 0, 0, 1};
    for (std::size_t i = 0; i < o.ordering_models; ++i) {
      auto m = random_model(o.nx, o.nz, rng);
      auto r = check_divergence_ordering(m, 3, o.grid_size, rng);
      s.violations += r.violations + (r.inf_chain_holds ? 0 : 1);
      s.instances += r.grid_points;
      j.violations += r.jensen_violations;
      j.instances += r.grid_points;
    }
    // constrained instances: prior equal to the aggregated posterior
    for (std::size_t i = 0; i < o.ordering_models; ++i) {
      auto m = random_model(o.nx, o.nz, rng);
      m.prior = m.aggregated_posterior();
      const auto e = exact_quantities(m, 3);
      if (e.w_ddagger < e.w_dagger - 1e-12) ++j.violations;
      if (e.ae_log_likelihood < e.rec_k - 1e-12 || e.rec_k < e.rec_1 - 1e-12) ++j.violations;
      ++j.instances;
    }
    finish(s, start);
    finish(j, start);
  }
  return out;
}

}  // namespace iwadv::theory
