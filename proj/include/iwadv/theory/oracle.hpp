#pragma once

#include <string>
#include <vector>

#include "iwadv/autodiff/random.hpp"

namespace iwadv::theory {

using Table = std::vector<std::vector<double>>;

/// Finite model small enough to sum over exactly.
struct EnumerableModel {
  std::vector<double> p_data;  // p_D(x)
  std::vector<double> prior;   // p(z)
  Table likelihood;            // [z][x] = p(x | z)
  Table posterior;             // [x][z] = q(z | x)

  std::size_t nx() const { return p_data.size(); }
  std::size_t nz() const { return prior.size(); }
  void validate() const;  // throws std::invalid_argument naming the bad row

  std::vector<double> aggregated_posterior() const;  // q(z) = sum_x p_D(x) q(z|x)
  std::vector<double> marginal() const;              // p(x) = sum_z p(z) p(x|z)
  Table true_posterior() const;                      // [x][z] = p(z | x)
};

/// Rows drawn from a flat Dirichlet.
Table random_table(std::size_t rows, std::size_t cols, ad::RandomSource& rng);
EnumerableModel random_model(std::size_t nx, std::size_t nz, ad::RandomSource& rng);
EnumerableModel uniform_model(std::size_t nx, std::size_t nz);

inline constexpr double kEnumerationBudget = 1e6;

struct ExactQuantities {
  std::size_t k = 1;
  std::vector<double> log_marginal;  // log p(x) per x
  double expected_log_marginal = 0;  // E_pD log p(x)
  double data_entropy = 0;           // -E_pD log p_D(x)
  double l_vae = 0, l_aae = 0, l_iwae = 0, l_iwaae = 0;
  double mutual_information = 0;     // I_q[x, z]
  double kl_joint = 0;               // KL(q(x,z) || p(x,z))
  double expected_kl_to_aggregate = 0;  // E_pD KL(q(z|x) || q(z))
  double reg_joint = 0;              // E_pD KL(q(z|x) || p(z))
  double reg_aggregate = 0;          // KL(q(z) || p(z))
  double rec_1 = 0;                  // E_pD E_q log p(x|z)
  double rec_k = 0;                  // E_pD E_q^k log (1/k) sum p(x|z_i)
  double d_avb = 0, d_aae = 0, d_iwavb = 0, d_iwaae = 0;
  double w_dagger = 0;   // E E_q^k (1/k) sum log p(x, z_i)
  double w_ddagger = 0;  // E E_q^k log (1/k) sum p(x, z_i)
  double ae_log_likelihood = 0;  // E_pD log sum_z q(z|x) p(x|z)
};

/// Every field by summation; z^k enumeration must fit kEnumerationBudget.
ExactQuantities exact_quantities(const EnumerableModel& m, std::size_t k);

/// E_pD E_q^k log (1/k) sum_i p(x|z_i) exp(-T(x, z_i)); t is [x][z].
double iw_avb_objective(const EnumerableModel& m, std::size_t k, const Table& t);
/// Same with a latent-only discriminator t[z].
double iw_aae_objective(const EnumerableModel& m, std::size_t k, const std::vector<double>& t);
Table optimal_joint_discriminator(const EnumerableModel& m);           // log q(z|x) - log p(z)
std::vector<double> optimal_latent_discriminator(const EnumerableModel& m);  // log q(z) - log p(z)

/// E_q^k (1/k) sum_i log [p(x|z_i) p(z_i) / q_IW(z_i)] with
/// q_IW(z_i) = p(x, z_i) / ((1/k) sum_j p(x, z_j) / r(z_j | x)), where r is the
/// aggregate q(z) (`x_conditioned` false) or q(z | x).
double iw_primal_objective(const EnumerableModel& m, std::size_t k, bool x_conditioned);

struct Theorem1Residual {
  double data_entropy_form = 0;    // with E_pD log p_D(x)
  double model_marginal_form = 0;  // with E_pD log p(x); equals KL(p_D || p) on generic models
};
Theorem1Residual check_theorem1(const EnumerableModel& m);
double check_theorem2(const EnumerableModel& m);

struct SubstitutionResidual {
  double iwavb = 0;  // |IW-AVB objective at T* - L_IWAE(k)|
  double iwaae = 0;  // |IW-AAE objective at T* - primal with aggregate normalizer|
  double iwaae_x_conditioned_gap = 0;  // |IW-AAE at T* - primal with q(z|x) normalizer|
};
/// `t_offset` is added to both optimal discriminators before substitution.
SubstitutionResidual check_optimal_discriminator_substitution(const EnumerableModel& m, std::size_t k,
                                                              double t_offset = 0.0);

struct MonotonicityReport {
  std::vector<std::size_t> k;
  std::vector<double> l_iwae;
  std::vector<double> d_iwavb;
  double expected_log_marginal = 0;
  double min_margin = 0;  // smallest slack over every inequality checked
  std::size_t violations = 0;
};
/// `tolerance` absorbs summation roundoff on degenerate (tied) chains.
MonotonicityReport check_k_monotonicity(const EnumerableModel& m, const std::vector<std::size_t>& ks,
                                        double tolerance = 1e-12);

struct OrderingReport {
  std::size_t grid_points = 0;
  std::size_t violations = 0;
  double min_margin = 0;
  double inf_avb = 0, inf_aae = 0, inf_iwavb = 0, inf_iwaae = 0;
  bool inf_chain_holds = false;
  std::size_t jensen_violations = 0;
};
/// The infimum over posterior tables is taken over the model's own table, the
/// prior-as-posterior table and `grid_size` random tables from `rng`.
OrderingReport check_divergence_ordering(const EnumerableModel& m, std::size_t k, std::size_t grid_size,
                                         ad::RandomSource& rng, double tolerance = 1e-12);

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  double max_residual = 0;  // identities; 0 for inequality suites
  std::size_t violations = 0;
  double tolerance = 0;
  double seconds = 0;
  bool passed = false;
};

struct SuiteOptions {
  std::size_t identity_models = 100;
  std::size_t chain_models = 50;
  std::size_t ordering_models = 20;
  std::size_t grid_size = 200;
  std::size_t nx = 4, nz = 3;
};
/// Theorem, substitution, bound-chain, ordering and Jensen suites.
std::vector<SuiteResult> verify_theory(std::uint64_t seed, const SuiteOptions& options = {});

}  // namespace iwadv::theory
