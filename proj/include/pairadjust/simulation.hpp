#ifndef PAIRADJUST_SIMULATION_HPP
#define PAIRADJUST_SIMULATION_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pairadjust/dataset.hpp"
#include "pairadjust/estimator.hpp"
#include "pairadjust/imputation.hpp"

namespace pairadjust {

// Synthetic Bernoulli experiment: k iid standard-normal covariates, control
// outcome y_c = sqrt(1-s)*f(x) + sqrt(s)*latent + noise_scale*eps with the
// latent quality carrying `latent_signal_share` (s) of the structural
// variance, and y_t = y_c + tau (optionally + x1 for heterogeneous effects).
struct DgpConfig {
  std::string name = "dgp";
  int n = 200;
  double p = 0.5;
  int k = 3;
  enum class OutcomeModel { Linear, Step, NonlinearInteraction };
  OutcomeModel outcome_model = OutcomeModel::Linear;
  double noise_scale = 1.0;
  double tau = 0.0;
  bool heterogeneous = false;
  double latent_signal_share = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct DgpDraw {
  Experiment experiment;
  SyntheticTruth truth;
  std::vector<double> latent;  // per-unit mock-provider score
};

// Potential outcomes and latent drawn once from the config seed; Z is then
// Bernoulli(p) per unit and the observed Y assembled from the truth.
DgpDraw generate(const DgpConfig& config);

// Redraw only the assignment vector over fixed potential outcomes
// (design-based replication); both arms are guaranteed non-empty.
void redraw_assignment(DgpDraw& draw, std::uint64_t seed);

struct McConfig {
  int replications = 2000;
  std::uint64_t seed = 9001;
  bool redraw_potential_outcomes = false;  // super-population checks
  int n_threads = 1;
};

struct McRow {
  std::string dgp;
  std::string estimator;
  int replications = 0;
  double tau_bar = 0.0;
  double mean_tau_hat = 0.0;
  double mc_se = 0.0;              // sd(tau_hat)/sqrt(R)
  double empirical_variance = 0.0;
  double mean_est_variance = 0.0;  // mean of the estimated variances
  double coverage = 0.0;           // share of |tau_hat - tau_bar| <= 1.96*se
};

using EstimateFn =
    std::function<EstimateResult(const Experiment&, const DgpDraw&)>;

McRow monte_carlo(const DgpConfig& dgp, const std::string& estimator_label,
                  const EstimateFn& estimate, const McConfig& mc);

// Convenience estimators for the harness.
McRow mc_ht(const DgpConfig& dgp, const McConfig& mc);
McRow mc_adjusted(const DgpConfig& dgp, const LearnerConfig& learner,
                  const McConfig& mc);
// Perfect imputations injected from the truth (algebraic identity check).
McRow mc_oracle(const DgpConfig& dgp, const McConfig& mc);

// Full-pipeline replication: initial cross-fitted model on the base
// covariates, quantile stratification on its predictions, within-stratum
// round robin through the mock provider, adjusted pair scores, and the
// base vs base+pair-score comparison.
struct EssHarnessConfig {
  int replications = 200;
  std::uint64_t seed = 7001;
  int group_size = 10;
  double mock_noise_scale = 0.0;
  double mock_refusal_rate = 0.0;
  LearnerConfig learner;  // loo_linear by default
  int n_threads = 1;
};

struct EssReport {
  std::string dgp;
  std::vector<double> ess;      // per replication, base+score vs base
  std::vector<double> var_ratio_vs_ht;  // empirical summaries filled by caller
  double mean_ess = 0.0;
  double se_base_mean = 0.0;
  double se_adj_mean = 0.0;
  double emp_var_ht = 0.0;
  double emp_var_adj = 0.0;

  double frac_above(double threshold) const;
};

EssReport pair_score_ess(const DgpConfig& dgp, const EssHarnessConfig& config);

// The shipped desk-scale suite (also run by `pairadjust simulate`).
struct SuiteResult {
  std::vector<McRow> rows;
  EssReport informative;
  EssReport noise;
};

SuiteResult run_default_suite(std::uint64_t seed, int n_threads,
                              int replications = 2000, int ess_replications = 200);

void write_mc_report_csv(const std::string& path, const SuiteResult& suite);

}  // namespace pairadjust

#endif  // PAIRADJUST_SIMULATION_HPP
