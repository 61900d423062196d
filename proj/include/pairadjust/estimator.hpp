#ifndef PAIRADJUST_ESTIMATOR_HPP
#define PAIRADJUST_ESTIMATOR_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pairadjust/dataset.hpp"

namespace pairadjust {

// Cross-fitted potential-outcome predictions. `cross_fitted` asserts that
// unit i's predictions were produced without unit i's own (Y_i, Z_i) —
// leave-one-out or out-of-bag. The adjusted estimator refuses anything else.
struct Imputations {
  Eigen::VectorXd y_hat_t;
  Eigen::VectorXd y_hat_c;
  bool cross_fitted = false;

  static Imputations zeros(std::size_t n);
};

struct EstimateResult {
  double tau_hat = 0.0;
  double e2_c = 0.0;      // mean squared prediction error, control arm
  double e2_t = 0.0;      // mean squared prediction error, treated arm
  double variance = 0.0;
  double se = 0.0;
  std::size_t n = 0;
  double p_used = 0.0;
  std::string covariate_set_label;
  Eigen::VectorXd m_hat;  // p*y_hat_c + (1-p)*y_hat_t per unit
};

// Known potential outcomes for synthetic data.
struct SyntheticTruth {
  Eigen::VectorXd y_t;
  Eigen::VectorXd y_c;

  Eigen::VectorXd tau() const { return y_t - y_c; }
  double tau_bar() const { return tau().mean(); }
};

// Average of the per-unit effects y_t - y_c (simulation only).
double sample_ate(const SyntheticTruth& truth);

// Inverse-probability-weighted difference of arm sums. Variance comes from
// the adjusted-estimator variance with all predictions zero.
EstimateResult ht_estimate(const Experiment& experiment);

// Imputation-adjusted estimator: residuals against the p-weighted blend
// m_i = p*y_hat_c_i + (1-p)*y_hat_t_i, then the same IPW contrast.
EstimateResult adjusted_estimate(const Experiment& experiment,
                                 const Imputations& imputations,
                                 const std::string& covariate_set_label = "adjusted");

struct VarianceParts {
  double e2_c = 0.0;
  double e2_t = 0.0;
  double variance = 0.0;
};

// (1/N) [ p/(1-p) E2_c + (1-p)/p E2_t + 2 sqrt(E2_c E2_t) ] with arm-wise
// mean squared prediction errors of the cross-fitted imputations.
VarianceParts variance_estimate(const Experiment& experiment,
                                const Imputations& imputations);

// Squared SE ratio: by how much the sample size would have to grow for the
// baseline estimator to match the new one's precision.
double ess_ratio(double se_base, double se_new);

struct StratumEstimate {
  std::string stratum;
  EstimateResult result;
};

void write_estimates_csv(const std::string& path,
                         const std::vector<StratumEstimate>& rows);

}  // namespace pairadjust

#endif  // PAIRADJUST_ESTIMATOR_HPP
