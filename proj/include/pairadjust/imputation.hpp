#ifndef PAIRADJUST_IMPUTATION_HPP
#define PAIRADJUST_IMPUTATION_HPP

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "pairadjust/dataset.hpp"
#include "pairadjust/estimator.hpp"
#include "pairadjust/forest.hpp"

namespace pairadjust {

struct LearnerConfig {
  enum class Kind { LooLinear, RandomForest };
  Kind kind = Kind::LooLinear;
  ForestParams rf;
  bool per_arm = true;  // false pools both arms with a treatment column

  static LearnerConfig from_json(const nlohmann::json& j, std::uint64_t default_seed);
};

struct FitReport {
  LearnerConfig learner;
  double mse_t = 0.0;  // out-of-bag / leave-one-out MSE, treated arm
  double mse_c = 0.0;
  std::vector<std::pair<std::string, double>> importance;  // sums to 1 (forest)
};

// Leave-one-out least squares per arm. Own-arm predictions use the exact
// hat-matrix identity y_i - e_i/(1 - h_ii); opposite-arm predictions come
// from the full fit, so every prediction is independent of the unit's own
// (Y_i, Z_i). Tiny or degenerate arms fall back:
//   rank-aware OLS -> ridge(1e-6 on non-intercept) -> intercept-only mean.
Imputations loo_linear_impute(const Experiment& experiment,
                              const AugmentedCovariates& x,
                              const LearnerConfig& config);

// Per-arm regression forests; own-arm predictions are out-of-bag means,
// opposite-arm predictions average all trees. Deterministic given rf.seed.
std::pair<Imputations, FitReport> rf_impute(const Experiment& experiment,
                                            const AugmentedCovariates& x,
                                            const LearnerConfig& config);

struct LogisticFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  Eigen::VectorXd z;
  Eigen::VectorXd p;  // two-sided Wald, normal approximation
  std::vector<std::string> names;  // "(Intercept)" first
  int iterations = 0;
  bool converged = false;
};

// IRLS to max|score| < 1e-8 or 50 iterations; SEs from the inverse observed
// information. X excludes the intercept (added internally).
LogisticFit logistic_fit(const Eigen::VectorXd& y01, const Eigen::MatrixXd& x,
                         const std::vector<std::string>& names);

// Ordinary least squares with the same Wald machinery, for the significance
// screen on continuous outcomes.
struct LinearFitStats {
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  Eigen::VectorXd z;
  Eigen::VectorXd p;
  std::vector<std::string> names;
};
LinearFitStats linear_fit_stats(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                                const std::vector<std::string>& names);

// Internal linear engine shared by loo_linear_impute and tests.
class LinearLooModel {
public:
  // X without intercept. `need_downdate` enables predict_without (pooled
  // cross-fitting); it forces the ridge path when OLS is rank-deficient.
  LinearLooModel(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                 bool need_downdate = false);

  const Eigen::VectorXd& loo_fitted() const { return loo_fitted_; }
  double predict(const Eigen::RowVectorXd& x_row) const;
  // Prediction at x_row from the fit excluding training row i (exact
  // Sherman-Morrison downdate).
  double predict_without(const Eigen::RowVectorXd& x_row, Eigen::Index i) const;
  const char* mode() const;

private:
  enum class Mode { Ols, Ridge, InterceptOnly };
  Eigen::RowVectorXd with_intercept(const Eigen::RowVectorXd& x_row) const;

  Mode mode_ = Mode::InterceptOnly;
  Eigen::MatrixXd b_;        // design with intercept
  Eigen::VectorXd y_;
  Eigen::VectorXd beta_;
  Eigen::VectorXd fitted_;
  Eigen::VectorXd leverage_;
  Eigen::VectorXd loo_fitted_;
  Eigen::MatrixXd a_inv_;    // (B'B + lambda D)^-1 when downdates are needed
  bool has_a_inv_ = false;
};

}  // namespace pairadjust

#endif  // PAIRADJUST_IMPUTATION_HPP
