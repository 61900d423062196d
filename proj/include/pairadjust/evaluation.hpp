#ifndef PAIRADJUST_EVALUATION_HPP
#define PAIRADJUST_EVALUATION_HPP

#include <string>
#include <vector>

#include "pairadjust/dataset.hpp"
#include "pairadjust/estimator.hpp"
#include "pairadjust/imputation.hpp"

namespace pairadjust {

struct SignificanceReport {
  std::string covariate;
  double coefficient = 0.0;
  double se = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
  std::string model_kind;  // "linear" | "logistic"
  std::vector<std::string> included_columns;
};

// Wald test on each LLM column's coefficient in the full model
// (base covariates + extras such as OOB predictions + treatment indicator +
// LLM columns). Model kind follows the outcome kind.
std::vector<SignificanceReport> significance_test(
    const Experiment& experiment, const AugmentedCovariates& base_plus_extras,
    const std::vector<ExtraColumn>& llm_columns,
    const EncodeOptions& options = {});

// A labeled covariate recipe: which available extra columns augment the base
// RCT covariates for one imputation model.
struct CovariateRecipe {
  std::string label;
  std::vector<std::string> extra_names;  // resolved against available extras
};

struct ComparisonRow {
  std::string stratum;
  std::string label;
  double tau_hat = 0.0;
  double se = 0.0;
  double ess_vs_base = 1.0;
  double e2_c = 0.0;
  double e2_t = 0.0;
  std::size_t n = 0;
  double p = 0.0;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::string base_label;
};

// Fits one cross-fitted imputation model per recipe (per analysis stratum
// when the experiment is stratified), runs the adjusted estimator, and
// tabulates SEs plus effective-sample-size ratios against the base recipe.
// The first recipe is the base.
ComparisonReport compare_models(const Experiment& experiment,
                                const std::vector<ExtraColumn>& available_extras,
                                const std::vector<CovariateRecipe>& recipes,
                                const LearnerConfig& learner,
                                const EncodeOptions& options = {});

std::string format_comparison_text(const ComparisonReport& report);
void write_comparison_csv(const std::string& path, const ComparisonReport& report);
void write_significance_csv(const std::string& path,
                            const std::vector<SignificanceReport>& reports);

}  // namespace pairadjust

#endif  // PAIRADJUST_EVALUATION_HPP
