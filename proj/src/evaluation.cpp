#include "pairadjust/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "pairadjust/common.hpp"
#include "pairadjust/csv.hpp"

namespace pairadjust {

std::vector<SignificanceReport> significance_test(
    const Experiment& experiment, const AugmentedCovariates& base_plus_extras,
    const std::vector<ExtraColumn>& llm_columns, const EncodeOptions& options) {
  if (llm_columns.empty())
    throw ValidationError("significance_test: no LLM columns supplied");
  const auto n = static_cast<Eigen::Index>(experiment.n());
  if (base_plus_extras.x.rows() != n)
    throw ValidationError("significance_test: covariate row mismatch");

  // full design: base (+extras already encoded) + LLM columns + treatment
  std::vector<ExtraColumn> all_extras = llm_columns;
  AugmentedCovariates llm_encoded = encode_covariates(experiment, all_extras, options);
  const Eigen::Index llm_cols = llm_encoded.x.cols() - static_cast<Eigen::Index>(
                                                            llm_encoded.base_columns);

  const Eigen::Index base_cols = base_plus_extras.x.cols();
  Eigen::MatrixXd design(n, base_cols + llm_cols + 1);
  design.leftCols(base_cols) = base_plus_extras.x;
  design.middleCols(base_cols, llm_cols) =
      llm_encoded.x.rightCols(llm_cols);
  for (Eigen::Index i = 0; i < n; ++i)
    design(i, base_cols + llm_cols) =
        static_cast<double>(experiment.z[static_cast<std::size_t>(i)]);

  std::vector<std::string> names = base_plus_extras.column_names;
  for (std::size_t j = llm_encoded.base_columns; j < llm_encoded.column_names.size(); ++j)
    names.push_back(llm_encoded.column_names[j]);
  names.push_back("treatment");

  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = experiment.y[static_cast<std::size_t>(i)];

  std::vector<std::string> fit_names;  // without intercept; fits prepend it
  fit_names = names;
  Eigen::VectorXd coef, se, z, p;
  std::string model_kind;
  if (experiment.outcome_kind == OutcomeKind::Binary) {
    model_kind = "logistic";
    const LogisticFit fit = logistic_fit(y, design, fit_names);
    coef = fit.coef;
    se = fit.se;
    z = fit.z;
    p = fit.p;
  } else {
    model_kind = "linear";
    const LinearFitStats fit = linear_fit_stats(y, design, fit_names);
    coef = fit.coef;
    se = fit.se;
    z = fit.z;
    p = fit.p;
  }

  std::vector<SignificanceReport> out;
  for (std::size_t j = llm_encoded.base_columns; j < llm_encoded.column_names.size(); ++j) {
    const std::string& col_name = llm_encoded.column_names[j];
    // position in the fit: intercept + base + offset within llm block
    const Eigen::Index idx = 1 + base_cols +
                             static_cast<Eigen::Index>(j - llm_encoded.base_columns);
    SignificanceReport rep;
    rep.covariate = col_name;
    rep.coefficient = coef[idx];
    rep.se = se[idx];
    rep.statistic = z[idx];
    rep.p_value = p[idx];
    rep.model_kind = model_kind;
    rep.included_columns = names;
    out.push_back(std::move(rep));
  }
  return out;
}

namespace {

Imputations impute_with(const Experiment& exp, const AugmentedCovariates& x,
                        const LearnerConfig& learner) {
  if (learner.kind == LearnerConfig::Kind::RandomForest)
    return rf_impute(exp, x, learner).first;
  return loo_linear_impute(exp, x, learner);
}

}  // namespace

ComparisonReport compare_models(const Experiment& experiment,
                                const std::vector<ExtraColumn>& available_extras,
                                const std::vector<CovariateRecipe>& recipes,
                                const LearnerConfig& learner,
                                const EncodeOptions& options) {
  if (recipes.empty()) throw ValidationError("compare_models: no recipes");
  std::map<std::string, const ExtraColumn*> by_name;
  for (const auto& e : available_extras) by_name[e.name] = &e;
  for (const auto& r : recipes)
    for (const auto& name : r.extra_names)
      if (!by_name.count(name))
        throw ValidationError("recipe '" + r.label + "' references absent column '" +
                              name + "'");

  ComparisonReport report;
  report.base_label = recipes.front().label;

  // stratified experiments are analyzed stratum by stratum; p may differ
  std::vector<std::pair<std::string, std::vector<std::size_t>>> strata;
  if (experiment.stratum.empty()) {
    std::vector<std::size_t> all(experiment.n());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    strata.emplace_back("all", std::move(all));
  } else {
    for (const auto& lab : experiment.stratum_labels()) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < experiment.n(); ++i)
        if (experiment.stratum[i] == lab) rows.push_back(i);
      strata.emplace_back(lab, std::move(rows));
    }
  }

  for (const auto& [stratum_label, rows] : strata) {
    const Experiment sub = experiment.stratum.empty() ? experiment
                                                      : experiment.subset(rows);
    double base_se = 0.0;
    for (const auto& recipe : recipes) {
      std::vector<ExtraColumn> extras;
      for (const auto& name : recipe.extra_names) {
        const ExtraColumn& full = *by_name.at(name);
        if (experiment.stratum.empty()) {
          extras.push_back(full);
        } else {
          ExtraColumn sliced;
          sliced.name = full.name;
          for (std::size_t r : rows) {
            sliced.values.push_back(full.values[r]);
            sliced.missing.push_back(full.missing.empty() ? 0 : full.missing[r]);
          }
          extras.push_back(std::move(sliced));
        }
      }
      const AugmentedCovariates x = encode_covariates(sub, extras, options);
      const Imputations imp = impute_with(sub, x, learner);
      const EstimateResult est = adjusted_estimate(sub, imp, recipe.label);

      ComparisonRow row;
      row.stratum = stratum_label;
      row.label = recipe.label;
      row.tau_hat = est.tau_hat;
      row.se = est.se;
      row.e2_c = est.e2_c;
      row.e2_t = est.e2_t;
      row.n = est.n;
      row.p = est.p_used;
      if (recipe.label == report.base_label) base_se = est.se;
      row.ess_vs_base = ess_ratio(base_se, est.se);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string format_comparison_text(const ComparisonReport& report) {
  // aligned columns: stratum | one SE column per recipe | ESS per recipe
  std::vector<std::string> labels;
  std::vector<std::string> strata;
  for (const auto& row : report.rows) {
    if (std::find(labels.begin(), labels.end(), row.label) == labels.end())
      labels.push_back(row.label);
    if (std::find(strata.begin(), strata.end(), row.stratum) == strata.end())
      strata.push_back(row.stratum);
  }
  auto find_row = [&](const std::string& s, const std::string& l) -> const ComparisonRow* {
    for (const auto& row : report.rows)
      if (row.stratum == s && row.label == l) return &row;
    return nullptr;
  };

  std::size_t width = 8;
  for (const auto& l : labels) width = std::max(width, l.size() + 2);
  std::size_t swidth = 8;
  for (const auto& s : strata) swidth = std::max(swidth, s.size() + 2);

  std::ostringstream out;
  auto pad = [&](const std::string& s, std::size_t w) {
    std::string r = s;
    while (r.size() < w) r += ' ';
    return r;
  };
  out << "Estimator standard errors by stratum\n";
  out << pad("stratum", swidth);
  for (const auto& l : labels) out << pad(l, width);
  out << "\n";
  for (const auto& s : strata) {
    out << pad(s, swidth);
    for (const auto& l : labels) {
      const ComparisonRow* row = find_row(s, l);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", row ? row->se : 0.0);
      out << pad(buf, width);
    }
    out << "\n";
  }
  out << "\nEffective sample size ratio vs '" << report.base_label << "'\n";
  out << pad("stratum", swidth);
  for (const auto& l : labels) out << pad(l, width);
  out << "\n";
  for (const auto& s : strata) {
    out << pad(s, swidth);
    for (const auto& l : labels) {
      const ComparisonRow* row = find_row(s, l);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f", row ? row->ess_vs_base : 0.0);
      out << pad(buf, width);
    }
    out << "\n";
  }
  return out.str();
}

void write_comparison_csv(const std::string& path, const ComparisonReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : report.rows)
    rows.push_back({r.stratum, r.label, format_double(r.tau_hat), format_double(r.se),
                    format_double(r.ess_vs_base), format_double(r.e2_c),
                    format_double(r.e2_t), std::to_string(r.n), format_double(r.p)});
  csv::write_file(path,
                  {"stratum", "covariate_set_label", "tau_hat", "se", "ess_vs_base",
                   "e2_c", "e2_t", "n", "p"},
                  rows);
}

void write_significance_csv(const std::string& path,
                            const std::vector<SignificanceReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports)
    rows.push_back({r.covariate, format_double(r.coefficient), format_double(r.se),
                    format_double(r.statistic), format_double(r.p_value), r.model_kind,
                    r.p_value < 0.05 ? "yes" : "no"});
  csv::write_file(path,
                  {"covariate", "coefficient", "se", "statistic", "p_value",
                   "model_kind", "significant_at_0.05"},
                  rows);
}

}  // namespace pairadjust
