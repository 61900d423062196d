#include "pairadjust/estimator.hpp"

#include <cmath>

#include "pairadjust/common.hpp"
#include "pairadjust/csv.hpp"

namespace pairadjust {

namespace {

// Sums in unit order; compensated above the threshold so large N stays
// reproducible without changing small-N bit patterns.
template <typename Fn>
double sum_units(std::size_t n, Fn term) {
  if (n > kCompensationThreshold) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < n; ++i) acc.add(term(i));
    return acc.value();
  }
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += term(i);
  return s;
}

void check_arms(const Experiment& e) {
  const std::size_t nt = e.n_treated();
  if (nt == 0) throw ValidationError("treated arm is empty");
  if (nt == e.n()) throw ValidationError("control arm is empty");
}

void check_imputations(const Experiment& e, const Imputations& imp) {
  const auto n = static_cast<Eigen::Index>(e.n());
  if (imp.y_hat_t.size() != n || imp.y_hat_c.size() != n)
    throw ValidationError("imputations length mismatch: expected " + std::to_string(e.n()));
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(imp.y_hat_t[i]) || !std::isfinite(imp.y_hat_c[i]))
      throw ValidationError("imputations contain a non-finite value at unit " +
                            std::to_string(i));
}

}  // namespace

Imputations Imputations::zeros(std::size_t n) {
  Imputations imp;
  imp.y_hat_t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  imp.y_hat_c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  imp.cross_fitted = true;  // constants use no outcome data
  return imp;
}

double sample_ate(const SyntheticTruth& truth) {
  if (truth.y_t.size() != truth.y_c.size() || truth.y_t.size() == 0)
    throw ValidationError("synthetic truth vectors must be non-empty and equal length");
  return truth.tau_bar();
}

VarianceParts variance_estimate(const Experiment& experiment,
                                const Imputations& imputations) {
  check_arms(experiment);
  check_imputations(experiment, imputations);
  const std::size_t n = experiment.n();
  const double p = experiment.constant_p();
  const auto nt = static_cast<double>(experiment.n_treated());
  const auto nc = static_cast<double>(experiment.n_control());

  VarianceParts parts;
  parts.e2_c = sum_units(n, [&](std::size_t i) {
    if (experiment.z[i] != 0) return 0.0;
    const double r = experiment.y[i] - imputations.y_hat_c[static_cast<Eigen::Index>(i)];
    return r * r;
  }) / nc;
  parts.e2_t = sum_units(n, [&](std::size_t i) {
    if (experiment.z[i] != 1) return 0.0;
    const double r = experiment.y[i] - imputations.y_hat_t[static_cast<Eigen::Index>(i)];
    return r * r;
  }) / nt;
  parts.variance = (p / (1.0 - p) * parts.e2_c + (1.0 - p) / p * parts.e2_t +
                    2.0 * std::sqrt(parts.e2_c * parts.e2_t)) /
                   static_cast<double>(n);
  return parts;
}

EstimateResult adjusted_estimate(const Experiment& experiment,
                                 const Imputations& imputations,
                                 const std::string& covariate_set_label) {
  if (!imputations.cross_fitted)
    throw ValidationError("imputations are not cross-fitted; the validity guarantee "
                          "would not hold, refusing to estimate");
  check_arms(experiment);
  check_imputations(experiment, imputations);
  const std::size_t n = experiment.n();
  const double p = experiment.constant_p();

  EstimateResult res;
  res.n = n;
  res.p_used = p;
  res.covariate_set_label = covariate_set_label;
  res.m_hat.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    res.m_hat[k] = p * imputations.y_hat_c[k] + (1.0 - p) * imputations.y_hat_t[k];
  }

  const double sum_t = sum_units(n, [&](std::size_t i) {
    if (experiment.z[i] != 1) return 0.0;
    return (experiment.y[i] - res.m_hat[static_cast<Eigen::Index>(i)]) / p;
  });
  const double sum_c = sum_units(n, [&](std::size_t i) {
    if (experiment.z[i] != 0) return 0.0;
    return (experiment.y[i] - res.m_hat[static_cast<Eigen::Index>(i)]) / (1.0 - p);
  });
  res.tau_hat = sum_t / static_cast<double>(n) - sum_c / static_cast<double>(n);

  const VarianceParts parts = variance_estimate(experiment, imputations);
  res.e2_c = parts.e2_c;
  res.e2_t = parts.e2_t;
  res.variance = parts.variance;
  res.se = std::sqrt(parts.variance);
  return res;
}

EstimateResult ht_estimate(const Experiment& experiment) {
  return adjusted_estimate(experiment, Imputations::zeros(experiment.n()), "none");
}

double ess_ratio(double se_base, double se_new) {
  if (!(se_base > 0.0) || !(se_new > 0.0))
    throw ValidationError("ess_ratio requires positive standard errors");
  const double r = se_base / se_new;
  return r * r;
}

void write_estimates_csv(const std::string& path,
                         const std::vector<StratumEstimate>& rows) {
  std::vector<std::vector<std::string>> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    const auto& r = row.result;
    out.push_back({row.stratum, r.covariate_set_label, format_double(r.tau_hat),
                   format_double(r.se), format_double(r.e2_c), format_double(r.e2_t),
                   std::to_string(r.n), format_double(r.p_used)});
  }
  csv::write_file(path,
                  {"stratum", "covariate_set_label", "tau_hat", "se", "e2_c", "e2_t",
                   "n", "p"},
                  out);
}

}  // namespace pairadjust
