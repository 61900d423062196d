#include "pairadjust/imputation.hpp"

#include <algorithm>
#include <cmath>

#include "pairadjust/common.hpp"

namespace pairadjust {

namespace {

constexpr double kRidgePenalty = 1e-6;
// leverage this close to 1 means the fit is interpolating the point;
// leave-one-out would extrapolate wildly, so the next fallback takes over
constexpr double kLeverageCap = 1.0 - 1e-4;

std::vector<std::size_t> arm_rows(const Experiment& e, int arm) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < e.n(); ++i)
    if (e.z[i] == arm) rows.push_back(i);
  return rows;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

Eigen::VectorXd take(const std::vector<double>& v, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[rows[k]];
  return out;
}

void check_finite(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (!x.allFinite() || !y.allFinite())
    throw ValidationError("imputation inputs contain NaN or infinite values");
}

}  // namespace

LearnerConfig LearnerConfig::from_json(const nlohmann::json& j,
                                       std::uint64_t default_seed) {
  LearnerConfig c;
  c.rf.seed = default_seed;
  if (j.contains("kind")) {
    const std::string k = j.at("kind").get<std::string>();
    if (k == "loo_linear")
      c.kind = Kind::LooLinear;
    else if (k == "random_forest")
      c.kind = Kind::RandomForest;
    else
      throw ValidationError("learner kind must be loo_linear|random_forest, got '" + k + "'");
  }
  if (j.contains("per_arm")) c.per_arm = j.at("per_arm").get<bool>();
  if (j.contains("rf")) {
    const auto& r = j.at("rf");
    if (r.contains("n_trees")) c.rf.n_trees = r.at("n_trees").get<int>();
    if (r.contains("mtry")) c.rf.mtry = r.at("mtry").get<int>();
    if (r.contains("min_leaf")) c.rf.min_leaf = r.at("min_leaf").get<int>();
    if (r.contains("max_depth")) c.rf.max_depth = r.at("max_depth").get<int>();
    if (r.contains("seed")) c.rf.seed = r.at("seed").get<std::uint64_t>();
    if (r.contains("n_threads")) c.rf.n_threads = r.at("n_threads").get<int>();
  }
  return c;
}

LinearLooModel::LinearLooModel(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                               bool need_downdate) {
  check_finite(x, y);
  const Eigen::Index n = x.rows();
  if (n < 2)
    throw ValidationError("linear model needs at least 2 rows per arm for "
                          "leave-one-out fitting, got " + std::to_string(n));
  y_ = y;
  b_.resize(n, x.cols() + 1);
  b_.col(0).setOnes();
  if (x.cols() > 0) b_.rightCols(x.cols()) = x;
  const Eigen::Index k = b_.cols();

  // OLS, tolerating rank deficiency: predictions are the projection onto the
  // column space, so dependent (e.g. all-zero) columns change nothing.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(b_);
  const Eigen::Index rank = qr.rank();
  bool done = false;
  if (n - 1 > rank && (!need_downdate || rank == k)) {
    Eigen::MatrixXd thin_q =
        qr.householderQ() * Eigen::MatrixXd::Identity(n, rank);
    Eigen::VectorXd lev = thin_q.rowwise().squaredNorm();
    if (lev.maxCoeff() < kLeverageCap) {
      mode_ = Mode::Ols;
      beta_ = qr.solve(y_);
      fitted_ = b_ * beta_;
      leverage_ = std::move(lev);
      if (need_downdate) {
        // full rank here; (B'B)^-1 = P R^-1 R^-T P'
        Eigen::MatrixXd r_inv = qr.matrixR()
                                    .topLeftCorner(k, k)
                                    .triangularView<Eigen::Upper>()
                                    .solve(Eigen::MatrixXd::Identity(k, k));
        a_inv_ = qr.colsPermutation() * (r_inv * r_inv.transpose()) *
                 qr.colsPermutation().transpose();
        has_a_inv_ = true;
      }
      done = true;
    }
  }

  if (!done) {
    // ridge on the non-intercept columns; exact LOO still holds via
    // Sherman-Morrison on A = B'B + lambda*D
    Eigen::MatrixXd a = b_.transpose() * b_;
    for (Eigen::Index j = 1; j < k; ++j) a(j, j) += kRidgePenalty;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() == Eigen::Success) {
      a_inv_ = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
      has_a_inv_ = true;
      beta_ = a_inv_ * (b_.transpose() * y_);
      fitted_ = b_ * beta_;
      leverage_ = (b_ * a_inv_).cwiseProduct(b_).rowwise().sum();
      if (leverage_.maxCoeff() < kLeverageCap) {
        mode_ = Mode::Ridge;
        done = true;
      }
    }
  }

  if (!done) {
    // intercept-only mean model
    mode_ = Mode::InterceptOnly;
    beta_ = Eigen::VectorXd::Zero(k);
    beta_[0] = y_.mean();
    fitted_ = Eigen::VectorXd::Constant(n, beta_[0]);
    leverage_ = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    has_a_inv_ = false;
  }

  loo_fitted_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = y_[i] - fitted_[i];
    loo_fitted_[i] = y_[i] - e / (1.0 - leverage_[i]);
  }
}

Eigen::RowVectorXd LinearLooModel::with_intercept(const Eigen::RowVectorXd& x_row) const {
  Eigen::RowVectorXd b(x_row.size() + 1);
  b[0] = 1.0;
  if (x_row.size() > 0) b.tail(x_row.size()) = x_row;
  return b;
}

double LinearLooModel::predict(const Eigen::RowVectorXd& x_row) const {
  return with_intercept(x_row).dot(beta_);
}

double LinearLooModel::predict_without(const Eigen::RowVectorXd& x_row,
                                       Eigen::Index i) const {
  const Eigen::RowVectorXd b = with_intercept(x_row);
  if (mode_ == Mode::InterceptOnly) {
    const auto n = static_cast<double>(y_.size());
    return (y_.sum() - y_[i]) / (n - 1.0);
  }
  if (!has_a_inv_)
    throw ValidationError("linear model was fit without downdate support");
  // beta_{-i} = beta - A^-1 b_i e_i / (1 - h_i)
  const double e = y_[i] - fitted_[i];
  const Eigen::VectorXd correction = a_inv_ * b_.row(i).transpose();
  return b.dot(beta_) - b.dot(correction) * e / (1.0 - leverage_[i]);
}

const char* LinearLooModel::mode() const {
  switch (mode_) {
    case Mode::Ols: return "ols";
    case Mode::Ridge: return "ridge";
    case Mode::InterceptOnly: return "intercept_only";
  }
  return "?";
}

Imputations loo_linear_impute(const Experiment& experiment,
                              const AugmentedCovariates& x,
                              const LearnerConfig& config) {
  const auto n = static_cast<Eigen::Index>(experiment.n());
  if (x.x.rows() != n) throw ValidationError("covariate matrix row count mismatch");
  Imputations imp;
  imp.y_hat_t.resize(n);
  imp.y_hat_c.resize(n);
  imp.cross_fitted = true;

  if (!config.per_arm) {
    // pooled fit with a treatment column; both potential outcomes come from
    // the model with unit i removed, toggling the treatment feature
    Eigen::MatrixXd design(n, x.x.cols() + 1);
    design.leftCols(x.x.cols()) = x.x;
    for (Eigen::Index i = 0; i < n; ++i)
      design(i, x.x.cols()) = static_cast<double>(experiment.z[static_cast<std::size_t>(i)]);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = experiment.y[static_cast<std::size_t>(i)];
    LinearLooModel model(design, y, /*need_downdate=*/true);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::RowVectorXd row = design.row(i);
      row[x.x.cols()] = 1.0;
      imp.y_hat_t[i] = model.predict_without(row, i);
      row[x.x.cols()] = 0.0;
      imp.y_hat_c[i] = model.predict_without(row, i);
    }
    return imp;
  }

  const std::vector<std::size_t> treated = arm_rows(experiment, 1);
  const std::vector<std::size_t> control = arm_rows(experiment, 0);
  if (treated.size() < 2 || control.size() < 2)
    throw ValidationError("each arm needs at least 2 units for cross-fitted "
                          "imputation (treated=" + std::to_string(treated.size()) +
                          ", control=" + std::to_string(control.size()) + ")");

  LinearLooModel model_t(take_rows(x.x, treated), take(experiment.y, treated));
  LinearLooModel model_c(take_rows(x.x, control), take(experiment.y, control));

  for (std::size_t k = 0; k < treated.size(); ++k)
    imp.y_hat_t[static_cast<Eigen::Index>(treated[k])] =
        model_t.loo_fitted()[static_cast<Eigen::Index>(k)];
  for (std::size_t k = 0; k < control.size(); ++k)
    imp.y_hat_c[static_cast<Eigen::Index>(control[k])] =
        model_c.loo_fitted()[static_cast<Eigen::Index>(k)];
  for (std::size_t i : control)
    imp.y_hat_t[static_cast<Eigen::Index>(i)] =
        model_t.predict(x.x.row(static_cast<Eigen::Index>(i)));
  for (std::size_t i : treated)
    imp.y_hat_c[static_cast<Eigen::Index>(i)] =
        model_c.predict(x.x.row(static_cast<Eigen::Index>(i)));
  return imp;
}

std::pair<Imputations, FitReport> rf_impute(const Experiment& experiment,
                                            const AugmentedCovariates& x,
                                            const LearnerConfig& config) {
  const auto n = static_cast<Eigen::Index>(experiment.n());
  if (x.x.rows() != n) throw ValidationError("covariate matrix row count mismatch");
  Imputations imp;
  imp.y_hat_t.resize(n);
  imp.y_hat_c.resize(n);
  imp.cross_fitted = true;
  FitReport report;
  report.learner = config;

  if (!config.per_arm) {
    Eigen::MatrixXd design(n, x.x.cols() + 1);
    design.leftCols(x.x.cols()) = x.x;
    for (Eigen::Index i = 0; i < n; ++i)
      design(i, x.x.cols()) = static_cast<double>(experiment.z[static_cast<std::size_t>(i)]);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = experiment.y[static_cast<std::size_t>(i)];
    RandomForest forest;
    forest.fit(design, y, config.rf);

    Eigen::MatrixXd as_treated = design;
    as_treated.col(x.x.cols()).setOnes();
    Eigen::MatrixXd as_control = design;
    as_control.col(x.x.cols()).setZero();
    imp.y_hat_t = forest.oob_predict(as_treated);
    imp.y_hat_c = forest.oob_predict(as_control);

    const Eigen::VectorXd oob = forest.oob_predict();
    double mse = (oob - y).squaredNorm() / static_cast<double>(n);
    report.mse_t = report.mse_c = mse;
    const Eigen::VectorXd importance = forest.importance();
    for (std::size_t j = 0; j < x.column_names.size(); ++j)
      report.importance.emplace_back(x.column_names[j],
                                     importance[static_cast<Eigen::Index>(j)]);
    report.importance.emplace_back("treatment", importance[x.x.cols()]);
    return {imp, report};
  }

  const std::vector<std::size_t> treated = arm_rows(experiment, 1);
  const std::vector<std::size_t> control = arm_rows(experiment, 0);
  if (treated.size() < 2 || control.size() < 2)
    throw ValidationError("each arm needs at least 2 units for out-of-bag "
                          "imputation (treated=" + std::to_string(treated.size()) +
                          ", control=" + std::to_string(control.size()) + ")");

  // two forests; tree seeds stay disjoint across arms
  ForestParams params_t = config.rf;
  ForestParams params_c = config.rf;
  params_c.seed = config.rf.seed + static_cast<std::uint64_t>(config.rf.n_trees);

  RandomForest forest_t, forest_c;
  forest_t.fit(take_rows(x.x, treated), take(experiment.y, treated), params_t);
  forest_c.fit(take_rows(x.x, control), take(experiment.y, control), params_c);

  const Eigen::VectorXd oob_t = forest_t.oob_predict();
  const Eigen::VectorXd oob_c = forest_c.oob_predict();
  for (std::size_t k = 0; k < treated.size(); ++k)
    imp.y_hat_t[static_cast<Eigen::Index>(treated[k])] = oob_t[static_cast<Eigen::Index>(k)];
  for (std::size_t k = 0; k < control.size(); ++k)
    imp.y_hat_c[static_cast<Eigen::Index>(control[k])] = oob_c[static_cast<Eigen::Index>(k)];
  for (std::size_t i : control)
    imp.y_hat_t[static_cast<Eigen::Index>(i)] =
        forest_t.predict_row(x.x.row(static_cast<Eigen::Index>(i)));
  for (std::size_t i : treated)
    imp.y_hat_c[static_cast<Eigen::Index>(i)] =
        forest_c.predict_row(x.x.row(static_cast<Eigen::Index>(i)));

  report.mse_t = (oob_t - take(experiment.y, treated)).squaredNorm() /
                 static_cast<double>(treated.size());
  report.mse_c = (oob_c - take(experiment.y, control)).squaredNorm() /
                 static_cast<double>(control.size());
  Eigen::VectorXd raw = forest_t.importance() + forest_c.importance();
  const double total = raw.sum();
  if (total > 0) raw /= total;
  for (std::size_t j = 0; j < x.column_names.size(); ++j)
    report.importance.emplace_back(x.column_names[j], raw[static_cast<Eigen::Index>(j)]);
  return {imp, report};
}

namespace {

// Dependent-column detection shared by both Wald fits: with column-pivoted
// QR, columns pivoted past the numerical rank are redundant. Each one is
// regressed on the independent set to name its collinear partners.
std::vector<std::string> dependent_columns(const Eigen::MatrixXd& b,
                                           const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr,
                                           const std::vector<std::string>& names) {
  std::vector<std::string> out;
  const Eigen::Index k = qr.cols();
  const Eigen::Index rank = qr.rank();
  Eigen::MatrixXd indep(b.rows(), rank);
  std::vector<std::size_t> indep_idx;
  for (Eigen::Index j = 0; j < rank; ++j) {
    const auto original = static_cast<std::size_t>(qr.colsPermutation().indices()[j]);
    indep.col(j) = b.col(static_cast<Eigen::Index>(original));
    indep_idx.push_back(original);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> indep_qr(indep);
  for (Eigen::Index j = rank; j < k; ++j) {
    const auto original = static_cast<std::size_t>(qr.colsPermutation().indices()[j]);
    const Eigen::VectorXd coef = indep_qr.solve(b.col(static_cast<Eigen::Index>(original)));
    std::string partners;
    for (Eigen::Index c = 0; c < coef.size(); ++c)
      if (std::abs(coef[c]) > 1e-6) {
        if (!partners.empty()) partners += " + ";
        partners += names[indep_idx[static_cast<std::size_t>(c)]];
      }
    out.push_back(partners.empty() ? names[original]
                                   : names[original] + " (collinear with " + partners + ")");
  }
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += ", ";
    s += parts[i];
  }
  return s;
}

Eigen::MatrixXd prepend_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd b(x.rows(), x.cols() + 1);
  b.col(0).setOnes();
  if (x.cols() > 0) b.rightCols(x.cols()) = x;
  return b;
}

std::vector<std::string> prepend_name(const std::vector<std::string>& names) {
  std::vector<std::string> out{"(Intercept)"};
  out.insert(out.end(), names.begin(), names.end());
  return out;
}

}  // namespace

LogisticFit logistic_fit(const Eigen::VectorXd& y01, const Eigen::MatrixXd& x,
                         const std::vector<std::string>& names) {
  check_finite(x, y01);
  const Eigen::Index n = x.rows();
  if (y01.size() != n) throw ValidationError("logistic_fit: x/y row mismatch");
  if (names.size() != static_cast<std::size_t>(x.cols()))
    throw ValidationError("logistic_fit: one name per column required");
  bool has0 = false, has1 = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y01[i] == 0.0) has0 = true;
    else if (y01[i] == 1.0) has1 = true;
    else throw ValidationError("logistic_fit: outcome must be 0/1");
  }
  if (!has0 || !has1)
    throw ValidationError("logistic_fit: both outcome classes must be present");

  const Eigen::MatrixXd b = prepend_intercept(x);
  const std::vector<std::string> all_names = prepend_name(names);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(b);
  if (qr.rank() < b.cols())
    throw ValidationError("logistic_fit: collinear columns: " +
                          join(dependent_columns(b, qr, all_names)));

  const Eigen::Index k = b.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  LogisticFit fit;
  fit.names = all_names;
  for (int iter = 1; iter <= 50; ++iter) {
    const Eigen::VectorXd eta = b * beta;
    if (eta.cwiseAbs().maxCoeff() > 30.0)
      throw ValidationError("logistic_fit: diverging linear predictor, a column "
                            "perfectly separates the classes");
    const Eigen::VectorXd mu = (1.0 + (-eta.array()).exp()).inverse().matrix();
    const Eigen::VectorXd score = b.transpose() * (y01 - mu);
    fit.iterations = iter;
    if (score.cwiseAbs().maxCoeff() < 1e-8) {
      fit.converged = true;
      break;
    }
    const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
    const Eigen::MatrixXd info = b.transpose() * w.asDiagonal() * b;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success)
      throw ValidationError("logistic_fit: information matrix is singular");
    beta += ldlt.solve(score);
  }
  if (!fit.converged)
    throw ValidationError("logistic_fit: IRLS did not converge in 50 iterations");

  const Eigen::VectorXd eta = b * beta;
  const Eigen::VectorXd mu = (1.0 + (-eta.array()).exp()).inverse().matrix();
  const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
  const Eigen::MatrixXd info = b.transpose() * w.asDiagonal() * b;
  const Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(k, k));

  fit.coef = beta;
  fit.se = cov.diagonal().cwiseSqrt();
  fit.z = beta.cwiseQuotient(fit.se);
  fit.p.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) fit.p[j] = wald_p_value(fit.z[j]);
  return fit;
}

LinearFitStats linear_fit_stats(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                                const std::vector<std::string>& names) {
  check_finite(x, y);
  const Eigen::Index n = x.rows();
  if (y.size() != n) throw ValidationError("linear_fit_stats: x/y row mismatch");
  if (names.size() != static_cast<std::size_t>(x.cols()))
    throw ValidationError("linear_fit_stats: one name per column required");

  const Eigen::MatrixXd b = prepend_intercept(x);
  const std::vector<std::string> all_names = prepend_name(names);
  const Eigen::Index k = b.cols();
  if (n <= k)
    throw ValidationError("linear_fit_stats: need more rows than columns");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(b);
  if (qr.rank() < k)
    throw ValidationError("linear_fit_stats: collinear columns: " +
                          join(dependent_columns(b, qr, all_names)));

  LinearFitStats fit;
  fit.names = all_names;
  fit.coef = qr.solve(y);
  const Eigen::VectorXd resid = y - b * fit.coef;
  const double sigma2 = resid.squaredNorm() / static_cast<double>(n - k);
  const Eigen::MatrixXd cov =
      sigma2 * (b.transpose() * b).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  fit.se = cov.diagonal().cwiseSqrt();
  fit.z = fit.coef.cwiseQuotient(fit.se);
  fit.p.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) fit.p[j] = wald_p_value(fit.z[j]);
  return fit;
}

}  // namespace pairadjust
