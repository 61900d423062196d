#include <doctest.h>

#include <random>

#include "pairadjust/common.hpp"
#include "pairadjust/imputation.hpp"

using namespace pairadjust;

namespace {

Experiment make_experiment(std::vector<int> z, std::vector<double> y, double p) {
  Experiment exp;
  for (std::size_t i = 0; i < z.size(); ++i) exp.ids.push_back("u" + std::to_string(i));
  exp.z = std::move(z);
  exp.y = std::move(y);
  exp.p.assign(exp.z.size(), p);
  return exp;
}

AugmentedCovariates wrap_matrix(const Eigen::MatrixXd& x) {
  AugmentedCovariates out;
  out.x = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    out.column_names.push_back("x" + std::to_string(j + 1));
  out.provenance.assign(static_cast<std::size_t>(x.cols()), "base");
  out.base_columns = static_cast<std::size_t>(x.cols());
  return out;
}

// brute-force oracle: refit least squares without row i, predict row i
double refit_without_and_predict(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                 Eigen::Index drop) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd b(n - 1, x.cols() + 1);
  Eigen::VectorXd yy(n - 1);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i == drop) continue;
    b(r, 0) = 1.0;
    b.row(r).tail(x.cols()) = x.row(i);
    yy[r] = y[i];
    ++r;
  }
  const Eigen::VectorXd beta = b.colPivHouseholderQr().solve(yy);
  Eigen::RowVectorXd probe(x.cols() + 1);
  probe[0] = 1.0;
  probe.tail(x.cols()) = x.row(drop);
  return probe.dot(beta);
}

}  // namespace

TEST_SUITE("imputation.linear") {

TEST_CASE("intercept-only arm of two: LOO prediction is the other point") {
  // control y = (1,3); treated arm present so the impute call is legal
  const Experiment exp = make_experiment({1, 1, 0, 0}, {5, 7, 1, 3}, 0.5);
  const AugmentedCovariates x = wrap_matrix(Eigen::MatrixXd(4, 0));
  const Imputations imp = loo_linear_impute(exp, x, {});
  CHECK(imp.y_hat_c[2] == doctest::Approx(3.0));
  CHECK(imp.y_hat_c[3] == doctest::Approx(1.0));
  // treated units get the control arm's full-fit mean
  CHECK(imp.y_hat_c[0] == doctest::Approx(2.0));
  CHECK(imp.y_hat_t[2] == doctest::Approx(6.0));
  CHECK(imp.cross_fitted);
}

TEST_CASE("model class containing the truth gives zero LOO residuals") {
  std::vector<int> z;
  std::vector<double> y;
  Eigen::MatrixXd x(10, 1);
  for (int i = 0; i < 10; ++i) {
    z.push_back(i % 2);
    x(i, 0) = i + 1.0;
    y.push_back(2.0 * x(i, 0));
  }
  const Experiment exp = make_experiment(z, y, 0.5);
  const Imputations imp = loo_linear_impute(exp, wrap_matrix(x), {});
  for (int i = 0; i < 10; ++i) {
    const double pred = z[static_cast<std::size_t>(i)] ? imp.y_hat_t[i] : imp.y_hat_c[i];
    CHECK(std::abs(pred - y[static_cast<std::size_t>(i)]) <= 1e-9);
  }
}

TEST_CASE("hat-matrix LOO equals explicit refits on random designs") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss(0, 1);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Index n = 30;
    Eigen::MatrixXd x(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) x(i, j) = gauss(rng);
      y[i] = x(i, 0) - 0.5 * x(i, 2) + gauss(rng);
    }
    const LinearLooModel model(x, y);
    REQUIRE(std::string(model.mode()) == "ols");
    for (Eigen::Index i = 0; i < n; ++i) {
      const double oracle = refit_without_and_predict(x, y, i);
      CHECK(model.loo_fitted()[i] ==
            doctest::Approx(oracle).epsilon(1e-8));
    }
  }
}

TEST_CASE("pooled mode downdates match explicit refits") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> gauss(0, 1);
  const Eigen::Index n = 24;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  std::vector<int> z;
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = gauss(rng);
    x(i, 1) = gauss(rng);
    z.push_back(i % 2);
    y[i] = 1.5 * x(i, 0) + (z.back() ? 2.0 : 0.0) + gauss(rng);
  }
  std::vector<double> yv(y.data(), y.data() + n);
  const Experiment exp = make_experiment(z, yv, 0.5);
  LearnerConfig pooled;
  pooled.per_arm = false;
  const Imputations imp = loo_linear_impute(exp, wrap_matrix(x), pooled);

  // oracle: refit on [x, z] without row i, predict with z toggled
  Eigen::MatrixXd design(n, 3);
  design.leftCols(2) = x;
  for (Eigen::Index i = 0; i < n; ++i) design(i, 2) = z[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::MatrixXd probe_design = design;
    probe_design(i, 2) = 1.0;
    Eigen::MatrixXd b(n - 1, 4);
    Eigen::VectorXd yy(n - 1);
    Eigen::Index r = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k == i) continue;
      b(r, 0) = 1.0;
      b.row(r).tail(3) = design.row(k);
      yy[r] = y[k];
      ++r;
    }
    const Eigen::VectorXd beta = b.colPivHouseholderQr().solve(yy);
    Eigen::RowVectorXd probe(4);
    probe[0] = 1.0;
    probe.tail(3) = probe_design.row(i);
    CHECK(imp.y_hat_t[i] == doctest::Approx(probe.dot(beta)).epsilon(1e-8));
  }
}

TEST_CASE("own-arm prediction is invariant to the unit's own outcome") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0, 1);
  const Eigen::Index n = 20;
  Eigen::MatrixXd x(n, 2);
  std::vector<int> z;
  std::vector<double> y;
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = gauss(rng);
    x(i, 1) = gauss(rng);
    z.push_back(i < 10 ? 1 : 0);
    y.push_back(gauss(rng));
  }
  const Experiment exp = make_experiment(z, y, 0.5);
  const Imputations before = loo_linear_impute(exp, wrap_matrix(x), {});

  Experiment mutated = exp;
  mutated.y[3] += 100.0;  // unit 3 is treated
  const Imputations after = loo_linear_impute(mutated, wrap_matrix(x), {});
  CHECK(after.y_hat_t[3] == doctest::Approx(before.y_hat_t[3]).epsilon(1e-12));
  // other units' treated-arm predictions do move
  CHECK(std::abs(after.y_hat_t[5] - before.y_hat_t[5]) > 1e-6);
}

TEST_CASE("an all-zero column changes predictions by nothing") {
  std::mt19937_64 rng(47);
  std::normal_distribution<double> gauss(0, 1);
  const Eigen::Index n = 26;
  Eigen::MatrixXd x(n, 2);
  std::vector<int> z;
  std::vector<double> y;
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = gauss(rng);
    x(i, 1) = gauss(rng);
    z.push_back(i % 2);
    y.push_back(x(i, 0) + gauss(rng));
  }
  Eigen::MatrixXd padded(n, 3);
  padded.leftCols(2) = x;
  padded.col(2).setZero();
  const Experiment exp = make_experiment(z, y, 0.5);
  const Imputations plain = loo_linear_impute(exp, wrap_matrix(x), {});
  const Imputations with_zero = loo_linear_impute(exp, wrap_matrix(padded), {});
  for (Eigen::Index i = 0; i < n; ++i) {
    CHECK(with_zero.y_hat_t[i] == doctest::Approx(plain.y_hat_t[i]).epsilon(1e-12));
    CHECK(with_zero.y_hat_c[i] == doctest::Approx(plain.y_hat_c[i]).epsilon(1e-12));
  }
}

TEST_CASE("tiny arms fall back; single-unit arms are refused") {
  // 3 treated, 2 control, 2 covariates: control OLS infeasible, falls back
  Eigen::MatrixXd x(5, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
  const Experiment exp = make_experiment({1, 1, 1, 0, 0}, {1, 2, 3, 4, 6}, 0.5);
  const Imputations imp = loo_linear_impute(exp, wrap_matrix(x), {});
  CHECK(imp.y_hat_c[3] == doctest::Approx(6.0));  // LOO mean of the other point
  CHECK(imp.y_hat_c[4] == doctest::Approx(4.0));

  const Experiment degenerate = make_experiment({1, 0, 0, 0}, {1, 2, 3, 4}, 0.5);
  CHECK_THROWS_WITH_AS(loo_linear_impute(degenerate, wrap_matrix(Eigen::MatrixXd(4, 0)), {}),
                       doctest::Contains("at least 2 units"), ValidationError);
}

TEST_CASE("NaN inputs are rejected") {
  Eigen::MatrixXd x(4, 1);
  x << 1, 2, std::numeric_limits<double>::quiet_NaN(), 4;
  const Experiment exp = make_experiment({1, 1, 0, 0}, {1, 2, 3, 4}, 0.5);
  CHECK_THROWS_WITH_AS(loo_linear_impute(exp, wrap_matrix(x), {}),
                       doctest::Contains("NaN"), ValidationError);
}

}  // TEST_SUITE

TEST_SUITE("imputation.logistic") {

TEST_CASE("intercept-only coin flip: coefficient near zero, p near one") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  int near_null = 0;
  const int sims = 200;
  for (int s = 0; s < sims; ++s) {
    const Eigen::Index n = 400;
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = coin(rng) ? 1.0 : 0.0;
    if (y.sum() == 0 || y.sum() == n) continue;
    const LogisticFit fit = logistic_fit(y, Eigen::MatrixXd(n, 0), {});
    if (std::abs(fit.coef[0]) < 3.0 * fit.se[0]) ++near_null;
  }
  CHECK(near_null >= sims * 95 / 100);
}

TEST_CASE("perfect separation is detected") {
  const Eigen::Index n = 60;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i) - 30.0 + (i % 2) * 0.1;
    y[i] = x(i, 0) > 0 ? 1.0 : 0.0;
  }
  CHECK_THROWS_WITH_AS(logistic_fit(y, x, {"x"}),
                       doctest::Contains("separates"), ValidationError);
}

TEST_CASE("recovers simulated coefficients within 3 SEs") {
  std::mt19937_64 rng(91);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> unif(0, 1);
  const Eigen::Index n = 5000;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  const double beta0 = -1.0, beta1 = 2.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = gauss(rng);
    const double eta = beta0 + beta1 * x(i, 0);
    y[i] = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  const LogisticFit fit = logistic_fit(y, x, {"x"});
  REQUIRE(fit.converged);
  CHECK(std::abs(fit.coef[0] - beta0) < 3.0 * fit.se[0]);
  CHECK(std::abs(fit.coef[1] - beta1) < 3.0 * fit.se[1]);
  CHECK(fit.p[1] < 1e-6);
}

TEST_CASE("collinear columns are reported with their partners") {
  const Eigen::Index n = 50;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> gauss(0, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = gauss(rng);
    x(i, 1) = x(i, 0);  // duplicate
    y[i] = i % 2 ? 1.0 : 0.0;
  }
  try {
    logistic_fit(y, x, {"score", "score_copy"});
    FAIL("expected a collinearity error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("score") != std::string::npos);
    CHECK(msg.find("collinear with") != std::string::npos);
  }
}

TEST_CASE("both classes must be present and outcomes must be 0/1") {
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(10);
  CHECK_THROWS_WITH_AS(logistic_fit(ones, Eigen::MatrixXd(10, 0), {}),
                       doctest::Contains("both outcome classes"), ValidationError);
  Eigen::VectorXd bad = ones;
  bad[0] = 0.5;
  CHECK_THROWS_WITH_AS(logistic_fit(bad, Eigen::MatrixXd(10, 0), {}),
                       doctest::Contains("0/1"), ValidationError);
}

}  // TEST_SUITE
