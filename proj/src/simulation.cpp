#include "pairadjust/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <random>
#include <thread>

#include "pairadjust/common.hpp"
#include "pairadjust/csv.hpp"
#include "pairadjust/evaluation.hpp"
#include "pairadjust/llmclient.hpp"
#include "pairadjust/pairing.hpp"

namespace pairadjust {

void DgpConfig::validate() const {
  if (n < 10) throw ValidationError("dgp: n must be >= 10");
  if (!(p > 0 && p < 1)) throw ValidationError("dgp: p must be in (0,1)");
  if (k < 1) throw ValidationError("dgp: k must be >= 1");
  if (latent_signal_share < 0 || latent_signal_share > 1)
    throw ValidationError("dgp: latent_signal_share must be in [0,1]");
  if (noise_scale < 0) throw ValidationError("dgp: noise_scale must be >= 0");
}

namespace {

double structural_f(const DgpConfig& config, const Eigen::RowVectorXd& x) {
  switch (config.outcome_model) {
    case DgpConfig::OutcomeModel::Linear: {
      // sum x_j / sqrt(k): unit variance
      return x.sum() / std::sqrt(static_cast<double>(config.k));
    }
    case DgpConfig::OutcomeModel::Step:
      // 2*1{x1>0} - 1: unit variance
      return x[0] > 0 ? 1.0 : -1.0;
    case DgpConfig::OutcomeModel::NonlinearInteraction:
      // x1*x2 (or x1^2 - 1 when k == 1): unit variance
      return config.k >= 2 ? x[0] * x[1] : x[0] * x[0] - 1.0;
  }
  return 0.0;
}

}  // namespace

DgpDraw generate(const DgpConfig& config) {
  config.validate();
  std::mt19937_64 rng(mix_seed(config.seed, 0x64677000));
  std::normal_distribution<double> gauss(0.0, 1.0);

  const auto n = static_cast<std::size_t>(config.n);
  DgpDraw draw;
  Experiment& exp = draw.experiment;
  exp.outcome_kind = OutcomeKind::Continuous;
  exp.id_column = "unit";

  Eigen::MatrixXd x(config.n, config.k);
  for (int i = 0; i < config.n; ++i)
    for (int j = 0; j < config.k; ++j) x(i, j) = gauss(rng);

  draw.latent.resize(n);
  for (std::size_t i = 0; i < n; ++i) draw.latent[i] = gauss(rng);

  const double s = config.latent_signal_share;
  draw.truth.y_c.resize(config.n);
  draw.truth.y_t.resize(config.n);
  for (int i = 0; i < config.n; ++i) {
    const double f = structural_f(config, x.row(i));
    const double yc = std::sqrt(1.0 - s) * f +
                      std::sqrt(s) * draw.latent[static_cast<std::size_t>(i)] +
                      config.noise_scale * gauss(rng);
    double tau_i = config.tau;
    if (config.heterogeneous) tau_i += x(i, 0);
    draw.truth.y_c[i] = yc;
    draw.truth.y_t[i] = yc + tau_i;
  }

  exp.ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) exp.ids.push_back("u" + std::to_string(i + 1));
  exp.p.assign(n, config.p);
  for (int j = 0; j < config.k; ++j) {
    CovariateColumn c;
    c.name = "x" + std::to_string(j + 1);
    c.type = CovariateType::Real;
    c.numeric.resize(n);
    c.level.assign(n, -1);
    c.missing.assign(n, 0);
    for (int i = 0; i < config.n; ++i)
      c.numeric[static_cast<std::size_t>(i)] = x(i, j);
    exp.covariates.push_back(std::move(c));
  }

  exp.z.assign(n, 0);
  exp.y.assign(n, 0.0);
  redraw_assignment(draw, mix_seed(config.seed, 0x7a647261));
  return draw;
}

void redraw_assignment(DgpDraw& draw, std::uint64_t seed) {
  Experiment& exp = draw.experiment;
  const std::size_t n = exp.ids.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (;;) {
    std::size_t nt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      exp.z[i] = uniform(rng) < exp.p[i] ? 1 : 0;
      nt += static_cast<std::size_t>(exp.z[i]);
    }
    if (nt >= 2 && nt <= n - 2) break;  // keep both arms usable, draw again
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    exp.y[i] = exp.z[i] ? draw.truth.y_t[k] : draw.truth.y_c[k];
  }
}

namespace {

template <typename Fn>
void parallel_reps(int replications, int n_threads, Fn body) {
  if (n_threads <= 1) {
    for (int r = 0; r < replications; ++r) body(r);
    return;
  }
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= replications) return;
      try {
        body(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

McRow monte_carlo(const DgpConfig& dgp, const std::string& estimator_label,
                  const EstimateFn& estimate, const McConfig& mc) {
  if (mc.replications < 100)
    throw ValidationError("monte_carlo: replications must be >= 100");
  const DgpDraw base = generate(dgp);

  std::vector<double> tau_hats(static_cast<std::size_t>(mc.replications));
  std::vector<double> variances(static_cast<std::size_t>(mc.replications));
  std::vector<double> tau_bars(static_cast<std::size_t>(mc.replications));

  parallel_reps(mc.replications, mc.n_threads, [&](int r) {
    DgpDraw draw;
    if (mc.redraw_potential_outcomes) {
      DgpConfig rep_config = dgp;
      rep_config.seed = mix_seed(dgp.seed, 0x504f5244 + static_cast<std::uint64_t>(r));
      draw = generate(rep_config);
    } else {
      draw = base;
    }
    redraw_assignment(draw, mix_seed(mc.seed, static_cast<std::uint64_t>(r)));
    const EstimateResult res = estimate(draw.experiment, draw);
    tau_hats[static_cast<std::size_t>(r)] = res.tau_hat;
    variances[static_cast<std::size_t>(r)] = res.variance;
    tau_bars[static_cast<std::size_t>(r)] = draw.truth.tau_bar();
  });

  const auto R = static_cast<double>(mc.replications);
  McRow row;
  row.dgp = dgp.name;
  row.estimator = estimator_label;
  row.replications = mc.replications;
  row.tau_bar = tau_bars[0];
  double mean = 0;
  for (double t : tau_hats) mean += t;
  mean /= R;
  row.mean_tau_hat = mean;
  double ss = 0;
  for (double t : tau_hats) ss += (t - mean) * (t - mean);
  row.empirical_variance = ss / (R - 1.0);
  row.mc_se = std::sqrt(row.empirical_variance / R);
  double mv = 0;
  for (double v : variances) mv += v;
  row.mean_est_variance = mv / R;
  std::size_t covered = 0;
  for (int r = 0; r < mc.replications; ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (std::abs(tau_hats[i] - tau_bars[i]) <= 1.96 * std::sqrt(variances[i]))
      ++covered;
  }
  row.coverage = static_cast<double>(covered) / R;
  return row;
}

McRow mc_ht(const DgpConfig& dgp, const McConfig& mc) {
  return monte_carlo(dgp, "ht",
                     [](const Experiment& e, const DgpDraw&) { return ht_estimate(e); },
                     mc);
}

McRow mc_adjusted(const DgpConfig& dgp, const LearnerConfig& learner,
                  const McConfig& mc) {
  const std::string label =
      learner.kind == LearnerConfig::Kind::RandomForest ? "adjusted_rf" : "adjusted_loo";
  return monte_carlo(dgp, label,
                     [learner](const Experiment& e, const DgpDraw&) {
                       const AugmentedCovariates x = encode_covariates(e);
                       if (learner.kind == LearnerConfig::Kind::RandomForest)
                         return adjusted_estimate(e, rf_impute(e, x, learner).first,
                                                  "base_rf");
                       return adjusted_estimate(e, loo_linear_impute(e, x, learner),
                                                "base_loo");
                     },
                     mc);
}

McRow mc_oracle(const DgpConfig& dgp, const McConfig& mc) {
  return monte_carlo(dgp, "adjusted_oracle",
                     [](const Experiment& e, const DgpDraw& draw) {
                       Imputations imp;
                       imp.y_hat_t = draw.truth.y_t;
                       imp.y_hat_c = draw.truth.y_c;
                       imp.cross_fitted = true;  // truth uses no outcome data
                       return adjusted_estimate(e, imp, "oracle");
                     },
                     mc);
}

double EssReport::frac_above(double threshold) const {
  if (ess.empty()) return 0.0;
  const auto count = std::count_if(ess.begin(), ess.end(),
                                   [&](double v) { return v > threshold; });
  return static_cast<double>(count) / static_cast<double>(ess.size());
}

EssReport pair_score_ess(const DgpConfig& dgp, const EssHarnessConfig& config) {
  if (config.replications < 1)
    throw ValidationError("pair_score_ess: replications must be >= 1");
  const DgpDraw base = generate(dgp);

  const auto R = static_cast<std::size_t>(config.replications);
  std::vector<double> ess(R), se_base(R), se_adj(R), tau_ht(R), tau_adj(R);

  parallel_reps(config.replications, config.n_threads, [&](int r) {
    DgpDraw draw = base;
    redraw_assignment(draw, mix_seed(config.seed, static_cast<std::uint64_t>(r)));
    const Experiment& exp = draw.experiment;

    // initial cross-fitted model on the base covariates; stratify on its
    // predicted outcomes so the mock must add information beyond them
    const AugmentedCovariates base_x = encode_covariates(exp);
    const Imputations initial = loo_linear_impute(exp, base_x, config.learner);
    std::vector<double> initial_pred(exp.n());
    const double p = exp.constant_p();
    for (std::size_t i = 0; i < exp.n(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      initial_pred[i] = p * initial.y_hat_c[k] + (1.0 - p) * initial.y_hat_t[k];
    }
    GroupSpec spec;
    spec.kind = GroupSpec::Kind::GroupSize;
    spec.value = config.group_size;
    const StratumAssignment strata = stratify_by_values(initial_pred, spec);

    QuestionSpec question;
    question.id = "outcome";
    question.target_description = "is more likely to have the higher outcome";
    const PairPlan plan = plan_pairs(strata, {question.id},
                                     mix_seed(config.seed, 0x706c616e + static_cast<std::uint64_t>(r)));

    MockConfig mock;
    mock.latents["outcome"] = draw.latent;
    mock.noise_scale = config.mock_noise_scale;
    mock.refusal_rate = config.mock_refusal_rate;
    mock.seed = mix_seed(config.seed, 0x6d6f636b + static_cast<std::uint64_t>(r));
    MockProvider provider(mock);
    AskEngine engine(provider, nullptr, {});
    const PromptTemplate tmpl = default_prompt_template(exp);
    const auto comparisons = engine.run(plan, {question}, tmpl, exp);
    const PairScoreSet scores = aggregate_scores(comparisons, exp.n());

    const std::vector<ExtraColumn> extras = scores.to_extra_columns();
    std::vector<CovariateRecipe> recipes{{"base", {}}, {"base+score", {}}};
    for (const auto& e : extras) recipes[1].extra_names.push_back(e.name);
    const ComparisonReport report =
        compare_models(exp, extras, recipes, config.learner);

    const auto i = static_cast<std::size_t>(r);
    for (const auto& row : report.rows) {
      if (row.label == "base") {
        se_base[i] = row.se;
      } else {
        se_adj[i] = row.se;
        ess[i] = row.ess_vs_base;
        tau_adj[i] = row.tau_hat;
      }
    }
    tau_ht[i] = ht_estimate(exp).tau_hat;
  });

  EssReport report;
  report.dgp = dgp.name;
  report.ess = ess;
  double mean = 0;
  for (double v : ess) mean += v;
  report.mean_ess = mean / static_cast<double>(R);
  for (double v : se_base) report.se_base_mean += v;
  report.se_base_mean /= static_cast<double>(R);
  for (double v : se_adj) report.se_adj_mean += v;
  report.se_adj_mean /= static_cast<double>(R);
  auto emp_var = [&](const std::vector<double>& v) {
    double m = 0;
    for (double t : v) m += t;
    m /= static_cast<double>(v.size());
    double ss = 0;
    for (double t : v) ss += (t - m) * (t - m);
    return ss / (static_cast<double>(v.size()) - 1.0);
  };
  report.emp_var_ht = emp_var(tau_ht);
  report.emp_var_adj = emp_var(tau_adj);
  return report;
}

SuiteResult run_default_suite(std::uint64_t seed, int n_threads, int replications,
                              int ess_replications) {
  SuiteResult suite;
  McConfig mc;
  mc.replications = replications;
  mc.n_threads = n_threads;
  LearnerConfig loo;

  int idx = 0;
  for (double tau : {0.0, 2.0}) {
    for (double p : {0.3, 0.5}) {
      DgpConfig dgp;
      dgp.name = "n200_tau" + format_double(tau) + "_p" + format_double(p);
      dgp.n = 200;
      dgp.p = p;
      dgp.tau = tau;
      dgp.seed = mix_seed(seed, 0x64677001 + static_cast<std::uint64_t>(idx));
      mc.seed = mix_seed(seed, 0x6d630000 + static_cast<std::uint64_t>(idx));
      suite.rows.push_back(mc_ht(dgp, mc));
      suite.rows.push_back(mc_adjusted(dgp, loo, mc));
      ++idx;
    }
  }
  {
    // misfit stress: step outcome under a linear imputation model
    DgpConfig dgp;
    dgp.name = "n200_step_tau1_p05";
    dgp.n = 200;
    dgp.p = 0.5;
    dgp.tau = 1.0;
    dgp.outcome_model = DgpConfig::OutcomeModel::Step;
    dgp.seed = mix_seed(seed, 0x64677101);
    mc.seed = mix_seed(seed, 0x6d631000);
    suite.rows.push_back(mc_ht(dgp, mc));
    suite.rows.push_back(mc_adjusted(dgp, loo, mc));
  }

  EssHarnessConfig ess;
  ess.replications = ess_replications;
  ess.n_threads = n_threads;
  {
    DgpConfig dgp;
    dgp.name = "n300_informative_mock";
    dgp.n = 300;
    dgp.p = 0.5;
    dgp.tau = 1.0;
    dgp.latent_signal_share = 0.8;
    dgp.noise_scale = 0.5;
    dgp.seed = mix_seed(seed, 0x64677201);
    ess.seed = mix_seed(seed, 0x65737301);
    suite.informative = pair_score_ess(dgp, ess);
  }
  {
    DgpConfig dgp;
    dgp.name = "n300_noise_mock";
    dgp.n = 300;
    dgp.p = 0.5;
    dgp.tau = 1.0;
    dgp.latent_signal_share = 0.0;  // latent carries no outcome signal
    dgp.noise_scale = 0.5;
    dgp.seed = mix_seed(seed, 0x64677202);
    ess.seed = mix_seed(seed, 0x65737302);
    suite.noise = pair_score_ess(dgp, ess);
  }
  return suite;
}

void write_mc_report_csv(const std::string& path, const SuiteResult& suite) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : suite.rows)
    rows.push_back({r.dgp, r.estimator, std::to_string(r.replications),
                    format_double(r.tau_bar), format_double(r.mean_tau_hat),
                    format_double(r.mc_se), format_double(r.empirical_variance),
                    format_double(r.mean_est_variance), format_double(r.coverage),
                    "", ""});
  for (const EssReport* rep : {&suite.informative, &suite.noise}) {
    if (rep->ess.empty()) continue;
    rows.push_back({rep->dgp, "base+score vs base",
                    std::to_string(rep->ess.size()), "", "", "",
                    format_double(rep->emp_var_adj), "", "",
                    format_double(rep->mean_ess),
                    format_double(rep->frac_above(1.2))});
  }
  csv::write_file(path,
                  {"dgp", "estimator", "replications", "tau_bar", "mean_tau_hat",
                   "mc_se", "empirical_variance", "mean_est_variance", "coverage",
                   "mean_ess", "frac_ess_above_1.2"},
                  rows);
}

}  // namespace pairadjust
