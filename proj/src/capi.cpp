#include "pairadjust.h"

#include <string>

#include "pairadjust/common.hpp"
#include "pairadjust/dataset.hpp"
#include "pairadjust/estimator.hpp"
#include "pairadjust/imputation.hpp"
#include "pairadjust/pipeline.hpp"

using namespace pairadjust;

struct pa_experiment {
  Experiment impl;
};
struct pa_imputations {
  Imputations impl;
};
struct pa_estimate {
  EstimateResult impl;
};
struct pa_pipeline {
  Pipeline impl;
  std::string last_message;
};

namespace {

thread_local std::string g_last_error;

int set_error(int code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return PA_OK;
  } catch (const ValidationError& e) {
    return set_error(PA_ERR_VALIDATION, e.what());
  } catch (const ProviderError& e) {
    return set_error(PA_ERR_PROVIDER, e.what());
  } catch (const std::exception& e) {
    return set_error(PA_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(PA_ERR_INTERNAL, "unknown error");
  }
}

int require(const void* ptr, const char* what) {
  if (ptr) return PA_OK;
  return set_error(PA_ERR_VALIDATION, std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* pa_version(void) { return "0.1.0"; }

const char* pa_last_error(void) { return g_last_error.c_str(); }

int pa_experiment_load(const char* csv_path, const char* schema_json,
                       pa_experiment** out) {
  if (int rc = require(csv_path, "csv_path")) return rc;
  if (int rc = require(schema_json, "schema_json")) return rc;
  if (int rc = require(out, "out")) return rc;
  return guarded([&] {
    nlohmann::json schema;
    try {
      schema = nlohmann::json::parse(schema_json);
    } catch (const std::exception& e) {
      throw ValidationError(std::string("schema_json is not valid JSON: ") + e.what());
    }
    auto handle = new pa_experiment{
        load_experiment(csv_path, SchemaConfig::from_json(schema))};
    *out = handle;
  });
}

int pa_experiment_create(const int* z, const double* y, size_t n, double p,
                         pa_experiment** out) {
  if (int rc = require(z, "z")) return rc;
  if (int rc = require(y, "y")) return rc;
  if (int rc = require(out, "out")) return rc;
  return guarded([&] {
    Experiment exp;
    exp.ids.reserve(n);
    for (size_t i = 0; i < n; ++i) exp.ids.push_back("u" + std::to_string(i + 1));
    exp.z.assign(z, z + n);
    exp.y.assign(y, y + n);
    exp.p.assign(n, p);
    exp.validate();
    *out = new pa_experiment{std::move(exp)};
  });
}

void pa_experiment_free(pa_experiment* experiment) { delete experiment; }

int pa_experiment_n(const pa_experiment* experiment, size_t* out) {
  if (int rc = require(experiment, "experiment")) return rc;
  if (int rc = require(out, "out")) return rc;
  *out = experiment->impl.n();
  return PA_OK;
}

int pa_experiment_n_treated(const pa_experiment* experiment, size_t* out) {
  if (int rc = require(experiment, "experiment")) return rc;
  if (int rc = require(out, "out")) return rc;
  *out = experiment->impl.n_treated();
  return PA_OK;
}

int pa_experiment_n_control(const pa_experiment* experiment, size_t* out) {
  if (int rc = require(experiment, "experiment")) return rc;
  if (int rc = require(out, "out")) return rc;
  *out = experiment->impl.n_control();
  return PA_OK;
}

int pa_imputations_create(const double* y_hat_t, const double* y_hat_c, size_t n,
                          int cross_fitted, pa_imputations** out) {
  if (int rc = require(y_hat_t, "y_hat_t")) return rc;
  if (int rc = require(y_hat_c, "y_hat_c")) return rc;
  if (int rc = require(out, "out")) return rc;
  return guarded([&] {
    Imputations imp;
    imp.y_hat_t = Eigen::Map<const Eigen::VectorXd>(y_hat_t, static_cast<Eigen::Index>(n));
    imp.y_hat_c = Eigen::Map<const Eigen::VectorXd>(y_hat_c, static_cast<Eigen::Index>(n));
    imp.cross_fitted = cross_fitted != 0;
    *out = new pa_imputations{std::move(imp)};
  });
}

int pa_impute(const pa_experiment* experiment, const char* learner_json,
              pa_imputations** out) {
  if (int rc = require(experiment, "experiment")) return rc;
  if (int rc = require(out, "out")) return rc;
  return guarded([&] {
    nlohmann::json j = nlohmann::json::object();
    if (learner_json && *learner_json) {
      try {
        j = nlohmann::json::parse(learner_json);
      } catch (const std::exception& e) {
        throw ValidationError(std::string("learner_json is not valid JSON: ") + e.what());
      }
    }
    const LearnerConfig learner = LearnerConfig::from_json(j, /*default_seed=*/1);
    const AugmentedCovariates x = encode_covariates(experiment->impl);
    Imputations imp;
    if (learner.kind == LearnerConfig::Kind::RandomForest)
      imp = rf_impute(experiment->impl, x, learner).first;
    else
      imp = loo_linear_impute(experiment->impl, x, learner);
    *out = new pa_imputations{std::move(imp)};
  });
}

void pa_imputations_free(pa_imputations* imputations) { delete imputations; }

int pa_ht_estimate(const pa_experiment* experiment, pa_estimate** out) {
  if (int rc = require(experiment, "experiment")) return rc;
  if (int rc = require(out, "out")) return rc;
  return guarded([&] { *out = new pa_estimate{ht_estimate(experiment->impl)}; });
}

int pa_adjusted_estimate(const pa_experiment* experiment,
                         const pa_imputations* imputations, const char* label,
                         pa_estimate** out) {
  if (int rc = require(experiment, "experiment")) return rc;
  if (int rc = require(imputations, "imputations")) return rc;
  if (int rc = require(out, "out")) return rc;
  return guarded([&] {
    *out = new pa_estimate{adjusted_estimate(experiment->impl, imputations->impl,
                                             label ? label : "adjusted")};
  });
}

void pa_estimate_free(pa_estimate* estimate) { delete estimate; }

#define PA_ESTIMATE_GETTER(NAME, EXPR, TYPE)                          \
  int NAME(const pa_estimate* estimate, TYPE* out) {                  \
    if (int rc = require(estimate, "estimate")) return rc;           \
    if (int rc = require(out, "out")) return rc;                     \
    *out = (EXPR);                                                   \
    return PA_OK;                                                    \
  }

PA_ESTIMATE_GETTER(pa_estimate_tau_hat, estimate->impl.tau_hat, double)
PA_ESTIMATE_GETTER(pa_estimate_se, estimate->impl.se, double)
PA_ESTIMATE_GETTER(pa_estimate_variance, estimate->impl.variance, double)
PA_ESTIMATE_GETTER(pa_estimate_e2_control, estimate->impl.e2_c, double)
PA_ESTIMATE_GETTER(pa_estimate_e2_treated, estimate->impl.e2_t, double)
PA_ESTIMATE_GETTER(pa_estimate_n, estimate->impl.n, size_t)
PA_ESTIMATE_GETTER(pa_estimate_p, estimate->impl.p_used, double)

#undef PA_ESTIMATE_GETTER

const char* pa_estimate_label(const pa_estimate* estimate) {
  return estimate ? estimate->impl.covariate_set_label.c_str() : "";
}

int pa_ess_ratio(double se_base, double se_new, double* out) {
  if (int rc = require(out, "out")) return rc;
  return guarded([&] { *out = ess_ratio(se_base, se_new); });
}

int pa_pipeline_open(const char* config_path, const char* out_dir,
                     const char* overrides_json, pa_pipeline** out) {
  if (int rc = require(out_dir, "out_dir")) return rc;
  if (int rc = require(out, "out")) return rc;
  return guarded([&] {
    nlohmann::json overrides = nlohmann::json::object();
    if (overrides_json && *overrides_json) {
      try {
        overrides = nlohmann::json::parse(overrides_json);
      } catch (const std::exception& e) {
        throw ValidationError(std::string("overrides_json is not valid JSON: ") +
                              e.what());
      }
    }
    *out = new pa_pipeline{
        Pipeline(config_path ? config_path : "", out_dir, overrides), ""};
  });
}

int pa_pipeline_run_stage(pa_pipeline* pipeline, const char* stage, int* ran) {
  if (int rc = require(pipeline, "pipeline")) return rc;
  if (int rc = require(stage, "stage")) return rc;
  return guarded([&] {
    const Pipeline::StageOutcome outcome = pipeline->impl.run_stage(stage);
    pipeline->last_message = outcome.ran ? outcome.message : "up to date";
    if (ran) *ran = outcome.ran ? 1 : 0;
  });
}

int pa_pipeline_run_all(pa_pipeline* pipeline) {
  if (int rc = require(pipeline, "pipeline")) return rc;
  return guarded([&] {
    const std::vector<std::string> messages = pipeline->impl.run_all();
    std::string joined;
    for (const auto& m : messages) {
      if (!joined.empty()) joined += "\n";
      joined += m;
    }
    pipeline->last_message = joined;
  });
}

const char* pa_pipeline_last_message(const pa_pipeline* pipeline) {
  return pipeline ? pipeline->last_message.c_str() : "";
}

void pa_pipeline_free(pa_pipeline* pipeline) { delete pipeline; }

}  // extern "C"
