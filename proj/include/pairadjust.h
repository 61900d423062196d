/*
 * pairadjust C API
 *
 * Design-based treatment-effect estimation with LLM-derived pairwise
 * covariates. The C++ core sits behind this extern-C surface: opaque
 * handles, integer status codes, and a per-thread error message. The CLI
 * and any foreign-language bindings link against this header only.
 *
 * Conventions:
 *   - every function returns PA_OK (0) or an error code; on error,
 *     pa_last_error() describes what went wrong
 *   - handles are created through pa_*_create/load/open and must be
 *     released with the matching pa_*_free (NULL is always safe to free)
 *   - JSON parameters are documented in the project README
 */
#ifndef PAIRADJUST_H
#define PAIRADJUST_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define PA_OK 0
#define PA_ERR_INTERNAL 1   /* unexpected failure; report a bug */
#define PA_ERR_VALIDATION 2 /* bad inputs, config, or contract violation */
#define PA_ERR_PROVIDER 3   /* LLM provider or transport failure */

typedef struct pa_experiment pa_experiment;
typedef struct pa_imputations pa_imputations;
typedef struct pa_estimate pa_estimate;
typedef struct pa_pipeline pa_pipeline;

const char* pa_version(void);

/* Message for the most recent failing call on this thread. The pointer is
 * valid until the next failing call on the same thread. */
const char* pa_last_error(void);

/* ---- experiments -------------------------------------------------------- */

/* Load from a CSV file plus a JSON schema string mapping columns to roles
 * (id/treatment/outcome/p/covariates/text_fields; see README). */
int pa_experiment_load(const char* csv_path, const char* schema_json,
                       pa_experiment** out);

/* Build directly from arrays: z in {0,1}, outcomes y, constant design
 * probability p. Unit ids are u1..uN. */
int pa_experiment_create(const int* z, const double* y, size_t n, double p,
                         pa_experiment** out);

void pa_experiment_free(pa_experiment* experiment);

int pa_experiment_n(const pa_experiment* experiment, size_t* out);
int pa_experiment_n_treated(const pa_experiment* experiment, size_t* out);
int pa_experiment_n_control(const pa_experiment* experiment, size_t* out);

/* ---- imputations -------------------------------------------------------- */

/* Per-unit predictions of the treated/control potential outcomes.
 * cross_fitted must be nonzero for use in pa_adjusted_estimate; pass it
 * only when unit i's predictions were made without unit i's own data. */
int pa_imputations_create(const double* y_hat_t, const double* y_hat_c, size_t n,
                          int cross_fitted, pa_imputations** out);

/* Fit a cross-fitted learner on the experiment's encoded covariates.
 * learner_json: {"kind":"loo_linear"|"random_forest","per_arm":bool,
 *                "rf":{"n_trees":...,"mtry":...,"min_leaf":...,
 *                      "max_depth":...,"seed":...,"n_threads":...}} */
int pa_impute(const pa_experiment* experiment, const char* learner_json,
              pa_imputations** out);

void pa_imputations_free(pa_imputations* imputations);

/* ---- estimation --------------------------------------------------------- */

/* Horvitz-Thompson estimator; variance via the adjusted-estimator formula
 * with all predictions zero. */
int pa_ht_estimate(const pa_experiment* experiment, pa_estimate** out);

/* Imputation-adjusted estimator with its guaranteed-valid variance. */
int pa_adjusted_estimate(const pa_experiment* experiment,
                         const pa_imputations* imputations, const char* label,
                         pa_estimate** out);

void pa_estimate_free(pa_estimate* estimate);

int pa_estimate_tau_hat(const pa_estimate* estimate, double* out);
int pa_estimate_se(const pa_estimate* estimate, double* out);
int pa_estimate_variance(const pa_estimate* estimate, double* out);
int pa_estimate_e2_control(const pa_estimate* estimate, double* out);
int pa_estimate_e2_treated(const pa_estimate* estimate, double* out);
int pa_estimate_n(const pa_estimate* estimate, size_t* out);
int pa_estimate_p(const pa_estimate* estimate, double* out);
const char* pa_estimate_label(const pa_estimate* estimate);

/* Squared ratio of standard errors: the effective-sample-size factor. */
int pa_ess_ratio(double se_base, double se_new, double* out);

/* ---- pipeline ----------------------------------------------------------- */

/* Open (or resume) a staged run. config_path may be NULL/"" for runs that
 * only use the simulate stage. overrides_json (may be NULL) is deep-merged
 * over the file config; the CLI passes --seed/--provider/--live through it. */
int pa_pipeline_open(const char* config_path, const char* out_dir,
                     const char* overrides_json, pa_pipeline** out);

/* Stages: ingest, impute, stratify, pair, query, score, estimate, evaluate,
 * simulate. *ran is set to 0 when the stage was already up to date. */
int pa_pipeline_run_stage(pa_pipeline* pipeline, const char* stage, int* ran);

/* ingest through evaluate in dependency order. */
int pa_pipeline_run_all(pa_pipeline* pipeline);

/* Human-readable report of the last successful run_stage/run_all call on
 * this pipeline; valid until the next call on the same handle. */
const char* pa_pipeline_last_message(const pa_pipeline* pipeline);

void pa_pipeline_free(pa_pipeline* pipeline);

#ifdef __cplusplus
}
#endif

#endif /* PAIRADJUST_H */
