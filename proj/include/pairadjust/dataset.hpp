#ifndef PAIRADJUST_DATASET_HPP
#define PAIRADJUST_DATASET_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace pairadjust {

enum class CovariateType { Real, Integer, Boolean, Categorical };
enum class OutcomeKind { Continuous, Binary };

CovariateType covariate_type_from_string(const std::string& s);
std::string covariate_type_to_string(CovariateType t);

// One covariate stored columnwise. Real/integer/boolean values live in
// `numeric` (booleans as 0/1); categoricals hold a level index into `levels`,
// which records levels in first-appearance order. Missing is an explicit
// per-row flag, never an imputed value.
struct CovariateColumn {
  std::string name;
  CovariateType type = CovariateType::Real;
  std::vector<double> numeric;      // real/integer/boolean
  std::vector<int> level;           // categorical: index into levels, -1 if missing
  std::vector<std::string> levels;  // first-appearance order
  std::vector<std::uint8_t> missing;

  bool any_missing() const;
  // Human-readable value for prompt rendering; empty optional when missing.
  std::optional<std::string> display(std::size_t row) const;
};

// Column -> role mapping for load_experiment. Parsed from the "schema"
// section of the run config (see README for the documented format).
struct SchemaConfig {
  std::string id_column;
  std::string treatment_column;
  std::string outcome_column;
  OutcomeKind outcome_kind = OutcomeKind::Continuous;
  std::optional<double> p_constant;     // design probability, fixed
  std::optional<std::string> p_column;  // per-stratum probability column
  std::optional<std::string> stratum_column;
  std::vector<std::pair<std::string, CovariateType>> covariates;  // ordered
  std::vector<std::string> text_fields;

  static SchemaConfig from_json(const nlohmann::json& j);
};

struct Experiment {
  std::vector<std::string> ids;
  std::vector<int> z;      // 0/1 treatment assignment
  std::vector<double> y;   // outcome (binary encoded 0/1)
  std::vector<double> p;   // per-unit design probability
  OutcomeKind outcome_kind = OutcomeKind::Continuous;
  std::string id_column;
  std::vector<CovariateColumn> covariates;
  std::vector<std::pair<std::string, std::vector<std::string>>> text_fields;
  std::vector<std::string> stratum;  // analysis stratum labels; empty if none
  std::vector<std::string> warnings;

  std::size_t n() const { return z.size(); }
  std::size_t n_treated() const;
  std::size_t n_control() const;
  // The design probability, required constant over the analyzed units.
  double constant_p() const;
  const CovariateColumn* find_covariate(const std::string& name) const;
  const std::vector<std::string>* find_text(const std::string& name) const;
  // Distinct stratum labels in first-appearance order (empty if unstratified).
  std::vector<std::string> stratum_labels() const;
  // Row subset preserving order. Categorical levels are re-derived from the
  // subset so per-stratum encodings carry no empty levels.
  Experiment subset(const std::vector<std::size_t>& rows) const;

  void validate() const;
};

Experiment load_experiment(const std::string& csv_path, const SchemaConfig& schema);

// Extra real-valued column appended to the encoded matrix (pair scores,
// out-of-bag predictions). Missing entries get the indicator treatment.
struct ExtraColumn {
  std::string name;
  std::vector<double> values;
  std::vector<std::uint8_t> missing;  // empty means none missing
};

struct EncodeOptions {
  // When true, a categorical's missing entries become an own "Unknown" level
  // instead of the zero-row + indicator encoding.
  bool unknown_as_level = false;
};

struct AugmentedCovariates {
  Eigen::MatrixXd x;  // no intercept; models add their own
  std::vector<std::string> column_names;
  std::vector<std::string> provenance;  // "base" or "extra" per column
  std::size_t base_columns = 0;
};

// Deterministic encoding: one column per real/integer/boolean covariate,
// one-hot with first-seen reference level dropped for categoricals, a
// "<name>_missing" indicator for every covariate (or extra) with any missing
// value. Missing numeric cells encode as 0 alongside the indicator.
AugmentedCovariates encode_covariates(const Experiment& experiment,
                                      const std::vector<ExtraColumn>& extras = {},
                                      const EncodeOptions& options = {});

}  // namespace pairadjust

#endif  // PAIRADJUST_DATASET_HPP
