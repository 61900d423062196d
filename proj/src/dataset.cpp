#include "pairadjust/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "pairadjust/common.hpp"
#include "pairadjust/csv.hpp"

namespace pairadjust {

CovariateType covariate_type_from_string(const std::string& s) {
  if (s == "real") return CovariateType::Real;
  if (s == "integer") return CovariateType::Integer;
  if (s == "boolean") return CovariateType::Boolean;
  if (s == "categorical") return CovariateType::Categorical;
  throw ValidationError("unknown covariate type '" + s +
                        "' (expected real|integer|boolean|categorical)");
}

std::string covariate_type_to_string(CovariateType t) {
  switch (t) {
    case CovariateType::Real: return "real";
    case CovariateType::Integer: return "integer";
    case CovariateType::Boolean: return "boolean";
    case CovariateType::Categorical: return "categorical";
  }
  return "?";
}

bool CovariateColumn::any_missing() const {
  return std::find(missing.begin(), missing.end(), std::uint8_t{1}) != missing.end();
}

std::optional<std::string> CovariateColumn::display(std::size_t row) const {
  if (missing[row]) return std::nullopt;
  switch (type) {
    case CovariateType::Categorical:
      return levels[static_cast<std::size_t>(level[row])];
    case CovariateType::Boolean:
      return std::string(numeric[row] != 0.0 ? "yes" : "no");
    case CovariateType::Integer:
      return format_double(numeric[row]);
    case CovariateType::Real:
      return format_double(numeric[row]);
  }
  return std::nullopt;
}

SchemaConfig SchemaConfig::from_json(const nlohmann::json& j) {
  SchemaConfig s;
  auto require = [&](const char* key) {
    if (!j.contains(key))
      throw ValidationError(std::string("schema: missing required key '") + key + "'");
    return j.at(key);
  };
  s.id_column = require("id").get<std::string>();
  s.treatment_column = require("treatment").get<std::string>();
  s.outcome_column = require("outcome").get<std::string>();
  if (j.contains("outcome_kind")) {
    std::string k = j.at("outcome_kind").get<std::string>();
    if (k == "continuous")
      s.outcome_kind = OutcomeKind::Continuous;
    else if (k == "binary")
      s.outcome_kind = OutcomeKind::Binary;
    else
      throw ValidationError("schema: outcome_kind must be continuous|binary, got '" + k + "'");
  }
  if (j.contains("p")) s.p_constant = j.at("p").get<double>();
  if (j.contains("p_column")) s.p_column = j.at("p_column").get<std::string>();
  if (!s.p_constant && !s.p_column)
    throw ValidationError("schema: either 'p' (constant) or 'p_column' is required; "
                          "the design probability is never estimated from the data");
  if (s.p_constant && s.p_column)
    throw ValidationError("schema: give 'p' or 'p_column', not both");
  if (j.contains("stratum_column")) s.stratum_column = j.at("stratum_column").get<std::string>();
  if (j.contains("covariates")) {
    for (const auto& [name, type] : j.at("covariates").items())
      s.covariates.emplace_back(name, covariate_type_from_string(type.get<std::string>()));
  }
  if (j.contains("text_fields"))
    s.text_fields = j.at("text_fields").get<std::vector<std::string>>();
  // covariate names must be unique (json object keys already are; guard the
  // id/outcome overlap instead)
  std::unordered_set<std::string> seen;
  for (const auto& [name, type] : s.covariates) {
    (void)type;
    if (!seen.insert(name).second)
      throw ValidationError("schema: duplicate covariate '" + name + "'");
  }
  return s;
}

std::size_t Experiment::n_treated() const {
  return static_cast<std::size_t>(std::count(z.begin(), z.end(), 1));
}

std::size_t Experiment::n_control() const { return n() - n_treated(); }

double Experiment::constant_p() const {
  if (p.empty()) throw ValidationError("experiment has no assignment probabilities");
  for (double v : p)
    if (v != p[0])
      throw ValidationError("assignment probability is not constant over the analyzed "
                            "units; run the estimator separately per stratum");
  return p[0];
}

const CovariateColumn* Experiment::find_covariate(const std::string& name) const {
  for (const auto& c : covariates)
    if (c.name == name) return &c;
  return nullptr;
}

const std::vector<std::string>* Experiment::find_text(const std::string& name) const {
  for (const auto& [n, v] : text_fields)
    if (n == name) return &v;
  return nullptr;
}

std::vector<std::string> Experiment::stratum_labels() const {
  std::vector<std::string> labels;
  std::unordered_set<std::string> seen;
  for (const auto& s : stratum)
    if (seen.insert(s).second) labels.push_back(s);
  return labels;
}

Experiment Experiment::subset(const std::vector<std::size_t>& rows) const {
  Experiment out;
  out.outcome_kind = outcome_kind;
  out.id_column = id_column;
  out.ids.reserve(rows.size());
  for (std::size_t r : rows) {
    out.ids.push_back(ids[r]);
    out.z.push_back(z[r]);
    out.y.push_back(y[r]);
    out.p.push_back(p[r]);
    if (!stratum.empty()) out.stratum.push_back(stratum[r]);
  }
  for (const auto& c : covariates) {
    CovariateColumn sc;
    sc.name = c.name;
    sc.type = c.type;
    for (std::size_t r : rows) {
      sc.missing.push_back(c.missing[r]);
      if (c.type == CovariateType::Categorical) {
        if (c.missing[r]) {
          sc.level.push_back(-1);
        } else {
          const std::string& lab = c.levels[static_cast<std::size_t>(c.level[r])];
          auto it = std::find(sc.levels.begin(), sc.levels.end(), lab);
          int idx;
          if (it == sc.levels.end()) {
            idx = static_cast<int>(sc.levels.size());
            sc.levels.push_back(lab);
          } else {
            idx = static_cast<int>(it - sc.levels.begin());
          }
          sc.level.push_back(idx);
        }
        sc.numeric.push_back(0.0);
      } else {
        sc.numeric.push_back(c.numeric[r]);
        sc.level.push_back(-1);
      }
    }
    out.covariates.push_back(std::move(sc));
  }
  for (const auto& [name, vals] : text_fields) {
    std::vector<std::string> sub;
    sub.reserve(rows.size());
    for (std::size_t r : rows) sub.push_back(vals[r]);
    out.text_fields.emplace_back(name, std::move(sub));
  }
  return out;
}

void Experiment::validate() const {
  const std::size_t N = n();
  if (N < 2) throw ValidationError("experiment needs at least 2 units");
  if (y.size() != N || p.size() != N || ids.size() != N)
    throw ValidationError("experiment arrays have inconsistent lengths");
  for (int zi : z)
    if (zi != 0 && zi != 1) throw ValidationError("treatment indicator outside {0,1}");
  for (double pi : p)
    if (!(pi > 0.0 && pi < 1.0))
      throw ValidationError("assignment probability " + format_double(pi) +
                            " outside (0,1)");
  std::unordered_set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw ValidationError("duplicate unit id '" + id + "'");
}

namespace {

bool parse_numeric(const std::string& raw, double* out) {
  std::string s = trim(raw);
  if (s.empty()) return false;
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) return false;
    *out = v;
    return true;
  } catch (...) {
    return false;
  }
}

bool parse_boolean(const std::string& raw, double* out) {
  std::string s = to_lower(trim(raw));
  if (s == "1" || s == "true" || s == "yes" || s == "t" || s == "y") { *out = 1.0; return true; }
  if (s == "0" || s == "false" || s == "no" || s == "f" || s == "n") { *out = 0.0; return true; }
  return false;
}

}  // namespace

Experiment load_experiment(const std::string& csv_path, const SchemaConfig& schema) {
  csv::Table table = csv::read_file(csv_path);
  auto column = [&](const std::string& name) {
    int idx = table.column_index(name);
    if (idx < 0)
      throw ValidationError("missing required column '" + name + "' in " + csv_path);
    return static_cast<std::size_t>(idx);
  };

  Experiment exp;
  exp.outcome_kind = schema.outcome_kind;
  exp.id_column = schema.id_column;
  const std::size_t id_col = column(schema.id_column);
  const std::size_t z_col = column(schema.treatment_column);
  const std::size_t y_col = column(schema.outcome_column);
  std::size_t p_col = 0, stratum_col = 0;
  if (schema.p_column) p_col = column(*schema.p_column);
  if (schema.stratum_column) stratum_col = column(*schema.stratum_column);

  const std::size_t N = table.rows.size();
  if (N < 2) throw ValidationError("experiment needs at least 2 units, file has " +
                                   std::to_string(N));

  for (std::size_t r = 0; r < N; ++r) {
    const auto& row = table.rows[r];
    exp.ids.push_back(trim(row[id_col]));
    double zv;
    if (!parse_numeric(row[z_col], &zv) || (zv != 0.0 && zv != 1.0))
      throw ValidationError("row " + std::to_string(r + 2) + ": treatment value '" +
                            row[z_col] + "' outside {0,1}");
    exp.z.push_back(static_cast<int>(zv));
    double yv;
    if (!parse_numeric(row[y_col], &yv)) {
      if (schema.outcome_kind == OutcomeKind::Binary && parse_boolean(row[y_col], &yv)) {
        // accepted
      } else {
        throw ValidationError("row " + std::to_string(r + 2) + ": outcome value '" +
                              row[y_col] + "' is not numeric");
      }
    }
    if (schema.outcome_kind == OutcomeKind::Binary && yv != 0.0 && yv != 1.0)
      throw ValidationError("row " + std::to_string(r + 2) +
                            ": binary outcome must be 0/1, got '" + row[y_col] + "'");
    exp.y.push_back(yv);
    double pv = schema.p_constant.value_or(0.0);
    if (schema.p_column && !parse_numeric(row[p_col], &pv))
      throw ValidationError("row " + std::to_string(r + 2) + ": probability value '" +
                            row[p_col] + "' is not numeric");
    if (!(pv > 0.0 && pv < 1.0))
      throw ValidationError("row " + std::to_string(r + 2) + ": assignment probability " +
                            format_double(pv) + " outside (0,1)");
    exp.p.push_back(pv);
    if (schema.stratum_column) exp.stratum.push_back(trim(row[stratum_col]));
  }

  for (const auto& [name, type] : schema.covariates) {
    const std::size_t col = column(name);
    CovariateColumn c;
    c.name = name;
    c.type = type;
    c.numeric.resize(N, 0.0);
    c.level.resize(N, -1);
    c.missing.resize(N, 0);
    std::unordered_map<std::string, int> level_of;
    for (std::size_t r = 0; r < N; ++r) {
      const std::string cell = trim(table.rows[r][col]);
      if (cell.empty() || cell == "NA" || cell == "na" || cell == "NaN") {
        c.missing[r] = 1;
        continue;
      }
      switch (type) {
        case CovariateType::Real:
        case CovariateType::Integer: {
          double v;
          if (!parse_numeric(cell, &v))
            throw ValidationError("row " + std::to_string(r + 2) + ": covariate '" + name +
                                  "' value '" + cell + "' is not numeric");
          c.numeric[r] = v;
          break;
        }
        case CovariateType::Boolean: {
          double v;
          if (!parse_boolean(cell, &v))
            throw ValidationError("row " + std::to_string(r + 2) + ": covariate '" + name +
                                  "' value '" + cell + "' is not boolean");
          c.numeric[r] = v;
          break;
        }
        case CovariateType::Categorical: {
          auto [it, inserted] = level_of.emplace(cell, static_cast<int>(c.levels.size()));
          if (inserted) c.levels.push_back(cell);
          c.level[r] = it->second;
          break;
        }
      }
    }
    exp.covariates.push_back(std::move(c));
  }

  for (const auto& name : schema.text_fields) {
    const std::size_t col = column(name);
    std::vector<std::string> vals;
    vals.reserve(N);
    for (std::size_t r = 0; r < N; ++r) vals.push_back(table.rows[r][col]);
    exp.text_fields.emplace_back(name, std::move(vals));
  }

  exp.validate();

  // p is a design input; flag suspicious disagreement with the realized
  // assignment rate per stratum (|mean(z) - p| > 4*sqrt(p(1-p)/n)).
  auto check_rate = [&](const std::vector<std::size_t>& rows, const std::string& label) {
    double pv = exp.p[rows[0]];
    double mean_z = 0;
    for (std::size_t r : rows) mean_z += exp.z[r];
    mean_z /= static_cast<double>(rows.size());
    double band = 4.0 * std::sqrt(pv * (1.0 - pv) / static_cast<double>(rows.size()));
    if (std::abs(mean_z - pv) > band)
      exp.warnings.push_back("observed treatment rate " + format_double(mean_z) + label +
                             " is far from design p=" + format_double(pv) +
                             " (|diff| > 4*sqrt(p(1-p)/n)); check the schema's p");
  };
  if (exp.stratum.empty()) {
    std::vector<std::size_t> all(N);
    for (std::size_t i = 0; i < N; ++i) all[i] = i;
    check_rate(all, "");
  } else {
    for (const auto& lab : exp.stratum_labels()) {
      std::vector<std::size_t> rows;
      std::size_t treated = 0;
      for (std::size_t i = 0; i < N; ++i)
        if (exp.stratum[i] == lab) {
          rows.push_back(i);
          treated += static_cast<std::size_t>(exp.z[i]);
        }
      check_rate(rows, " in stratum '" + lab + "'");
      if (treated == 0 || treated == rows.size())
        exp.warnings.push_back("stratum '" + lab + "' has an empty " +
                               (treated == 0 ? "treated" : "control") +
                               " arm; it cannot be estimated");
    }
  }
  return exp;
}

AugmentedCovariates encode_covariates(const Experiment& experiment,
                                      const std::vector<ExtraColumn>& extras,
                                      const EncodeOptions& options) {
  const std::size_t N = experiment.n();
  for (const auto& e : extras) {
    if (e.values.size() != N)
      throw ValidationError("extra column '" + e.name + "' has " +
                            std::to_string(e.values.size()) + " rows, expected " +
                            std::to_string(N));
    if (!e.missing.empty() && e.missing.size() != N)
      throw ValidationError("extra column '" + e.name + "' missing-flag length mismatch");
  }

  std::vector<std::vector<double>> cols;
  std::vector<std::string> names;
  std::vector<std::string> provenance;
  auto push = [&](std::vector<double> col, std::string name, const char* prov) {
    cols.push_back(std::move(col));
    names.push_back(std::move(name));
    provenance.emplace_back(prov);
  };

  for (const auto& c : experiment.covariates) {
    const bool has_missing = c.any_missing();
    if (c.type == CovariateType::Categorical) {
      if (static_cast<std::size_t>(std::count(c.missing.begin(), c.missing.end(), 1)) == N)
        throw ValidationError("covariate '" + c.name + "' is missing for every unit");
      std::vector<std::string> levels = c.levels;
      const bool unknown_level = has_missing && options.unknown_as_level;
      if (unknown_level) levels.push_back("Unknown");
      // first-seen level is the reference; one column per remaining level
      for (std::size_t l = 1; l < levels.size(); ++l) {
        std::vector<double> col(N, 0.0);
        for (std::size_t r = 0; r < N; ++r) {
          if (c.missing[r]) {
            if (unknown_level && l == levels.size() - 1) col[r] = 1.0;
          } else if (static_cast<std::size_t>(c.level[r]) == l) {
            col[r] = 1.0;
          }
        }
        push(std::move(col), c.name + "=" + levels[l], "base");
      }
      if (has_missing && !unknown_level) {
        std::vector<double> ind(N, 0.0);
        for (std::size_t r = 0; r < N; ++r) ind[r] = c.missing[r] ? 1.0 : 0.0;
        push(std::move(ind), c.name + "_missing", "base");
      }
    } else {
      std::vector<double> col(N, 0.0);
      bool all_missing = true, any_nonzero = false;
      for (std::size_t r = 0; r < N; ++r) {
        if (c.missing[r]) continue;
        all_missing = false;
        col[r] = c.numeric[r];
        if (col[r] != 0.0) any_nonzero = true;
      }
      if (all_missing)
        throw ValidationError("covariate '" + c.name + "' is missing for every unit");
      if (!any_nonzero)
        throw ValidationError("covariate '" + c.name +
                              "' encodes to a constant-zero column");
      push(std::move(col), c.name, "base");
      if (has_missing) {
        std::vector<double> ind(N, 0.0);
        for (std::size_t r = 0; r < N; ++r) ind[r] = c.missing[r] ? 1.0 : 0.0;
        push(std::move(ind), c.name + "_missing", "base");
      }
    }
  }
  const std::size_t base_columns = cols.size();

  for (const auto& e : extras) {
    const bool has_missing =
        !e.missing.empty() &&
        std::find(e.missing.begin(), e.missing.end(), std::uint8_t{1}) != e.missing.end();
    std::vector<double> col(N, 0.0);
    for (std::size_t r = 0; r < N; ++r) {
      if (has_missing && e.missing[r]) continue;
      double v = e.values[r];
      if (std::isnan(v))
        throw ValidationError("extra column '" + e.name + "' has NaN at row " +
                              std::to_string(r) + " without a missing flag");
      col[r] = v;
    }
    push(std::move(col), e.name, "extra");
    if (has_missing) {
      std::vector<double> ind(N, 0.0);
      for (std::size_t r = 0; r < N; ++r) ind[r] = e.missing[r] ? 1.0 : 0.0;
      push(std::move(ind), e.name + "_missing", "extra");
    }
  }

  // duplicate encoded names would make downstream reports ambiguous
  std::unordered_set<std::string> seen;
  for (const auto& nm : names)
    if (!seen.insert(nm).second)
      throw ValidationError("encoded column name '" + nm + "' appears twice");

  AugmentedCovariates out;
  out.x.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < N; ++i)
      out.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
  out.column_names = std::move(names);
  out.provenance = std::move(provenance);
  out.base_columns = base_columns;
  return out;
}

}  // namespace pairadjust
