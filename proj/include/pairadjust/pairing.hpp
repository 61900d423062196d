#ifndef PAIRADJUST_PAIRING_HPP
#define PAIRADJUST_PAIRING_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pairadjust/dataset.hpp"

namespace pairadjust {

struct GroupSpec {
  enum class Kind { NGroups, GroupSize };
  Kind kind = Kind::NGroups;
  int value = 1;
};

struct StratumAssignment {
  std::vector<int> stratum_of;       // per unit
  std::vector<std::string> labels;   // per stratum
  std::string basis;                 // "quantiles" | "column:<name>" | "none"

  int n_strata() const { return static_cast<int>(labels.size()); }
  std::vector<std::vector<int>> members() const;
};

// Sort by value (ties by unit index) and cut into contiguous groups of equal
// size +-1. Earlier groups take the remainder.
StratumAssignment stratify_by_values(const std::vector<double>& values, GroupSpec spec);
// One stratum per label, labels ordered by first appearance.
StratumAssignment stratify_by_labels(const std::vector<std::string>& labels);
StratumAssignment single_stratum(std::size_t n);

enum class Presentation { AFirst, BFirst };

struct PlannedPair {
  int unit_a;  // unit_a < unit_b (canonical unordered pair)
  int unit_b;
  int stratum;
  Presentation presentation;
};

struct PairPlanOptions {
  // 0 = all within-stratum pairs; otherwise sample without replacement.
  int max_pairs_per_stratum = 0;
  // Emit both presentation orders of every pair (order-effect audits).
  bool ordered = false;
};

struct PairPlan {
  std::vector<PlannedPair> pairs;
  std::vector<std::string> question_ids;
  std::uint64_t seed = 0;
  bool ordered = false;
  std::vector<std::string> warnings;
};

// All within-stratum unordered pairs, order shuffled and presentation
// coin-flipped from the seed. An unordered pair appears at most once per
// question; singleton strata are skipped with a warning.
PairPlan plan_pairs(const StratumAssignment& strata,
                    const std::vector<std::string>& question_ids, std::uint64_t seed,
                    const PairPlanOptions& options = {});

enum class Verdict { First, Second, Invalid };

// One judgment on one pair for one quality. `verdict` is relative to the
// presentation order; Invalid excludes the pair from that quality's scores.
struct PairComparison {
  int unit_a = 0;
  int unit_b = 0;
  std::string question;
  std::string quality;  // equals question id for single-quality questions
  Presentation presentation = Presentation::AFirst;
  Verdict verdict = Verdict::Invalid;
  int attempts = 1;
  std::string raw;  // response text reference (cache key or literal)
};

struct PairScoreSet {
  // quality -> per-unit values; score is NaN where performed == 0
  std::map<std::string, std::vector<double>> score;
  std::map<std::string, std::vector<int>> performed;
  std::size_t n_units = 0;

  std::vector<std::string> qualities() const;
  // Extra columns (with missing flags for never-compared units) ready for
  // encode_covariates; names are "pair_score_<quality>".
  std::vector<ExtraColumn> to_extra_columns() const;
};

// wins / comparisons performed per unit and quality; only valid verdicts
// count. Duplicate judgments for the same (pair, quality) are an error
// (both directions are allowed when `ordered`).
PairScoreSet aggregate_scores(const std::vector<PairComparison>& comparisons,
                              std::size_t n_units, bool ordered = false);

std::string sanitize_column_token(const std::string& s);

void write_pair_plan_csv(const std::string& path, const PairPlan& plan,
                         const Experiment& experiment,
                         const StratumAssignment& strata);
void write_scores_csv(const std::string& path, const PairScoreSet& scores,
                      const Experiment& experiment);
PairScoreSet read_scores_csv(const std::string& path, const Experiment& experiment);
void write_comparisons_csv(const std::string& path,
                           const std::vector<PairComparison>& comparisons,
                           const Experiment& experiment);
std::vector<PairComparison> read_comparisons_csv(const std::string& path,
                                                 const Experiment& experiment);

}  // namespace pairadjust

#endif  // PAIRADJUST_PAIRING_HPP
