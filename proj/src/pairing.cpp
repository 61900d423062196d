#include "pairadjust/pairing.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "pairadjust/common.hpp"
#include "pairadjust/csv.hpp"

namespace pairadjust {

std::vector<std::vector<int>> StratumAssignment::members() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n_strata()));
  for (std::size_t i = 0; i < stratum_of.size(); ++i)
    out[static_cast<std::size_t>(stratum_of[i])].push_back(static_cast<int>(i));
  return out;
}

StratumAssignment stratify_by_values(const std::vector<double>& values, GroupSpec spec) {
  const std::size_t n = values.size();
  if (n == 0) throw ValidationError("stratify: no units");
  for (double v : values)
    if (!std::isfinite(v)) throw ValidationError("stratify: non-finite value");

  int groups;
  if (spec.kind == GroupSpec::Kind::NGroups) {
    groups = spec.value;
    if (groups < 1 || static_cast<std::size_t>(groups) > n)
      throw ValidationError("stratify: n_groups " + std::to_string(spec.value) +
                            " infeasible for " + std::to_string(n) + " units");
  } else {
    if (spec.value < 1 || static_cast<std::size_t>(spec.value) > n)
      throw ValidationError("stratify: group_size " + std::to_string(spec.value) +
                            " exceeds " + std::to_string(n) + " units");
    groups = std::max(1, static_cast<int>(std::llround(
                             static_cast<double>(n) / spec.value)));
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return a < b;
  });

  StratumAssignment out;
  out.basis = "quantiles";
  out.stratum_of.resize(n);
  const std::size_t base = n / static_cast<std::size_t>(groups);
  const std::size_t rem = n % static_cast<std::size_t>(groups);
  std::size_t pos = 0;
  for (int g = 0; g < groups; ++g) {
    const std::size_t size = base + (static_cast<std::size_t>(g) < rem ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k)
      out.stratum_of[order[pos + k]] = g;
    pos += size;
    out.labels.push_back("q" + std::to_string(g + 1));
  }
  return out;
}

StratumAssignment stratify_by_labels(const std::vector<std::string>& labels) {
  if (labels.empty()) throw ValidationError("stratify: no units");
  StratumAssignment out;
  out.basis = "column";
  out.stratum_of.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::find(out.labels.begin(), out.labels.end(), labels[i]);
    if (it == out.labels.end()) {
      out.stratum_of[i] = static_cast<int>(out.labels.size());
      out.labels.push_back(labels[i]);
    } else {
      out.stratum_of[i] = static_cast<int>(it - out.labels.begin());
    }
  }
  return out;
}

StratumAssignment single_stratum(std::size_t n) {
  if (n == 0) throw ValidationError("stratify: no units");
  StratumAssignment out;
  out.basis = "none";
  out.stratum_of.assign(n, 0);
  out.labels = {"all"};
  return out;
}

PairPlan plan_pairs(const StratumAssignment& strata,
                    const std::vector<std::string>& question_ids, std::uint64_t seed,
                    const PairPlanOptions& options) {
  PairPlan plan;
  plan.question_ids = question_ids;
  plan.seed = seed;
  plan.ordered = options.ordered;

  const auto members = strata.members();
  for (std::size_t s = 0; s < members.size(); ++s) {
    const auto& m = members[s];
    if (m.size() < 2) {
      plan.warnings.push_back("stratum '" + strata.labels[s] +
                              "' has fewer than 2 units; skipped");
      continue;
    }
    std::vector<PlannedPair> stratum_pairs;
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = i + 1; j < m.size(); ++j)
        stratum_pairs.push_back({m[i], m[j], static_cast<int>(s), Presentation::AFirst});
    if (options.max_pairs_per_stratum > 0 &&
        stratum_pairs.size() > static_cast<std::size_t>(options.max_pairs_per_stratum)) {
      // sample without replacement: partial Fisher-Yates, then restore the
      // canonical order so the cap changes the set, not the sequence
      std::mt19937_64 rng(mix_seed(seed, 0x70616972 + s));
      for (std::size_t k = 0;
           k < static_cast<std::size_t>(options.max_pairs_per_stratum); ++k) {
        std::uniform_int_distribution<std::size_t> d(k, stratum_pairs.size() - 1);
        std::swap(stratum_pairs[k], stratum_pairs[d(rng)]);
      }
      stratum_pairs.resize(static_cast<std::size_t>(options.max_pairs_per_stratum));
      std::sort(stratum_pairs.begin(), stratum_pairs.end(),
                [](const PlannedPair& a, const PlannedPair& b) {
                  return std::pair(a.unit_a, a.unit_b) < std::pair(b.unit_a, b.unit_b);
                });
    }
    plan.pairs.insert(plan.pairs.end(), stratum_pairs.begin(), stratum_pairs.end());
  }

  if (options.ordered) {
    std::vector<PlannedPair> doubled;
    doubled.reserve(plan.pairs.size() * 2);
    for (const auto& p : plan.pairs) {
      doubled.push_back({p.unit_a, p.unit_b, p.stratum, Presentation::AFirst});
      doubled.push_back({p.unit_a, p.unit_b, p.stratum, Presentation::BFirst});
    }
    plan.pairs = std::move(doubled);
  } else {
    // presentation coin in canonical order, independent of the shuffle
    std::mt19937_64 coin(mix_seed(seed, 0x636f696e));
    std::uniform_int_distribution<int> flip(0, 1);
    for (auto& p : plan.pairs)
      p.presentation = flip(coin) ? Presentation::BFirst : Presentation::AFirst;
  }

  std::mt19937_64 shuffler(mix_seed(seed, 0x73687566));
  std::shuffle(plan.pairs.begin(), plan.pairs.end(), shuffler);
  return plan;
}

std::vector<std::string> PairScoreSet::qualities() const {
  std::vector<std::string> out;
  out.reserve(score.size());
  for (const auto& [q, v] : score) {
    (void)v;
    out.push_back(q);
  }
  return out;
}

std::string sanitize_column_token(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!out.empty() && out.back() != '_')
      out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? std::string("q") : out;
}

std::vector<ExtraColumn> PairScoreSet::to_extra_columns() const {
  std::vector<ExtraColumn> out;
  for (const auto& [quality, values] : score) {
    ExtraColumn col;
    col.name = "pair_score_" + sanitize_column_token(quality);
    col.values = values;
    col.missing.assign(n_units, 0);
    const auto& perf = performed.at(quality);
    for (std::size_t i = 0; i < n_units; ++i)
      if (perf[i] == 0) {
        col.missing[i] = 1;
        col.values[i] = 0.0;
      }
    out.push_back(std::move(col));
  }
  return out;
}

PairScoreSet aggregate_scores(const std::vector<PairComparison>& comparisons,
                              std::size_t n_units, bool ordered) {
  PairScoreSet set;
  set.n_units = n_units;
  std::set<std::tuple<int, int, int, std::string>> seen;  // a, b, direction, quality
  for (const auto& c : comparisons) {
    if (c.unit_a < 0 || c.unit_b < 0 || c.unit_a == c.unit_b ||
        static_cast<std::size_t>(c.unit_a) >= n_units ||
        static_cast<std::size_t>(c.unit_b) >= n_units)
      throw ValidationError("comparison references invalid unit indices");
    const int a = std::min(c.unit_a, c.unit_b);
    const int b = std::max(c.unit_a, c.unit_b);
    const int direction = ordered ? (c.presentation == Presentation::BFirst ? 1 : 0) : 0;
    if (!seen.insert({a, b, direction, c.quality}).second)
      throw ValidationError("duplicate comparison for pair (" + std::to_string(a) + "," +
                            std::to_string(b) + ") on quality '" + c.quality + "'");

    auto& wins = set.score[c.quality];
    auto& perf = set.performed[c.quality];
    if (wins.empty()) {
      wins.assign(n_units, 0.0);
      perf.assign(n_units, 0);
    }
    if (c.verdict == Verdict::Invalid) continue;  // dropped pair
    const int first = c.presentation == Presentation::AFirst ? c.unit_a : c.unit_b;
    const int second = c.presentation == Presentation::AFirst ? c.unit_b : c.unit_a;
    const int winner = c.verdict == Verdict::First ? first : second;
    wins[static_cast<std::size_t>(winner)] += 1.0;
    ++perf[static_cast<std::size_t>(c.unit_a)];
    ++perf[static_cast<std::size_t>(c.unit_b)];
  }

  for (auto& [quality, wins] : set.score) {
    const auto& perf = set.performed[quality];
    for (std::size_t i = 0; i < n_units; ++i) {
      if (perf[i] == 0)
        wins[i] = std::numeric_limits<double>::quiet_NaN();
      else
        wins[i] /= static_cast<double>(perf[i]);
    }
  }
  return set;
}

PairScoreSet read_scores_csv(const std::string& path, const Experiment& experiment) {
  const csv::Table table = csv::read_file(path);
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < experiment.ids.size(); ++i)
    index_of[experiment.ids[i]] = i;
  const int u = table.column_index("unit"), q = table.column_index("quality"),
            s = table.column_index("score"), pf = table.column_index("performed");
  if (u < 0 || q < 0 || s < 0 || pf < 0)
    throw ValidationError("scores file " + path +
                          " needs columns unit,quality,score,performed");
  PairScoreSet set;
  set.n_units = experiment.n();
  for (const auto& row : table.rows) {
    auto it = index_of.find(row[static_cast<std::size_t>(u)]);
    if (it == index_of.end())
      throw ValidationError("scores reference unknown unit id '" +
                            row[static_cast<std::size_t>(u)] + "'");
    const std::string& quality = row[static_cast<std::size_t>(q)];
    auto& sc = set.score[quality];
    auto& pe = set.performed[quality];
    if (sc.empty()) {
      sc.assign(set.n_units, std::numeric_limits<double>::quiet_NaN());
      pe.assign(set.n_units, 0);
    }
    pe[it->second] = csv::parse_int(row[static_cast<std::size_t>(pf)],
                                    path + " column performed");
    const std::string& val = row[static_cast<std::size_t>(s)];
    if (!val.empty())
      sc[it->second] = csv::parse_number(val, path + " column score");
  }
  return set;
}

void write_pair_plan_csv(const std::string& path, const PairPlan& plan,
                         const Experiment& experiment,
                         const StratumAssignment& strata) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(plan.pairs.size());
  for (std::size_t i = 0; i < plan.pairs.size(); ++i) {
    const auto& p = plan.pairs[i];
    rows.push_back({std::to_string(i),
                    experiment.ids[static_cast<std::size_t>(p.unit_a)],
                    experiment.ids[static_cast<std::size_t>(p.unit_b)],
                    strata.labels[static_cast<std::size_t>(p.stratum)],
                    p.presentation == Presentation::AFirst ? "a_first" : "b_first"});
  }
  csv::write_file(path, {"pair", "unit_a", "unit_b", "stratum", "presentation"}, rows);
}

namespace {

std::string verdict_to_string(Verdict v) {
  switch (v) {
    case Verdict::First: return "first";
    case Verdict::Second: return "second";
    case Verdict::Invalid: return "invalid";
  }
  return "?";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "first") return Verdict::First;
  if (s == "second") return Verdict::Second;
  if (s == "invalid") return Verdict::Invalid;
  throw ValidationError("unknown verdict '" + s + "'");
}

}  // namespace

void write_comparisons_csv(const std::string& path,
                           const std::vector<PairComparison>& comparisons,
                           const Experiment& experiment) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(comparisons.size());
  for (const auto& c : comparisons)
    rows.push_back({experiment.ids[static_cast<std::size_t>(c.unit_a)],
                    experiment.ids[static_cast<std::size_t>(c.unit_b)], c.question,
                    c.quality,
                    c.presentation == Presentation::AFirst ? "a_first" : "b_first",
                    verdict_to_string(c.verdict), std::to_string(c.attempts), c.raw});
  csv::write_file(path,
                  {"unit_a", "unit_b", "question", "quality", "presentation",
                   "verdict", "attempts", "raw"},
                  rows);
}

std::vector<PairComparison> read_comparisons_csv(const std::string& path,
                                                 const Experiment& experiment) {
  const csv::Table table = csv::read_file(path);
  std::map<std::string, int> index_of;
  for (std::size_t i = 0; i < experiment.ids.size(); ++i)
    index_of[experiment.ids[i]] = static_cast<int>(i);
  auto col = [&](const char* name) {
    const int idx = table.column_index(name);
    if (idx < 0)
      throw ValidationError("comparisons file " + path + " lacks column '" +
                            std::string(name) + "'");
    return static_cast<std::size_t>(idx);
  };
  const auto a_col = col("unit_a"), b_col = col("unit_b"), q_col = col("question"),
             qual_col = col("quality"), pres_col = col("presentation"),
             v_col = col("verdict"), att_col = col("attempts"), raw_col = col("raw");
  std::vector<PairComparison> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    PairComparison c;
    auto a = index_of.find(row[a_col]);
    auto b = index_of.find(row[b_col]);
    if (a == index_of.end() || b == index_of.end())
      throw ValidationError("comparisons reference unknown unit id '" +
                            (a == index_of.end() ? row[a_col] : row[b_col]) + "'");
    c.unit_a = a->second;
    c.unit_b = b->second;
    c.question = row[q_col];
    c.quality = row[qual_col];
    c.presentation =
        row[pres_col] == "b_first" ? Presentation::BFirst : Presentation::AFirst;
    c.verdict = verdict_from_string(row[v_col]);
    c.attempts = csv::parse_int(row[att_col], path + " column attempts");
    c.raw = row[raw_col];
    out.push_back(std::move(c));
  }
  return out;
}

void write_scores_csv(const std::string& path, const PairScoreSet& scores,
                      const Experiment& experiment) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [quality, vals] : scores.score) {
    const auto& perf = scores.performed.at(quality);
    for (std::size_t i = 0; i < scores.n_units; ++i)
      rows.push_back({experiment.ids[i], quality,
                      perf[i] == 0 ? "" : format_double(vals[i]),
                      std::to_string(perf[i])});
  }
  csv::write_file(path, {"unit", "quality", "score", "performed"}, rows);
}

}  // namespace pairadjust
