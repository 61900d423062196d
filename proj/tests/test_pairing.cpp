#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "pairadjust/common.hpp"
#include "pairadjust/pairing.hpp"

using namespace pairadjust;

namespace {

PairComparison judged(int a, int b, const std::string& quality, Presentation pres,
                      Verdict v) {
  PairComparison c;
  c.unit_a = a;
  c.unit_b = b;
  c.question = quality;
  c.quality = quality;
  c.presentation = pres;
  c.verdict = v;
  return c;
}

// winner-oriented helper: mark `winner` as chosen within pair (a,b)
PairComparison win(int a, int b, int winner, const std::string& quality) {
  const Verdict v = winner == a ? Verdict::First : Verdict::Second;
  return judged(a, b, quality, Presentation::AFirst, v);
}

}  // namespace

TEST_SUITE("pairing.stratify") {

TEST_CASE("sorted split into two groups of ten") {
  std::vector<double> values(20);
  std::iota(values.begin(), values.end(), 1.0);
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::GroupSize;
  spec.value = 10;
  const StratumAssignment s = stratify_by_values(values, spec);
  CHECK(s.n_strata() == 2);
  for (int i = 0; i < 10; ++i) CHECK(s.stratum_of[static_cast<std::size_t>(i)] == 0);
  for (int i = 10; i < 20; ++i) CHECK(s.stratum_of[static_cast<std::size_t>(i)] == 1);
}

TEST_CASE("1003 units in 10 groups: sizes 100 or 101") {
  std::vector<double> values(1003);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> gauss(0, 1);
  for (auto& v : values) v = gauss(rng);
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::NGroups;
  spec.value = 10;
  const StratumAssignment s = stratify_by_values(values, spec);
  CHECK(s.n_strata() == 10);
  const auto members = s.members();
  std::size_t lo = 1003, hi = 0;
  for (const auto& m : members) {
    lo = std::min(lo, m.size());
    hi = std::max(hi, m.size());
  }
  CHECK(lo == 100);
  CHECK(hi == 101);
}

TEST_CASE("quantile strata sizes never differ by more than one") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_int_distribution<int> n_dist(10, 90);
  std::uniform_int_distribution<int> g_dist(1, 9);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = n_dist(rng);
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = gauss(rng);
    GroupSpec spec;
    spec.kind = GroupSpec::Kind::NGroups;
    spec.value = std::min(g_dist(rng), n);
    const StratumAssignment s = stratify_by_values(values, spec);
    std::size_t lo = values.size(), hi = 0;
    for (const auto& m : s.members()) {
      lo = std::min(lo, m.size());
      hi = std::max(hi, m.size());
    }
    CHECK(hi - lo <= 1);
    // sorted within: every unit in stratum g has value <= units in g+1
  }
}

TEST_CASE("categorical basis: strata are the labels in first appearance order") {
  const StratumAssignment s =
      stratify_by_labels({"Science", "Genetics", "Science", "FASEB"});
  CHECK(s.labels == std::vector<std::string>{"Science", "Genetics", "FASEB"});
  CHECK(s.stratum_of == std::vector<int>{0, 1, 0, 2});
}

TEST_CASE("infeasible group specs are rejected") {
  GroupSpec spec;
  spec.kind = GroupSpec::Kind::GroupSize;
  spec.value = 10;
  CHECK_THROWS_WITH_AS(stratify_by_values({1, 2, 3}, spec),
                       doctest::Contains("group_size"), ValidationError);
}

}  // TEST_SUITE

TEST_SUITE("pairing.plan") {

TEST_CASE("a stratum of ten yields forty-five pairs") {
  const StratumAssignment s = single_stratum(10);
  const PairPlan plan = plan_pairs(s, {"q"}, 42);
  CHECK(plan.pairs.size() == 45);
  std::set<std::pair<int, int>> seen;
  for (const auto& p : plan.pairs) {
    CHECK(p.unit_a < p.unit_b);
    CHECK(seen.insert({p.unit_a, p.unit_b}).second);  // at most once per question
  }
}

TEST_CASE("pairs never cross strata") {
  StratumAssignment s;
  s.stratum_of = {0, 0, 0, 1, 1};
  s.labels = {"s1", "s2"};
  s.basis = "none";
  const PairPlan plan = plan_pairs(s, {"q"}, 3);
  CHECK(plan.pairs.size() == 4);  // C(3,2) + C(2,2)
  for (const auto& p : plan.pairs)
    CHECK(s.stratum_of[static_cast<std::size_t>(p.unit_a)] ==
          s.stratum_of[static_cast<std::size_t>(p.unit_b)]);
}

TEST_CASE("same seed, same plan; different seed shuffles") {
  const StratumAssignment s = single_stratum(12);
  const PairPlan a = plan_pairs(s, {"q"}, 99);
  const PairPlan b = plan_pairs(s, {"q"}, 99);
  REQUIRE(a.pairs.size() == b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(a.pairs[i].unit_a == b.pairs[i].unit_a);
    CHECK(a.pairs[i].unit_b == b.pairs[i].unit_b);
    CHECK(a.pairs[i].presentation == b.pairs[i].presentation);
  }
  const PairPlan c = plan_pairs(s, {"q"}, 100);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.pairs.size(); ++i)
    if (a.pairs[i].unit_a != c.pairs[i].unit_a ||
        a.pairs[i].unit_b != c.pairs[i].unit_b)
      any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("presentation coin is roughly balanced") {
  const StratumAssignment s = single_stratum(40);
  const PairPlan plan = plan_pairs(s, {"q"}, 7);
  int b_first = 0;
  for (const auto& p : plan.pairs)
    if (p.presentation == Presentation::BFirst) ++b_first;
  const double share = static_cast<double>(b_first) / static_cast<double>(plan.pairs.size());
  CHECK(share > 0.40);
  CHECK(share < 0.60);
}

TEST_CASE("singleton strata are skipped with a warning") {
  StratumAssignment s;
  s.stratum_of = {0, 0, 1};
  s.labels = {"big", "lonely"};
  s.basis = "none";
  const PairPlan plan = plan_pairs(s, {"q"}, 1);
  CHECK(plan.pairs.size() == 1);
  REQUIRE(plan.warnings.size() == 1);
  CHECK(plan.warnings[0].find("lonely") != std::string::npos);
}

TEST_CASE("per-stratum cap samples without replacement") {
  const StratumAssignment s = single_stratum(10);
  PairPlanOptions options;
  options.max_pairs_per_stratum = 20;
  const PairPlan plan = plan_pairs(s, {"q"}, 11, options);
  CHECK(plan.pairs.size() == 20);
  std::set<std::pair<int, int>> seen;
  for (const auto& p : plan.pairs) CHECK(seen.insert({p.unit_a, p.unit_b}).second);
}

TEST_CASE("ordered mode emits both presentations of every pair") {
  const StratumAssignment s = single_stratum(4);
  PairPlanOptions options;
  options.ordered = true;
  const PairPlan plan = plan_pairs(s, {"q"}, 13, options);
  CHECK(plan.pairs.size() == 12);  // 6 unordered pairs, both directions
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& p : plan.pairs)
    seen.insert({p.unit_a, p.unit_b, p.presentation == Presentation::AFirst ? 0 : 1});
  CHECK(seen.size() == 12);
}

}  // TEST_SUITE

TEST_SUITE("pairing.scores") {

TEST_CASE("full round robin of three") {
  // a beats b, a beats c, b beats c
  const std::vector<PairComparison> comparisons = {
      win(0, 1, 0, "q"), win(0, 2, 0, "q"), win(1, 2, 1, "q")};
  const PairScoreSet set = aggregate_scores(comparisons, 3);
  CHECK(set.score.at("q") == std::vector<double>{1.0, 0.5, 0.0});
  CHECK(set.performed.at("q") == std::vector<int>{2, 2, 2});
}

TEST_CASE("dropped pair changes the denominator, not just the numerator") {
  // a beats b; (a,c) invalid; b beats c
  std::vector<PairComparison> comparisons = {
      win(0, 1, 0, "q"), judged(0, 2, "q", Presentation::AFirst, Verdict::Invalid),
      win(1, 2, 1, "q")};
  const PairScoreSet set = aggregate_scores(comparisons, 3);
  CHECK(set.score.at("q")[0] == doctest::Approx(1.0));
  CHECK(set.score.at("q")[1] == doctest::Approx(0.5));
  CHECK(set.score.at("q")[2] == doctest::Approx(0.0));
  CHECK(set.performed.at("q") == std::vector<int>{1, 2, 1});
}

TEST_CASE("full round robin: scores sum to s/2") {
  for (const std::size_t s : {4u, 7u, 10u}) {
    std::vector<PairComparison> comparisons;
    std::mt19937_64 rng(s);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = i + 1; j < s; ++j) {
        const int winner = (rng() & 1) ? static_cast<int>(i) : static_cast<int>(j);
        comparisons.push_back(
            win(static_cast<int>(i), static_cast<int>(j), winner, "q"));
      }
    const PairScoreSet set = aggregate_scores(comparisons, s);
    double total = 0;
    for (double v : set.score.at("q")) total += v;
    CHECK(total == doctest::Approx(static_cast<double>(s) / 2.0));
    for (int perf : set.performed.at("q"))
      CHECK(perf == static_cast<int>(s) - 1);
  }
}

TEST_CASE("scores are invariant to the presentation coin") {
  std::vector<PairComparison> as_presented = {
      judged(0, 1, "q", Presentation::AFirst, Verdict::First),   // 0 wins
      judged(0, 2, "q", Presentation::BFirst, Verdict::First),   // 2 wins
      judged(1, 2, "q", Presentation::BFirst, Verdict::Second)}; // 1 wins
  std::vector<PairComparison> flipped = as_presented;
  for (auto& c : flipped) {
    c.presentation = c.presentation == Presentation::AFirst ? Presentation::BFirst
                                                            : Presentation::AFirst;
    c.verdict = c.verdict == Verdict::First ? Verdict::Second : Verdict::First;
  }
  const PairScoreSet a = aggregate_scores(as_presented, 3);
  const PairScoreSet b = aggregate_scores(flipped, 3);
  CHECK(a.score.at("q") == b.score.at("q"));
}

TEST_CASE("duplicate judgments for a pair and quality are rejected") {
  std::vector<PairComparison> dup = {win(0, 1, 0, "q"), win(1, 0, 1, "q")};
  CHECK_THROWS_WITH_AS(aggregate_scores(dup, 2), doctest::Contains("duplicate"),
                       ValidationError);
  // but the same pair under a different quality is fine
  std::vector<PairComparison> two_qualities = {win(0, 1, 0, "q1"), win(0, 1, 1, "q2")};
  const PairScoreSet set = aggregate_scores(two_qualities, 2);
  CHECK(set.score.size() == 2);
  // and both directions are fine in ordered mode: each counts once per unit
  std::vector<PairComparison> ordered = {
      judged(0, 1, "q", Presentation::AFirst, Verdict::First),
      judged(0, 1, "q", Presentation::BFirst, Verdict::First)};
  const PairScoreSet oset = aggregate_scores(ordered, 2, /*ordered=*/true);
  CHECK(oset.performed.at("q") == std::vector<int>{2, 2});
  CHECK(oset.score.at("q") == std::vector<double>{0.5, 0.5});
}

TEST_CASE("never-compared units carry missing scores into the encoder") {
  std::vector<PairComparison> comparisons = {win(0, 1, 0, "q")};
  const PairScoreSet set = aggregate_scores(comparisons, 3);
  CHECK(std::isnan(set.score.at("q")[2]));
  const std::vector<ExtraColumn> cols = set.to_extra_columns();
  REQUIRE(cols.size() == 1);
  CHECK(cols[0].name == "pair_score_q");
  CHECK(cols[0].missing == std::vector<std::uint8_t>{0, 0, 1});
  CHECK(cols[0].values[2] == 0.0);
}

}  // TEST_SUITE
