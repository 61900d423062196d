#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "pairadjust/common.hpp"
#include "pairadjust/llmclient.hpp"

using namespace pairadjust;
namespace fs = std::filesystem;

namespace {

Experiment toy_experiment() {
  Experiment exp;
  exp.ids = {"a", "b", "c", "d"};
  exp.z = {1, 0, 1, 0};
  exp.y = {1, 2, 3, 4};
  exp.p.assign(4, 0.5);
  CovariateColumn age;
  age.name = "age";
  age.type = CovariateType::Integer;
  age.numeric = {34, 56, 21, 40};
  age.level.assign(4, -1);
  age.missing.assign(4, 0);
  CovariateColumn pretest;
  pretest.name = "pretest score";
  pretest.type = CovariateType::Real;
  pretest.numeric = {1.5, 0, 2.5, 0.5};
  pretest.level.assign(4, -1);
  pretest.missing = {0, 1, 0, 0};
  exp.covariates = {age, pretest};
  return exp;
}

PromptTemplate toy_template() {
  PromptTemplate t;
  t.sentences["age"] = {"They are {value} years old.", "Their age"};
  t.sentences["pretest score"] = {"Their pretest score is {value}.",
                                  "Their pretest score"};
  return t;
}

QuestionSpec single_question() {
  QuestionSpec q;
  q.id = "outcome";
  q.target_description = "is more likely to score higher on an algebra proficiency exam";
  return q;
}

// scripted provider: replays canned responses and records every request
struct ScriptedProvider : Provider {
  std::vector<std::string> script;
  std::vector<CompletionRequest> seen;
  std::size_t cursor = 0;
  int fail_first = 0;  // transport failures before any scripted response

  CompletionResult complete(const CompletionRequest& request) override {
    seen.push_back(request);
    if (fail_first > 0) {
      --fail_first;
      return {false, "", "connection reset", true};
    }
    if (cursor >= script.size()) return {true, script.back(), "", false};
    return {true, script[cursor++], "", false};
  }
  std::string model_name() const override { return "scripted"; }
};

PairPlan one_pair_plan() {
  PairPlan plan;
  plan.pairs = {{0, 1, 0, Presentation::AFirst}};
  plan.question_ids = {"outcome"};
  return plan;
}

}  // namespace

TEST_SUITE("llmclient.prompt") {

TEST_CASE("covariates render as sentences, in order, per presentation") {
  const Experiment exp = toy_experiment();
  const std::string prompt =
      render_prompt(toy_template(), single_question(), exp, 0, 3);
  CHECK(prompt.find("They are 34 years old.") != std::string::npos);
  CHECK(prompt.find("Observation 1: They are 34 years old.") != std::string::npos);
  CHECK(prompt.find("Observation 2: They are 40 years old.") != std::string::npos);
  CHECK(prompt.find("is more likely to score higher") != std::string::npos);
  CHECK(prompt.find("Respond with either \"observation 1\" or \"observation 2\".") !=
        std::string::npos);
}

TEST_CASE("missing values still yield a sentence") {
  const Experiment exp = toy_experiment();
  const std::string prompt =
      render_prompt(toy_template(), single_question(), exp, 1, 2);
  CHECK(prompt.find("Their pretest score is unknown.") != std::string::npos);
}

TEST_CASE("multi-quality prompts enumerate every quality once") {
  QuestionSpec q;
  q.id = "qualities";
  q.mode = QuestionSpec::Mode::MultiQuality;
  q.qualities = {"topic novelty", "topic popularity", "title catchiness",
                 "generalizability", "writing quality", "impact of results",
                 "subfield popularity", "technicality", "meaningful contributions",
                 "applicability"};
  const std::string prompt = render_prompt(toy_template(), q, toy_experiment(), 0, 1);
  for (const auto& quality : q.qualities)
    CHECK(prompt.find(quality) != std::string::npos);
  CHECK(prompt.find("10. applicability") != std::string::npos);
}

TEST_CASE("a covariate without a sentence template is an error") {
  PromptTemplate incomplete;
  incomplete.sentences["age"] = {"They are {value} years old.", "Their age"};
  CHECK_THROWS_WITH_AS(
      render_prompt(incomplete, single_question(), toy_experiment(), 0, 1),
      doctest::Contains("pretest score"), ValidationError);
}

TEST_CASE("the default template covers every field") {
  const Experiment exp = toy_experiment();
  const PromptTemplate t = default_prompt_template(exp);
  const std::string prompt = render_prompt(t, single_question(), exp, 0, 1);
  CHECK(prompt.find("Their age is 34.") != std::string::npos);
}

TEST_CASE("text fields render, and empty text gets the missing phrase") {
  Experiment exp = toy_experiment();
  exp.text_fields.emplace_back(
      "abstract", std::vector<std::string>{"We measure effects.", "", "x", "y"});
  PromptTemplate t = toy_template();
  t.sentences["abstract"] = {"Its abstract reads: {value}", "Its abstract"};
  const std::string with_text = render_prompt(t, single_question(), exp, 0, 3);
  CHECK(with_text.find("Its abstract reads: We measure effects.") != std::string::npos);
  const std::string without = render_prompt(t, single_question(), exp, 1, 0);
  CHECK(without.find("Its abstract is unknown.") != std::string::npos);
}

}  // TEST_SUITE

TEST_SUITE("llmclient.parse") {

TEST_CASE("single verdicts") {
  const std::vector<std::string> nouns{"observation"};
  CHECK(parse_verdict("Observation 1", nouns) == Verdict::First);
  CHECK(parse_verdict("observation 2.", nouns) == Verdict::Second);
  CHECK(parse_verdict("  OBSERVATION 2!!", nouns) == Verdict::Second);
  CHECK(parse_verdict("I think observation 1 fits best", nouns) == Verdict::First);
  CHECK(parse_verdict("Both seem equal", nouns) == Verdict::Invalid);
  CHECK(parse_verdict("Neither", nouns) == Verdict::Invalid);
  CHECK(parse_verdict("observation 1 or observation 2?", nouns) == Verdict::Invalid);
  CHECK(parse_verdict("observation 12", nouns) == Verdict::Invalid);
}

TEST_CASE("configured synonyms are accepted") {
  const std::vector<std::string> nouns{"observation", "paper"};
  CHECK(parse_verdict("Paper 2", nouns) == Verdict::Second);
  CHECK(parse_verdict("paper 1 is stronger", nouns) == Verdict::First);
}

TEST_CASE("multi-quality parsing marks unmatched qualities invalid individually") {
  const std::vector<std::string> qualities{"novelty", "writing quality", "impact"};
  const std::vector<std::string> nouns{"paper"};
  const std::string raw =
      "1: Paper 2\n"
      "writing quality: paper 1\n"
      "3: no idea\n";
  const std::vector<Verdict> v = parse_multi_verdict(raw, qualities, nouns);
  CHECK(v[0] == Verdict::Second);
  CHECK(v[1] == Verdict::First);
  CHECK(v[2] == Verdict::Invalid);
}

TEST_CASE("fully unparseable multi response is invalid everywhere") {
  const std::vector<Verdict> v =
      parse_multi_verdict("I cannot help with that.", {"a", "b"}, {"paper"});
  CHECK(v == std::vector<Verdict>{Verdict::Invalid, Verdict::Invalid});
}

}  // TEST_SUITE

TEST_SUITE("llmclient.mock") {

TEST_CASE("noiseless mock picks the higher latent, always") {
  MockConfig config;
  config.latents["outcome"] = {2.0, 1.0, 0.0, -1.0};
  MockProvider provider(config);
  QuestionSpec q = single_question();
  for (int rep = 0; rep < 20; ++rep) {
    CompletionRequest req;
    req.prompt = "prompt variant " + std::to_string(rep);
    req.first_unit = 0;
    req.second_unit = 1;
    req.question = &q;
    req.noun = "observation";
    const CompletionResult res = provider.complete(req);
    REQUIRE(res.ok);
    CHECK(parse_verdict(res.text, {"observation"}) == Verdict::First);
  }
}

TEST_CASE("refusal rate holds on first attempts over many asks") {
  MockConfig config;
  config.latents["outcome"] = {1.0, 0.0};
  config.refusal_rate = 0.1;
  config.seed = 1234;
  MockProvider provider(config);
  QuestionSpec q = single_question();
  int refusals = 0;
  const int asks = 10000;
  for (int i = 0; i < asks; ++i) {
    CompletionRequest req;
    req.prompt = "ask " + std::to_string(i);
    req.attempt = 1;
    req.first_unit = 0;
    req.second_unit = 1;
    req.question = &q;
    const CompletionResult res = provider.complete(req);
    if (parse_verdict(res.text, {"observation"}) == Verdict::Invalid) ++refusals;
  }
  CHECK(refusals > 900);
  CHECK(refusals < 1100);
}

TEST_CASE("equal latents with noise split about evenly") {
  MockConfig config;
  config.latents["outcome"] = {0.5, 0.5};
  config.noise_scale = 1.0;
  config.seed = 777;
  MockProvider provider(config);
  QuestionSpec q = single_question();
  int first = 0;
  const int asks = 10000;
  for (int i = 0; i < asks; ++i) {
    CompletionRequest req;
    req.prompt = "coin " + std::to_string(i);
    req.first_unit = 0;
    req.second_unit = 1;
    req.question = &q;
    if (parse_verdict(provider.complete(req).text, {"observation"}) == Verdict::First)
      ++first;
  }
  CHECK(first > 4800);
  CHECK(first < 5200);
}

TEST_CASE("a unit without a latent score is an error") {
  MockConfig config;
  config.latents["outcome"] = {1.0};
  MockProvider provider(config);
  QuestionSpec q = single_question();
  CompletionRequest req;
  req.prompt = "x";
  req.first_unit = 0;
  req.second_unit = 1;  // out of range
  req.question = &q;
  CHECK_THROWS_WITH_AS(provider.complete(req), doctest::Contains("latent"),
                       ValidationError);
}

}  // TEST_SUITE

TEST_SUITE("llmclient.engine") {

TEST_CASE("a refusal triggers exactly one retry of the identical prompt") {
  ScriptedProvider provider;
  provider.script = {"Neither.", "Observation 2"};
  AskEngine engine(provider, nullptr, {});
  const auto comparisons =
      engine.run(one_pair_plan(), {single_question()}, toy_template(), toy_experiment());
  REQUIRE(comparisons.size() == 1);
  CHECK(comparisons[0].verdict == Verdict::Second);
  CHECK(comparisons[0].attempts == 2);
  REQUIRE(provider.seen.size() == 2);
  CHECK(provider.seen[0].prompt == provider.seen[1].prompt);
  CHECK(provider.seen[0].attempt == 1);
  CHECK(provider.seen[1].attempt == 2);
}

TEST_CASE("two failures drop the pair as invalid with attempts=2") {
  ScriptedProvider provider;
  provider.script = {"Neither.", "Neither."};
  AskEngine engine(provider, nullptr, {});
  const auto comparisons =
      engine.run(one_pair_plan(), {single_question()}, toy_template(), toy_experiment());
  REQUIRE(comparisons.size() == 1);
  CHECK(comparisons[0].verdict == Verdict::Invalid);
  CHECK(comparisons[0].attempts == 2);
  CHECK(provider.seen.size() == 2);
}

TEST_CASE("a parseable first answer is never retried") {
  ScriptedProvider provider;
  provider.script = {"Observation 1"};
  AskEngine engine(provider, nullptr, {});
  const auto comparisons =
      engine.run(one_pair_plan(), {single_question()}, toy_template(), toy_experiment());
  CHECK(comparisons[0].attempts == 1);
  CHECK(provider.seen.size() == 1);
}

TEST_CASE("cache hits make zero provider calls") {
  const auto cache_path =
      (fs::temp_directory_path() / "pairadjust_cache_test.jsonl").string();
  fs::remove(cache_path);
  {
    ScriptedProvider provider;
    provider.script = {"Observation 1"};
    ResponseCache cache(cache_path);
    AskEngine engine(provider, &cache, {});
    engine.run(one_pair_plan(), {single_question()}, toy_template(), toy_experiment());
    CHECK(engine.provider_calls() == 1);
    CHECK(cache.size() == 1);
  }
  {
    ScriptedProvider provider;
    provider.script = {"Observation 2"};  // would disagree; must not be asked
    ResponseCache cache(cache_path);      // reloaded from disk
    AskEngine engine(provider, &cache, {});
    const auto comparisons = engine.run(one_pair_plan(), {single_question()},
                                        toy_template(), toy_experiment());
    CHECK(engine.provider_calls() == 0);
    CHECK(engine.cache_hits() == 1);
    CHECK(comparisons[0].verdict == Verdict::First);
  }
  fs::remove(cache_path);
}

TEST_CASE("cached refusal outcomes keep their recorded attempts") {
  const auto cache_path =
      (fs::temp_directory_path() / "pairadjust_cache_refusal.jsonl").string();
  fs::remove(cache_path);
  {
    ScriptedProvider provider;
    provider.script = {"Neither.", "Neither."};
    ResponseCache cache(cache_path);
    AskEngine engine(provider, &cache, {});
    engine.run(one_pair_plan(), {single_question()}, toy_template(), toy_experiment());
  }
  ScriptedProvider provider;
  ResponseCache cache(cache_path);
  AskEngine engine(provider, &cache, {});
  const auto comparisons =
      engine.run(one_pair_plan(), {single_question()}, toy_template(), toy_experiment());
  CHECK(provider.seen.empty());
  CHECK(comparisons[0].verdict == Verdict::Invalid);
  CHECK(comparisons[0].attempts == 2);
  fs::remove(cache_path);
}

TEST_CASE("serial and concurrent runs produce identical verdict sets") {
  // a bigger plan against the deterministic mock
  Experiment exp;
  const int n = 12;
  for (int i = 0; i < n; ++i) {
    exp.ids.push_back("u" + std::to_string(i));
    exp.z.push_back(i % 2);
    exp.y.push_back(i);
    exp.p.push_back(0.5);
  }
  CovariateColumn c;
  c.name = "v";
  c.type = CovariateType::Real;
  for (int i = 0; i < n; ++i) {
    c.numeric.push_back(i * 0.5);
    c.level.push_back(-1);
    c.missing.push_back(0);
  }
  exp.covariates = {c};

  StratumAssignment strata = single_stratum(static_cast<std::size_t>(n));
  const PairPlan plan = plan_pairs(strata, {"outcome"}, 5);
  MockConfig config;
  std::vector<double> latent(static_cast<std::size_t>(n));
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0, 1);
  for (auto& v : latent) v = gauss(rng);
  config.latents["outcome"] = latent;
  config.noise_scale = 0.7;
  config.refusal_rate = 0.05;
  config.seed = 321;

  MockProvider serial_provider(config);
  AskEngine serial(serial_provider, nullptr, {});
  const auto sc = serial.run(plan, {single_question()},
                             default_prompt_template(exp), exp);
  MockProvider concurrent_provider(config);
  AskOptions opts;
  opts.max_in_flight = 8;
  AskEngine concurrent(concurrent_provider, nullptr, opts);
  const auto cc = concurrent.run(plan, {single_question()},
                                 default_prompt_template(exp), exp);
  const PairScoreSet a = aggregate_scores(sc, static_cast<std::size_t>(n));
  const PairScoreSet b = aggregate_scores(cc, static_cast<std::size_t>(n));
  REQUIRE(a.score.count("outcome") == 1);
  CHECK(a.score.at("outcome") == b.score.at("outcome"));
  CHECK(a.performed.at("outcome") == b.performed.at("outcome"));
}

TEST_CASE("transport errors back off, then surface as provider errors") {
  ScriptedProvider provider;
  provider.script = {"Observation 1"};
  provider.fail_first = 2;
  AskOptions opts;
  opts.transport_retries = 3;
  opts.backoff_base_ms = 1;
  AskEngine engine(provider, nullptr, opts);
  const auto comparisons =
      engine.run(one_pair_plan(), {single_question()}, toy_template(), toy_experiment());
  CHECK(comparisons[0].verdict == Verdict::First);
  CHECK(provider.seen.size() == 3);  // 2 failures + 1 success

  ScriptedProvider hopeless;
  hopeless.script = {"Observation 1"};
  hopeless.fail_first = 10;
  AskOptions strict;
  strict.transport_retries = 2;
  strict.backoff_base_ms = 1;
  AskEngine failing(hopeless, nullptr, strict);
  CHECK_THROWS_AS(failing.run(one_pair_plan(), {single_question()}, toy_template(),
                              toy_experiment()),
                  ProviderError);
}

TEST_CASE("a generous rate limit does not change results") {
  ScriptedProvider provider;
  provider.script = {"Observation 1"};
  AskOptions opts;
  opts.requests_per_minute = 600000;  // exercises the token bucket path
  AskEngine engine(provider, nullptr, opts);
  const auto comparisons =
      engine.run(one_pair_plan(), {single_question()}, toy_template(), toy_experiment());
  CHECK(comparisons[0].verdict == Verdict::First);
}

TEST_CASE("multi-quality answers land one comparison per quality") {
  QuestionSpec q;
  q.id = "qualities";
  q.mode = QuestionSpec::Mode::MultiQuality;
  q.qualities = {"novelty", "impact"};
  ScriptedProvider provider;
  provider.script = {"1: Observation 2\n2: Observation 1\n"};
  AskEngine engine(provider, nullptr, {});
  PairPlan plan = one_pair_plan();
  plan.question_ids = {"qualities"};
  const auto comparisons =
      engine.run(plan, {q}, toy_template(), toy_experiment());
  REQUIRE(comparisons.size() == 2);
  CHECK(comparisons[0].quality == "novelty");
  CHECK(comparisons[0].verdict == Verdict::Second);
  CHECK(comparisons[1].quality == "impact");
  CHECK(comparisons[1].verdict == Verdict::First);
}

}  // TEST_SUITE

TEST_SUITE("llmclient.http") {

TEST_CASE("live provider refuses to start without --live") {
  HttpConfig config;
  config.live = false;
  CHECK_THROWS_AS(HttpChatProvider{config}, ProviderError);
}

TEST_CASE("live provider requires the API key environment variable") {
  HttpConfig config;
  config.live = true;
  config.api_key_env = "PAIRADJUST_TEST_KEY_THAT_IS_UNSET";
  unsetenv(config.api_key_env.c_str());
  CHECK_THROWS_WITH_AS(HttpChatProvider{config},
                       doctest::Contains("PAIRADJUST_TEST_KEY_THAT_IS_UNSET"),
                       ProviderError);
}

}  // TEST_SUITE
