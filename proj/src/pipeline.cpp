#include "pairadjust/pipeline.hpp"

#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include "pairadjust/common.hpp"
#include "pairadjust/csv.hpp"
#include "pairadjust/dataset.hpp"
#include "pairadjust/estimator.hpp"
#include "pairadjust/evaluation.hpp"
#include "pairadjust/imputation.hpp"
#include "pairadjust/llmclient.hpp"
#include "pairadjust/pairing.hpp"
#include "pairadjust/simulation.hpp"

namespace fs = std::filesystem;

namespace pairadjust {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a64_hex(buf.str());
}

namespace {

void deep_merge(nlohmann::json& base, const nlohmann::json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object())
      deep_merge(base[key], value);
    else
      base[key] = value;
  }
}

std::string stage_list_string() {
  std::string s;
  for (const auto& n : Pipeline::stage_names()) {
    if (!s.empty()) s += ", ";
    s += n;
  }
  return s;
}

}  // namespace

const std::vector<std::string>& Pipeline::stage_names() {
  static const std::vector<std::string> names = {
      "ingest", "impute", "stratify", "pair", "query",
      "score",  "estimate", "evaluate", "simulate"};
  return names;
}

Pipeline::Pipeline(const std::string& config_path, const std::string& out_dir,
                   const nlohmann::json& overrides)
    : out_dir_(out_dir) {
  if (out_dir_.empty()) throw ValidationError("an output directory is required");
  config_ = config_path.empty() ? nlohmann::json::object() : load_json_file(config_path);
  overrides_ = overrides.is_null() ? nlohmann::json::object() : overrides;
  deep_merge(config_, overrides_);
  config_digest_ = fnv1a64_hex(config_.dump());
  fs::create_directories(out_dir_);
  load_manifest();
}

std::string Pipeline::artifact_path(const std::string& name) const {
  return (fs::path(out_dir_) / name).string();
}

nlohmann::json Pipeline::effective_section(const std::string& key) const {
  return config_.contains(key) ? config_.at(key) : nlohmann::json::object();
}

std::uint64_t Pipeline::master_seed() const {
  return config_.value("seed", std::uint64_t{20240901});
}

std::string Pipeline::require_artifact(const std::string& name,
                                       const std::string& producer) const {
  const std::string path = artifact_path(name);
  if (!fs::exists(path))
    throw ValidationError("missing upstream artifact '" + name + "'; run the '" +
                          producer + "' stage first");
  return path;
}

void Pipeline::load_manifest() {
  const std::string path = artifact_path("manifest.json");
  if (fs::exists(path)) {
    manifest_ = load_json_file(path);
    const std::string recorded = manifest_.value("config_digest", "");
    if (recorded != config_digest_)
      throw ValidationError(
          "config digest mismatch: this output directory was created with a "
          "different configuration (recorded " + recorded + ", current " +
          config_digest_ + "); refusing to silently overwrite - use a fresh "
          "--out-dir");
  } else {
    manifest_ = {{"config_digest", config_digest_},
                 {"stages", nlohmann::json::object()}};
  }
}

void Pipeline::save_manifest() const {
  std::ofstream out(artifact_path("manifest.json"));
  out << manifest_.dump(2) << "\n";
}

bool Pipeline::up_to_date(const std::string& stage,
                          const std::vector<std::string>& input_paths) const {
  if (!manifest_.contains("stages") || !manifest_.at("stages").contains(stage))
    return false;
  const auto& rec = manifest_.at("stages").at(stage);
  for (const auto& out : rec.at("outputs"))
    if (!fs::exists(artifact_path(out.get<std::string>()))) return false;
  const auto& inputs = rec.at("inputs");
  if (inputs.size() != input_paths.size()) return false;
  for (const auto& path : input_paths) {
    if (!inputs.contains(path)) return false;
    if (!fs::exists(path)) return false;
    if (inputs.at(path).get<std::string>() != file_digest(path)) return false;
  }
  return true;
}

void Pipeline::record_stage(const std::string& stage,
                            const std::vector<std::string>& input_paths,
                            const std::vector<std::string>& outputs) {
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& path : input_paths) inputs[path] = file_digest(path);
  manifest_["stages"][stage] = {{"inputs", inputs},
                                {"outputs", outputs},
                                {"seed", master_seed()},
                                {"completed", std::time(nullptr)}};
  save_manifest();
}

Pipeline::StageOutcome Pipeline::run_stage(const std::string& stage) {
  if (stage == "ingest") return stage_ingest();
  if (stage == "impute") return stage_impute();
  if (stage == "stratify") return stage_stratify();
  if (stage == "pair") return stage_pair();
  if (stage == "query") return stage_query();
  if (stage == "score") return stage_score();
  if (stage == "estimate") return stage_estimate();
  if (stage == "evaluate") return stage_evaluate();
  if (stage == "simulate") return stage_simulate();
  throw ValidationError("unknown stage '" + stage + "' (expected one of: " +
                        stage_list_string() + ")");
}

std::vector<std::string> Pipeline::run_all() {
  std::vector<std::string> messages;
  auto run = [&](const std::string& s) {
    const StageOutcome o = run_stage(s);
    messages.push_back("stage '" + s + "': " + (o.ran ? o.message : "up to date"));
  };
  run("ingest");
  if (config_.contains("initial_model")) run("impute");
  run("stratify");
  run("pair");
  run("query");
  run("score");
  run("estimate");
  run("evaluate");
  return messages;
}

namespace {

struct LoadedExperiment {
  Experiment experiment;
  SchemaConfig schema;
};

}  // namespace

// --- stage helpers ---------------------------------------------------------

namespace {

LoadedExperiment load_from(const std::string& csv_path, const nlohmann::json& config) {
  if (!config.contains("data") || !config.at("data").contains("schema"))
    throw ValidationError("config needs a data.schema section");
  LoadedExperiment out{Experiment{}, SchemaConfig::from_json(config.at("data").at("schema"))};
  out.experiment = load_experiment(csv_path, out.schema);
  return out;
}

EncodeOptions encode_options_from(const nlohmann::json& config) {
  EncodeOptions options;
  if (config.contains("encoding"))
    options.unknown_as_level = config.at("encoding").value("unknown_as_level", false);
  return options;
}

std::vector<QuestionSpec> questions_from(const nlohmann::json& config) {
  if (!config.contains("questions") || config.at("questions").empty())
    throw ValidationError("config needs a non-empty questions list");
  std::vector<QuestionSpec> out;
  for (const auto& q : config.at("questions")) {
    QuestionSpec spec;
    spec.id = q.at("id").get<std::string>();
    const std::string mode = q.value("mode", "single_quality");
    if (mode == "single_quality")
      spec.mode = QuestionSpec::Mode::SingleQuality;
    else if (mode == "multi_quality")
      spec.mode = QuestionSpec::Mode::MultiQuality;
    else
      throw ValidationError("question mode must be single_quality|multi_quality");
    spec.target_description = q.value("target_description", "");
    if (q.contains("qualities"))
      spec.qualities = q.at("qualities").get<std::vector<std::string>>();
    spec.validate();
    out.push_back(std::move(spec));
  }
  return out;
}

PromptTemplate prompt_template_from(const nlohmann::json& config,
                                    const Experiment& experiment) {
  const nlohmann::json section =
      config.contains("prompt") ? config.at("prompt") : nlohmann::json::object();
  const bool auto_sentences = section.value("auto_sentences", true);
  PromptTemplate tmpl = auto_sentences ? default_prompt_template(experiment)
                                       : PromptTemplate{};
  tmpl.noun = section.value("noun", tmpl.noun);
  tmpl.preamble = section.value("preamble", tmpl.preamble);
  tmpl.missing_phrase = section.value("missing_phrase", tmpl.missing_phrase);
  tmpl.answer_instruction = section.value("answer_instruction", tmpl.answer_instruction);
  tmpl.system_message = section.value("system_message", tmpl.system_message);
  if (section.contains("sentences")) {
    for (const auto& [name, s] : section.at("sentences").items()) {
      SentenceTemplate st;
      if (s.is_string()) {
        st.text = s.get<std::string>();
      } else {
        st.text = s.at("text").get<std::string>();
        st.subject = s.value("subject", "");
      }
      tmpl.sentences[name] = st;
    }
  }
  return tmpl;
}

std::vector<std::string> noun_synonyms_from(const nlohmann::json& config) {
  if (config.contains("prompt") && config.at("prompt").contains("synonyms"))
    return config.at("prompt").at("synonyms").get<std::vector<std::string>>();
  return {};
}

}  // namespace

Pipeline::StageOutcome Pipeline::stage_ingest() {
  if (!config_.contains("data") || !config_.at("data").contains("csv"))
    throw ValidationError("config needs data.csv for the ingest stage");
  const std::string source = config_.at("data").at("csv").get<std::string>();
  if (!fs::exists(source)) throw ValidationError("data file '" + source + "' not found");
  if (up_to_date("ingest", {source})) return {false, ""};

  const LoadedExperiment loaded = load_from(source, config_);
  // verbatim validated copy; later stages and hand audits read this file
  fs::copy_file(source, artifact_path("experiment.csv"),
                fs::copy_options::overwrite_existing);
  record_stage("ingest", {source}, {"experiment.csv"});

  std::ostringstream msg;
  msg << "loaded " << loaded.experiment.n() << " units (" << loaded.experiment.n_treated()
      << " treated, " << loaded.experiment.n_control() << " control)";
  for (const auto& w : loaded.experiment.warnings) msg << "; warning: " << w;
  msg << "; wrote experiment.csv";
  return {true, msg.str()};
}

Pipeline::StageOutcome Pipeline::stage_impute() {
  const std::string exp_path = require_artifact("experiment.csv", "ingest");
  if (up_to_date("impute", {exp_path})) return {false, ""};
  if (!config_.contains("initial_model"))
    throw ValidationError("config has no initial_model section; the impute stage "
                          "fits the stratification model");

  const LoadedExperiment loaded = load_from(exp_path, config_);
  const Experiment& exp = loaded.experiment;
  const AugmentedCovariates x = encode_covariates(exp, {}, encode_options_from(config_));
  const LearnerConfig learner =
      LearnerConfig::from_json(config_.at("initial_model"), mix_seed(master_seed(), 0x696d70));

  // one model of the outcome on the RCT covariates over all units; the
  // cross-fitted predictions both stratify the pairing and join the models
  Eigen::VectorXd y(static_cast<Eigen::Index>(exp.n()));
  for (std::size_t i = 0; i < exp.n(); ++i) y[static_cast<Eigen::Index>(i)] = exp.y[i];
  Eigen::VectorXd pred;
  std::string detail;
  if (learner.kind == LearnerConfig::Kind::RandomForest) {
    RandomForest forest;
    forest.fit(x.x, y, learner.rf);
    pred = forest.oob_predict();
    const Eigen::VectorXd importance = forest.importance();
    std::vector<std::vector<std::string>> rows;
    for (std::size_t j = 0; j < x.column_names.size(); ++j)
      rows.push_back({x.column_names[j],
                      format_double(importance[static_cast<Eigen::Index>(j)])});
    csv::write_file(artifact_path("initial_importance.csv"), {"column", "importance"},
                    rows);
    detail = "random forest, OOB MSE " +
             format_double((pred - y).squaredNorm() / static_cast<double>(exp.n()));
  } else {
    LinearLooModel model(x.x, y);
    pred = model.loo_fitted();
    detail = std::string("leave-one-out linear (") + model.mode() + ")";
  }

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < exp.n(); ++i)
    rows.push_back({exp.ids[i], format_double(pred[static_cast<Eigen::Index>(i)])});
  csv::write_file(artifact_path("initial_model.csv"), {"unit", "oob_prediction"}, rows);

  std::vector<std::string> outputs{"initial_model.csv"};
  if (learner.kind == LearnerConfig::Kind::RandomForest)
    outputs.push_back("initial_importance.csv");
  record_stage("impute", {exp_path}, outputs);
  return {true, "wrote initial_model.csv (" + detail + ")"};
}

namespace {

std::vector<double> read_initial_predictions(const std::string& path,
                                             const Experiment& exp) {
  const csv::Table table = csv::read_file(path);
  const int u = table.column_index("unit"), p = table.column_index("oob_prediction");
  if (u < 0 || p < 0)
    throw ValidationError("initial_model.csv needs columns unit,oob_prediction");
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < exp.ids.size(); ++i) index_of[exp.ids[i]] = i;
  std::vector<double> out(exp.n(), std::numeric_limits<double>::quiet_NaN());
  for (const auto& row : table.rows) {
    auto it = index_of.find(row[static_cast<std::size_t>(u)]);
    if (it == index_of.end())
      throw ValidationError("initial_model.csv references unknown unit '" +
                            row[static_cast<std::size_t>(u)] + "'");
    out[it->second] = csv::parse_number(row[static_cast<std::size_t>(p)],
                                        "initial_model.csv column oob_prediction");
  }
  for (double v : out)
    if (std::isnan(v))
      throw ValidationError("initial_model.csv is missing some units");
  return out;
}

}  // namespace

Pipeline::StageOutcome Pipeline::stage_stratify() {
  const std::string exp_path = require_artifact("experiment.csv", "ingest");
  const nlohmann::json section = effective_section("stratify");
  const std::string basis = section.value("basis", "none");

  std::vector<std::string> inputs{exp_path};
  if (basis == "initial_predictions")
    inputs.push_back(require_artifact("initial_model.csv", "impute"));
  if (up_to_date("stratify", inputs)) return {false, ""};

  const LoadedExperiment loaded = load_from(exp_path, config_);
  const Experiment& exp = loaded.experiment;

  StratumAssignment strata;
  if (basis == "none") {
    strata = single_stratum(exp.n());
  } else if (basis == "initial_predictions") {
    GroupSpec spec;
    if (section.contains("group_size")) {
      spec.kind = GroupSpec::Kind::GroupSize;
      spec.value = section.at("group_size").get<int>();
    } else if (section.contains("n_groups")) {
      spec.kind = GroupSpec::Kind::NGroups;
      spec.value = section.at("n_groups").get<int>();
    } else {
      throw ValidationError("stratify: initial_predictions basis needs n_groups "
                            "or group_size");
    }
    strata = stratify_by_values(read_initial_predictions(inputs[1], exp), spec);
  } else if (basis.rfind("column:", 0) == 0) {
    const std::string column = basis.substr(7);
    const csv::Table table = csv::read_file(exp_path);
    const int idx = table.column_index(column);
    if (idx < 0)
      throw ValidationError("stratify: column '" + column + "' not in experiment.csv");
    std::vector<std::string> labels;
    labels.reserve(table.rows.size());
    for (const auto& row : table.rows)
      labels.push_back(row[static_cast<std::size_t>(idx)]);
    strata = stratify_by_labels(labels);
    strata.basis = basis;
  } else {
    throw ValidationError("stratify basis must be none|initial_predictions|column:<name>");
  }

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < exp.n(); ++i)
    rows.push_back({exp.ids[i],
                    strata.labels[static_cast<std::size_t>(strata.stratum_of[i])]});
  csv::write_file(artifact_path("strata.csv"), {"unit", "stratum"}, rows);
  record_stage("stratify", inputs, {"strata.csv"});
  return {true, "wrote strata.csv (" + std::to_string(strata.n_strata()) +
                    " strata, basis " + basis + ")"};
}

Pipeline::StageOutcome Pipeline::stage_pair() {
  const std::string exp_path = require_artifact("experiment.csv", "ingest");
  const std::string strata_path = require_artifact("strata.csv", "stratify");
  if (up_to_date("pair", {exp_path, strata_path})) return {false, ""};

  const LoadedExperiment loaded = load_from(exp_path, config_);
  const Experiment& exp = loaded.experiment;
  const csv::Table table = csv::read_file(strata_path);
  const int u = table.column_index("unit"), s = table.column_index("stratum");
  if (u < 0 || s < 0)
    throw ValidationError("strata.csv needs columns unit,stratum");
  std::map<std::string, std::string> stratum_of;
  for (const auto& row : table.rows)
    stratum_of[row[static_cast<std::size_t>(u)]] = row[static_cast<std::size_t>(s)];
  std::vector<std::string> labels;
  labels.reserve(exp.n());
  for (const auto& id : exp.ids) {
    auto it = stratum_of.find(id);
    if (it == stratum_of.end())
      throw ValidationError("strata.csv is missing unit '" + id + "'");
    labels.push_back(it->second);
  }
  const StratumAssignment strata = stratify_by_labels(labels);

  const std::vector<QuestionSpec> questions = questions_from(config_);
  std::vector<std::string> question_ids;
  for (const auto& q : questions) question_ids.push_back(q.id);

  PairPlanOptions options;
  const nlohmann::json section = effective_section("pairs");
  options.max_pairs_per_stratum = section.value("max_per_stratum", 0);
  options.ordered = section.value("ordered", false);

  const PairPlan plan =
      plan_pairs(strata, question_ids, mix_seed(master_seed(), 0x70616972), options);
  write_pair_plan_csv(artifact_path("pair_plan.csv"), plan, exp, strata);
  record_stage("pair", {exp_path, strata_path}, {"pair_plan.csv"});

  std::ostringstream msg;
  msg << "wrote pair_plan.csv (" << plan.pairs.size() << " pairs";
  if (options.ordered) msg << ", ordered mode";
  msg << ")";
  for (const auto& w : plan.warnings) msg << "; warning: " << w;
  return {true, msg.str()};
}

namespace {

struct PlanOnDisk {
  PairPlan plan;
  StratumAssignment strata;  // labels only as read back
};

PlanOnDisk read_pair_plan(const std::string& path, const Experiment& exp,
                          const std::vector<std::string>& question_ids, bool ordered) {
  const csv::Table table = csv::read_file(path);
  const int a = table.column_index("unit_a"), b = table.column_index("unit_b"),
            s = table.column_index("stratum"), pr = table.column_index("presentation");
  if (a < 0 || b < 0 || s < 0 || pr < 0)
    throw ValidationError("pair_plan.csv needs columns unit_a,unit_b,stratum,presentation");
  std::map<std::string, int> index_of;
  for (std::size_t i = 0; i < exp.ids.size(); ++i)
    index_of[exp.ids[i]] = static_cast<int>(i);
  PlanOnDisk out;
  out.plan.question_ids = question_ids;
  out.plan.ordered = ordered;
  for (const auto& row : table.rows) {
    PlannedPair p;
    auto ia = index_of.find(row[static_cast<std::size_t>(a)]);
    auto ib = index_of.find(row[static_cast<std::size_t>(b)]);
    if (ia == index_of.end() || ib == index_of.end())
      throw ValidationError("pair_plan.csv references an unknown unit id");
    p.unit_a = ia->second;
    p.unit_b = ib->second;
    const std::string& label = row[static_cast<std::size_t>(s)];
    auto it = std::find(out.strata.labels.begin(), out.strata.labels.end(), label);
    if (it == out.strata.labels.end()) {
      p.stratum = static_cast<int>(out.strata.labels.size());
      out.strata.labels.push_back(label);
    } else {
      p.stratum = static_cast<int>(it - out.strata.labels.begin());
    }
    p.presentation = row[static_cast<std::size_t>(pr)] == "b_first"
                         ? Presentation::BFirst
                         : Presentation::AFirst;
    out.plan.pairs.push_back(p);
  }
  return out;
}

}  // namespace

Pipeline::StageOutcome Pipeline::stage_query() {
  const std::string exp_path = require_artifact("experiment.csv", "ingest");
  const std::string plan_path = require_artifact("pair_plan.csv", "pair");
  if (up_to_date("query", {exp_path, plan_path})) return {false, ""};

  const LoadedExperiment loaded = load_from(exp_path, config_);
  const Experiment& exp = loaded.experiment;
  const std::vector<QuestionSpec> questions = questions_from(config_);
  std::vector<std::string> question_ids;
  for (const auto& q : questions) question_ids.push_back(q.id);
  const bool ordered = effective_section("pairs").value("ordered", false);
  const PlanOnDisk plan = read_pair_plan(plan_path, exp, question_ids, ordered);
  const PromptTemplate tmpl = prompt_template_from(config_, exp);

  const nlohmann::json provider_section = effective_section("provider");
  const std::string kind = provider_section.value("kind", "mock");

  AskOptions ask;
  ask.max_in_flight = provider_section.value("max_in_flight", 1);
  ask.requests_per_minute = provider_section.value("requests_per_minute", 0.0);
  ask.noun_synonyms = noun_synonyms_from(config_);

  std::unique_ptr<Provider> provider;
  if (kind == "mock") {
    MockConfig mock;
    const nlohmann::json m = provider_section.contains("mock")
                                 ? provider_section.at("mock")
                                 : nlohmann::json::object();
    mock.noise_scale = m.value("noise_scale", 0.0);
    mock.refusal_rate = m.value("refusal_rate", 0.0);
    mock.seed = mix_seed(master_seed(), 0x6d6f636b);
    if (!m.contains("latent_columns"))
      throw ValidationError("mock provider needs provider.mock.latent_columns "
                            "mapping a quality (or \"default\") to a data column");
    const csv::Table raw = csv::read_file(exp_path);
    for (const auto& [quality, column] : m.at("latent_columns").items()) {
      const int idx = raw.column_index(column.get<std::string>());
      if (idx < 0)
        throw ValidationError("latent column '" + column.get<std::string>() +
                              "' not found in experiment.csv");
      std::vector<double> values;
      values.reserve(raw.rows.size());
      for (const auto& row : raw.rows)
        values.push_back(csv::parse_number(row[static_cast<std::size_t>(idx)],
                                           "latent column " + column.get<std::string>()));
      mock.latents[quality] = std::move(values);
    }
    provider = std::make_unique<MockProvider>(std::move(mock));
  } else if (kind == "http") {
    HttpConfig http;
    const nlohmann::json h = provider_section.contains("http")
                                 ? provider_section.at("http")
                                 : nlohmann::json::object();
    http.endpoint = h.value("endpoint", http.endpoint);
    http.model = h.value("model", http.model);
    http.api_key_env = h.value("api_key_env", http.api_key_env);
    http.temperature = h.value("temperature", 0.0);
    http.system_message = h.value("system_message", tmpl.system_message);
    // --live must come from the command line, not the config file
    http.live = overrides_.contains("provider") &&
                overrides_.at("provider").value("live", false);
    provider = std::make_unique<HttpChatProvider>(std::move(http));
  } else {
    throw ValidationError("provider kind must be mock|http, got '" + kind + "'");
  }

  const std::string cache_path =
      provider_section.value("cache_path", artifact_path("cache.jsonl"));
  ResponseCache cache(cache_path);
  AskEngine engine(*provider, &cache, ask);
  const std::vector<PairComparison> comparisons =
      engine.run(plan.plan, questions, tmpl, exp);
  write_comparisons_csv(artifact_path("comparisons.csv"), comparisons, exp);
  record_stage("query", {exp_path, plan_path}, {"comparisons.csv"});

  std::size_t invalid = 0, retried = 0;
  for (const auto& c : comparisons) {
    if (c.verdict == Verdict::Invalid) ++invalid;
    if (c.attempts > 1) ++retried;
  }
  std::ostringstream msg;
  msg << "wrote comparisons.csv (" << comparisons.size() << " judgments, "
      << engine.provider_calls() << " provider calls, " << engine.cache_hits()
      << " cache hits, " << retried << " retried, " << invalid << " invalid)";
  return {true, msg.str()};
}

Pipeline::StageOutcome Pipeline::stage_score() {
  const std::string exp_path = require_artifact("experiment.csv", "ingest");
  const std::string comp_path = require_artifact("comparisons.csv", "query");
  if (up_to_date("score", {exp_path, comp_path})) return {false, ""};

  const LoadedExperiment loaded = load_from(exp_path, config_);
  const Experiment& exp = loaded.experiment;
  const bool ordered = effective_section("pairs").value("ordered", false);
  const std::vector<PairComparison> comparisons =
      read_comparisons_csv(comp_path, exp);
  const PairScoreSet scores = aggregate_scores(comparisons, exp.n(), ordered);
  write_scores_csv(artifact_path("pair_scores.csv"), scores, exp);
  record_stage("score", {exp_path, comp_path}, {"pair_scores.csv"});

  std::size_t never_compared = 0;
  for (const auto& [q, perf] : scores.performed)
    for (int c : perf)
      if (c == 0) ++never_compared;
  std::ostringstream msg;
  msg << "wrote pair_scores.csv (" << scores.score.size() << " qualities";
  if (never_compared > 0)
    msg << ", " << never_compared
        << " unit/quality cells with zero comparisons -> missing scores";
  msg << ")";
  return {true, msg.str()};
}

namespace {

struct ExtrasBundle {
  std::vector<ExtraColumn> columns;
  std::vector<std::string> implicit;  // names added to every recipe (oob)
  std::map<std::string, std::vector<std::string>> question_columns;
};

ExtrasBundle collect_extras(const Pipeline& pipeline, const Experiment& exp,
                            const nlohmann::json& config, bool need_scores) {
  ExtrasBundle bundle;
  const std::string scores_path = pipeline.artifact_path("pair_scores.csv");
  if (fs::exists(scores_path)) {
    const PairScoreSet scores = read_scores_csv(scores_path, exp);
    for (auto& col : scores.to_extra_columns()) bundle.columns.push_back(std::move(col));
    // map question id -> its score columns
    if (config.contains("questions")) {
      for (const auto& q : config.at("questions")) {
        std::vector<std::string> cols;
        if (q.value("mode", "single_quality") == "single_quality") {
          cols.push_back("pair_score_" +
                         sanitize_column_token(q.at("id").get<std::string>()));
        } else if (q.contains("qualities")) {
          for (const auto& quality : q.at("qualities"))
            cols.push_back("pair_score_" +
                           sanitize_column_token(quality.get<std::string>()));
        }
        bundle.question_columns[q.at("id").get<std::string>()] = cols;
      }
    }
  } else if (need_scores) {
    throw ValidationError("missing upstream artifact 'pair_scores.csv'; run the "
                          "'score' stage first");
  }

  const std::string initial_path = pipeline.artifact_path("initial_model.csv");
  const bool include_oob =
      !config.contains("estimate") ||
      config.at("estimate").value("include_initial_oob", true);
  if (fs::exists(initial_path) && include_oob) {
    ExtraColumn oob;
    oob.name = "oob_prediction";
    oob.values = read_initial_predictions(initial_path, exp);
    bundle.columns.push_back(std::move(oob));
    bundle.implicit.push_back("oob_prediction");
  }
  return bundle;
}

std::vector<CovariateRecipe> recipes_from(const nlohmann::json& config,
                                          const ExtrasBundle& bundle) {
  std::vector<CovariateRecipe> recipes;
  auto resolve = [&](const std::string& token) {
    std::vector<std::string> out;
    if (token.rfind("question:", 0) == 0) {
      const std::string id = token.substr(9);
      auto it = bundle.question_columns.find(id);
      if (it == bundle.question_columns.end())
        throw ValidationError("recipe references question '" + id +
                              "' but no pair scores are available; run the "
                              "'score' stage first");
      out = it->second;
    } else {
      out.push_back(token);
    }
    return out;
  };

  if (config.contains("recipes")) {
    for (const auto& r : config.at("recipes")) {
      CovariateRecipe recipe;
      recipe.label = r.at("label").get<std::string>();
      for (const auto& token : r.at("extras"))
        for (auto& name : resolve(token.get<std::string>()))
          recipe.extra_names.push_back(std::move(name));
      recipes.push_back(std::move(recipe));
    }
  } else {
    recipes.push_back({"base", {}});
    std::vector<std::string> all;
    for (const auto& [qid, cols] : bundle.question_columns) {
      recipes.push_back({"base+" + sanitize_column_token(qid), cols});
      all.insert(all.end(), cols.begin(), cols.end());
    }
    if (bundle.question_columns.size() > 1) recipes.push_back({"base+all", all});
  }
  // the implicit extras (initial OOB predictions) join every recipe
  for (auto& recipe : recipes)
    recipe.extra_names.insert(recipe.extra_names.begin(), bundle.implicit.begin(),
                              bundle.implicit.end());
  return recipes;
}

}  // namespace

Pipeline::StageOutcome Pipeline::stage_estimate() {
  const std::string exp_path = require_artifact("experiment.csv", "ingest");
  std::vector<std::string> inputs{exp_path};
  const std::string scores_path = artifact_path("pair_scores.csv");
  if (fs::exists(scores_path)) inputs.push_back(scores_path);
  const std::string initial_path = artifact_path("initial_model.csv");
  if (fs::exists(initial_path)) inputs.push_back(initial_path);
  if (up_to_date("estimate", inputs)) return {false, ""};

  const LoadedExperiment loaded = load_from(exp_path, config_);
  const Experiment& exp = loaded.experiment;
  const ExtrasBundle bundle = collect_extras(*this, exp, config_, false);
  const std::vector<CovariateRecipe> recipes = recipes_from(config_, bundle);
  const CovariateRecipe* chosen = &recipes.back();
  if (config_.contains("estimate") && config_.at("estimate").contains("recipe")) {
    const std::string want = config_.at("estimate").at("recipe").get<std::string>();
    chosen = nullptr;
    for (const auto& r : recipes)
      if (r.label == want) chosen = &r;
    if (!chosen)
      throw ValidationError("estimate.recipe '" + want + "' is not a configured recipe");
  }
  const LearnerConfig learner = LearnerConfig::from_json(
      effective_section("learner"), mix_seed(master_seed(), 0x6c726e));
  const EncodeOptions options = encode_options_from(config_);

  std::map<std::string, const ExtraColumn*> by_name;
  for (const auto& c : bundle.columns) by_name[c.name] = &c;

  std::vector<std::pair<std::string, std::vector<std::size_t>>> strata;
  if (exp.stratum.empty()) {
    std::vector<std::size_t> all(exp.n());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    strata.emplace_back("all", std::move(all));
  } else {
    for (const auto& lab : exp.stratum_labels()) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < exp.n(); ++i)
        if (exp.stratum[i] == lab) rows.push_back(i);
      strata.emplace_back(lab, std::move(rows));
    }
  }

  std::vector<StratumEstimate> results;
  for (const auto& [label, rows] : strata) {
    const Experiment sub = exp.stratum.empty() ? exp : exp.subset(rows);
    results.push_back({label, ht_estimate(sub)});

    std::vector<ExtraColumn> extras;
    for (const auto& name : chosen->extra_names) {
      auto it = by_name.find(name);
      if (it == by_name.end())
        throw ValidationError("recipe '" + chosen->label +
                              "' references absent column '" + name + "'");
      const ExtraColumn& full = *it->second;
      if (exp.stratum.empty()) {
        extras.push_back(full);
      } else {
        ExtraColumn sliced;
        sliced.name = full.name;
        for (std::size_t r : rows) {
          sliced.values.push_back(full.values[r]);
          sliced.missing.push_back(full.missing.empty() ? 0 : full.missing[r]);
        }
        extras.push_back(std::move(sliced));
      }
    }
    const AugmentedCovariates x = encode_covariates(sub, extras, options);
    Imputations imp;
    if (learner.kind == LearnerConfig::Kind::RandomForest)
      imp = rf_impute(sub, x, learner).first;
    else
      imp = loo_linear_impute(sub, x, learner);
    results.push_back({label, adjusted_estimate(sub, imp, chosen->label)});
  }

  write_estimates_csv(artifact_path("estimates.csv"), results);
  record_stage("estimate", inputs, {"estimates.csv"});
  std::ostringstream msg;
  msg << "wrote estimates.csv (" << strata.size() << " strata, recipe '"
      << chosen->label << "')";
  return {true, msg.str()};
}

Pipeline::StageOutcome Pipeline::stage_evaluate() {
  const std::string exp_path = require_artifact("experiment.csv", "ingest");
  const std::string scores_path = require_artifact("pair_scores.csv", "score");
  std::vector<std::string> inputs{exp_path, scores_path};
  const std::string initial_path = artifact_path("initial_model.csv");
  if (fs::exists(initial_path)) inputs.push_back(initial_path);
  if (up_to_date("evaluate", inputs)) return {false, ""};

  const LoadedExperiment loaded = load_from(exp_path, config_);
  const Experiment& exp = loaded.experiment;
  const EncodeOptions options = encode_options_from(config_);
  const ExtrasBundle bundle = collect_extras(*this, exp, config_, true);
  const std::vector<CovariateRecipe> recipes = recipes_from(config_, bundle);
  const LearnerConfig learner = LearnerConfig::from_json(
      effective_section("learner"), mix_seed(master_seed(), 0x6c726e));

  // significance screen: base covariates (+ initial OOB predictions) +
  // treatment + every LLM score column, pooled over strata
  std::vector<ExtraColumn> base_extras, llm_columns;
  for (const auto& c : bundle.columns) {
    const bool implicit = std::find(bundle.implicit.begin(), bundle.implicit.end(),
                                    c.name) != bundle.implicit.end();
    (implicit ? base_extras : llm_columns).push_back(c);
  }
  if (llm_columns.empty())
    throw ValidationError("evaluate: no pair-score columns found in pair_scores.csv");
  const AugmentedCovariates base = encode_covariates(exp, base_extras, options);
  const std::vector<SignificanceReport> significance =
      significance_test(exp, base, llm_columns, options);
  write_significance_csv(artifact_path("significance.csv"), significance);

  const ComparisonReport report =
      compare_models(exp, bundle.columns, recipes, learner, options);
  write_comparison_csv(artifact_path("comparison.csv"), report);
  {
    std::ofstream txt(artifact_path("comparison.txt"));
    txt << format_comparison_text(report);
  }
  record_stage("evaluate", inputs,
               {"significance.csv", "comparison.csv", "comparison.txt"});

  std::ostringstream msg;
  msg << "wrote significance.csv, comparison.csv, comparison.txt;";
  for (const auto& rep : significance)
    msg << " " << rep.covariate << " p=" << format_double(rep.p_value)
        << (rep.p_value < 0.05 ? " (significant)" : " (not significant)");
  return {true, msg.str()};
}

Pipeline::StageOutcome Pipeline::stage_simulate() {
  const nlohmann::json section = effective_section("simulate");
  const int replications = section.value("replications", 2000);
  const int ess_replications = section.value("ess_replications", 200);
  const int threads = section.value("threads",
                                    static_cast<int>(std::thread::hardware_concurrency()));
  if (up_to_date("simulate", {})) return {false, ""};

  const SuiteResult suite = run_default_suite(master_seed(), std::max(1, threads),
                                              replications, ess_replications);
  write_mc_report_csv(artifact_path("mc_report.csv"), suite);
  record_stage("simulate", {}, {"mc_report.csv"});

  std::ostringstream msg;
  msg << "wrote mc_report.csv (" << suite.rows.size() << " estimator rows; "
      << "informative-mock mean ESS " << format_double(suite.informative.mean_ess)
      << ", noise-mock mean ESS " << format_double(suite.noise.mean_ess) << ")";
  return {true, msg.str()};
}

}  // namespace pairadjust
