#include "pairadjust/llmclient.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pairadjust/common.hpp"

namespace pairadjust {

void QuestionSpec::validate() const {
  if (id.empty()) throw ValidationError("question id must be non-empty");
  if (mode == Mode::MultiQuality) {
    if (qualities.size() < 2)
      throw ValidationError("multi-quality question '" + id +
                            "' needs at least 2 qualities");
    std::set<std::string> distinct(qualities.begin(), qualities.end());
    if (distinct.size() != qualities.size())
      throw ValidationError("multi-quality question '" + id +
                            "' lists a quality twice");
  } else if (target_description.empty()) {
    throw ValidationError("question '" + id + "' needs a target_description");
  }
}

PromptTemplate default_prompt_template(const Experiment& experiment) {
  PromptTemplate t;
  for (const auto& c : experiment.covariates)
    t.sentences[c.name] = {"Their " + c.name + " is {value}.", "Their " + c.name};
  for (const auto& [name, vals] : experiment.text_fields) {
    (void)vals;
    t.sentences[name] = {"Their " + name + " is: {value}", "Their " + name};
  }
  return t;
}

namespace {

std::string substitute(const std::string& tmpl, const std::string& value) {
  std::string out = tmpl;
  const std::string slot = "{value}";
  std::size_t pos;
  while ((pos = out.find(slot)) != std::string::npos)
    out.replace(pos, slot.size(), value);
  return out;
}

std::string render_unit(const PromptTemplate& tmpl, const Experiment& exp, int unit,
                        int ordinal) {
  std::ostringstream out;
  std::string noun_cap = tmpl.noun;
  if (!noun_cap.empty())
    noun_cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(noun_cap[0])));
  out << noun_cap << " " << ordinal << ": ";
  const auto row = static_cast<std::size_t>(unit);
  bool first = true;
  auto emit = [&](const std::string& name, const std::optional<std::string>& value) {
    auto it = tmpl.sentences.find(name);
    if (it == tmpl.sentences.end())
      throw ValidationError("covariate '" + name + "' lacks a sentence template");
    if (!first) out << " ";
    first = false;
    if (value) {
      out << substitute(it->second.text, *value);
    } else {
      const std::string subject =
          it->second.subject.empty() ? "Their " + name : it->second.subject;
      out << subject << " " << tmpl.missing_phrase << ".";
    }
  };
  for (const auto& c : exp.covariates) emit(c.name, c.display(row));
  for (const auto& [name, vals] : exp.text_fields) {
    const std::string& v = vals[row];
    emit(name, v.empty() ? std::nullopt : std::optional<std::string>(v));
  }
  return out.str();
}

}  // namespace

std::string render_prompt(const PromptTemplate& tmpl, const QuestionSpec& question,
                          const Experiment& experiment, int first_unit,
                          int second_unit) {
  question.validate();
  if (first_unit == second_unit)
    throw ValidationError("cannot compare a unit with itself");
  std::ostringstream out;
  if (!tmpl.preamble.empty())
    out << tmpl.preamble << "\n\n";
  else
    out << "We have information about two " << tmpl.noun << "s.\n\n";
  out << render_unit(tmpl, experiment, first_unit, 1) << "\n\n";
  out << render_unit(tmpl, experiment, second_unit, 2) << "\n\n";

  if (question.mode == QuestionSpec::Mode::SingleQuality) {
    out << "Which " << tmpl.noun << " " << question.target_description << "?\n";
    if (!tmpl.answer_instruction.empty())
      out << tmpl.answer_instruction;
    else
      out << "Respond with either \"" << tmpl.noun << " 1\" or \"" << tmpl.noun
          << " 2\".";
  } else {
    out << "Consider the following qualities:\n";
    for (std::size_t q = 0; q < question.qualities.size(); ++q)
      out << (q + 1) << ". " << question.qualities[q] << "\n";
    out << "\n";
    if (!tmpl.answer_instruction.empty())
      out << tmpl.answer_instruction;
    else
      out << "For each quality, respond with the " << tmpl.noun
          << " that best exhibits it. Answer with one line per quality, "
             "formatted like \"1: "
          << tmpl.noun << " 1\" or \"2: " << tmpl.noun << " 2\".";
  }
  return out.str();
}

namespace {

std::string normalize(const std::string& s) {
  std::string out = " ";
  for (unsigned char c : s) {
    if (std::isalnum(c))
      out += static_cast<char>(std::tolower(c));
    else if (out.back() != ' ')
      out += ' ';
  }
  if (out.back() != ' ') out += ' ';
  return out;
}

Verdict parse_one(const std::string& normalized, const std::vector<std::string>& nouns) {
  bool first = false, second = false;
  for (const auto& noun : nouns) {
    const std::string n = normalize(noun);
    const std::string base = n.substr(1, n.size() - 1);  // keep trailing space
    if (normalized.find(" " + base + "1 ") != std::string::npos) first = true;
    if (normalized.find(" " + base + "2 ") != std::string::npos) second = true;
  }
  if (first && !second) return Verdict::First;
  if (second && !first) return Verdict::Second;
  return Verdict::Invalid;
}

}  // namespace

Verdict parse_verdict(const std::string& raw, const std::vector<std::string>& nouns) {
  if (nouns.empty()) throw ValidationError("parse_verdict needs at least one noun");
  return parse_one(normalize(raw), nouns);
}

std::vector<Verdict> parse_multi_verdict(const std::string& raw,
                                         const std::vector<std::string>& qualities,
                                         const std::vector<std::string>& nouns) {
  std::vector<Verdict> out(qualities.size(), Verdict::Invalid);
  std::vector<bool> assigned(qualities.size(), false);
  std::istringstream lines(raw);
  std::string line;
  while (std::getline(lines, line)) {
    const std::string norm = normalize(line);
    if (norm.size() <= 1) continue;
    // leading index ("3: ...") wins; otherwise match the quality by name
    std::size_t idx = qualities.size();
    std::istringstream head(norm);
    long lead;
    if (head >> lead && lead >= 1 &&
        lead <= static_cast<long>(qualities.size())) {
      // make sure the number is a label, not the verdict itself ("1: ...")
      idx = static_cast<std::size_t>(lead - 1);
    } else {
      for (std::size_t q = 0; q < qualities.size(); ++q) {
        const std::string qn = normalize(qualities[q]);
        if (norm.find(qn) != std::string::npos) {
          idx = q;
          break;
        }
      }
    }
    if (idx >= qualities.size() || assigned[idx]) continue;
    // strip the leading label so "1:" is not mistaken for "<noun> 1"
    std::string rest = line;
    const std::size_t colon = rest.find_first_of(":.)-");
    if (colon != std::string::npos) rest = rest.substr(colon + 1);
    const Verdict v = parse_one(normalize(rest), nouns);
    if (v != Verdict::Invalid) {
      out[idx] = v;
      assigned[idx] = true;
    }
  }
  return out;
}

MockProvider::MockProvider(MockConfig config) : config_(std::move(config)) {
  if (config_.noise_scale < 0) throw ValidationError("mock noise_scale must be >= 0");
  if (config_.refusal_rate < 0 || config_.refusal_rate > 1)
    throw ValidationError("mock refusal_rate must be in [0,1]");
}

double MockProvider::latent_for(const std::string& quality, int unit) const {
  auto it = config_.latents.find(quality);
  if (it == config_.latents.end()) it = config_.latents.find("default");
  if (it == config_.latents.end())
    throw ValidationError("mock provider has no latent scores for quality '" + quality +
                          "' and no default");
  const auto& v = it->second;
  if (unit < 0 || static_cast<std::size_t>(unit) >= v.size())
    throw ValidationError("mock provider: unit " + std::to_string(unit) +
                          " has no latent score");
  const double lat = v[static_cast<std::size_t>(unit)];
  if (std::isnan(lat))
    throw ValidationError("mock provider: unit " + std::to_string(unit) +
                          " has no latent score");
  return lat;
}

CompletionResult MockProvider::complete(const CompletionRequest& request) {
  if (request.question == nullptr)
    throw ValidationError("mock provider needs the question context");
  // randomness keyed by (seed, prompt, attempt): identical under any
  // scheduling, fresh on the retry
  std::mt19937_64 rng(mix_seed(mix_seed(config_.seed, fnv1a64(request.prompt)),
                               static_cast<std::uint64_t>(request.attempt)));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  if (uniform(rng) < config_.refusal_rate)
    return {true, "I'm sorry, but I can't determine that from the information given.",
            "", false};

  std::string noun_cap = request.noun.empty() ? "Observation" : request.noun;
  noun_cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(noun_cap[0])));

  auto choose = [&](const std::string& quality) {
    const double a = latent_for(quality, request.first_unit);
    const double b = latent_for(quality, request.second_unit);
    if (config_.noise_scale == 0.0) return a >= b ? 1 : 2;
    const double p_first = 1.0 / (1.0 + std::exp(-(a - b) / config_.noise_scale));
    return uniform(rng) < p_first ? 1 : 2;
  };

  const QuestionSpec& q = *request.question;
  std::ostringstream out;
  if (q.mode == QuestionSpec::Mode::SingleQuality) {
    out << noun_cap << " " << choose(q.id);
  } else {
    for (std::size_t i = 0; i < q.qualities.size(); ++i)
      out << (i + 1) << ": " << noun_cap << " " << choose(q.qualities[i]) << "\n";
  }
  return {true, out.str(), "", false};
}

HttpChatProvider::HttpChatProvider(HttpConfig config) : config_(std::move(config)) {
  if (!config_.live)
    throw ProviderError("refusing to contact a live provider: pass --live to "
                        "confirm paid HTTP calls");
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0')
    throw ProviderError("environment variable " + config_.api_key_env +
                        " is not set; it must hold the API key");
  api_key_ = key;
}

namespace {

struct ParsedEndpoint {
  bool tls = false;
  std::string host;  // includes :port if present
  std::string path;
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  ParsedEndpoint out;
  std::string rest;
  if (endpoint.rfind("https://", 0) == 0) {
    out.tls = true;
    rest = endpoint.substr(8);
  } else if (endpoint.rfind("http://", 0) == 0) {
    rest = endpoint.substr(7);
  } else {
    throw ValidationError("endpoint must start with http:// or https://");
  }
  const std::size_t slash = rest.find('/');
  out.host = slash == std::string::npos ? rest : rest.substr(0, slash);
  out.path = slash == std::string::npos ? "/" : rest.substr(slash);
  return out;
}

}  // namespace

std::string iso_timestamp();

}  // namespace pairadjust

// cpp-httplib pulls OpenSSL only when requested; the https path needs it.
#ifdef PAIRADJUST_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace pairadjust {

CompletionResult HttpChatProvider::complete(const CompletionRequest& request) {
  const ParsedEndpoint ep = parse_endpoint(config_.endpoint);

  nlohmann::json body = {
      {"model", config_.model},
      {"messages",
       {{{"role", "system"},
         {"content", config_.system_message.empty() ? "You are a careful research assistant."
                                                    : config_.system_message}},
        {{"role", "user"}, {"content", request.prompt}}}},
      {"temperature", config_.temperature},
  };
  httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};

  auto post = [&](auto& client) -> CompletionResult {
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    auto res = client.Post(ep.path, headers, body.dump(), "application/json");
    if (!res)
      return {false, "", "transport error: " + httplib::to_string(res.error()), true};
    if (res->status == 429 || res->status >= 500)
      return {false, "", "HTTP " + std::to_string(res->status), true};
    if (res->status != 200)
      return {false, "", "HTTP " + std::to_string(res->status) + ": " + res->body, false};
    try {
      const auto j = nlohmann::json::parse(res->body);
      const std::string content = j.at("choices").at(0).at("message").at("content");
      return {true, content, "", false};
    } catch (const std::exception& e) {
      return {false, "", std::string("malformed provider response: ") + e.what(), false};
    }
  };

  if (ep.tls) {
#ifdef PAIRADJUST_HAVE_OPENSSL
    httplib::SSLClient client(ep.host);
    return post(client);
#else
    return {false, "", "built without OpenSSL; use an http:// endpoint or rebuild", false};
#endif
  }
  httplib::Client client(ep.host);
  return post(client);
}

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string ResponseCache::make_key(const std::string& model, const std::string& prompt) {
  return fnv1a64_hex(model + "\x1f" + prompt);
}

ResponseCache::ResponseCache(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;  // fresh cache
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CacheRecord rec;
      rec.key = j.at("key").get<std::string>();
      rec.model = j.value("model", "");
      rec.prompt = j.value("prompt", "");
      rec.responses = j.at("responses").get<std::vector<std::string>>();
      rec.attempts = j.at("attempts").get<int>();
      rec.timestamp = j.value("ts", "");
      records_[rec.key] = std::move(rec);
    } catch (const std::exception& e) {
      throw ValidationError("cache file " + path_ + " line " + std::to_string(lineno) +
                            " is corrupt: " + e.what());
    }
  }
}

std::optional<CacheRecord> ResponseCache::lookup(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = records_.find(key);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::store(const CacheRecord& record) {
  std::lock_guard<std::mutex> lock(mutex_);
  records_[record.key] = record;
  nlohmann::json j = {{"key", record.key},       {"model", record.model},
                      {"prompt", record.prompt}, {"responses", record.responses},
                      {"attempts", record.attempts}, {"ts", record.timestamp}};
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ValidationError("cannot append to cache file " + path_);
  out << j.dump() << "\n";
}

std::size_t ResponseCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return records_.size();
}

AskEngine::AskEngine(Provider& provider, ResponseCache* cache, AskOptions options)
    : provider_(provider), cache_(cache), options_(std::move(options)) {
  if (options_.max_in_flight < 1)
    throw ValidationError("max_in_flight must be >= 1");
  tokens_ = options_.requests_per_minute;
  last_refill_ = std::chrono::steady_clock::now();
}

void AskEngine::acquire_token() {
  if (options_.requests_per_minute <= 0) return;
  std::unique_lock<std::mutex> lock(limiter_mutex_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_refill_).count();
    tokens_ = std::min(options_.requests_per_minute,
                       tokens_ + elapsed * options_.requests_per_minute / 60.0);
    last_refill_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait_s = (1.0 - tokens_) * 60.0 / options_.requests_per_minute;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    lock.lock();
  }
}

std::string AskEngine::complete_with_backoff(const CompletionRequest& request) {
  int delay_ms = options_.backoff_base_ms;
  for (int attempt = 0;; ++attempt) {
    acquire_token();
    ++provider_calls_;
    const CompletionResult result = provider_.complete(request);
    if (result.ok) return result.text;
    if (!result.retryable || attempt >= options_.transport_retries)
      throw ProviderError("provider failed: " + result.error);
    std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    delay_ms *= 2;
  }
}

std::vector<PairComparison> AskEngine::run_task(const PlannedPair& pair,
                                                const QuestionSpec& question,
                                                const PromptTemplate& tmpl,
                                                const Experiment& experiment) {
  const int first = pair.presentation == Presentation::AFirst ? pair.unit_a : pair.unit_b;
  const int second = pair.presentation == Presentation::AFirst ? pair.unit_b : pair.unit_a;
  const std::string prompt = render_prompt(tmpl, question, experiment, first, second);
  const std::string key = ResponseCache::make_key(provider_.model_name(), prompt);

  std::vector<std::string> nouns{tmpl.noun};
  nouns.insert(nouns.end(), options_.noun_synonyms.begin(), options_.noun_synonyms.end());

  auto parse_all = [&](const std::string& text) {
    std::vector<Verdict> verdicts;
    if (question.mode == QuestionSpec::Mode::SingleQuality)
      verdicts.push_back(parse_verdict(text, nouns));
    else
      verdicts = parse_multi_verdict(text, question.qualities, nouns);
    return verdicts;
  };
  auto any_valid = [](const std::vector<Verdict>& v) {
    return std::any_of(v.begin(), v.end(),
                       [](Verdict x) { return x != Verdict::Invalid; });
  };

  CacheRecord record;
  const auto cached = cache_ ? cache_->lookup(key) : std::nullopt;
  if (cached) {
    ++cache_hits_;
    record = *cached;
  } else {
    record.key = key;
    record.model = provider_.model_name();
    record.prompt = prompt;
    // refusal or fully unparseable response: the identical prompt is
    // retried exactly once
    for (int attempt = 1; attempt <= 2; ++attempt) {
      CompletionRequest req;
      req.prompt = prompt;
      req.attempt = attempt;
      req.first_unit = first;
      req.second_unit = second;
      req.question = &question;
      req.noun = tmpl.noun;
      record.responses.push_back(complete_with_backoff(req));
      record.attempts = attempt;
      if (any_valid(parse_all(record.responses.back()))) break;
    }
    record.timestamp = iso_timestamp();
    if (cache_) cache_->store(record);  // persisted before scoring
  }

  const std::vector<Verdict> verdicts = parse_all(record.responses.back());
  std::vector<PairComparison> out;
  for (std::size_t q = 0; q < verdicts.size(); ++q) {
    PairComparison c;
    c.unit_a = pair.unit_a;
    c.unit_b = pair.unit_b;
    c.question = question.id;
    c.quality = question.mode == QuestionSpec::Mode::SingleQuality
                    ? question.id
                    : question.qualities[q];
    c.presentation = pair.presentation;
    c.verdict = verdicts[q];
    c.attempts = record.attempts;
    c.raw = record.key;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<PairComparison> AskEngine::run(const PairPlan& plan,
                                           const std::vector<QuestionSpec>& questions,
                                           const PromptTemplate& tmpl,
                                           const Experiment& experiment) {
  for (const auto& q : questions) q.validate();
  struct Task {
    const PlannedPair* pair;
    const QuestionSpec* question;
  };
  std::vector<Task> tasks;
  tasks.reserve(plan.pairs.size() * questions.size());
  for (const auto& p : plan.pairs)
    for (const auto& q : questions) tasks.push_back({&p, &q});

  std::vector<std::vector<PairComparison>> results(tasks.size());
  if (options_.max_in_flight == 1 || tasks.size() < 2) {
    for (std::size_t t = 0; t < tasks.size(); ++t)
      results[t] = run_task(*tasks[t].pair, *tasks[t].question, tmpl, experiment);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&]() {
      for (;;) {
        const std::size_t t = next.fetch_add(1);
        if (t >= tasks.size()) return;
        {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (error) return;
        }
        try {
          results[t] = run_task(*tasks[t].pair, *tasks[t].question, tmpl, experiment);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(options_.max_in_flight,
                                        static_cast<int>(tasks.size()));
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }

  std::vector<PairComparison> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

}  // namespace pairadjust
