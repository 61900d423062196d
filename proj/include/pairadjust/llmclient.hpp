#ifndef PAIRADJUST_LLMCLIENT_HPP
#define PAIRADJUST_LLMCLIENT_HPP

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pairadjust/dataset.hpp"
#include "pairadjust/pairing.hpp"

namespace pairadjust {

struct QuestionSpec {
  enum class Mode { SingleQuality, MultiQuality };
  std::string id;
  std::string target_description;  // e.g. "is more likely to be cited"
  Mode mode = Mode::SingleQuality;
  std::vector<std::string> qualities;  // multi-quality only, >= 2 distinct

  void validate() const;
};

struct SentenceTemplate {
  std::string text;     // contains {value}
  std::string subject;  // used with the missing phrase; "" -> "Their <name>"
};

// Covariates are written out in sentence form; a missing value still yields
// a sentence ("<subject> is unknown") instead of being omitted.
struct PromptTemplate {
  std::string noun = "observation";
  std::string preamble;  // "" -> built from noun
  std::map<std::string, SentenceTemplate> sentences;  // covariate/text name -> template
  std::string missing_phrase = "is unknown";
  std::string answer_instruction;  // "" -> built from noun and question mode
  std::string system_message = "You are a careful research assistant.";
};

// Generic full-coverage sentences ("Their <name> is {value}.") for every
// covariate and text field of the experiment.
PromptTemplate default_prompt_template(const Experiment& experiment);

std::string render_prompt(const PromptTemplate& tmpl, const QuestionSpec& question,
                          const Experiment& experiment, int first_unit,
                          int second_unit);

// Case-insensitive, punctuation-tolerant match of "<noun> 1" / "<noun> 2".
// Mentions of both, or neither, are Invalid.
Verdict parse_verdict(const std::string& raw, const std::vector<std::string>& nouns);
// One verdict per quality from enumerated lines ("3: observation 1");
// unmatched qualities are Invalid individually.
std::vector<Verdict> parse_multi_verdict(const std::string& raw,
                                         const std::vector<std::string>& qualities,
                                         const std::vector<std::string>& nouns);

struct CompletionRequest {
  std::string prompt;
  int attempt = 1;
  int first_unit = -1;
  int second_unit = -1;
  const QuestionSpec* question = nullptr;
  std::string noun;
};

struct CompletionResult {
  bool ok = false;
  std::string text;
  std::string error;
  bool retryable = false;  // transport-level failure worth a backoff retry
};

class Provider {
public:
  virtual ~Provider() = default;
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
  virtual std::string model_name() const = 0;
};

struct MockConfig {
  std::map<std::string, std::vector<double>> latents;  // quality (or "default") -> per-unit
  double noise_scale = 0.0;  // 0 -> deterministic argmax, ties to the first
  double refusal_rate = 0.0;  // per attempt, independent
  std::uint64_t seed = 0;
};

// Deterministic stand-in for a chat model: picks the presented-first unit
// with probability logistic((latent_first - latent_second)/noise_scale).
// Randomness derives from (seed, prompt, attempt), so results are identical
// under any scheduling.
class MockProvider : public Provider {
public:
  explicit MockProvider(MockConfig config);
  CompletionResult complete(const CompletionRequest& request) override;
  std::string model_name() const override { return "mock"; }

private:
  double latent_for(const std::string& quality, int unit) const;
  MockConfig config_;
};

struct HttpConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  std::string system_message;
  bool live = false;  // must be set explicitly (--live)
  int timeout_seconds = 120;
};

// OpenAI-compatible chat-completions client. Construction refuses to
// proceed unless `live` was set; the API key is read from the named
// environment variable and never logged.
class HttpChatProvider : public Provider {
public:
  explicit HttpChatProvider(HttpConfig config);
  CompletionResult complete(const CompletionRequest& request) override;
  std::string model_name() const override { return config_.model; }

private:
  HttpConfig config_;
  std::string api_key_;
};

struct CacheRecord {
  std::string key;  // digest of (model, prompt)
  std::string model;
  std::string prompt;
  std::vector<std::string> responses;  // one per attempt
  int attempts = 1;
  std::string timestamp;
};

// Append-only JSONL cache; identical (model, prompt) returns the stored
// record without a provider call.
class ResponseCache {
public:
  explicit ResponseCache(std::string path);
  std::optional<CacheRecord> lookup(const std::string& key) const;
  void store(const CacheRecord& record);
  std::size_t size() const;
  const std::string& path() const { return path_; }

  static std::string make_key(const std::string& model, const std::string& prompt);

private:
  std::string path_;
  mutable std::mutex mutex_;
  std::map<std::string, CacheRecord> records_;
};

struct AskOptions {
  int max_in_flight = 1;
  double requests_per_minute = 0.0;  // 0 -> unlimited
  int transport_retries = 3;
  int backoff_base_ms = 250;
  std::vector<std::string> noun_synonyms;  // accepted beside the template noun
};

// Drives a PairPlan through a provider: cache first, one retry of the
// identical prompt on refusal, per-quality verdicts for multi-quality
// questions. Results depend only on (plan, questions, template, provider
// state), not on concurrency or arrival order.
class AskEngine {
public:
  AskEngine(Provider& provider, ResponseCache* cache, AskOptions options);

  std::vector<PairComparison> run(const PairPlan& plan,
                                  const std::vector<QuestionSpec>& questions,
                                  const PromptTemplate& tmpl,
                                  const Experiment& experiment);

  std::size_t provider_calls() const { return provider_calls_; }
  std::size_t cache_hits() const { return cache_hits_; }

private:
  std::vector<PairComparison> run_task(const PlannedPair& pair,
                                       const QuestionSpec& question,
                                       const PromptTemplate& tmpl,
                                       const Experiment& experiment);
  std::string complete_with_backoff(const CompletionRequest& request);

  Provider& provider_;
  ResponseCache* cache_;
  AskOptions options_;
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::mutex limiter_mutex_;
  double tokens_ = 0.0;
  std::chrono::steady_clock::time_point last_refill_{};
  void acquire_token();
};

}  // namespace pairadjust

#endif  // PAIRADJUST_LLMCLIENT_HPP
