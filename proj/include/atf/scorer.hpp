#pragma once

#include <httplib.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/hash.hpp"
#include "atf/http_util.hpp"
#include "atf/prompter.hpp"
#include "atf/random.hpp"
#include "atf/text.hpp"

namespace atf {

using Continuations = std::array<std::string, 2>;  // {positive, negative}

inline Continuations default_continuations() { return {" Yes", " No"}; }

/// Log-probabilities of the two continuations as reported by a model.
/// A missing entry means the endpoint did not return that token.
struct TokenLogprobs {
  std::optional<double> positive;
  std::optional<double> negative;
  std::string model;
};

/// Anything that can report continuation log-probabilities for a prompt.
/// Implementations must be safe to call from several threads at once.
/// Throw TransientError for retryable failures and FatalEndpointError for
/// ones that should abort the batch.
class ScorerEndpoint {
 public:
  virtual ~ScorerEndpoint() = default;
  virtual TokenLogprobs logprobs(const std::string& prompt, const Continuations& continuations) = 0;
  virtual std::string id() const = 0;
};

struct ScoreResult {
  std::string query_id;
  double logprob_yes = 0.0;
  double logprob_no = 0.0;
  double p_yes = 0.0;
  double p_no = 0.0;
  double score = 0.0;  // p_yes / (p_yes + p_no)
  Label predicted = Label::negative;
  std::string model_id;
  double latency_ms = 0.0;
  bool valid = false;
  std::string error;
};

/// Normalized two-token result. Prediction is positive only when the
/// positive token is strictly more likely.
inline ScoreResult make_score(std::string query_id, double logprob_yes, double logprob_no,
                              std::string model) {
  ScoreResult r;
  r.query_id = std::move(query_id);
  r.model_id = std::move(model);
  r.logprob_yes = logprob_yes;
  r.logprob_no = logprob_no;
  r.p_yes = std::exp(logprob_yes);
  r.p_no = std::exp(logprob_no);
  // A log-probability may be -inf (zero mass) but not NaN or +inf, and at
  // least one side must carry mass.
  auto usable = [](double lp) { return !std::isnan(lp) && lp != HUGE_VAL; };
  if (!usable(logprob_yes) || !usable(logprob_no) || (std::isinf(logprob_yes) && std::isinf(logprob_no))) {
    r.error = "degenerate token probabilities";
    return r;
  }
  r.score = 1.0 / (1.0 + std::exp(logprob_no - logprob_yes));
  r.predicted = logprob_yes > logprob_no ? Label::positive : Label::negative;
  r.valid = true;
  return r;
}

inline ScoreResult make_score_from_probabilities(std::string query_id, double p_yes, double p_no,
                                                 std::string model) {
  return make_score(std::move(query_id), std::log(p_yes), std::log(p_no), std::move(model));
}

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{100};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{10'000};
};

/// Persistent prompt-keyed result cache: an append-only JSONL file in
/// `dir`, loaded on open. Concurrent reads; writes are serialized.
class ScoreCache {
 public:
  explicit ScoreCache(std::filesystem::path dir) : path_(std::move(dir) / "scores.jsonl") {
    std::filesystem::create_directories(path_.parent_path());
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        entries_[j.at("key").get<std::string>()] = {j.at("lp_yes").get<double>(),
                                                     j.at("lp_no").get<double>(),
                                                     j.at("model").get<std::string>()};
      } catch (const nlohmann::json::exception&) {
        // a torn trailing write from an interrupted run; skip it
      }
    }
  }

  static std::string key(const std::string& endpoint_id, const Continuations& c,
                         const std::string& prompt) {
    std::string material = endpoint_id;
    for (const auto& s : {c[0], c[1], prompt}) {
      material.push_back('\0');
      material += s;
    }
    return sha256_hex(material);
  }

  struct Entry {
    double logprob_yes;
    double logprob_no;
    std::string model;
  };

  std::optional<Entry> get(const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& key, const Entry& e) {
    std::unique_lock lock(mu_);
    if (!entries_.emplace(key, e).second) return;
    std::ofstream out(path_, std::ios::app);
    nlohmann::json j{{"key", key}, {"lp_yes", e.logprob_yes}, {"lp_no", e.logprob_no}, {"model", e.model}};
    out << j.dump() << '\n';
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
};

struct ScoreOptions {
  Continuations continuations = default_continuations();
  RetryPolicy retry;
  ScoreCache* cache = nullptr;
};

/// Score one prompt. Transport failures are retried with exponential
/// backoff; after the last attempt the TransientError propagates. A
/// response missing a token probability yields an invalid result.
inline ScoreResult score(const PromptSpec& prompt, ScorerEndpoint& endpoint,
                         const ScoreOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  std::string cache_key;
  if (options.cache) {
    cache_key = ScoreCache::key(endpoint.id(), options.continuations, prompt.rendered);
    if (auto hit = options.cache->get(cache_key)) {
      auto r = make_score(prompt.query_id, hit->logprob_yes, hit->logprob_no, hit->model);
      r.latency_ms = elapsed_ms();
      return r;
    }
  }

  auto delay = options.retry.initial_backoff;
  TokenLogprobs lp;
  for (int attempt = 1;; ++attempt) {
    try {
      lp = endpoint.logprobs(prompt.rendered, options.continuations);
      break;
    } catch (const TransientError& e) {
      if (attempt >= options.retry.max_attempts)
        throw TransientError("scorer", "gave up after " + std::to_string(attempt) +
                                           " attempts: " + e.what());
      std::this_thread::sleep_for(delay);
      delay = std::min(options.retry.max_backoff,
                       std::chrono::milliseconds(static_cast<long long>(
                           static_cast<double>(delay.count()) * options.retry.multiplier)));
    }
  }

  if (!lp.positive || !lp.negative) {
    ScoreResult r;
    r.query_id = prompt.query_id;
    r.model_id = lp.model;
    r.error = "endpoint returned no probability for a continuation";
    r.latency_ms = elapsed_ms();
    return r;
  }
  auto r = make_score(prompt.query_id, *lp.positive, *lp.negative, lp.model);
  r.latency_ms = elapsed_ms();
  if (options.cache && r.valid) options.cache->put(cache_key, {*lp.positive, *lp.negative, lp.model});
  return r;
}

struct BatchScores {
  std::vector<ScoreResult> results;  // input order
  std::size_t invalid = 0;
  std::vector<std::string> warnings;
};

/// Score `prompts` with at most `max_in_flight` outstanding requests.
/// Per-item failures produce invalid results; a FatalEndpointError aborts
/// the batch and is rethrown.
inline BatchScores score_batch(const std::vector<PromptSpec>& prompts, ScorerEndpoint& endpoint,
                               int max_in_flight, const ScoreOptions& options = {}) {
  if (max_in_flight < 1) throw PreconditionError("scorer", "max_in_flight must be >= 1");
  BatchScores out;
  out.results.resize(prompts.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mu;

  auto worker = [&] {
    while (!abort.load()) {
      const auto i = next.fetch_add(1);
      if (i >= prompts.size()) return;
      try {
        out.results[i] = score(prompts[i], endpoint, options);
      } catch (const FatalEndpointError&) {
        std::lock_guard lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      } catch (const std::exception& e) {
        auto& r = out.results[i];
        r.query_id = prompts[i].query_id;
        r.valid = false;
        r.error = e.what();
      }
    }
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), prompts.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  for (const auto& r : out.results) {
    if (r.valid) continue;
    ++out.invalid;
    out.warnings.push_back("query '" + r.query_id + "' excluded: " + r.error);
  }
  return out;
}

/// HTTP client for the scoring protocol:
///   POST {"prompt": str, "continuations": [str, str]}
///   <- {"logprobs": [float|null, float|null], "model": str}
class HttpScorerEndpoint : public ScorerEndpoint {
 public:
  HttpScorerEndpoint(const std::string& url, std::string token = {},
                     std::chrono::seconds timeout = std::chrono::seconds(60))
      : url_(url), token_(std::move(token)), timeout_(timeout) {
    std::tie(base_, path_) = split_url(url);
  }

  /// From ATF_SCORER_URL / ATF_SCORER_TOKEN.
  static HttpScorerEndpoint from_env() {
    const char* url = std::getenv("ATF_SCORER_URL");
    if (!url || !*url) throw PreconditionError("scorer", "ATF_SCORER_URL is not set");
    const char* tok = std::getenv("ATF_SCORER_TOKEN");
    return HttpScorerEndpoint(url, tok ? tok : "");
  }

  TokenLogprobs logprobs(const std::string& prompt, const Continuations& continuations) override {
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    const nlohmann::json body{{"prompt", prompt}, {"continuations", continuations}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw TransientError("scorer", "transport failure: " + httplib::to_string(res.error()));
    if (is_retryable_status(res->status))
      throw TransientError("scorer", "endpoint returned HTTP " + std::to_string(res->status));
    if (res->status != 200)
      throw FatalEndpointError("scorer", "endpoint returned HTTP " + std::to_string(res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      const auto& arr = j.at("logprobs");
      if (!arr.is_array() || arr.size() != 2)
        throw Error("scorer", "'logprobs' must be a 2-element array");
      TokenLogprobs out;
      if (arr[0].is_number()) out.positive = arr[0].get<double>();
      if (arr[1].is_number()) out.negative = arr[1].get<double>();
      out.model = j.value("model", std::string("unknown"));
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw TransientError("scorer", std::string("malformed response: ") + e.what());
    }
  }

  std::string id() const override { return "http:" + url_; }

 private:
  std::string url_;
  std::string base_;
  std::string path_;
  std::string token_;
  std::chrono::seconds timeout_;
};

using Lexicon = std::map<std::string, double>;

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Sum of lexicon weights over the tokens of `text`, with multiplicity.
inline double lexicon_sum(const Lexicon& lexicon, std::string_view text) {
  double x = 0.0;
  for (const auto& t : tokenize(text))
    if (auto it = lexicon.find(t); it != lexicon.end()) x += it->second;
  return x;
}

/// Log-probabilities whose normalized score is logistic(x).
inline std::pair<double, double> logistic_logprobs(double x) {
  auto log_sigmoid = [](double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); };
  return {log_sigmoid(x), log_sigmoid(-x)};
}

/// Deterministic stand-in for a model: score = logistic(sum of lexicon
/// weights over the query text).
inline ScoreResult mock_score(const PromptSpec& prompt, const Lexicon& lexicon) {
  const auto [yes, no] = logistic_logprobs(lexicon_sum(lexicon, prompt.query_text));
  return make_score(prompt.query_id, yes, no, "mock-lexicon");
}

inline std::string lexicon_digest(const Lexicon& lexicon) {
  std::string material;
  for (const auto& [t, w] : lexicon) material += t + '=' + nlohmann::json(w).dump() + ';';
  return sha256_hex(material).substr(0, 16);
}

/// `mock_score` behind the endpoint contract; reads the query back out of
/// the rendered prompt.
class LexiconMockEndpoint : public ScorerEndpoint {
 public:
  explicit LexiconMockEndpoint(Lexicon lexicon) : lexicon_(std::move(lexicon)) {}

  TokenLogprobs logprobs(const std::string& prompt, const Continuations&) override {
    const auto parsed = parse_prompt(prompt);
    const auto [yes, no] = logistic_logprobs(lexicon_sum(lexicon_, parsed.query_post));
    return {yes, no, "mock-lexicon"};
  }

  std::string id() const override { return "mock-lexicon:" + lexicon_digest(lexicon_); }

 private:
  Lexicon lexicon_;
};

/// Wraps an endpoint and fails a fixed fraction of calls with a
/// TransientError. Whether a call fails depends only on (prompt, attempt
/// number for that prompt, seed), not on thread scheduling.
class FaultInjectingEndpoint : public ScorerEndpoint {
 public:
  FaultInjectingEndpoint(ScorerEndpoint& inner, double failure_rate, std::uint64_t seed)
      : inner_(inner), rate_(failure_rate), seed_(seed) {}

  TokenLogprobs logprobs(const std::string& prompt, const Continuations& c) override {
    std::uint64_t attempt;
    {
      std::lock_guard lock(mu_);
      attempt = attempts_[prompt]++;
    }
    ++calls_;
    Rng rng(derive_seed(seed_, prompt, attempt));
    if (rng.uniform() < rate_) {
      ++failures_;
      throw TransientError("scorer", "injected transient failure");
    }
    return inner_.logprobs(prompt, c);
  }

  std::string id() const override { return inner_.id(); }

  std::size_t calls() const { return calls_; }
  std::size_t failures() const { return failures_; }

 private:
  ScorerEndpoint& inner_;
  double rate_;
  std::uint64_t seed_;
  std::mutex mu_;
  std::unordered_map<std::string, std::uint64_t> attempts_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> failures_{0};
};

}  // namespace atf
