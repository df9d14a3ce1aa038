#pragma once

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/http_util.hpp"

namespace atf {

struct LabelerResponse {
  std::string post_id;
  std::map<std::string, double> scores;  // attribute -> [0, 1]
  std::string fetched_at;                // ISO-8601 UTC
};

/// The service said to back off. `retry_after` is its hint.
class QuotaExceededError : public Error {
 public:
  QuotaExceededError(const std::string& what, std::chrono::milliseconds retry_after)
      : Error("labeler", what), retry_after_(retry_after) {}
  std::chrono::milliseconds retry_after() const { return retry_after_; }

 private:
  std::chrono::milliseconds retry_after_;
};

/// Attribute scorer (Perspective-style). Must be thread-safe.
class LabelerEndpoint {
 public:
  virtual ~LabelerEndpoint() = default;
  virtual std::map<std::string, double> analyze(const std::string& text,
                                                const std::vector<std::string>& attributes) = 0;
};

/// POST {"text": str, "attributes": [names]} -> {"scores": {name: float}}
class HttpLabelerEndpoint : public LabelerEndpoint {
 public:
  explicit HttpLabelerEndpoint(const std::string& url, std::string key = {},
                               std::chrono::seconds timeout = std::chrono::seconds(30))
      : key_(std::move(key)), timeout_(timeout) {
    std::tie(base_, path_) = split_url(url);
  }

  /// From ATF_LABELER_URL / ATF_LABELER_KEY.
  static HttpLabelerEndpoint from_env() {
    const char* url = std::getenv("ATF_LABELER_URL");
    if (!url || !*url) throw PreconditionError("labeler", "ATF_LABELER_URL is not set");
    const char* key = std::getenv("ATF_LABELER_KEY");
    return HttpLabelerEndpoint(url, key ? key : "");
  }

  std::map<std::string, double> analyze(const std::string& text,
                                        const std::vector<std::string>& attributes) override {
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    std::string path = path_;
    if (!key_.empty()) path += (path.find('?') == std::string::npos ? "?key=" : "&key=") + key_;
    const nlohmann::json body{{"text", text}, {"attributes", attributes}};
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw TransientError("labeler", "transport failure: " + httplib::to_string(res.error()));
    if (res->status == 429) {
      long long secs = 1;
      if (res->has_header("Retry-After")) secs = std::atoll(res->get_header_value("Retry-After").c_str());
      throw QuotaExceededError("quota exceeded", std::chrono::seconds(std::max(1LL, secs)));
    }
    if (is_retryable_status(res->status))
      throw TransientError("labeler", "service returned HTTP " + std::to_string(res->status));
    if (res->status != 200)
      throw FatalEndpointError("labeler", "service returned HTTP " + std::to_string(res->status));
    try {
      std::map<std::string, double> out;
      const auto body = nlohmann::json::parse(res->body);
      for (const auto& [k, v] : body.at("scores").items()) out[k] = v.get<double>();
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw TransientError("labeler", std::string("malformed response: ") + e.what());
    }
  }

 private:
  std::string base_;
  std::string path_;
  std::string key_;
  std::chrono::seconds timeout_;
};

/// Hands out request slots no closer together than 1/rate seconds.
class RateGovernor {
 public:
  explicit RateGovernor(double requests_per_second)
      : interval_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(1.0 / requests_per_second))) {
    if (!(requests_per_second > 0)) throw PreconditionError("labeler", "rate_limit must be > 0");
  }

  void acquire() {
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      slot = started_ ? std::max(now, last_ + interval_) : now;
      started_ = true;
      last_ = slot;
    }
    std::this_thread::sleep_until(slot);
  }

  /// Push every future slot back by `d` (quota pause).
  void pause(std::chrono::milliseconds d) {
    std::lock_guard lock(mu_);
    last_ = std::max(last_, std::chrono::steady_clock::now()) + d;
    started_ = true;
  }

 private:
  std::chrono::steady_clock::duration interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point last_{};
  bool started_ = false;
};

inline std::string iso8601_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Append-only JSONL store of {post_id, attribute, score, timestamp}.
/// Later lines win when a key repeats.
class ScoreStore {
 public:
  ScoreStore() = default;  // in-memory only

  explicit ScoreStore(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(*path_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        scores_[{j.at("post_id").get<std::string>(), j.at("attribute").get<std::string>()}] = {
            j.at("score").get<double>(), j.at("timestamp").get<std::string>()};
      } catch (const nlohmann::json::exception&) {
        throw DataError("labeler", "malformed score store record", lineno);
      }
    }
  }

  std::optional<std::pair<double, std::string>> get(const std::string& post_id, const std::string& attribute) const {
    std::lock_guard lock(mu_);
    auto it = scores_.find({post_id, attribute});
    if (it == scores_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& post_id, const std::string& attribute, double score, const std::string& timestamp) {
    std::lock_guard lock(mu_);
    scores_[{post_id, attribute}] = {score, timestamp};
    if (!path_) return;
    std::ofstream out(*path_, std::ios::app);
    nlohmann::ordered_json j;
    j["post_id"] = post_id;
    j["attribute"] = attribute;
    j["score"] = score;
    j["timestamp"] = timestamp;
    out << j.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return scores_.size();
  }

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, std::pair<double, std::string>> scores_;
};

struct FetchOptions {
  int workers = 4;
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{200};
  int max_quota_pauses = 100;
};

struct FetchReport {
  std::vector<LabelerResponse> responses;  // input order, successful posts only
  std::vector<std::pair<std::string, std::string>> failures;  // (post id, error)
  std::size_t network_calls = 0;
};

/// Fetch `attributes` for every post, serving cached (post, attribute)
/// pairs from `store` and pacing network calls at <= `rate_limit`/s.
inline FetchReport fetch_scores(const std::vector<Post>& posts, const std::vector<std::string>& attributes,
                                LabelerEndpoint& endpoint, double rate_limit, ScoreStore& store,
                                const FetchOptions& options = {}) {
  RateGovernor governor(rate_limit);
  std::vector<std::optional<LabelerResponse>> slots(posts.size());
  std::vector<std::string> errors(posts.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> calls{0};

  auto fetch_one = [&](std::size_t i) {
    const auto& post = posts[i];
    LabelerResponse resp;
    resp.post_id = post.id;
    std::vector<std::string> missing;
    std::string newest;
    for (const auto& a : attributes) {
      if (auto hit = store.get(post.id, a)) {
        resp.scores[a] = hit->first;
        newest = std::max(newest, hit->second);
      } else {
        missing.push_back(a);
      }
    }
    if (missing.empty()) {
      resp.fetched_at = newest;
      slots[i] = std::move(resp);
      return;
    }
    int retries = 0, pauses = 0;
    while (true) {
      governor.acquire();
      ++calls;
      try {
        auto got = endpoint.analyze(post.text, missing);
        const auto ts = iso8601_now();
        for (const auto& a : missing) {
          auto it = got.find(a);
          if (it == got.end()) throw DataError("labeler", "service omitted attribute '" + a + "'");
          if (!(it->second >= 0.0 && it->second <= 1.0))
            throw DataError("labeler", "score for '" + a + "' outside [0, 1]");
          store.put(post.id, a, it->second, ts);
          resp.scores[a] = it->second;
        }
        resp.fetched_at = ts;
        slots[i] = std::move(resp);
        return;
      } catch (const QuotaExceededError& e) {
        if (++pauses > options.max_quota_pauses) {
          errors[i] = e.what();
          return;
        }
        governor.pause(e.retry_after());
      } catch (const FatalEndpointError&) {
        throw;
      } catch (const std::exception& e) {
        if (++retries > options.max_retries) {
          errors[i] = e.what();
          return;
        }
        std::this_thread::sleep_for(options.retry_backoff * retries);
      }
    }
  };

  std::exception_ptr fatal;
  std::mutex fatal_mu;
  std::atomic<bool> abort{false};
  auto worker = [&] {
    while (!abort) {
      const auto i = next.fetch_add(1);
      if (i >= posts.size()) return;
      try {
        fetch_one(i);
      } catch (...) {
        std::lock_guard lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto n = std::max(1, std::min<int>(options.workers, static_cast<int>(posts.size())));
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);

  FetchReport report;
  report.network_calls = calls;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    if (slots[i])
      report.responses.push_back(std::move(*slots[i]));
    else
      report.failures.emplace_back(posts[i].id, errors[i]);
  }
  return report;
}

/// Positive iff score >= threshold. Examples carry the post id only and
/// are tagged as target-domain labels for `attribute`.
inline std::vector<LabeledExample> binarize(const std::vector<LabelerResponse>& responses,
                                            const std::string& attribute, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw PreconditionError("labeler", "threshold must be in (0, 1)");
  std::vector<LabeledExample> out;
  out.reserve(responses.size());
  for (const auto& r : responses) {
    auto it = r.scores.find(attribute);
    if (it == r.scores.end())
      throw DataError("labeler", "response for '" + r.post_id + "' lacks attribute '" + attribute + "'");
    out.push_back({Post{r.post_id, "", ""}, attribute,
                   it->second >= threshold ? Label::positive : Label::negative, Provenance::target});
  }
  return out;
}

/// Smallest observed score to use as threshold so that the positive
/// fraction is the one closest to `rate`.
inline double threshold_for_rate(std::vector<double> scores, double rate) {
  if (scores.empty()) throw PreconditionError("labeler", "no scores");
  std::sort(scores.begin(), scores.end(), std::greater<>());
  const auto n = scores.size();
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(rate * static_cast<double>(n))), 1, n);
  return scores[k - 1];
}

/// Attach binarized labels for `dimension` to the posts of `bundle`.
inline DatasetBundle apply_labels(const DatasetBundle& bundle, const Dimension& dimension,
                                  const std::vector<LabeledExample>& labels) {
  auto dims = bundle.dimensions();
  if (!bundle.has_dimension(dimension.name)) dims.push_back(dimension);
  auto map = bundle.labels();
  for (const auto& e : labels) {
    if (!bundle.find(e.post.id)) throw DataError("labeler", "label for unknown post '" + e.post.id + "'");
    map[{e.post.id, dimension.name}] = e.label;
  }
  return DatasetBundle(bundle.name(), bundle.posts(), std::move(dims), std::move(map));
}

}  // namespace atf
