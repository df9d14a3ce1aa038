#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/hash.hpp"
#include "atf/metrics.hpp"
#include "atf/prompter.hpp"
#include "atf/random.hpp"
#include "atf/run_result.hpp"
#include "atf/scorer.hpp"
#include "atf/selector.hpp"
#include "atf/server.hpp"
#include "atf/vectorizer.hpp"

namespace atf {

enum class OracleMode { simulated, human };

struct ExperimentConfig {
  std::string name = "experiment";
  std::optional<std::string> source_dimension;  // set => transfer arm
  std::string target_dimension;
  std::vector<std::size_t> budgets{0, 100, 1000, 2000};
  int repetitions = 5;
  std::uint64_t base_seed = 0;
  SelectionPolicy policy;
  int token_budget = 2048;
  int max_in_flight = 8;
  Continuations continuations = default_continuations();
  std::string scorer;           // endpoint identity, echoed into the hash
  std::string data_fingerprint;  // identity of the input datasets
  OracleMode oracle = OracleMode::simulated;

  bool transfer() const { return source_dimension.has_value(); }

  void validate() const {
    if (target_dimension.empty()) throw PreconditionError("loop", "target dimension required");
    if (budgets.empty()) throw PreconditionError("loop", "at least one budget required");
    for (std::size_t i = 1; i < budgets.size(); ++i)
      if (budgets[i] <= budgets[i - 1]) throw PreconditionError("loop", "budgets must be strictly increasing");
    if (repetitions < 1) throw PreconditionError("loop", "repetitions must be >= 1");
    if (max_in_flight < 1) throw PreconditionError("loop", "max_in_flight must be >= 1");
    policy.validate();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["source_dimension"] = source_dimension ? nlohmann::ordered_json(*source_dimension) : nlohmann::ordered_json(nullptr);
    j["target_dimension"] = target_dimension;
    j["budgets"] = budgets;
    j["repetitions"] = repetitions;
    j["base_seed"] = base_seed;
    j["n_shots"] = policy.n_shots;
    j["shot_order"] = policy.order == ShotOrder::ascending_similarity ? "ascending" : "descending";
    j["domain_balanced"] = policy.domain_balanced;
    j["token_budget"] = token_budget;
    j["continuations"] = continuations;
    j["scorer"] = scorer;
    j["data_fingerprint"] = data_fingerprint;
    j["oracle"] = oracle == OracleMode::simulated ? "simulated" : "human";
    return j;
  }

  /// Content hash of everything that determines the results.
  std::string hash() const { return sha256_hex(to_json().dump()).substr(0, 16); }

  /// The matched no-transfer configuration.
  ExperimentConfig baseline() const {
    auto c = *this;
    c.source_dimension.reset();
    return c;
  }
};

/// Label provider for the active-learning loop.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::vector<LabeledExample> label(const std::vector<Post>& posts, const Dimension& dimension) = 0;
};

/// Reads held-back ground truth.
class SimulatedOracle : public Oracle {
 public:
  explicit SimulatedOracle(const DatasetBundle& truth) : truth_(truth) {}

  std::vector<LabeledExample> label(const std::vector<Post>& posts, const Dimension& dimension) override {
    std::vector<LabeledExample> out;
    out.reserve(posts.size());
    for (const auto& p : posts) {
      auto l = truth_.label(p.id, dimension.name);
      if (!l) throw DataError("loop", "no ground truth for '" + p.id + "' under '" + dimension.name + "'");
      out.push_back({p, dimension.name, *l, Provenance::target});
    }
    return out;
  }

 private:
  const DatasetBundle& truth_;
};

class DeadlineExceededError : public Error {
 public:
  DeadlineExceededError(std::vector<LabeledExample> partial, std::size_t requested)
      : Error("loop", "annotation deadline exceeded with " + std::to_string(partial.size()) + " of " +
                          std::to_string(requested) + " posts labeled"),
        partial_(std::move(partial)) {}
  const std::vector<LabeledExample>& partial() const { return partial_; }

 private:
  std::vector<LabeledExample> partial_;
};

/// Queues posts on the annotation service and blocks until they are all
/// labeled or the deadline passes. Labels already collected in this
/// session are reused instead of asking again.
class HumanOracle : public Oracle {
 public:
  HumanOracle(AnnotationService& service, std::chrono::milliseconds deadline,
              std::chrono::milliseconds poll = std::chrono::milliseconds(200))
      : service_(service), deadline_(deadline), poll_(poll) {}

  std::vector<LabeledExample> label(const std::vector<Post>& posts, const Dimension& dimension) override {
    std::vector<Post> ask;
    {
      std::lock_guard lock(mu_);
      for (const auto& p : posts)
        if (!memo_.count(key(p, dimension))) ask.push_back(p);
    }
    if (!ask.empty()) {
      const auto batch_id = service_.enqueue(ask, dimension, deadline_);
      last_batch_ = batch_id;
      const auto give_up = std::chrono::steady_clock::now() + deadline_;
      while (true) {
        const auto status = service_.batch(batch_id);
        if (status.complete()) break;
        if (std::chrono::steady_clock::now() >= give_up) {
          std::vector<LabeledExample> partial;
          for (const auto& t : service_.batch_tasks(batch_id))
            if (t.label) partial.push_back({t.post, dimension.name, *t.label, Provenance::target});
          throw DeadlineExceededError(std::move(partial), ask.size());
        }
        std::this_thread::sleep_for(poll_);
      }
      std::lock_guard lock(mu_);
      for (const auto& t : service_.batch_tasks(batch_id)) memo_[key(t.post, dimension)] = *t.label;
    }
    std::vector<LabeledExample> out;
    std::lock_guard lock(mu_);
    for (const auto& p : posts) out.push_back({p, dimension.name, memo_.at(key(p, dimension)), Provenance::target});
    return out;
  }

  const std::string& last_batch() const { return last_batch_; }

 private:
  static std::string key(const Post& p, const Dimension& d) { return p.dataset + '\x1f' + p.id + '\x1f' + d.name; }

  AnnotationService& service_;
  std::chrono::milliseconds deadline_;
  std::chrono::milliseconds poll_;
  std::mutex mu_;
  std::map<std::string, Label> memo_;
  std::string last_batch_;
};

inline std::vector<LabeledExample> oracle_label(Oracle& oracle, const std::vector<Post>& posts,
                                                const Dimension& dimension) {
  return oracle.label(posts, dimension);
}

/// Uniform sample of `n` posts, without replacement, from the posts of
/// `pool` not in `already`.
inline std::vector<Post> sample_for_annotation(const DatasetBundle& pool, const std::set<std::string>& already,
                                               std::size_t n, std::uint64_t seed) {
  std::vector<const Post*> candidates;
  for (const auto& p : pool.posts())
    if (!already.count(p.id)) candidates.push_back(&p);
  if (candidates.size() < n)
    throw PreconditionError("loop", "annotation pool exhausted: need " + std::to_string(n) + ", have " +
                                        std::to_string(candidates.size()));
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  std::vector<Post> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(*candidates[i]);
  return out;
}

/// Inputs of one experiment. `source` is required for the transfer arm.
struct Corpora {
  const DatasetBundle* source = nullptr;
  const DatasetBundle& pool;
  const DatasetBundle& test;
};

struct RunOptions {
  ScoreOptions scoring;
  TokenCounter token_counter = unit_token_counter();
  bool parallel_repetitions = true;
  std::function<void(const RunResult&)> on_result;  // called from worker threads
};

namespace detail {

inline std::string post_key(const Post& p) { return p.dataset + '\x1f' + p.id; }

inline RunResult run_cell(const ExperimentConfig& config, const Corpora& corpora, const SupportSet& support,
                          const std::optional<Dimension>& source_dim, const Dimension& target_dim,
                          ScorerEndpoint& endpoint, const RunOptions& options, RunResult rr) {
  const auto has = [&](Label l) {
    auto match = [l](const LabeledExample& e) { return e.label == l; };
    return std::any_of(support.source_examples.begin(), support.source_examples.end(), match) ||
           std::any_of(support.target_examples.begin(), support.target_examples.end(), match);
  };
  if (!support.empty() && !(has(Label::positive) && has(Label::negative))) {
    rr.flags.push_back(has(Label::positive) ? "degenerate:no_negative_support" : "degenerate:no_positive_support");
    return rr;
  }

  std::vector<PromptSpec> prompts;
  prompts.reserve(corpora.test.size());
  std::vector<double> ratios;
  std::optional<Vocabulary> vocab;
  std::optional<ShotSelector> selector;
  if (!support.empty()) {
    std::vector<std::string_view> texts;
    for (const auto* part : {&support.source_examples, &support.target_examples})
      for (const auto& e : *part) texts.push_back(e.post.text);
    for (const auto& p : corpora.test.posts()) texts.push_back(p.text);
    vocab.emplace(fit_texts(texts));
    selector.emplace(support, *vocab, config.policy);
  }
  for (const auto& q : corpora.test.posts()) {
    std::vector<Shot> shots;
    if (selector) shots = selector->select(q);
    auto spec = truncate_to_budget(render(shots, q, source_dim, target_dim, config.token_budget),
                                   static_cast<std::size_t>(config.token_budget), options.token_counter);
    std::size_t n_target = 0;
    for (const auto& s : spec.shots) n_target += s.provenance == Provenance::target;
    ratios.push_back(spec.shots.empty() ? 0.0 : static_cast<double>(n_target) / static_cast<double>(spec.shots.size()));
    prompts.push_back(std::move(spec));
  }

  auto scoring = options.scoring;
  scoring.continuations = config.continuations;
  const auto batch = score_batch(prompts, endpoint, config.max_in_flight, scoring);
  rr.invalid = batch.invalid;
  double ratio_sum = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& post = corpora.test.posts()[i];
    const auto& s = batch.results[i];
    QueryOutcome q;
    q.query_id = post.id;
    auto truth = corpora.test.label(post.id, target_dim.name);
    if (!truth) throw DataError("loop", "test post '" + post.id + "' has no label for '" + target_dim.name + "'");
    q.truth = *truth;
    q.valid = s.valid;
    q.score = s.valid ? s.score : 0.0;
    q.predicted = s.valid ? s.predicted : Label::negative;
    q.n_shots = prompts[i].shots.size();
    q.shot_ratio = ratios[i];
    q.error = s.error;
    ratio_sum += ratios[i];
    rr.queries.push_back(std::move(q));
  }
  rr.mean_shot_ratio = prompts.empty() ? 0.0 : ratio_sum / static_cast<double>(prompts.size());
  try {
    rr.auc = auc(rr.queries);
  } catch (const PreconditionError&) {
    rr.flags.push_back("degenerate:single_class_test");
  }
  return rr;
}

}  // namespace detail

/// Run every (repetition, budget) cell of one arm. Within a repetition the
/// annotated set grows incrementally; the sampling stream depends only on
/// (base_seed + repetition, budget index), so the transfer arm and its
/// baseline annotate identical posts.
inline std::vector<RunResult> run_experiment(const ExperimentConfig& config, const Corpora& corpora,
                                             ScorerEndpoint& endpoint, Oracle& oracle,
                                             const RunOptions& options = {}) {
  config.validate();
  const Dimension target_dim = corpora.test.dimension(config.target_dimension);
  std::optional<Dimension> source_dim;
  std::vector<LabeledExample> source_examples;
  if (config.transfer()) {
    if (!corpora.source) throw PreconditionError("loop", "transfer arm needs a source dataset");
    source_dim = corpora.source->dimension(*config.source_dimension);
    source_examples = corpora.source->examples(*config.source_dimension, Provenance::source);
  }

  std::set<std::string> test_keys;
  for (const auto& p : corpora.test.posts()) test_keys.insert(detail::post_key(p));
  for (const auto& e : source_examples)
    if (test_keys.count(detail::post_key(e.post)))
      throw DataError("loop", "source example '" + e.post.id + "' is also a test post");
  for (const auto& p : corpora.pool.posts())
    if (test_keys.count(detail::post_key(p)))
      throw DataError("loop", "pool post '" + p.id + "' is also a test post");

  const auto hash = config.hash();
  auto run_repetition = [&](int r) {
    std::vector<RunResult> out;
    const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(r);
    SupportSet support;
    support.source_examples = source_examples;
    std::set<std::string> annotated;
    std::vector<std::string> annotated_order;
    for (std::size_t bi = 0; bi < config.budgets.size(); ++bi) {
      const auto budget = config.budgets[bi];
      const auto fresh = sample_for_annotation(corpora.pool, annotated, budget - annotated.size(),
                                               derive_seed(seed, "annotate", bi));
      if (!fresh.empty()) {
        auto labeled = oracle_label(oracle, fresh, target_dim);
        for (auto& e : labeled) {
          annotated.insert(e.post.id);
          annotated_order.push_back(e.post.id);
          support.target_examples.push_back(std::move(e));
        }
      }

      RunResult rr;
      rr.experiment = config.name;
      rr.config_hash = hash;
      rr.arm = config.transfer() ? "transfer" : "baseline";
      rr.target = config.target_dimension;
      rr.source = config.source_dimension;
      rr.repetition = r;
      rr.seed = seed;
      rr.budget = budget;
      rr.annotated_ids = annotated_order;
      rr.support_source = support.source_examples.size();
      rr.support_target = support.target_examples.size();
      if (!support.target_examples.empty()) {
        const auto first = support.target_examples.front().label;
        if (std::all_of(support.target_examples.begin(), support.target_examples.end(),
                        [&](const LabeledExample& e) { return e.label == first; }))
          rr.flags.push_back("single_class_annotations");
      }
      auto result = detail::run_cell(config, corpora, support, source_dim, target_dim, endpoint, options, std::move(rr));
      if (options.on_result) options.on_result(result);
      out.push_back(std::move(result));
    }
    return out;
  };

  std::vector<std::vector<RunResult>> per_rep(static_cast<std::size_t>(config.repetitions));
  if (options.parallel_repetitions && config.oracle == OracleMode::simulated && config.repetitions > 1) {
    std::vector<std::future<std::vector<RunResult>>> futures;
    for (int r = 0; r < config.repetitions; ++r) futures.push_back(std::async(std::launch::async, run_repetition, r));
    for (std::size_t r = 0; r < futures.size(); ++r) per_rep[r] = futures[r].get();
  } else {
    for (int r = 0; r < config.repetitions; ++r) per_rep[static_cast<std::size_t>(r)] = run_repetition(r);
  }
  std::vector<RunResult> results;
  for (auto& rep : per_rep)
    for (auto& rr : rep) results.push_back(std::move(rr));
  return results;
}

struct PairedResults {
  std::vector<RunResult> transfer;
  std::vector<RunResult> baseline;
};

/// Transfer arm and its matched baseline.
inline PairedResults run_paired(const ExperimentConfig& config, const Corpora& corpora, ScorerEndpoint& endpoint,
                                Oracle& oracle, const RunOptions& options = {}) {
  if (!config.transfer()) throw PreconditionError("loop", "paired run needs a source dimension");
  PairedResults out;
  out.transfer = run_experiment(config, corpora, endpoint, oracle, options);
  out.baseline = run_experiment(config.baseline(), corpora, endpoint, oracle, options);
  return out;
}

inline void write_results_jsonl(const std::vector<RunResult>& results, std::ostream& out) {
  for (const auto& r : results) out << to_json(r).dump() << '\n';
}

}  // namespace atf
