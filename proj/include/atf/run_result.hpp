#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/corpus.hpp"

namespace atf {

/// Outcome for one test-set query.
struct QueryOutcome {
  std::string query_id;
  Label truth = Label::negative;
  double score = 0.0;
  Label predicted = Label::negative;
  bool valid = false;
  std::size_t n_shots = 0;
  double shot_ratio = 0.0;
  std::string error;

  bool operator==(const QueryOutcome&) const = default;
};

/// One AUC measurement: a (repetition, budget) cell of one experiment arm.
struct RunResult {
  std::string experiment;
  std::string config_hash;
  std::string arm;  // "transfer" or "baseline"
  std::string target;
  std::optional<std::string> source;
  int repetition = 0;
  std::uint64_t seed = 0;
  std::size_t budget = 0;
  std::vector<QueryOutcome> queries;
  std::optional<double> auc;  // empty for degenerate runs
  double mean_shot_ratio = 0.0;
  std::vector<std::string> annotated_ids;
  std::size_t support_source = 0;
  std::size_t support_target = 0;
  std::size_t invalid = 0;
  std::vector<std::string> flags;

  bool degenerate() const { return !auc.has_value(); }
  bool operator==(const RunResult&) const = default;
};

inline nlohmann::ordered_json to_json(const QueryOutcome& q) {
  nlohmann::ordered_json j;
  j["query_id"] = q.query_id;
  j["truth"] = q.truth == Label::positive ? 1 : 0;
  j["score"] = q.score;
  j["predicted"] = q.predicted == Label::positive ? 1 : 0;
  j["valid"] = q.valid;
  j["n_shots"] = q.n_shots;
  j["shot_ratio"] = q.shot_ratio;
  if (!q.error.empty()) j["error"] = q.error;
  return j;
}

inline nlohmann::ordered_json to_json(const RunResult& r) {
  nlohmann::ordered_json j;
  j["experiment"] = r.experiment;
  j["config_hash"] = r.config_hash;
  j["arm"] = r.arm;
  j["target"] = r.target;
  j["source"] = r.source ? nlohmann::ordered_json(*r.source) : nlohmann::ordered_json(nullptr);
  j["repetition"] = r.repetition;
  j["seed"] = r.seed;
  j["budget"] = r.budget;
  j["auc"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json(nullptr);
  j["mean_shot_ratio"] = r.mean_shot_ratio;
  j["support_source"] = r.support_source;
  j["support_target"] = r.support_target;
  j["invalid"] = r.invalid;
  j["flags"] = r.flags;
  j["annotated_ids"] = r.annotated_ids;
  auto qs = nlohmann::ordered_json::array();
  for (const auto& q : r.queries) qs.push_back(to_json(q));
  j["queries"] = std::move(qs);
  return j;
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.experiment = j.at("experiment").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.arm = j.at("arm").get<std::string>();
  r.target = j.at("target").get<std::string>();
  if (!j.at("source").is_null()) r.source = j.at("source").get<std::string>();
  r.repetition = j.at("repetition").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.budget = j.at("budget").get<std::size_t>();
  if (!j.at("auc").is_null()) r.auc = j.at("auc").get<double>();
  r.mean_shot_ratio = j.at("mean_shot_ratio").get<double>();
  r.support_source = j.value("support_source", std::size_t{0});
  r.support_target = j.value("support_target", std::size_t{0});
  r.invalid = j.value("invalid", std::size_t{0});
  r.flags = j.value("flags", std::vector<std::string>{});
  r.annotated_ids = j.value("annotated_ids", std::vector<std::string>{});
  for (const auto& q : j.value("queries", nlohmann::json::array())) {
    QueryOutcome o;
    o.query_id = q.at("query_id").get<std::string>();
    o.truth = q.at("truth").get<int>() ? Label::positive : Label::negative;
    o.score = q.at("score").get<double>();
    o.predicted = q.at("predicted").get<int>() ? Label::positive : Label::negative;
    o.valid = q.at("valid").get<bool>();
    o.n_shots = q.at("n_shots").get<std::size_t>();
    o.shot_ratio = q.at("shot_ratio").get<double>();
    o.error = q.value("error", std::string());
    r.queries.push_back(std::move(o));
  }
  return r;
}

}  // namespace atf
