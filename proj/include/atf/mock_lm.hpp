#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <utility>

#include "atf/prompter.hpp"
#include "atf/scorer.hpp"
#include "atf/text.hpp"

namespace atf {

/// A deterministic model that "learns in context": each shot votes for its
/// answer with the weight of the terms it shares with the query. Terms in
/// the lexicon weigh their lexicon value; every other shared term weighs
/// `background_weight`. An optional prior lexicon stands in for what the
/// model knows zero-shot.
///
///   x = sum_prior(query) + sum_shots sign(answer) * sum_{t in shot & query} w(t)
///   score = logistic(x)
class InContextMockEndpoint : public ScorerEndpoint {
 public:
  InContextMockEndpoint(Lexicon lexicon, double background_weight = 0.1, Lexicon prior = {})
      : lexicon_(std::move(lexicon)), background_(background_weight), prior_(std::move(prior)) {}

  TokenLogprobs logprobs(const std::string& prompt, const Continuations& continuations) override {
    const auto parsed = parse_prompt(prompt);
    auto positive = continuations[0];
    if (!positive.empty() && positive.front() == ' ') positive.erase(0, 1);

    const auto query_tokens = unique_tokens(parsed.query_post);
    double x = lexicon_sum(prior_, parsed.query_post);
    for (const auto& shot : parsed.shots) {
      const double sign = shot.answer == positive ? 1.0 : -1.0;
      double overlap = 0.0;
      for (const auto& t : unique_tokens(shot.post)) {
        if (!query_tokens.count(t)) continue;
        auto it = lexicon_.find(t);
        overlap += it == lexicon_.end() ? background_ : it->second;
      }
      x += sign * overlap;
    }
    const auto [yes, no] = logistic_logprobs(x);
    return {yes, no, "mock-incontext"};
  }

  std::string id() const override {
    return "mock-incontext:" + lexicon_digest(lexicon_) + ":" + lexicon_digest(prior_) + ":" +
           nlohmann::json(background_).dump();
  }

 private:
  static std::set<std::string> unique_tokens(std::string_view text) {
    auto v = tokenize(text);
    return {v.begin(), v.end()};
  }

  Lexicon lexicon_;
  double background_;
  Lexicon prior_;
};

}  // namespace atf
