#include <gtest/gtest.h>

#include "atf/prompter.hpp"
#include "fixtures.hpp"

using namespace atf;
using fixtures::example;

namespace {

const DimensionRegistry& reg() {
  static const auto r = DimensionRegistry::defaults();
  return r;
}

std::size_t occurrences(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

std::vector<Shot> pairs(int n_pairs) {
  std::vector<Shot> shots;
  for (int i = 0; i < n_pairs; ++i) {
    const double sim = 0.1 * i;
    shots.push_back({example("n" + std::to_string(i), "neg text " + std::to_string(i), Label::negative), sim});
    shots.push_back({example("p" + std::to_string(i), "pos text " + std::to_string(i), Label::positive), sim});
  }
  return shots;
}

}  // namespace

TEST(Render, ZeroShotGolden) {
  const auto spec = render({}, {"q", "hello", "t"}, std::nullopt, reg().at("toxicity"));
  EXPECT_EQ(spec.rendered, fixtures::golden("zero_shot.txt"));
  EXPECT_TRUE(spec.shots.empty());
  EXPECT_EQ(spec.rendered.substr(spec.rendered.size() - 7), "Answer:");
}

TEST(Render, MixedDefinitionGolden) {
  const std::vector<Shot> shots = {
      {example("s1", "you look so hot in that dress", Label::positive, Provenance::source, "sbic", "lewd"), 0.2},
      {example("t1", "posted a photo of my lunch", Label::negative), 0.5},
  };
  const auto spec = render(shots, {"q", "that photo is way too explicit for work", "metoo"}, reg().at("lewd"),
                           reg().at("sexually_explicit"));
  EXPECT_EQ(spec.rendered, fixtures::golden("mixed_transfer.txt"));
  const auto parsed = parse_prompt(spec.rendered);
  ASSERT_EQ(parsed.shots.size(), 2u);
  EXPECT_EQ(parsed.shots[0].question, "Does this post contain sexual content?");
  EXPECT_EQ(parsed.shots[1].question, "Does this post contain sexually explicit language?");
  EXPECT_EQ(parsed.query_question, "Does this post contain sexually explicit language?");
}

TEST(Render, TruncationGolden) {
  const std::vector<Shot> shots = {
      {example("n1", "first negative", Label::negative), 0.1},
      {example("p1", "first positive", Label::positive), 0.2},
      {example("n2", "second negative", Label::negative), 0.3},
      {example("p2", "second positive", Label::positive), 0.4},
  };
  const auto spec = render(shots, {"q", "q text here", "t"}, std::nullopt, reg().at("sexually_explicit"));
  EXPECT_EQ(count_words(spec.rendered), 65u);
  const auto cut = truncate_to_budget(spec, 40);
  EXPECT_EQ(cut.rendered, fixtures::golden("truncation.txt"));
  EXPECT_EQ(cut.shot_ids(), (std::vector<std::string>{"n2", "p2"}));
}

TEST(Render, SourceShotWithoutSourceDimensionRejected) {
  const std::vector<Shot> shots = {{example("s", "x", Label::positive, Provenance::source, "src", "lewd"), 0}};
  EXPECT_THROW(render(shots, {"q", "y", "t"}, std::nullopt, reg().at("sexually_explicit")), PreconditionError);
}

TEST(Render, CustomAnswerTokens) {
  const Dimension d{"custom", "Is it spam?", "True", "False"};
  const auto spec = render({{example("a", "buy now", Label::positive), 0}}, {"q", "hi", "t"}, std::nullopt, d);
  EXPECT_NE(spec.rendered.find("Answer: True\n\n"), std::string::npos);
}

TEST(Render, Invariants) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto shots = pairs(static_cast<int>(rng.below(17)));
    const auto spec = render(shots, {"q", fixtures::random_text(rng, 20, 5), "t"}, reg().at("lewd"),
                             reg().at("sexually_explicit"));
    const auto n = shots.size() + 1;
    EXPECT_EQ(occurrences(spec.rendered, "Post:"), n);
    EXPECT_EQ(occurrences(spec.rendered, "Question:"), n);
    EXPECT_EQ(occurrences(spec.rendered, "Answer:"), n);
    EXPECT_EQ(spec.rendered.substr(spec.rendered.rfind("Answer:") + 7), "");
    auto again = spec;
    rerender(again);
    EXPECT_EQ(again.rendered, spec.rendered);
  }
}

TEST(Truncate, UnderBudgetIsUnchanged) {
  const auto spec = render(pairs(2), {"q", "short", "t"}, std::nullopt, reg().at("lewd"));
  const auto out = truncate_to_budget(spec, 2048);
  EXPECT_EQ(out.rendered, spec.rendered);
}

TEST(Truncate, DropsLeastSimilarPairsUntilFit) {
  const auto spec = render(pairs(16), {"q", "query words", "t"}, std::nullopt, reg().at("lewd"));
  const auto block = count_words(render_shot_block(spec.shots[0]));
  const auto query = count_words(render_query_block("query words", reg().at("lewd")));
  ASSERT_EQ(spec.shots.size(), 32u);
  EXPECT_TRUE(truncate_to_budget(spec, query + 1).shots.empty());
  for (std::size_t keep = 1; keep <= 16; ++keep) {
    const auto budget = query + 2 * keep * block;
    const auto out = truncate_to_budget(spec, budget);
    ASSERT_EQ(out.shots.size(), 2 * keep);
    // survivors are the most similar pairs
    for (const auto& s : out.shots) EXPECT_GE(s.similarity, 0.1 * static_cast<double>(16 - keep) - 1e-9);
    std::size_t pos = 0;
    for (const auto& s : out.shots) pos += s.label == Label::positive;
    EXPECT_EQ(pos * 2, out.shots.size());
    EXPECT_LE(count_words(out.rendered), budget);
  }
}

TEST(Truncate, QueryAloneOverBudgetThrows) {
  const auto spec = render(pairs(1), {"q", "a long query text", "t"}, std::nullopt, reg().at("lewd"));
  EXPECT_THROW(truncate_to_budget(spec, 5), PreconditionError);
}

TEST(Parse, RoundTripsRenderedPrompts) {
  const auto spec = render(pairs(3), {"q", "query", "t"}, std::nullopt, reg().at("group"));
  const auto p = parse_prompt(spec.rendered);
  ASSERT_EQ(p.shots.size(), 6u);
  EXPECT_EQ(p.shots[0].post, "neg text 0");
  EXPECT_EQ(p.shots[0].answer, "No");
  EXPECT_EQ(p.shots[1].answer, "Yes");
  EXPECT_EQ(p.query_post, "query");
  EXPECT_THROW(parse_prompt("nonsense"), PreconditionError);
}

TEST(PromptRecord, Fields) {
  const auto spec = render(pairs(1), {"q7", "query", "t"}, std::nullopt, reg().at("group"));
  const auto r = prompt_record(spec);
  EXPECT_EQ(r["query_id"].get<std::string>(), "q7");
  EXPECT_EQ(r["shot_ids"].get<std::vector<std::string>>(), (std::vector<std::string>{"n0", "p0"}));
  EXPECT_EQ(r["rendered"].get<std::string>(), spec.rendered);
}
