#include <gtest/gtest.h>

#include <sstream>

#include "atf/metrics.hpp"
#include "atf/random.hpp"

using namespace atf;

namespace {

// O(n^2) pair counting: P(score_pos > score_neg) + 1/2 P(tie).
double pair_count_auc(const std::vector<ScoredLabel>& d) {
  double wins = 0;
  std::size_t pairs = 0;
  for (const auto& p : d) {
    if (p.label != Label::positive) continue;
    for (const auto& n : d) {
      if (n.label != Label::negative) continue;
      ++pairs;
      wins += p.score > n.score ? 1.0 : (p.score == n.score ? 0.5 : 0.0);
    }
  }
  return wins / static_cast<double>(pairs);
}

std::vector<ScoredLabel> random_instance(Rng& rng, std::size_t n) {
  std::vector<ScoredLabel> d(n);
  const auto levels = 1 + rng.below(10);  // few distinct levels -> many ties
  for (auto& x : d) {
    x.score = static_cast<double>(rng.below(levels)) / 3.0;
    x.label = rng.below(2) ? Label::positive : Label::negative;
  }
  d[0].label = Label::positive;
  d[1].label = Label::negative;
  return d;
}

RunResult run(int rep, std::size_t budget, double auc_value, double ratio = 0.0, const char* arm = "transfer") {
  RunResult r;
  r.arm = arm;
  r.target = "sexually_explicit";
  if (std::string(arm) == "transfer") r.source = "lewd";
  r.repetition = rep;
  r.budget = budget;
  r.auc = auc_value;
  r.mean_shot_ratio = ratio;
  return r;
}

}  // namespace

TEST(Auc, Basics) {
  EXPECT_EQ(auc(std::vector<ScoredLabel>{{0.9, Label::positive}, {0.8, Label::positive}, {0.1, Label::negative}}), 1.0);
  EXPECT_EQ(auc(std::vector<ScoredLabel>{{0.5, Label::positive}, {0.5, Label::negative}, {0.5, Label::negative}}), 0.5);
  EXPECT_EQ(auc(std::vector<ScoredLabel>{{0.1, Label::positive}, {0.9, Label::negative}}), 0.0);
}

TEST(Auc, SingleClassIsAnError) {
  EXPECT_THROW(auc(std::vector<ScoredLabel>{{0.1, Label::positive}, {0.2, Label::positive}}), PreconditionError);
  EXPECT_THROW(auc(std::vector<ScoredLabel>{}), PreconditionError);
  EXPECT_THROW(auc(std::vector<ScoredLabel>{{NAN, Label::positive}, {0.2, Label::negative}}), PreconditionError);
}

TEST(Auc, MatchesPairCounting) {
  Rng rng(123);
  for (int i = 0; i < 1000; ++i) {
    const auto d = random_instance(rng, 2 + rng.below(50));
    ASSERT_NEAR(auc(d), pair_count_auc(d), 1e-12);
  }
}

TEST(Auc, FlippedLabelsComplement) {
  Rng rng(321);
  for (int i = 0; i < 300; ++i) {
    auto d = random_instance(rng, 2 + rng.below(60));
    const double a = auc(d);
    for (auto& x : d) x.label = x.label == Label::positive ? Label::negative : Label::positive;
    ASSERT_NEAR(auc(d), 1.0 - a, 1e-12);
  }
}

TEST(Auc, MonotoneTransformInvariance) {
  Rng rng(55);
  for (int i = 0; i < 300; ++i) {
    auto d = random_instance(rng, 2 + rng.below(60));
    const double a = auc(d);
    for (auto& x : d) x.score = std::exp(3 * x.score) - 7;
    ASSERT_EQ(auc(d), a);
  }
}

TEST(Auc, UsesValidQueriesOnly) {
  std::vector<QueryOutcome> q = {{"a", Label::positive, 0.9, Label::positive, true, 0, 0.0, ""},
                                 {"b", Label::negative, 0.1, Label::negative, true, 0, 0.0, ""},
                                 {"c", Label::negative, 0.99, Label::positive, false, 0, 0.0, ""}};
  EXPECT_EQ(auc(q), 1.0);
}

TEST(Gain, Arithmetic) {
  EXPECT_NEAR(relative_gain(0.55, 0.50), 10.0, 1e-12);
  EXPECT_EQ(format_gain(relative_gain(0.55, 0.50)), "+10.0%");
  EXPECT_EQ(relative_gain(0.7, 0.7), 0.0);
  EXPECT_THROW(relative_gain(0.5, 0.0), PreconditionError);
  // SBIC Lewd at 100 annotations: 54.0 -> 58.2
  EXPECT_NEAR(relative_gain(58.2, 54.0), 7.78, 5e-3);
  EXPECT_EQ(format_gain(relative_gain(58.2, 54.0), 2), "+7.78%");
  EXPECT_EQ(format_gain(relative_gain(0.45, 0.5)), "-10.0%");
}

TEST(Gain, Antisymmetry) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double a = 0.1 + rng.uniform(), b = 0.1 + rng.uniform();
    EXPECT_NEAR(relative_gain(a, b), -100.0 * (b - a) / b, 1e-12);
  }
}

TEST(Summarize, IdenticalArmsGiveZeroGain) {
  std::vector<RunResult> t, b;
  for (int r = 0; r < 5; ++r) {
    t.push_back(run(r, 100, 0.6 + 0.01 * r));
    b.push_back(run(r, 100, 0.6 + 0.01 * r, 0, "baseline"));
  }
  const auto g = summarize(t, b);
  ASSERT_EQ(g.budgets.size(), 1u);
  EXPECT_EQ(g.budgets[0].gain_of_means, 0.0);
  EXPECT_EQ(g.budgets[0].mean_of_gains, 0.0);
  for (double x : g.budgets[0].per_repetition_gains) EXPECT_EQ(x, 0.0);
}

TEST(Summarize, DualAggregationDiffers) {
  // rep 0: 0.5 -> 0.6 (+20%), rep 1: 0.8 -> 0.8 (0%)
  const std::vector<RunResult> t = {run(0, 100, 0.6), run(1, 100, 0.8)};
  const std::vector<RunResult> b = {run(0, 100, 0.5, 0, "baseline"), run(1, 100, 0.8, 0, "baseline")};
  const auto g = summarize(t, b).budgets.at(0);
  EXPECT_NEAR(g.mean_of_gains, 10.0, 1e-12);
  EXPECT_NEAR(g.gain_of_means, 100.0 / 13.0, 1e-12);  // 0.05 / 0.65
  EXPECT_NEAR(g.mean_of_gains - g.gain_of_means, 30.0 / 13.0, 1e-12);
}

TEST(Summarize, UnmatchedCellsRejected) {
  EXPECT_THROW(summarize({run(0, 100, 0.6)}, {run(1, 100, 0.5, 0, "baseline")}), PreconditionError);
  EXPECT_THROW(summarize({run(0, 100, 0.6)}, {run(0, 100, 0.5, 0, "baseline"), run(0, 200, 0.5, 0, "baseline")}),
               PreconditionError);
  auto degenerate = run(0, 100, 0.6);
  degenerate.auc.reset();
  EXPECT_THROW(summarize({degenerate}, {run(0, 100, 0.5, 0, "baseline")}), PreconditionError);
}

TEST(Summarize, ShotRatioColumnFollowsRuns) {
  std::vector<RunResult> t, b;
  const std::vector<std::size_t> budgets = {100, 500, 1000};
  for (int r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      t.push_back(run(r, budgets[i], 0.7, 0.1 * static_cast<double>(i + 1) + 0.01 * r));
      b.push_back(run(r, budgets[i], 0.6, 1.0, "baseline"));
    }
  const auto g = summarize(t, b);
  ASSERT_EQ(g.budgets.size(), 3u);
  for (std::size_t i = 1; i < g.budgets.size(); ++i)
    EXPECT_GE(g.budgets[i].mean_shot_ratio, g.budgets[i - 1].mean_shot_ratio);
}

TEST(Report, TableLayout) {
  const std::vector<RunResult> t = {run(0, 100, 0.582), run(0, 1000, 0.700)};
  const std::vector<RunResult> b = {run(0, 100, 0.540, 0, "baseline"), run(0, 1000, 0.720, 0, "baseline")};
  const auto table = render_table({summarize(t, b)});
  EXPECT_EQ(table,
            "Source  Target              AUC@100     @1000\n"
            "---------------------------------------------\n"
            "None    sexually_explicit      54.0      72.0\n"
            "lewd                       ↑8% 58.2  ↓3% 70.0\n");
}

TEST(Report, SummaryCsv) {
  const std::vector<RunResult> t = {run(0, 100, 0.6), run(1, 100, 0.8)};
  const std::vector<RunResult> b = {run(0, 100, 0.5, 0, "baseline"), run(1, 100, 0.8, 0, "baseline")};
  std::ostringstream s;
  write_summary_csv({summarize(t, b)}, s);
  EXPECT_EQ(s.str(),
            "target,source,budget,repetitions,mean_auc_baseline,mean_auc_transfer,gain_of_means_pct,"
            "mean_of_gains_pct,mean_shot_ratio\n"
            "sexually_explicit,lewd,100,2,0.650000,0.700000,7.6923,10.0000,0.000000\n");
}

TEST(RunResultJson, RoundTrip) {
  auto r = run(3, 100, 0.625, 0.4);
  r.queries = {{"a", Label::positive, 0.9, Label::positive, true, 32, 0.25, ""},
               {"b", Label::negative, 0.0, Label::negative, false, 0, 0.0, "no probability"}};
  r.annotated_ids = {"x", "y"};
  r.flags = {"single_class_annotations"};
  r.config_hash = "abc";
  EXPECT_EQ(run_result_from_json(nlohmann::json::parse(to_json(r).dump())), r);
  r.auc.reset();
  EXPECT_EQ(run_result_from_json(nlohmann::json::parse(to_json(r).dump())), r);
}
