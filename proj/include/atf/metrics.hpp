#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/run_result.hpp"

namespace atf {

struct ScoredLabel {
  double score;
  Label label;
};

/// Rank-based (Mann-Whitney) AUC; tied scores share their average rank,
/// so each tied positive/negative pair counts 1/2. Ranks are kept doubled
/// so the statistic is an exact integer until the final division.
inline double auc(std::span<const ScoredLabel> data) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& d : data)
    if (std::isnan(d.score)) throw PreconditionError("metrics", "NaN score");
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return data[a].score < data[b].score; });
  std::uint64_t n_pos = 0;
  std::uint64_t rank_sum_x2 = 0;  // sum over positives of 2 * rank (1-based)
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && data[order[j]].score == data[order[i]].score) ++j;
    const std::uint64_t tied_rank_x2 = i + 1 + j;  // (i+1) + j = 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (data[order[k]].label == Label::positive) {
        ++n_pos;
        rank_sum_x2 += tied_rank_x2;
      }
    }
    i = j;
  }
  const std::uint64_t n_neg = data.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw PreconditionError("metrics", "AUC undefined: scores carry a single class");
  const std::uint64_t u_x2 = rank_sum_x2 - n_pos * (n_pos + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double auc(const std::vector<ScoredLabel>& data) { return auc(std::span<const ScoredLabel>(data)); }

/// AUC over the valid queries of a run.
inline double auc(const std::vector<QueryOutcome>& queries) {
  std::vector<ScoredLabel> v;
  for (const auto& q : queries)
    if (q.valid) v.push_back({q.score, q.truth});
  return auc(v);
}

/// 100 * (transfer - baseline) / baseline.
inline double relative_gain(double transfer_auc, double baseline_auc) {
  if (!(baseline_auc > 0.0)) throw PreconditionError("metrics", "baseline AUC must be > 0");
  return 100.0 * (transfer_auc - baseline_auc) / baseline_auc;
}

struct BudgetGain {
  std::size_t budget = 0;
  std::size_t repetitions = 0;
  double mean_auc_baseline = 0.0;
  double mean_auc_transfer = 0.0;
  double gain_of_means = 0.0;   // relative_gain(mean transfer, mean baseline)
  double mean_of_gains = 0.0;   // mean over repetitions of relative_gain
  std::vector<double> per_repetition_gains;
  double mean_shot_ratio = 0.0;
};

/// Per-budget gains of a transfer arm over its matched baseline. The
/// covariates map holds scenario-level values consumed by `gain_correlates`.
struct GainReport {
  std::string target;
  std::optional<std::string> source;
  std::vector<BudgetGain> budgets;
  std::map<std::string, double> covariates;
};

/// Pair each transfer run with the baseline run of the same (repetition,
/// budget) and aggregate both ways.
inline GainReport summarize(const std::vector<RunResult>& results, const std::vector<RunResult>& baselines) {
  if (results.empty()) throw PreconditionError("metrics", "no results to summarize");
  std::map<std::pair<int, std::size_t>, const RunResult*> base;
  for (const auto& b : baselines) base[{b.repetition, b.budget}] = &b;

  GainReport report;
  report.target = results.front().target;
  report.source = results.front().source;

  std::map<std::size_t, std::vector<std::pair<const RunResult*, const RunResult*>>> cells;
  for (const auto& r : results) {
    if (r.target != report.target)
      throw PreconditionError("metrics", "results mix targets '" + report.target + "' and '" + r.target + "'");
    auto it = base.find({r.repetition, r.budget});
    if (it == base.end())
      throw PreconditionError("metrics", "no baseline for repetition " + std::to_string(r.repetition) +
                                             " budget " + std::to_string(r.budget));
    cells[r.budget].emplace_back(&r, it->second);
  }
  if (base.size() != results.size())
    throw PreconditionError("metrics", "baseline has cells without a matching transfer run");

  for (auto& [budget, pairs] : cells) {
    std::sort(pairs.begin(), pairs.end(),
              [](const auto& a, const auto& b) { return a.first->repetition < b.first->repetition; });
    BudgetGain g;
    g.budget = budget;
    double sum_t = 0, sum_b = 0, sum_ratio = 0;
    for (const auto& [t, b] : pairs) {
      if (!t->auc || !b->auc)
        throw PreconditionError("metrics", "degenerate run at repetition " + std::to_string(t->repetition) +
                                               " budget " + std::to_string(budget));
      sum_t += *t->auc;
      sum_b += *b->auc;
      sum_ratio += t->mean_shot_ratio;
      g.per_repetition_gains.push_back(relative_gain(*t->auc, *b->auc));
    }
    const auto n = static_cast<double>(pairs.size());
    g.repetitions = pairs.size();
    g.mean_auc_transfer = sum_t / n;
    g.mean_auc_baseline = sum_b / n;
    g.gain_of_means = relative_gain(g.mean_auc_transfer, g.mean_auc_baseline);
    g.mean_of_gains =
        std::accumulate(g.per_repetition_gains.begin(), g.per_repetition_gains.end(), 0.0) / n;
    g.mean_shot_ratio = sum_ratio / n;
    report.budgets.push_back(std::move(g));
  }
  return report;
}

/// Mean AUC per budget over the non-degenerate runs of one arm.
inline std::map<std::size_t, double> mean_auc_by_budget(const std::vector<RunResult>& runs) {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : runs) {
    if (!r.auc) continue;
    auto& [s, n] = acc[r.budget];
    s += *r.auc;
    ++n;
  }
  std::map<std::size_t, double> out;
  for (const auto& [b, sn] : acc) out[b] = sn.first / static_cast<double>(sn.second);
  return out;
}

namespace detail {
inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}
}  // namespace detail

/// "+10.0%" style rendering of a gain.
inline std::string format_gain(double pct, int decimals = 1) {
  const auto s = detail::fixed(pct, decimals);
  return (pct >= 0 && s.front() != '-' ? "+" : "") + s + "%";
}

inline void write_summary_csv(const std::vector<GainReport>& reports, std::ostream& out) {
  out << "target,source,budget,repetitions,mean_auc_baseline,mean_auc_transfer,"
         "gain_of_means_pct,mean_of_gains_pct,mean_shot_ratio\n";
  for (const auto& r : reports)
    for (const auto& g : r.budgets)
      out << r.target << ',' << r.source.value_or("") << ',' << g.budget << ',' << g.repetitions << ','
          << detail::fixed(g.mean_auc_baseline, 6) << ',' << detail::fixed(g.mean_auc_transfer, 6) << ','
          << detail::fixed(g.gain_of_means, 4) << ',' << detail::fixed(g.mean_of_gains, 4) << ','
          << detail::fixed(g.mean_shot_ratio, 6) << '\n';
}

/// Text table in the layout of the transfer results: one baseline ("None")
/// row per target followed by one row per source, AUC x 100 with one
/// decimal, transfer cells prefixed by the mean per-repetition gain.
inline std::string render_table(const std::vector<GainReport>& reports) {
  std::vector<std::size_t> budgets;
  for (const auto& r : reports)
    for (const auto& g : r.budgets)
      if (std::find(budgets.begin(), budgets.end(), g.budget) == budgets.end()) budgets.push_back(g.budget);
  std::sort(budgets.begin(), budgets.end());

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Source", "Target"};
  for (std::size_t i = 0; i < budgets.size(); ++i)
    header.push_back((i == 0 ? "AUC@" : "@") + std::to_string(budgets[i]));
  rows.push_back(header);

  auto cell = [](const GainReport& r, std::size_t b) -> const BudgetGain* {
    for (const auto& g : r.budgets)
      if (g.budget == b) return &g;
    return nullptr;
  };
  std::vector<std::string> targets;
  for (const auto& r : reports)
    if (std::find(targets.begin(), targets.end(), r.target) == targets.end()) targets.push_back(r.target);
  for (const auto& target : targets) {
    const GainReport* first = nullptr;
    for (const auto& r : reports)
      if (r.target == target && !first) first = &r;
    std::vector<std::string> base{"None", target};
    for (auto b : budgets) {
      const auto* g = cell(*first, b);
      base.push_back(g ? detail::fixed(100.0 * g->mean_auc_baseline, 1) : "-");
    }
    rows.push_back(base);
    for (const auto& r : reports) {
      if (r.target != target) continue;
      std::vector<std::string> row{r.source.value_or("?"), ""};
      for (auto b : budgets) {
        const auto* g = cell(r, b);
        if (!g) {
          row.push_back("-");
          continue;
        }
        const auto arrow = g->mean_of_gains >= 0 ? "↑" : "↓";
        row.push_back(std::string(arrow) + detail::fixed(std::fabs(g->mean_of_gains), 0) + "% " +
                      detail::fixed(100.0 * g->mean_auc_transfer, 1));
      }
      rows.push_back(row);
    }
  }

  auto display_width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s)
      if ((c & 0xC0) != 0x80) ++w;
    return w;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], display_width(row[i]));
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      const auto& s = rows[r][i];
      const auto pad = std::string(widths[i] - display_width(s), ' ');
      line += i < 2 ? s + pad : pad + s;
      if (i + 1 < rows[r].size()) line += "  ";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
    if (r == 0) out << std::string(display_width(line), '-') << '\n';
  }
  return out.str();
}

}  // namespace atf
