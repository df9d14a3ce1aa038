#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/vectorizer.hpp"

namespace atf {

/// Labeled pool the shots are drawn from: pre-labeled source-domain data
/// plus oracle-labeled target-domain posts.
struct SupportSet {
  std::vector<LabeledExample> source_examples;
  std::vector<LabeledExample> target_examples;

  std::size_t size() const { return source_examples.size() + target_examples.size(); }
  bool empty() const { return size() == 0; }

  std::vector<LabeledExample> all() const {
    std::vector<LabeledExample> out = source_examples;
    out.insert(out.end(), target_examples.begin(), target_examples.end());
    return out;
  }
};

struct Shot {
  LabeledExample example;
  double similarity = 0.0;
  int rank = 0;  // 1-based position in prompt order
};

enum class ShotOrder {
  ascending_similarity,   // most similar shot sits right before the query
  descending_similarity,
};

struct SelectionPolicy {
  int n_shots = 32;
  ShotOrder order = ShotOrder::ascending_similarity;
  // Split each class's quota evenly between source and target examples
  // where both are available. Off by default.
  bool domain_balanced = false;

  int per_class() const { return n_shots / 2; }

  void validate() const {
    if (n_shots < 2 || n_shots % 2 != 0)
      throw PreconditionError("selector", "n_shots must be even and >= 2");
  }
};

/// Thrown when the support set has no example of one class.
class ClassAbsentError : public Error {
 public:
  ClassAbsentError(Label missing)
      : Error("selector", std::string("support set has no ") +
                              (missing == Label::positive ? "positive" : "negative") +
                              " examples"),
        missing_(missing) {}
  Label missing() const { return missing_; }

 private:
  Label missing_;
};

namespace detail {

struct Candidate {
  const LabeledExample* example;
  double similarity;
};

// Selection priority: higher similarity first, then lexicographic post id.
inline bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  if (a.example->post.id != b.example->post.id) return a.example->post.id < b.example->post.id;
  return a.example->post.dataset < b.example->post.dataset;
}

inline std::vector<Candidate> top_k(std::vector<Candidate> c, std::size_t k) {
  k = std::min(k, c.size());
  std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k), c.end(), ranks_before);
  c.resize(k);
  return c;
}

inline std::vector<Candidate> pick_class(std::vector<Candidate> c, std::size_t k, bool domain_balanced) {
  if (!domain_balanced) return top_k(std::move(c), k);
  std::vector<Candidate> src, tgt;
  for (const auto& x : c) (x.example->provenance == Provenance::source ? src : tgt).push_back(x);
  const std::size_t want_tgt = std::min(tgt.size(), k - std::min(src.size(), k / 2));
  const std::size_t want_src = std::min(src.size(), k - want_tgt);
  auto out = top_k(std::move(src), want_src);
  auto t = top_k(std::move(tgt), want_tgt);
  out.insert(out.end(), t.begin(), t.end());
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

}  // namespace detail

/// Shot selection against precomputed support vectors. Build once per
/// support set and vocabulary, then call `select` for each query.
class ShotSelector {
 public:
  ShotSelector(const SupportSet& support, const Vocabulary& vocab, SelectionPolicy policy)
      : vocab_(vocab), policy_(policy) {
    policy_.validate();
    std::set<std::pair<std::string, std::string>> seen;
    auto add = [&](const LabeledExample& e) {
      if (!seen.insert({e.post.dataset, e.post.id}).second) return;
      pool_.push_back(&e);
      vectors_.push_back(transform(vocab_, e.post));
    };
    for (const auto& e : support.source_examples) add(e);
    for (const auto& e : support.target_examples) add(e);
  }

  std::vector<Shot> select(const Post& query) const { return select(query, transform(vocab_, query)); }

  std::vector<Shot> select(const Post& query, const SparseVector& qv) const {
    std::vector<detail::Candidate> pos, neg;
    for (std::size_t i = 0; i < pool_.size(); ++i) {
      const auto* e = pool_[i];
      if (e->post.id == query.id && e->post.dataset == query.dataset) continue;
      (e->label == Label::positive ? pos : neg).push_back({e, cosine(vectors_[i], qv)});
    }
    if (pos.empty()) throw ClassAbsentError(Label::positive);
    if (neg.empty()) throw ClassAbsentError(Label::negative);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(policy_.per_class()),
                                         std::min(pos.size(), neg.size()));
    auto chosen = detail::pick_class(std::move(pos), k, policy_.domain_balanced);
    auto chosen_neg = detail::pick_class(std::move(neg), k, policy_.domain_balanced);
    chosen.insert(chosen.end(), chosen_neg.begin(), chosen_neg.end());

    // Prompt order: the reverse of selection priority places the strongest
    // shot adjacent to the query.
    std::sort(chosen.begin(), chosen.end(), detail::ranks_before);
    if (policy_.order == ShotOrder::ascending_similarity) std::reverse(chosen.begin(), chosen.end());

    std::vector<Shot> shots;
    shots.reserve(chosen.size());
    for (const auto& c : chosen)
      shots.push_back({*c.example, c.similarity, static_cast<int>(shots.size()) + 1});
    return shots;
  }

  const SelectionPolicy& policy() const { return policy_; }

 private:
  const Vocabulary& vocab_;
  SelectionPolicy policy_;
  std::vector<const LabeledExample*> pool_;
  std::vector<SparseVector> vectors_;
};

/// Class-balanced top-similarity shots for `query`. Returns
/// 2 * min(per_class, #positive, #negative) shots in policy order.
inline std::vector<Shot> select_shots(const SupportSet& support, const Post& query,
                                      const Vocabulary& vocab, const SelectionPolicy& policy) {
  return ShotSelector(support, vocab, policy).select(query);
}

/// Fraction of shots that came from the target domain.
inline double shot_provenance_ratio(const std::vector<Shot>& shots) {
  if (shots.empty()) throw PreconditionError("selector", "provenance ratio of an empty shot list");
  const auto n = std::count_if(shots.begin(), shots.end(), [](const Shot& s) {
    return s.example.provenance == Provenance::target;
  });
  return static_cast<double>(n) / static_cast<double>(shots.size());
}

/// One selection trace record.
inline nlohmann::ordered_json selection_trace(const Post& query, const std::vector<Shot>& shots) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : shots)
    arr.push_back({{"rank", s.rank},
                   {"id", s.example.post.id},
                   {"dataset", s.example.post.dataset},
                   {"similarity", s.similarity},
                   {"label", s.example.label == Label::positive ? 1 : 0},
                   {"provenance", to_string(s.example.provenance)}});
  nlohmann::ordered_json rec;
  rec["query_id"] = query.id;
  rec["shots"] = std::move(arr);
  return rec;
}

}  // namespace atf
