#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/text.hpp"

namespace atf {

/// L2 norm of the weights, summed in index order.
template <typename Entries>
double l2_norm(const Entries& entries) {
  double s = 0.0;
  for (const auto& e : entries) s += e.second * e.second;
  return std::sqrt(s);
}

/// (index, weight) pairs with strictly increasing indices.
struct SparseVector {
  std::vector<std::pair<std::uint32_t, double>> entries;
  double norm = 0.0;

  SparseVector() = default;

  /// Takes entries in any order; duplicates are summed.
  explicit SparseVector(std::vector<std::pair<std::uint32_t, double>> raw) {
    std::sort(raw.begin(), raw.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [i, w] : raw) {
      if (!std::isfinite(w)) throw PreconditionError("vectorizer", "non-finite weight");
      if (!entries.empty() && entries.back().first == i)
        entries.back().second += w;
      else
        entries.emplace_back(i, w);
    }
    norm = l2_norm(entries);
  }

  bool empty() const { return entries.empty(); }
};

/// Cosine similarity; 0 when either vector has zero norm.
inline double cosine(const SparseVector& u, const SparseVector& v) {
  if (u.norm == 0.0 || v.norm == 0.0) return 0.0;
  double dot = 0.0;
  auto a = u.entries.begin();
  auto b = v.entries.begin();
  while (a != u.entries.end() && b != v.entries.end()) {
    if (a->first < b->first) {
      ++a;
    } else if (b->first < a->first) {
      ++b;
    } else {
      dot += a->second * b->second;
      ++a;
      ++b;
    }
  }
  return std::clamp(dot / (u.norm * v.norm), -1.0, 1.0);
}

/// Fitted TF-IDF basis. Terms are indexed in lexicographic order.
class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const { return terms_.size(); }
  std::size_t n_docs() const { return n_docs_; }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<std::uint32_t>& document_frequency() const { return df_; }
  const std::vector<double>& idf() const { return idf_; }

  std::optional<std::uint32_t> index(std::string_view term) const {
    auto it = index_.find(std::string(term));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::uint32_t df(std::string_view term) const {
    auto i = index(term);
    return i ? df_[*i] : 0;
  }

  /// Tab-separated `term index idf` lines for debugging.
  void dump_tsv(std::ostream& out) const {
    out.precision(17);
    for (std::size_t i = 0; i < terms_.size(); ++i)
      out << terms_[i] << '\t' << i << '\t' << idf_[i] << '\n';
  }

  template <typename Texts>
  friend Vocabulary fit_texts(const Texts& texts);

 private:
  std::vector<std::string> terms_;
  std::vector<std::uint32_t> df_;
  std::vector<double> idf_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::size_t n_docs_ = 0;
};

/// Fit over any range of strings. idf(t) = ln((1 + n) / (1 + df(t))) + 1.
template <typename Texts>
Vocabulary fit_texts(const Texts& texts) {
  std::map<std::string, std::uint32_t> df;
  std::size_t n = 0;
  for (const auto& text : texts) {
    ++n;
    auto tokens = tokenize(text);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (auto& t : tokens) ++df[std::move(t)];
  }
  if (n == 0) throw PreconditionError("vectorizer", "cannot fit on an empty corpus");
  if (df.empty()) throw PreconditionError("vectorizer", "corpus yields zero tokens");
  Vocabulary v;
  v.n_docs_ = n;
  v.terms_.reserve(df.size());
  for (auto& [term, count] : df) {
    const auto idx = static_cast<std::uint32_t>(v.terms_.size());
    v.index_.emplace(term, idx);
    v.terms_.push_back(term);
    v.df_.push_back(count);
    v.idf_.push_back(std::log((1.0 + static_cast<double>(n)) / (1.0 + count)) + 1.0);
  }
  return v;
}

inline Vocabulary fit(std::span<const Post> corpus) {
  std::vector<std::string_view> texts;
  texts.reserve(corpus.size());
  for (const auto& p : corpus) texts.push_back(p.text);
  return fit_texts(texts);
}

/// Raw tf x idf weights before normalization.
inline SparseVector tfidf_weights(const Vocabulary& vocab, std::string_view text) {
  std::vector<std::pair<std::uint32_t, double>> raw;
  for (const auto& t : tokenize(text))
    if (auto i = vocab.index(t)) raw.emplace_back(*i, vocab.idf()[*i]);
  return SparseVector(std::move(raw));
}

/// L2-normalized tf x idf; out-of-vocabulary tokens are dropped, so an
/// all-OOV text maps to the zero vector.
inline SparseVector transform(const Vocabulary& vocab, std::string_view text) {
  auto v = tfidf_weights(vocab, text);
  if (v.norm == 0.0) return v;
  const double n = v.norm;
  for (auto& e : v.entries) e.second /= n;
  v.norm = l2_norm(v.entries);
  return v;
}

inline SparseVector transform(const Vocabulary& vocab, const Post& post) {
  return transform(vocab, post.text);
}

}  // namespace atf
