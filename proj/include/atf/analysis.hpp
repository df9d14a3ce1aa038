#pragma once

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/http_util.hpp"
#include "atf/metrics.hpp"
#include "atf/random.hpp"
#include "atf/vectorizer.hpp"

namespace atf {

/// Pearson product-moment correlation.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw PreconditionError("analysis", "pearson needs equal-length vectors");
  if (a.size() < 2) throw PreconditionError("analysis", "pearson needs at least 2 points");
  // Tested directly: rounding in the mean can leave a constant vector with tiny variance.
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(a) || constant(b)) throw PreconditionError("analysis", "pearson undefined for a constant vector");
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw PreconditionError("analysis", "pearson undefined for a constant vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(std::span<const double>(a), std::span<const double>(b));
}

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> r;  // NaN where undefined
};

/// Pairwise Pearson r between the label dimensions of a bundle, each pair
/// computed over the posts labeled under both.
inline CorrelationMatrix label_correlations(const DatasetBundle& bundle) {
  CorrelationMatrix m;
  for (const auto& d : bundle.dimensions()) m.names.push_back(d.name);
  const auto k = m.names.size();
  m.r.assign(k, std::vector<double>(k, std::nan("")));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      std::vector<double> a, b;
      for (const auto& p : bundle.posts()) {
        auto la = bundle.label(p.id, m.names[i]);
        auto lb = bundle.label(p.id, m.names[j]);
        if (!la || !lb) continue;
        a.push_back(*la == Label::positive);
        b.push_back(*lb == Label::positive);
      }
      try {
        m.r[i][j] = m.r[j][i] = i == j ? 1.0 : pearson(a, b);
      } catch (const PreconditionError&) {
      }
    }
  }
  return m;
}

/// Square heat-table CSV: header row of names, then one row per name.
inline void write_grid_csv(const std::vector<std::string>& names, const std::vector<std::vector<double>>& grid,
                           std::ostream& out) {
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i];
    for (double v : grid[i]) {
      if (std::isnan(v)) {
        out << ',';
      } else {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        out << ',' << buf;
      }
    }
    out << '\n';
  }
}

struct SvmOptions {
  double lambda = 1e-4;
  int epochs = 20;
  std::uint64_t seed = 0;
};

/// Linear SVM on sparse features trained by stochastic subgradient descent
/// on the L2-regularized hinge loss
///   lambda/2 |w|^2 + mean_i max(0, 1 - y_i (w.x_i + b)).
/// Step size 1 / (lambda (t + t0)) with t0 = 1/lambda; the bias is
/// unregularized and moves at 1/100 of the weight step. The sample order is
/// shuffled once from the seed and reused every epoch. The model kept is the
/// epoch-end iterate with the lowest objective, so the returned trace never
/// increases.
class LinearSvm {
 public:
  /// `labels` are +1 / -1. Returns the objective after each epoch.
  std::vector<double> train(const std::vector<SparseVector>& x, const std::vector<int>& labels, std::size_t dim,
                            const SvmOptions& options) {
    if (x.size() != labels.size() || x.empty()) throw PreconditionError("analysis", "bad SVM training set");
    w_.assign(dim, 0.0);
    scale_ = 1.0;
    bias_ = 0.0;
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, "svm"));
    rng.shuffle(order);
    const double t0 = 1.0 / options.lambda;
    double t = 0.0;
    std::vector<double> trace;
    std::vector<double> best_w;
    double best_bias = 0.0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
      for (auto i : order) {
        const double eta = 1.0 / (options.lambda * (t + t0));
        const double y = labels[i];
        const double margin = y * decision(x[i]);
        scale_ *= 1.0 - eta * options.lambda;
        if (margin < 1.0) {
          const double step = eta * y / scale_;
          for (const auto& [j, v] : x[i].entries) w_[j] += step * v;
          bias_ += 0.01 * eta * y;
        }
        if (scale_ < 1e-9) renormalize();
        t += 1.0;
      }
      renormalize();
      const double obj = objective(x, labels, options.lambda);
      if (trace.empty() || obj < trace.back()) {
        best_w = w_;
        best_bias = bias_;
        trace.push_back(obj);
      } else {
        trace.push_back(trace.back());
      }
    }
    w_ = std::move(best_w);
    bias_ = best_bias;
    return trace;
  }

  double decision(const SparseVector& v) const {
    double s = 0.0;
    for (const auto& [j, val] : v.entries)
      if (j < w_.size()) s += w_[j] * val;
    return s * scale_ + bias_;
  }

  int predict(const SparseVector& v) const { return decision(v) >= 0.0 ? 1 : -1; }

  double objective(const std::vector<SparseVector>& x, const std::vector<int>& labels, double lambda) const {
    double ww = 0.0;
    for (double v : w_) ww += v * v;
    ww *= scale_ * scale_;
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) loss += std::max(0.0, 1.0 - labels[i] * decision(x[i]));
    return 0.5 * lambda * ww + loss / static_cast<double>(x.size());
  }

 private:
  void renormalize() {
    for (auto& v : w_) v *= scale_;
    scale_ = 1.0;
  }

  std::vector<double> w_;
  double scale_ = 1.0;
  double bias_ = 0.0;
};

struct SeparabilityResult {
  std::string pair_a;
  std::string pair_b;
  double accuracy = 0.0;  // held-out
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  bool degenerate = false;  // both sides hold the same texts
};

/// How well a linear SVM on TF-IDF features tells two post sets apart,
/// measured on a seeded, side-stratified 80/20 held-out split.
inline SeparabilityResult separability(const std::vector<Post>& side_a, const std::vector<Post>& side_b,
                                       std::uint64_t seed, SvmOptions options = {}) {
  if (side_a.size() < 20 || side_b.size() < 20)
    throw PreconditionError("analysis", "separability needs at least 20 posts per side");
  std::vector<std::string_view> texts;
  for (const auto* side : {&side_a, &side_b})
    for (const auto& p : *side) texts.push_back(p.text);
  if (std::all_of(texts.begin(), texts.end(), [&](std::string_view t) { return t == texts.front(); }))
    throw DataError("analysis", "degenerate feature space: all texts identical");
  const auto vocab = fit_texts(texts);

  SeparabilityResult out;
  {
    std::vector<std::string> a, b;
    for (const auto& p : side_a) a.push_back(p.text);
    for (const auto& p : side_b) b.push_back(p.text);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    out.degenerate = a == b;
  }

  std::vector<SparseVector> train_x, test_x;
  std::vector<int> train_y, test_y;
  Rng rng(derive_seed(seed, "separability"));
  auto place = [&](const std::vector<Post>& side, int y) {
    std::vector<std::size_t> idx(side.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(side.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto v = transform(vocab, side[idx[k]].text);
      if (k < n_train) {
        train_x.push_back(std::move(v));
        train_y.push_back(y);
      } else {
        test_x.push_back(std::move(v));
        test_y.push_back(y);
      }
    }
  };
  place(side_a, +1);
  place(side_b, -1);

  options.seed = derive_seed(seed, "svm-order");
  LinearSvm svm;
  svm.train(train_x, train_y, vocab.size(), options);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) correct += svm.predict(test_x[i]) == test_y[i];
  out.accuracy = static_cast<double>(correct) / static_cast<double>(test_x.size());
  out.n_train = train_x.size();
  out.n_test = test_x.size();
  return out;
}

/// Sentence-embedding provider. Must be thread-safe.
class EmbeddingEndpoint {
 public:
  virtual ~EmbeddingEndpoint() = default;
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

/// POST {"texts": [...]} -> {"vectors": [[...], ...]}
class HttpEmbeddingEndpoint : public EmbeddingEndpoint {
 public:
  explicit HttpEmbeddingEndpoint(const std::string& url, std::size_t batch_size = 64)
      : batch_size_(batch_size) {
    std::tie(base_, path_) = split_url(url);
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    std::vector<std::vector<double>> out;
    httplib::Client client(base_);
    client.set_read_timeout(std::chrono::seconds(120));
    for (std::size_t i = 0; i < texts.size(); i += batch_size_) {
      const std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(i),
                                           texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), i + batch_size_)));
      auto res = client.Post(path_, nlohmann::json{{"texts", chunk}}.dump(), "application/json");
      if (!res) throw TransientError("analysis", "embedding endpoint unreachable: " + httplib::to_string(res.error()));
      if (res->status != 200)
        throw Error("analysis", "embedding endpoint returned HTTP " + std::to_string(res->status));
      try {
        const auto vecs = nlohmann::json::parse(res->body).at("vectors").get<std::vector<std::vector<double>>>();
        if (vecs.size() != chunk.size()) throw Error("analysis", "embedding endpoint returned wrong vector count");
        out.insert(out.end(), vecs.begin(), vecs.end());
      } catch (const nlohmann::json::exception& e) {
        throw Error("analysis", std::string("malformed embedding response: ") + e.what());
      }
    }
    return out;
  }

 private:
  std::string base_;
  std::string path_;
  std::size_t batch_size_;
};

inline double dense_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw PreconditionError("analysis", "embedding dimensions differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Mean cosine over all cross pairs of embeddings, each side subsampled
/// (seeded) to at most `max_per_side` posts.
inline double mean_embedding_similarity(const std::vector<Post>& side_a, const std::vector<Post>& side_b,
                                        EmbeddingEndpoint& endpoint, std::uint64_t seed = 0,
                                        std::size_t max_per_side = 500) {
  if (side_a.empty() || side_b.empty()) throw PreconditionError("analysis", "similarity of an empty set");
  Rng rng(derive_seed(seed, "embedding-sample"));
  auto sample = [&](const std::vector<Post>& side) {
    std::vector<std::string> texts;
    for (const auto& p : side) texts.push_back(p.text);
    if (texts.size() > max_per_side) {
      rng.shuffle(texts);
      texts.resize(max_per_side);
    }
    return texts;
  };
  const auto ea = endpoint.embed(sample(side_a));
  const auto eb = endpoint.embed(sample(side_b));
  double sum = 0.0;
  for (const auto& a : ea)
    for (const auto& b : eb) sum += dense_cosine(a, b);
  return sum / (static_cast<double>(ea.size()) * static_cast<double>(eb.size()));
}

enum class Covariate { baseline_auc, label_imbalance_gap, source_target_label_corr, separability };

inline const char* to_string(Covariate c) {
  switch (c) {
    case Covariate::baseline_auc: return "baseline_auc";
    case Covariate::label_imbalance_gap: return "label_imbalance_gap";
    case Covariate::source_target_label_corr: return "source_target_label_corr";
    case Covariate::separability: return "separability";
  }
  return "";
}

inline Covariate covariate_from_string(std::string_view s) {
  for (auto c : {Covariate::baseline_auc, Covariate::label_imbalance_gap, Covariate::source_target_label_corr,
                 Covariate::separability})
    if (s == to_string(c)) return c;
  throw PreconditionError("analysis", "unknown covariate '" + std::string(s) + "'");
}

enum class GainConvention { mean_of_gains, gain_of_means };

/// Pearson r between a covariate and relative gain across every (report,
/// budget) cell. `baseline_auc` comes from each cell; the other covariates
/// are read from the report's covariates map.
inline double gain_correlates(const std::vector<GainReport>& reports, Covariate covariate,
                              GainConvention convention = GainConvention::mean_of_gains) {
  std::vector<double> xs, gains;
  for (const auto& r : reports) {
    for (const auto& g : r.budgets) {
      if (covariate == Covariate::baseline_auc) {
        xs.push_back(g.mean_auc_baseline);
      } else {
        auto it = r.covariates.find(to_string(covariate));
        if (it == r.covariates.end())
          throw PreconditionError("analysis", std::string("report lacks covariate '") + to_string(covariate) + "'");
        xs.push_back(it->second);
      }
      gains.push_back(convention == GainConvention::mean_of_gains ? g.mean_of_gains : g.gain_of_means);
    }
  }
  if (xs.size() < 3) throw PreconditionError("analysis", "gain_correlates needs at least 3 points");
  return pearson(xs, gains);
}

}  // namespace atf
