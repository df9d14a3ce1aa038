#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <thread>

#include "atf/analysis.hpp"
#include "fixtures.hpp"

using namespace atf;

namespace {

// Phi coefficient from the 2x2 contingency table; equals Pearson r on 0/1 data.
double phi(const std::vector<double>& a, const std::vector<double>& b) {
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && b[i]) ++n11;
    else if (a[i]) ++n10;
    else if (b[i]) ++n01;
    else ++n00;
  }
  return (n11 * n00 - n10 * n01) / std::sqrt((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00));
}

std::vector<Post> corpus(Rng& rng, const std::string& prefix, std::size_t n, const std::string& word_prefix,
                         std::size_t vocab) {
  std::vector<Post> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (int k = 0; k < 8; ++k) text += (text.empty() ? "" : " ") + word_prefix + std::to_string(rng.below(vocab));
    out.push_back({prefix + std::to_string(i), text, prefix});
  }
  return out;
}

// Embeds each text as a one-hot topic vector keyed by its first word's prefix.
class TopicEmbedder : public EmbeddingEndpoint {
 public:
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    ++calls;
    std::vector<std::vector<double>> out;
    for (const auto& t : texts) {
      std::vector<double> v(3, 0.0);
      v[t.rfind("alpha", 0) == 0 ? 0 : t.rfind("beta", 0) == 0 ? 1 : 2] = 1.0;
      out.push_back(v);
    }
    return out;
  }
  int calls = 0;
};

BudgetGain cell(std::size_t budget, double baseline, double gain) {
  BudgetGain g;
  g.budget = budget;
  g.mean_auc_baseline = baseline;
  g.mean_of_gains = gain;
  g.gain_of_means = gain;
  return g;
}

}  // namespace

TEST(Pearson, IdentityComplementSymmetry) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(30), b(30);
    for (auto& v : a) v = static_cast<double>(rng.below(2));
    for (auto& v : b) v = static_cast<double>(rng.below(2));
    a[0] = 0, a[1] = 1, b[0] = 0, b[1] = 1;
    EXPECT_NEAR(pearson(a, a), 1.0, 1e-12);
    std::vector<double> na(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) na[i] = 1.0 - a[i];
    EXPECT_NEAR(pearson(a, na), -1.0, 1e-12);
    EXPECT_NEAR(pearson(a, b), pearson(b, a), 1e-12);
    EXPECT_NEAR(pearson(a, b), phi(a, b), 1e-12);
  }
}

TEST(Pearson, Errors) {
  EXPECT_THROW(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{0, 1, 0}), PreconditionError);
  EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{0}), PreconditionError);
  EXPECT_THROW(pearson(std::vector<double>{1, 0}, std::vector<double>{0, 1, 0}), PreconditionError);
}

TEST(Pearson, LowLabelCorrelationFixture) {
  // 1000 posts: 96 lewd, 411 group, 54 both.
  std::vector<double> lewd(1000, 0.0), group(1000, 0.0);
  for (int i = 0; i < 96; ++i) lewd[static_cast<std::size_t>(i)] = 1.0;
  for (int i = 42; i < 42 + 411; ++i) group[static_cast<std::size_t>(i)] = 1.0;
  double both = 0;
  for (std::size_t i = 0; i < 1000; ++i) both += lewd[i] * group[i];
  ASSERT_EQ(both, 54.0);
  const double r = pearson(lewd, group);
  EXPECT_NEAR(r, 0.10, 0.02);
  EXPECT_NEAR(r, phi(lewd, group), 1e-12);
}

TEST(Correlations, MatrixFromBundle) {
  const auto& reg = DimensionRegistry::defaults();
  std::vector<Post> posts;
  std::map<DatasetBundle::LabelKey, Label> labels;
  Rng rng(9);
  std::vector<double> a, b;
  for (int i = 0; i < 300; ++i) {
    const auto id = "p" + std::to_string(i);
    posts.push_back({id, "text " + id, "sbic"});
    const bool lewd = rng.uniform() < 0.3;
    const bool group = rng.uniform() < (lewd ? 0.7 : 0.3);
    labels[{id, "lewd"}] = lewd ? Label::positive : Label::negative;
    labels[{id, "offensive"}] = lewd ? Label::positive : Label::negative;
    if (i % 10) {
      labels[{id, "group"}] = group ? Label::positive : Label::negative;
      a.push_back(lewd);
      b.push_back(group);
    }
  }
  DatasetBundle bundle("sbic", posts, {reg.at("lewd"), reg.at("group"), reg.at("offensive")}, labels);
  const auto m = label_correlations(bundle);
  ASSERT_EQ(m.names, (std::vector<std::string>{"lewd", "group", "offensive"}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m.r[i][i], 1.0);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(m.r[i][j], m.r[j][i], 1e-12);
  }
  EXPECT_NEAR(m.r[0][1], phi(a, b), 1e-12);
  EXPECT_NEAR(m.r[0][2], 1.0, 1e-12);

  std::ostringstream csv;
  write_grid_csv(m.names, m.r, csv);
  std::istringstream lines(csv.str());
  std::string header, row;
  std::getline(lines, header);
  EXPECT_EQ(header, ",lewd,group,offensive");
  std::getline(lines, row);
  EXPECT_EQ(row.substr(0, 14), "lewd,1.000000,");
}

TEST(Correlations, UndefinedPairIsBlank) {
  const auto& reg = DimensionRegistry::defaults();
  std::vector<Post> posts;
  std::map<DatasetBundle::LabelKey, Label> labels;
  for (int i = 0; i < 10; ++i) {
    const auto id = "p" + std::to_string(i);
    posts.push_back({id, "text", "d"});
    labels[{id, "lewd"}] = i % 2 ? Label::positive : Label::negative;
    labels[{id, "group"}] = Label::negative;
  }
  const auto m = label_correlations(DatasetBundle("d", posts, {reg.at("lewd"), reg.at("group")}, labels));
  EXPECT_TRUE(std::isnan(m.r[0][1]));
  std::ostringstream csv;
  write_grid_csv(m.names, m.r, csv);
  EXPECT_NE(csv.str().find("lewd,1.000000,\n"), std::string::npos);
}

TEST(Svm, ObjectiveNonIncreasingOverEpochs) {
  Rng rng(21);
  auto a = corpus(rng, "a", 150, "x", 60);
  auto b = corpus(rng, "b", 150, "y", 60);
  // Overlap the vocabularies a little so the problem is not trivial.
  for (std::size_t i = 0; i < 40; ++i) std::swap(a[i].text, b[i].text);
  std::vector<std::string_view> texts;
  for (const auto* side : {&a, &b})
    for (const auto& p : *side) texts.push_back(p.text);
  const auto vocab = fit_texts(texts);
  std::vector<SparseVector> x;
  std::vector<int> y;
  for (const auto& p : a) x.push_back(transform(vocab, p.text)), y.push_back(1);
  for (const auto& p : b) x.push_back(transform(vocab, p.text)), y.push_back(-1);
  LinearSvm svm;
  SvmOptions opts;
  opts.seed = 5;
  const auto trace = svm.train(x, y, vocab.size(), opts);
  ASSERT_EQ(trace.size(), 20u);
  for (std::size_t e = 1; e < trace.size(); ++e) EXPECT_LE(trace[e], trace[e - 1] + 1e-9) << "epoch " << e;
  EXPECT_LT(trace.back(), 1.0);
}

TEST(Separability, DisjointVocabulariesSeparate) {
  Rng rng(4);
  const auto a = corpus(rng, "a", 200, "alpha", 100);
  const auto b = corpus(rng, "b", 200, "beta", 100);
  const auto r = separability(a, b, 1);
  EXPECT_GE(r.accuracy, 0.95);
  EXPECT_EQ(r.n_train, 320u);
  EXPECT_EQ(r.n_test, 80u);
  EXPECT_FALSE(r.degenerate);
}

TEST(Separability, RandomSplitIsChance) {
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "corpus"));
    auto all = corpus(rng, "c", 400, "w", 150);
    rng.shuffle(all);
    const std::vector<Post> a(all.begin(), all.begin() + 200), b(all.begin() + 200, all.end());
    sum += separability(a, b, seed).accuracy;
  }
  const double mean = sum / 20.0;
  EXPECT_GE(mean, 0.4);
  EXPECT_LE(mean, 0.6);
}

TEST(Separability, SwapInvariantOnAverage) {
  double ab = 0.0, ba = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "swap"));
    const auto a = corpus(rng, "a", 100, "w", 80);
    auto b = corpus(rng, "b", 100, "w", 120);
    ab += separability(a, b, seed).accuracy;
    ba += separability(b, a, seed).accuracy;
  }
  EXPECT_NEAR(ab / 20.0, ba / 20.0, 0.05);
}

TEST(Separability, DegenerateInputs) {
  Rng rng(8);
  const auto a = corpus(rng, "a", 50, "w", 40);
  auto copy = a;
  for (auto& p : copy) p.id = "copy-" + p.id;
  EXPECT_TRUE(separability(a, copy, 3).degenerate);

  std::vector<Post> same;
  for (int i = 0; i < 30; ++i) same.push_back({"s" + std::to_string(i), "same words here", "d"});
  EXPECT_THROW(separability(same, same, 0), DataError);
  const std::vector<Post> few(a.begin(), a.begin() + 10);
  EXPECT_THROW(separability(few, a, 0), PreconditionError);
}

TEST(Similarity, TopicClustersAndEdgeCases) {
  TopicEmbedder embed;
  Rng rng(2);
  const auto a = corpus(rng, "a", 30, "alpha", 10);
  const auto b = corpus(rng, "b", 30, "beta", 10);
  const double self = mean_embedding_similarity(a, a, embed);
  const double cross = mean_embedding_similarity(a, b, embed);
  EXPECT_GE(self, cross);
  EXPECT_NEAR(cross, 0.0, 1e-12);

  const std::vector<Post> one_a{{"x", "alpha1 alpha2", "d"}}, one_c{{"y", "gamma word", "d"}};
  const auto va = embed.embed({one_a[0].text})[0], vc = embed.embed({one_c[0].text})[0];
  EXPECT_DOUBLE_EQ(mean_embedding_similarity(one_a, one_c, embed), dense_cosine(va, vc));
  EXPECT_THROW(mean_embedding_similarity({}, a, embed), PreconditionError);
  EXPECT_DOUBLE_EQ(dense_cosine({1, 0}, {0, 1}), 0.0);
}

TEST(Similarity, SubsamplesLargeSides) {
  struct Counting : EmbeddingEndpoint {
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
      sizes.push_back(texts.size());
      return std::vector<std::vector<double>>(texts.size(), std::vector<double>{1.0, 0.0});
    }
    std::vector<std::size_t> sizes;
  } counting;
  Rng rng(1);
  const auto big = corpus(rng, "a", 800, "w", 50);
  EXPECT_DOUBLE_EQ(mean_embedding_similarity(big, big, counting), 1.0);
  EXPECT_EQ(counting.sizes, (std::vector<std::size_t>{500, 500}));
}

TEST(Similarity, HttpEndpointProtocol) {
  httplib::Server srv;
  srv.Post("/embed", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json vecs = nlohmann::json::array();
    for (const auto& t : body.at("texts")) vecs.push_back({static_cast<double>(t.get<std::string>().size()), 1.0});
    res.set_content(nlohmann::json{{"vectors", vecs}}.dump(), "application/json");
  });
  srv.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"vectors": []})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  const auto base = "http://127.0.0.1:" + std::to_string(port);

  HttpEmbeddingEndpoint ok(base + "/embed", 2);
  const auto v = ok.embed({"a", "bb", "ccc"});
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[2], (std::vector<double>{3.0, 1.0}));
  HttpEmbeddingEndpoint broken(base + "/broken");
  EXPECT_THROW(broken.embed({"a"}), Error);
  srv.stop();
  t.join();
  HttpEmbeddingEndpoint down(base + "/embed");
  EXPECT_THROW(down.embed({"a"}), TransientError);
}

TEST(GainCorrelates, LinearRelationAndErrors) {
  std::vector<GainReport> reports;
  for (int i = 0; i < 6; ++i) {
    GainReport r;
    r.target = "t" + std::to_string(i);
    const double base = 0.5 + 0.05 * i;
    r.budgets.push_back(cell(100, base, -2.0 * base + 1.5));
    r.covariates["separability"] = 0.6 + 0.01 * i;
    reports.push_back(r);
  }
  EXPECT_NEAR(gain_correlates(reports, Covariate::baseline_auc), -1.0, 1e-9);
  EXPECT_NEAR(gain_correlates(reports, Covariate::separability), -1.0, 1e-9);
  EXPECT_THROW(gain_correlates(reports, Covariate::label_imbalance_gap), PreconditionError);
  const std::vector<GainReport> two(reports.begin(), reports.begin() + 2);
  EXPECT_THROW(gain_correlates(two, Covariate::baseline_auc), PreconditionError);
  for (auto& r : reports) r.covariates["separability"] = 0.7;
  EXPECT_THROW(gain_correlates(reports, Covariate::separability), PreconditionError);
  EXPECT_EQ(covariate_from_string("source_target_label_corr"), Covariate::source_target_label_corr);
  EXPECT_THROW(covariate_from_string("nope"), PreconditionError);
}

TEST(GainCorrelates, IndependentCovariateIsNearZero) {
  Rng rng(17);
  double sum_abs = 0.0;
  for (int draw = 0; draw < 200; ++draw) {
    std::vector<GainReport> reports;
    for (int i = 0; i < 50; ++i) {
      GainReport r;
      r.budgets.push_back(cell(100, 0.5, rng.uniform() * 20 - 10));
      r.covariates["label_imbalance_gap"] = rng.uniform();
      reports.push_back(r);
    }
    sum_abs += std::abs(gain_correlates(reports, Covariate::label_imbalance_gap));
  }
  // E|r| for n = 50 independent draws is about 0.11.
  EXPECT_LT(sum_abs / 200.0, 0.16);
}
