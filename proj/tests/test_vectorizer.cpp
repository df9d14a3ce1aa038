#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "atf/random.hpp"
#include "atf/vectorizer.hpp"

using namespace atf;

namespace {

std::vector<Post> docs(std::initializer_list<const char*> texts) {
  std::vector<Post> out;
  int i = 0;
  for (const char* t : texts) out.push_back({"d" + std::to_string(i++), t, "x"});
  return out;
}

double dense_cosine_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

TEST(Fit, DocumentFrequencies) {
  const auto d = docs({"aa bb", "bb cc"});
  const auto v = fit(d);
  EXPECT_EQ(v.terms(), (std::vector<std::string>{"aa", "bb", "cc"}));
  EXPECT_EQ(v.df("aa"), 1u);
  EXPECT_EQ(v.df("bb"), 2u);
  EXPECT_EQ(v.df("cc"), 1u);
  EXPECT_EQ(v.n_docs(), 2u);
}

TEST(Fit, RepeatedTermCountsOncePerDoc) {
  const auto d = docs({"xx xx xx"});
  const auto v = fit(d);
  EXPECT_EQ(v.size(), 1u);
  EXPECT_EQ(v.df("xx"), 1u);
}

TEST(Fit, UbiquitousTermHasUnitIdf) {
  const auto d = docs({"aa bb", "bb cc", "bb dd"});
  const auto v = fit(d);
  EXPECT_EQ(v.idf()[*v.index("bb")], 1.0);
  EXPECT_NEAR(v.idf()[*v.index("aa")], std::log(4.0 / 2.0) + 1.0, 1e-15);
}

TEST(Fit, EmptyInputsRejected) {
  EXPECT_THROW(fit(std::vector<Post>{}), PreconditionError);
  EXPECT_THROW(fit(docs({"a b c", "!"})), PreconditionError);
}

TEST(Transform, AllOovIsZeroVector) {
  const auto v = fit(docs({"aa bb"}));
  const auto x = transform(v, "zz yy");
  EXPECT_TRUE(x.empty());
  EXPECT_EQ(x.norm, 0.0);
}

TEST(Transform, HandComputedWeights) {
  const auto v = fit(docs({"aa bb", "bb cc"}));
  const double idf_a = std::log(3.0 / 2.0) + 1.0;
  const double idf_b = 1.0;
  const auto x = transform(v, "aa aa bb");
  const double wa = 2 * idf_a, wb = idf_b, n = std::sqrt(wa * wa + wb * wb);
  ASSERT_EQ(x.entries.size(), 2u);
  EXPECT_NEAR(x.entries[0].second, wa / n, 1e-12);
  EXPECT_NEAR(x.entries[1].second, wb / n, 1e-12);
  EXPECT_NEAR(x.norm, 1.0, 1e-12);
}

TEST(Transform, DuplicateTokensDoubleTf) {
  const auto v = fit(docs({"aa bb", "bb cc"}));
  const auto one = tfidf_weights(v, "aa");
  const auto two = tfidf_weights(v, "aa aa");
  ASSERT_EQ(one.entries.size(), 1u);
  EXPECT_DOUBLE_EQ(two.entries[0].second, 2 * one.entries[0].second);
}

TEST(Cosine, IdentityOrthogonalityAndDenseOracle) {
  const SparseVector u({{0, 1.0}, {2, 2.0}});
  const SparseVector w({{1, 3.0}});
  EXPECT_NEAR(cosine(u, u), 1.0, 1e-12);
  EXPECT_EQ(cosine(u, w), 0.0);
  EXPECT_EQ(cosine(u, SparseVector{}), 0.0);
  const SparseVector a({{0, 1.0}, {1, -2.0}, {2, 0.5}});
  const SparseVector b({{0, 0.3}, {1, 4.0}, {2, -1.0}});
  EXPECT_NEAR(cosine(a, b), dense_cosine_oracle({1.0, -2.0, 0.5}, {0.3, 4.0, -1.0}), 1e-12);
}

TEST(SparseVector, MergesDuplicatesAndRejectsNonFinite) {
  const SparseVector v({{3, 1.0}, {1, 2.0}, {3, 0.5}});
  ASSERT_EQ(v.entries.size(), 2u);
  EXPECT_EQ(v.entries[0], (std::pair<std::uint32_t, double>{1, 2.0}));
  EXPECT_EQ(v.entries[1], (std::pair<std::uint32_t, double>{3, 1.5}));
  EXPECT_THROW(SparseVector({{0, std::nan("")}}), PreconditionError);
}

TEST(Property, SparseCosineMatchesDense) {
  Rng rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t dim = 1 + rng.below(12);
    std::vector<double> a(dim, 0.0), b(dim, 0.0);
    std::vector<std::pair<std::uint32_t, double>> sa, sb;
    for (std::size_t i = 0; i < dim; ++i) {
      if (rng.below(2)) {
        a[i] = rng.uniform() * 4 - 2;
        sa.emplace_back(static_cast<std::uint32_t>(i), a[i]);
      }
      if (rng.below(2)) {
        b[i] = rng.uniform() * 4 - 2;
        sb.emplace_back(static_cast<std::uint32_t>(i), b[i]);
      }
    }
    const SparseVector u(sa), v(sb);
    const double expected = dense_cosine_oracle(a, b);
    ASSERT_NEAR(cosine(u, v), expected, 1e-12) << "trial " << trial;
    ASSERT_NEAR(cosine(u, v), cosine(v, u), 1e-15);
    if (!u.empty()) {
      ASSERT_NEAR(cosine(u, u), 1.0, 1e-12);
      ASSERT_NEAR(u.norm, std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0)), 1e-12);
    }
  }
}

TEST(Property, TransformNormIsZeroOrOne) {
  Rng rng(5);
  std::vector<Post> corpus;
  for (int i = 0; i < 50; ++i) {
    std::string t;
    for (int k = 0; k < 8; ++k) t += "w" + std::to_string(rng.below(40)) + " ";
    corpus.push_back({std::to_string(i), t, "x"});
  }
  const auto v = fit(corpus);
  for (const auto& p : corpus) EXPECT_NEAR(transform(v, p).norm, 1.0, 1e-12);
  EXPECT_EQ(transform(v, "nothing here matches").norm, 0.0);
}

TEST(Vocabulary, TsvDump) {
  const auto v = fit(docs({"aa bb", "bb cc"}));
  std::ostringstream s;
  v.dump_tsv(s);
  EXPECT_EQ(s.str().substr(0, 5), "aa\t0\t");
  EXPECT_NE(s.str().find("bb\t1\t1\n"), std::string::npos);
}
