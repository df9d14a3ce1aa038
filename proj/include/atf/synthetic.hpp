#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "atf/corpus.hpp"
#include "atf/random.hpp"
#include "atf/scorer.hpp"

namespace atf {

/// Knobs for a synthetic transfer scenario. Positive posts of both domains
/// draw a few terms from a shared "signal" vocabulary; everything else is
/// domain topic words plus general filler. The source domain therefore
/// covers the signal vocabulary far better than a small target annotation
/// sample does.
struct SyntheticSpec {
  std::size_t target_pool = 1500;
  std::size_t target_test = 200;
  std::size_t source_size = 1000;
  double target_positive_rate = 0.2;
  double source_positive_rate = 0.5;
  std::size_t signal_vocab = 300;
  std::size_t target_topic_vocab = 400;
  std::size_t source_topic_vocab = 400;
  std::size_t general_vocab = 200;
  std::size_t signal_terms = 2;
  std::size_t topic_terms = 6;
  std::size_t general_terms = 3;
  double label_noise = 0.05;  // fraction of recorded labels flipped after the text is drawn
  std::string target_dimension = "sexually_explicit";
  std::string source_dimension = "lewd";
};

struct SyntheticScenario {
  DatasetBundle source;
  DatasetBundle target_pool;
  DatasetBundle target_test;
  Lexicon signal_lexicon;  // every signal term with weight 1
};

namespace detail {

inline std::string word(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
  return buf;
}

inline DatasetBundle synth_bundle(const std::string& name, const char* id_prefix, std::size_t n, double positive_rate,
                                  const char* topic_prefix, std::size_t topic_vocab, const SyntheticSpec& spec,
                                  const Dimension& dim, Rng& rng, std::size_t id_offset = 0) {
  std::vector<Post> posts;
  std::map<DatasetBundle::LabelKey, Label> labels;
  const auto n_pos = static_cast<std::size_t>(std::llround(positive_rate * static_cast<double>(n)));
  std::vector<Label> plan(n, Label::negative);
  for (std::size_t i = 0; i < n_pos; ++i) plan[i] = Label::positive;
  rng.shuffle(plan);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> words;
    for (std::size_t k = 0; k < spec.topic_terms; ++k) words.push_back(word(topic_prefix, rng.below(topic_vocab)));
    for (std::size_t k = 0; k < spec.general_terms; ++k) words.push_back(word("gen", rng.below(spec.general_vocab)));
    if (plan[i] == Label::positive)
      for (std::size_t k = 0; k < spec.signal_terms; ++k) words.push_back(word("sig", rng.below(spec.signal_vocab)));
    rng.shuffle(words);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    char id[32];
    std::snprintf(id, sizeof id, "%s%06zu", id_prefix, i + id_offset);
    posts.push_back({id, text, name});
    const bool flip = rng.uniform() < spec.label_noise;
    labels[{id, dim.name}] = flip ? (plan[i] == Label::positive ? Label::negative : Label::positive) : plan[i];
  }
  return DatasetBundle(name, std::move(posts), {dim}, std::move(labels));
}

}  // namespace detail

inline SyntheticScenario make_synthetic_scenario(const SyntheticSpec& spec, std::uint64_t seed,
                                                 const DimensionRegistry& registry = DimensionRegistry::defaults()) {
  Rng rng(derive_seed(seed, "synthetic"));
  const auto& tdim = registry.at(spec.target_dimension);
  const auto& sdim = registry.at(spec.source_dimension);
  SyntheticScenario s;
  s.source = detail::synth_bundle("synthetic-source", "s", spec.source_size, spec.source_positive_rate, "src",
                                  spec.source_topic_vocab, spec, sdim, rng);
  s.target_pool = detail::synth_bundle("synthetic-target", "t", spec.target_pool, spec.target_positive_rate, "tgt",
                                       spec.target_topic_vocab, spec, tdim, rng);
  s.target_test = detail::synth_bundle("synthetic-target", "t", spec.target_test, spec.target_positive_rate, "tgt",
                                       spec.target_topic_vocab, spec, tdim, rng, spec.target_pool);
  for (std::size_t i = 0; i < spec.signal_vocab; ++i) s.signal_lexicon[detail::word("sig", i)] = 1.0;
  return s;
}

}  // namespace atf
