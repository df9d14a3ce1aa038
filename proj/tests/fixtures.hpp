#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "atf/corpus.hpp"
#include "atf/random.hpp"
#include "atf/selector.hpp"

namespace fixtures {

inline atf::LabeledExample example(const std::string& id, const std::string& text, atf::Label label,
                                   atf::Provenance prov = atf::Provenance::target,
                                   const std::string& dataset = "t", const std::string& dim = "sexually_explicit") {
  return {{id, text, dataset}, dim, label, prov};
}

/// Random text over a small vocabulary so similarity ties happen often.
inline std::string random_text(atf::Rng& rng, std::size_t vocab, std::size_t len) {
  std::string t;
  for (std::size_t k = 0; k < len; ++k) t += (t.empty() ? "" : " ") + ("w" + std::to_string(rng.below(vocab)));
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string golden(const std::string& name) {
  return read_file(std::string(ATF_SOURCE_DIR) + "/tests/golden/" + name);
}

}  // namespace fixtures
