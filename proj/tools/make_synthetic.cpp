// Writes a synthetic source/target scenario as canonical JSONL plus the
// signal lexicon, for demos and smoke runs without real corpora.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "atf/corpus.hpp"
#include "atf/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic transfer scenario", "make_synthetic"};
  std::string out = "demo/data";
  std::uint64_t seed = 0;
  atf::SyntheticSpec spec;
  bool registry = false;
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--pool", spec.target_pool, "target pool size");
  app.add_option("--test", spec.target_test, "target test size");
  app.add_option("--source", spec.source_size, "source size");
  app.add_flag("--registry", registry, "also write the default dimension registry");
  CLI11_PARSE(app, argc, argv);

  try {
    namespace fs = std::filesystem;
    fs::create_directories(out);
    const auto s = atf::make_synthetic_scenario(spec, seed);
    atf::save_jsonl(s.source, (fs::path(out) / "source.jsonl").string());
    atf::save_jsonl(s.target_pool, (fs::path(out) / "target_pool.jsonl").string());
    atf::save_jsonl(s.target_test, (fs::path(out) / "target_test.jsonl").string());
    std::ofstream(fs::path(out) / "lexicon.json") << nlohmann::json(s.signal_lexicon).dump(2) << '\n';
    if (registry)
      std::ofstream(fs::path(out) / "dimensions.json") << atf::DimensionRegistry::defaults().to_json().dump(2) << '\n';
    std::cout << "wrote " << out << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error module=make_synthetic message=" << nlohmann::json(e.what()).dump() << '\n';
    return 1;
  }
  return 0;
}
