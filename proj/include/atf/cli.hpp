#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/analysis.hpp"
#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/hash.hpp"
#include "atf/labeler.hpp"
#include "atf/loop.hpp"
#include "atf/metrics.hpp"
#include "atf/mock_lm.hpp"
#include "atf/scorer.hpp"
#include "atf/server.hpp"
#include "atf/version.hpp"

namespace atf::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cli", "cannot read " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw DataError("cli", "malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Apply `key=value` overrides; dotted keys address nested objects and the
/// value is parsed as JSON when possible, else taken as a string.
inline void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw PreconditionError("cli", "override must be key=value: " + assignment);
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline std::string fingerprint(const DatasetBundle& b) {
  std::ostringstream s;
  s << b.name() << '\n';
  write_jsonl(b, s);
  return sha256_hex(s.str()).substr(0, 16);
}

/// Everything `run` needs, loaded from an experiment config file.
struct LoadedExperiment {
  json raw;
  fs::path base_dir;
  DimensionRegistry registry;
  ExperimentConfig config;
  std::optional<DatasetBundle> source;
  DatasetBundle pool;
  DatasetBundle test;
  std::unique_ptr<ScorerEndpoint> scorer;
  std::optional<fs::path> cache_dir;
  fs::path out_dir;
};

inline DatasetBundle load_side(const json& side, const fs::path& base, const DimensionRegistry& registry) {
  Schema schema = side.contains("schema") ? Schema::from_json(side.at("schema")) : Schema{};
  if (schema.dataset.empty()) schema.dataset = side.value("dataset", std::string());
  const auto path = resolve(base, side.at("path").get<std::string>());
  const auto format = side.contains("format") ? format_from_string(side.at("format").get<std::string>())
                                              : (path.extension() == ".csv" ? Format::csv : Format::jsonl);
  return load_dataset(path.string(), format, schema, registry);
}

/// `lexicon` and `prior` are either inline {"term": weight} objects or paths
/// to such a JSON file, relative to `base`.
inline std::unique_ptr<ScorerEndpoint> make_scorer(const json& s, const fs::path& base = {}) {
  const auto kind = s.value("kind", std::string("http"));
  auto lexicon = [&](const char* key) {
    Lexicon lex;
    if (!s.contains(key)) return lex;
    const auto j = s.at(key).is_string() ? read_json_file(resolve(base, s.at(key).get<std::string>())) : s.at(key);
    for (const auto& [k, v] : j.items()) lex[k] = v.get<double>();
    return lex;
  };
  if (kind == "mock-lexicon") return std::make_unique<LexiconMockEndpoint>(lexicon("lexicon"));
  if (kind == "mock-incontext")
    return std::make_unique<InContextMockEndpoint>(lexicon("lexicon"), s.value("background", 0.1), lexicon("prior"));
  if (kind == "http") {
    if (!s.contains("url")) return std::make_unique<HttpScorerEndpoint>(HttpScorerEndpoint::from_env());
    const auto token_env = s.value("token_env", std::string("ATF_SCORER_TOKEN"));
    const char* tok = std::getenv(token_env.c_str());
    return std::make_unique<HttpScorerEndpoint>(s.at("url").get<std::string>(), tok ? tok : "");
  }
  throw PreconditionError("cli", "unknown scorer kind '" + kind + "'");
}

inline LoadedExperiment load_experiment(const fs::path& config_path, const std::vector<std::string>& overrides,
                                        std::optional<std::uint64_t> seed) {
  LoadedExperiment e;
  e.raw = read_json_file(config_path);
  for (const auto& o : overrides) apply_override(e.raw, o);
  if (seed) e.raw["seed"] = *seed;
  e.base_dir = config_path.parent_path();
  const auto& j = e.raw;
  e.registry = j.contains("registry") ? DimensionRegistry::load(resolve(e.base_dir, j.at("registry")).string())
                                      : DimensionRegistry::defaults();

  const auto& target = j.at("target");
  auto target_bundle = load_side(target, e.base_dir, e.registry);
  if (target.contains("test_path")) {
    json test_side = target;
    test_side["path"] = target.at("test_path");
    e.pool = std::move(target_bundle);
    e.test = load_side(test_side, e.base_dir, e.registry);
  } else {
    auto [pool, test] = split(target_bundle, target.value("test_fraction", 0.2), target.value("split_seed", 0ULL));
    e.pool = std::move(pool);
    e.test = std::move(test);
  }
  if (j.contains("source") && !j.at("source").is_null()) e.source = load_side(j.at("source"), e.base_dir, e.registry);

  auto& c = e.config;
  c.name = j.value("name", std::string("experiment"));
  c.target_dimension = target.at("dimension").get<std::string>();
  if (e.source) c.source_dimension = j.at("source").at("dimension").get<std::string>();
  if (j.contains("budgets")) c.budgets = j.at("budgets").get<std::vector<std::size_t>>();
  c.repetitions = j.value("repetitions", c.repetitions);
  c.base_seed = j.value("seed", c.base_seed);
  c.policy.n_shots = j.value("n_shots", c.policy.n_shots);
  c.policy.order = j.value("shot_order", std::string("ascending")) == "descending" ? ShotOrder::descending_similarity
                                                                                  : ShotOrder::ascending_similarity;
  c.policy.domain_balanced = j.value("domain_balanced", false);
  c.token_budget = j.value("token_budget", c.token_budget);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  if (j.contains("continuations")) {
    const auto v = j.at("continuations").get<std::vector<std::string>>();
    if (v.size() != 2) throw PreconditionError("cli", "continuations must list exactly two strings");
    c.continuations = {v[0], v[1]};
  }
  c.oracle = j.value("oracle", std::string("simulated")) == "human" ? OracleMode::human : OracleMode::simulated;

  e.scorer = make_scorer(j.value("scorer", json::object()), e.base_dir);
  c.scorer = e.scorer->id();
  std::string fp = fingerprint(e.pool) + ":" + fingerprint(e.test);
  if (e.source) fp += ":" + fingerprint(*e.source);
  c.data_fingerprint = fp;
  if (j.contains("cache_dir")) e.cache_dir = resolve(e.base_dir, j.at("cache_dir").get<std::string>());
  e.out_dir = j.contains("out") ? resolve(e.base_dir, j.at("out").get<std::string>()) : fs::path("results");
  c.validate();
  return e;
}

/// results/{experiment}/{repetition}/{budget}.jsonl, results.jsonl,
/// summary.csv, manifest.json.
inline void write_run_dir(const fs::path& dir, const std::vector<RunResult>& results, const json& manifest) {
  fs::create_directories(dir);
  for (const auto& r : results) {
    const auto sub = dir / std::to_string(r.repetition);
    fs::create_directories(sub);
    std::ofstream out(sub / (std::to_string(r.budget) + ".jsonl"), std::ios::binary);
    out << to_json(r).dump() << '\n';
  }
  {
    std::ofstream out(dir / "results.jsonl", std::ios::binary);
    write_results_jsonl(results, out);
  }
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    out << "budget,runs,degenerate,mean_auc,mean_shot_ratio\n";
    std::map<std::size_t, std::vector<const RunResult*>> by_budget;
    for (const auto& r : results) by_budget[r.budget].push_back(&r);
    const auto means = mean_auc_by_budget(results);
    for (const auto& [b, rs] : by_budget) {
      std::size_t degenerate = 0;
      double ratio = 0;
      for (const auto* r : rs) {
        degenerate += r->degenerate();
        ratio += r->mean_shot_ratio;
      }
      out << b << ',' << rs.size() << ',' << degenerate << ',';
      if (auto it = means.find(b); it != means.end()) out << detail::fixed(it->second, 6);
      out << ',' << detail::fixed(ratio / static_cast<double>(rs.size()), 6) << '\n';
    }
  }
  std::ofstream(dir / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
}

/// Results of a run directory, from results.jsonl or the per-cell files.
inline std::vector<RunResult> read_run_dir(const fs::path& dir) {
  std::vector<RunResult> out;
  auto read_lines = [&](const fs::path& f) {
    std::ifstream in(f);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.push_back(run_result_from_json(json::parse(line)));
  };
  if (fs::exists(dir / "results.jsonl")) {
    read_lines(dir / "results.jsonl");
  } else if (fs::is_directory(dir)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
      if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) read_lines(f);
  } else {
    throw DataError("cli", "no results under " + dir.string());
  }
  if (out.empty()) throw DataError("cli", "no results under " + dir.string());
  std::sort(out.begin(), out.end(), [](const RunResult& a, const RunResult& b) {
    return std::tie(a.repetition, a.budget) < std::tie(b.repetition, b.budget);
  });
  return out;
}

inline void print_error(std::ostream& err, const std::string& module, const std::string& message) {
  err << "error module=" << module << " message=" << json(message).dump() << '\n';
}

namespace verbs {

inline int ingest(const std::string& input, std::string format, const std::string& schema_path,
                  const std::string& dataset, const std::vector<std::string>& label_maps,
                  const std::string& registry_path, const std::string& out, double split_fraction,
                  std::uint64_t seed, std::ostream& os) {
  const auto registry = registry_path.empty() ? DimensionRegistry::defaults() : DimensionRegistry::load(registry_path);
  Schema schema = schema_path.empty() ? Schema{} : Schema::from_json(read_json_file(schema_path));
  if (!dataset.empty()) schema.dataset = dataset;
  for (const auto& m : label_maps) {
    const auto eq = m.find('=');
    schema.label_columns.emplace_back(m.substr(0, eq), eq == std::string::npos ? m : m.substr(eq + 1));
  }
  if (format.empty()) format = fs::path(input).extension() == ".csv" ? "csv" : "jsonl";
  const auto bundle = load_dataset(input, format_from_string(format), schema, registry);
  os << "posts " << bundle.size() << '\n';
  for (const auto& d : bundle.dimensions())
    os << "dimension " << d.name << " labeled " << bundle.labeled_count(d.name) << " positive_rate "
       << detail::fixed(bundle.labeled_count(d.name) ? positive_rate(bundle, d.name) : 0.0, 4) << '\n';
  if (out.empty()) return 0;
  if (split_fraction > 0) {
    auto [pool, test] = split(bundle, split_fraction, seed);
    const fs::path o(out);
    const auto stem = (o.parent_path() / o.stem()).string();
    save_jsonl(pool, stem + ".pool.jsonl");
    save_jsonl(test, stem + ".test.jsonl");
    os << "wrote " << stem << ".pool.jsonl (" << pool.size() << ") and " << stem << ".test.jsonl (" << test.size()
       << ")\n";
  } else {
    save_jsonl(bundle, out);
    os << "wrote " << out << '\n';
  }
  return 0;
}

inline int label(const std::string& input, const std::string& dataset, const std::vector<std::string>& attributes,
                 const std::string& endpoint_url, double rate, const std::string& store_path, double threshold,
                 const std::string& registry_path, const std::string& out, std::ostream& os) {
  const auto registry = registry_path.empty() ? DimensionRegistry::defaults() : DimensionRegistry::load(registry_path);
  auto bundle = load_canonical(input, dataset, registry);
  std::unique_ptr<LabelerEndpoint> endpoint = endpoint_url.empty()
                                                  ? std::make_unique<HttpLabelerEndpoint>(HttpLabelerEndpoint::from_env())
                                                  : std::make_unique<HttpLabelerEndpoint>(endpoint_url);
  ScoreStore store = store_path.empty() ? ScoreStore() : ScoreStore(fs::path(store_path));
  const auto report = fetch_scores(bundle.posts(), attributes, *endpoint, rate, store);
  os << "fetched " << report.responses.size() << " network_calls " << report.network_calls << " failures "
     << report.failures.size() << '\n';
  for (const auto& [id, err] : report.failures) os << "failed " << id << ": " << err << '\n';
  for (const auto& a : attributes) {
    const auto labels = binarize(report.responses, a, threshold);
    bundle = apply_labels(bundle, registry.at(a), labels);
    os << "attribute " << a << " positive_rate " << detail::fixed(positive_rate(bundle, a), 4) << '\n';
  }
  if (!out.empty()) save_jsonl(bundle, out);
  return report.failures.empty() ? 0 : 1;
}

inline int run(const std::string& config_path, std::optional<std::uint64_t> seed,
               const std::vector<std::string>& overrides, const std::string& out_override, const std::string& arm,
               const std::vector<std::string>& argv, std::ostream& os) {
  auto e = load_experiment(config_path, overrides, seed);
  if (!out_override.empty()) e.out_dir = out_override;
  std::optional<ScoreCache> cache;
  if (e.cache_dir) cache.emplace(*e.cache_dir);

  std::unique_ptr<AnnotationService> service;
  std::unique_ptr<AnnotationServer> server;
  // Stops the server before joining, also when the run throws.
  struct Serving {
    AnnotationServer* server = nullptr;
    std::thread thread;
    ~Serving() {
      if (server) server->stop();
      if (thread.joinable()) thread.join();
    }
  } serving;
  std::unique_ptr<Oracle> oracle;
  RunOptions options;
  if (cache) options.scoring.cache = &*cache;
  if (e.config.oracle == OracleMode::human) {
    const auto h = e.raw.value("human", json::object());
    service = std::make_unique<AnnotationService>(resolve(e.base_dir, h.value("store", std::string("tasks.db"))).string(),
                                                  std::chrono::seconds(h.value("lease_s", 300)));
    ServerOptions so;
    const char* tok = std::getenv(h.value("token_env", std::string("ATF_SERVER_TOKEN")).c_str());
    so.token = tok ? tok : "";
    if (h.contains("ui_dir")) so.ui_dir = resolve(e.base_dir, h.at("ui_dir").get<std::string>());
    server = std::make_unique<AnnotationServer>(*service, so);
    const auto bind = h.value("bind", std::string("127.0.0.1:8080"));
    const auto colon = bind.rfind(':');
    if (!server->bind(bind.substr(0, colon), std::stoi(bind.substr(colon + 1))))
      throw Error("server", "cannot bind " + bind);
    serving.server = server.get();
    serving.thread = std::thread([&] { server->listen_after_bind(); });
    server->wait_until_ready();
    oracle = std::make_unique<HumanOracle>(*service, std::chrono::seconds(h.value("deadline_s", 86400)));
    os << "annotation server listening on " << bind << '\n';
    options.on_result = [&](const RunResult& r) {
      service->set_experiment_status(e.config.name, {{"repetition", r.repetition}, {"budget", r.budget},
                                                     {"auc", r.auc ? json(*r.auc) : json(nullptr)}});
    };
  } else {
    oracle = std::make_unique<SimulatedOracle>(e.pool);
  }
  const Corpora corpora{e.source ? &*e.source : nullptr, e.pool, e.test};

  auto manifest_for = [&](const ExperimentConfig& c) {
    json seeds = json::array();
    for (int r = 0; r < c.repetitions; ++r) seeds.push_back(c.base_seed + static_cast<std::uint64_t>(r));
    return json{{"experiment", c.name},
                {"config_hash", c.hash()},
                {"config", c.to_json()},
                {"config_path", config_path},
                {"seeds", seeds},
                {"code_version", kVersion},
                {"endpoint", c.scorer},
                {"data_fingerprint", c.data_fingerprint},
                {"command", argv}};
  };
  std::string which = arm.empty() ? (e.config.transfer() ? "transfer" : "baseline") : arm;
  if (which != "transfer" && which != "baseline" && which != "both")
    throw PreconditionError("cli", "unknown arm '" + which + "'");
  if ((which == "transfer" || which == "both") && !e.config.transfer())
    throw PreconditionError("cli", "arm '" + which + "' needs a source dataset in the config");
  std::vector<RunResult> transfer, baseline;
  if (which == "transfer" || which == "both") {
    transfer = run_experiment(e.config, corpora, *e.scorer, *oracle, options);
    write_run_dir(e.out_dir / e.config.name, transfer, manifest_for(e.config));
    os << "wrote " << (e.out_dir / e.config.name).string() << '\n';
  }
  if (which == "baseline" || which == "both") {
    auto bc = e.config.baseline();
    const auto name = which == "both" ? e.config.name + "-baseline" : e.config.name;
    bc.name = name;
    baseline = run_experiment(bc, corpora, *e.scorer, *oracle, options);
    write_run_dir(e.out_dir / name, baseline, manifest_for(bc));
    os << "wrote " << (e.out_dir / name).string() << '\n';
  }
  if (which == "both") {
    const auto report = summarize(transfer, baseline);
    std::ofstream csv(e.out_dir / e.config.name / "gains.csv", std::ios::binary);
    write_summary_csv({report}, csv);
    os << render_table({report});
  }
  return 0;
}

inline int report(const std::vector<std::string>& inputs, const std::string& baseline_dir, const std::string& csv_path,
                  std::ostream& os) {
  const auto baseline = read_run_dir(baseline_dir);
  std::vector<GainReport> reports;
  for (const auto& in : inputs) {
    auto g = summarize(read_run_dir(in), baseline);
    const auto cov = fs::path(in) / "covariates.json";
    if (fs::exists(cov)) {
      const auto j = read_json_file(cov);
      for (const auto& [k, v] : j.items()) g.covariates[k] = v.get<double>();
    }
    reports.push_back(std::move(g));
  }
  os << render_table(reports);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::binary);
    write_summary_csv(reports, out);
  }
  return 0;
}

}  // namespace verbs

/// Entry point shared by the `atf` binary and the tests. Returns the
/// process exit code: 0 success, 1 runtime failure, 2 usage error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Few-shot transfer labeling harness", "atf"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(kVersion));

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load and validate a dataset, write canonical JSONL");
  std::string in_input, in_format, in_schema, in_dataset, in_registry, in_out;
  std::vector<std::string> in_labels;
  double in_split = 0;
  std::uint64_t in_seed = 0;
  ingest->add_option("--input", in_input, "JSONL or CSV file")->required();
  ingest->add_option("--format", in_format, "jsonl or csv (default: by extension)");
  ingest->add_option("--schema", in_schema, "schema JSON file");
  ingest->add_option("--dataset", in_dataset, "dataset name");
  ingest->add_option("--label", in_labels, "field=dimension label mapping (repeatable)");
  ingest->add_option("--registry", in_registry, "dimension registry JSON");
  ingest->add_option("--out", in_out, "canonical JSONL output");
  ingest->add_option("--split", in_split, "also write a stratified pool/test split with this test fraction");
  ingest->add_option("--seed", in_seed, "split seed");

  // label
  auto* label = app.add_subcommand("label", "Fetch attribute scores and binarize them into labels");
  std::string lb_input, lb_dataset, lb_endpoint, lb_store, lb_registry, lb_out;
  std::vector<std::string> lb_attrs;
  double lb_rate = 1.0, lb_threshold = 0.5;
  label->add_option("--input", lb_input, "canonical JSONL")->required();
  label->add_option("--dataset", lb_dataset, "dataset name");
  label->add_option("--attributes", lb_attrs, "attributes to fetch")->required()->delimiter(',');
  label->add_option("--endpoint", lb_endpoint, "labeling service URL (default: $ATF_LABELER_URL)");
  label->add_option("--rate", lb_rate, "requests per second");
  label->add_option("--store", lb_store, "score store JSONL");
  label->add_option("--threshold", lb_threshold, "positive iff score >= threshold");
  label->add_option("--registry", lb_registry, "dimension registry JSON");
  label->add_option("--out", lb_out, "canonical JSONL with the new labels");

  // run
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  std::string rn_config, rn_out, rn_arm;
  std::optional<std::uint64_t> rn_seed;
  std::vector<std::string> rn_set;
  run->add_option("--config", rn_config, "experiment config JSON")->required();
  run->add_option("--seed", rn_seed, "override base seed");
  run->add_option("--set", rn_set, "key=value config override (repeatable)");
  run->add_option("--out", rn_out, "results root (default from config)");
  run->add_option("--arm", rn_arm, "transfer, baseline or both");

  // report
  auto* report = app.add_subcommand("report", "Summarize transfer runs against a baseline");
  std::vector<std::string> rp_in;
  std::string rp_baseline, rp_csv;
  report->add_option("--in", rp_in, "transfer run directory (repeatable)")->required();
  report->add_option("--baseline", rp_baseline, "baseline run directory")->required();
  report->add_option("--csv", rp_csv, "write summary CSV here");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Label correlations, separability, similarity, gain correlates");
  std::string an_kind, an_input, an_dataset, an_a, an_b, an_a_dim, an_b_dim, an_embed, an_csv, an_baseline,
      an_covariate = "baseline_auc", an_registry;
  std::vector<std::string> an_in;
  std::uint64_t an_seed = 0;
  int an_seeds = 1;
  analyze->add_option("kind", an_kind, "correlations | separability | similarity | gains")->required();
  analyze->add_option("--input", an_input, "canonical JSONL (correlations)");
  analyze->add_option("--dataset", an_dataset, "dataset name");
  analyze->add_option("--a", an_a, "side A canonical JSONL");
  analyze->add_option("--a-dim", an_a_dim, "side A dimension (positive-class posts)");
  analyze->add_option("--b", an_b, "side B canonical JSONL");
  analyze->add_option("--b-dim", an_b_dim, "side B dimension (positive-class posts)");
  analyze->add_option("--embed-url", an_embed, "embedding endpoint URL");
  analyze->add_option("--seed", an_seed, "seed");
  analyze->add_option("--seeds", an_seeds, "number of seeds to average (separability)");
  analyze->add_option("--in", an_in, "transfer run directory (gains, repeatable)");
  analyze->add_option("--baseline", an_baseline, "baseline run directory (gains)");
  analyze->add_option("--covariate", an_covariate, "baseline_auc | label_imbalance_gap | source_target_label_corr | separability");
  analyze->add_option("--csv", an_csv, "write CSV here");
  analyze->add_option("--registry", an_registry, "dimension registry JSON");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the annotation queue over HTTP");
  std::string sv_bind = "127.0.0.1:8080", sv_store = "tasks.db", sv_ui, sv_token_env = "ATF_SERVER_TOKEN";
  int sv_lease = 300;
  serve->add_option("--bind", sv_bind, "host:port");
  serve->add_option("--store", sv_store, "task store file");
  serve->add_option("--ui", sv_ui, "annotator UI bundle directory");
  serve->add_option("--token-env", sv_token_env, "environment variable holding the shared request token");
  serve->add_option("--lease-s", sv_lease, "assignment lease in seconds");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    os << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    os << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "cli", e.what());
    err << app.help();
    return 2;
  }

  try {
    if (*ingest)
      return verbs::ingest(in_input, in_format, in_schema, in_dataset, in_labels, in_registry, in_out, in_split,
                           in_seed, os);
    if (*label)
      return verbs::label(lb_input, lb_dataset, lb_attrs, lb_endpoint, lb_rate, lb_store, lb_threshold, lb_registry,
                          lb_out, os);
    if (*run) return verbs::run(rn_config, rn_seed, rn_set, rn_out, rn_arm, args, os);
    if (*report) return verbs::report(rp_in, rp_baseline, rp_csv, os);
    if (*analyze) {
      const auto registry = an_registry.empty() ? DimensionRegistry::defaults() : DimensionRegistry::load(an_registry);
      auto positives = [&](const std::string& path, const std::string& dim) {
        const auto b = load_canonical(path, fs::path(path).stem().string(), registry);
        std::vector<Post> out;
        for (const auto& p : b.posts())
          if (b.label(p.id, dim) == Label::positive) out.push_back(p);
        return out;
      };
      if (an_kind == "correlations") {
        const auto m = label_correlations(load_canonical(an_input, an_dataset, registry));
        std::ostringstream s;
        write_grid_csv(m.names, m.r, s);
        os << s.str();
        if (!an_csv.empty()) std::ofstream(an_csv, std::ios::binary) << s.str();
        return 0;
      }
      if (an_kind == "separability") {
        const auto a = positives(an_a, an_a_dim);
        const auto b = positives(an_b, an_b_dim);
        double sum = 0;
        SeparabilityResult last;
        for (int s = 0; s < an_seeds; ++s) {
          last = separability(a, b, an_seed + static_cast<std::uint64_t>(s));
          sum += last.accuracy;
        }
        os << "separability " << detail::fixed(sum / an_seeds, 4) << " n_train " << last.n_train << " n_test "
           << last.n_test << (last.degenerate ? " degenerate" : "") << '\n';
        return 0;
      }
      if (an_kind == "similarity") {
        if (an_embed.empty()) throw PreconditionError("cli", "--embed-url is required");
        HttpEmbeddingEndpoint ep(an_embed);
        os << "mean_similarity "
           << detail::fixed(mean_embedding_similarity(positives(an_a, an_a_dim), positives(an_b, an_b_dim), ep, an_seed), 6)
           << '\n';
        return 0;
      }
      if (an_kind == "gains") {
        const auto baseline = read_run_dir(an_baseline);
        std::vector<GainReport> reports;
        for (const auto& in : an_in) {
          auto g = summarize(read_run_dir(in), baseline);
          const auto cov = fs::path(in) / "covariates.json";
          if (fs::exists(cov)) {
            const auto j = read_json_file(cov);
            for (const auto& [k, v] : j.items()) g.covariates[k] = v.get<double>();
          }
          reports.push_back(std::move(g));
        }
        os << "pearson_r " << detail::fixed(gain_correlates(reports, covariate_from_string(an_covariate)), 4) << '\n';
        return 0;
      }
      throw PreconditionError("cli", "unknown analysis '" + an_kind + "'");
    }
    if (*serve) {
      AnnotationService service(sv_store, std::chrono::seconds(sv_lease));
      const char* tok = std::getenv(sv_token_env.c_str());
      AnnotationServer server(service, {tok ? tok : "", sv_ui});
      const auto colon = sv_bind.rfind(':');
      if (!server.bind(sv_bind.substr(0, colon), std::stoi(sv_bind.substr(colon + 1))))
        throw Error("server", "cannot bind " + sv_bind);
      os << "listening on " << sv_bind << std::endl;
      server.listen_after_bind();
      return 0;
    }
  } catch (const Error& e) {
    print_error(err, e.module(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "cli", e.what());
    return 1;
  }
  return 2;
}

inline int run_cli(int argc, char** argv) {
  return run_cli(std::vector<std::string>(argv, argv + argc));
}

}  // namespace atf::cli
