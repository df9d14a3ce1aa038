#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/error.hpp"
#include "atf/random.hpp"
#include "atf/text.hpp"

namespace atf {

enum class Label : std::uint8_t { negative = 0, positive = 1 };
enum class Provenance : std::uint8_t { source, target };

inline const char* to_string(Provenance p) { return p == Provenance::source ? "source" : "target"; }

inline Provenance provenance_from_string(std::string_view s) {
  if (s == "source") return Provenance::source;
  if (s == "target") return Provenance::target;
  throw DataError("corpus", "unknown provenance '" + std::string(s) + "'");
}

struct Post {
  std::string id;
  std::string text;
  std::string dataset;

  bool operator==(const Post&) const = default;
};

/// A labeling task: the question put to the model and its answer tokens.
struct Dimension {
  std::string name;
  std::string definition;
  std::string positive_token = "Yes";
  std::string negative_token = "No";

  bool operator==(const Dimension&) const = default;

  const std::string& token(Label label) const {
    return label == Label::positive ? positive_token : negative_token;
  }

  void validate() const {
    if (name.empty()) throw DataError("corpus", "dimension with empty name");
    if (definition.empty() || definition.back() != '?')
      throw DataError("corpus", "definition of '" + name + "' must end with '?'");
    if (positive_token.empty() || negative_token.empty() || positive_token == negative_token)
      throw DataError("corpus", "dimension '" + name + "' needs two distinct answer tokens");
  }
};

struct LabeledExample {
  Post post;
  std::string dimension;
  Label label = Label::negative;
  Provenance provenance = Provenance::target;

  bool operator==(const LabeledExample&) const = default;
};

/// Name -> Dimension lookup. `defaults()` carries the definitions used for
/// the bundled SBIC, HASOC and Perspective tasks.
class DimensionRegistry {
 public:
  DimensionRegistry() = default;

  static const DimensionRegistry& defaults() {
    static const DimensionRegistry instance = [] {
      DimensionRegistry r;
      r.add({"offensive", "Does this post contain offensive language?"});
      r.add({"intent", "Does this post contain intentional insults?"});
      r.add({"lewd", "Does this post contain sexual content?"});
      r.add({"group", "Does this post contain offense to a group?"});
      r.add({"hof",
             "Does this post contain any form of non-acceptable language such as hate speech, "
             "offensiveness, aggression, profanity?"});
      r.add({"target", "Does this post contain an insult/threat to an individual, group, or others?"});
      r.add({"toxicity", "Does this post contain rude, disrespectful, or unreasonable language?"});
      r.add({"sexually_explicit", "Does this post contain sexually explicit language?"});
      return r;
    }();
    return instance;
  }

  void add(Dimension d) {
    d.validate();
    if (find(d.name)) throw DataError("corpus", "dimension '" + d.name + "' registered twice");
    dims_.push_back(std::move(d));
  }

  const Dimension* find(std::string_view name) const {
    for (const auto& d : dims_)
      if (d.name == name) return &d;
    return nullptr;
  }

  const Dimension& at(std::string_view name) const {
    if (const auto* d = find(name)) return *d;
    throw DataError("corpus", "unknown dimension '" + std::string(name) + "'");
  }

  const std::vector<Dimension>& all() const { return dims_; }

  /// `{"dimensions": [{"name", "definition", "positive_token", "negative_token"}]}`
  static DimensionRegistry from_json(const nlohmann::json& j) {
    DimensionRegistry r;
    for (const auto& d : j.at("dimensions")) {
      r.add({d.at("name").get<std::string>(), d.at("definition").get<std::string>(),
             d.value("positive_token", std::string("Yes")),
             d.value("negative_token", std::string("No"))});
    }
    return r;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : dims_)
      arr.push_back({{"name", d.name},
                     {"definition", d.definition},
                     {"positive_token", d.positive_token},
                     {"negative_token", d.negative_token}});
    return {{"dimensions", arr}};
  }

  static DimensionRegistry load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("corpus", "cannot open dimension registry " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus", "malformed dimension registry " + path + ": " + e.what());
    }
  }

 private:
  std::vector<Dimension> dims_;
};

/// Immutable multi-dimension labeled dataset.
class DatasetBundle {
 public:
  using LabelKey = std::pair<std::string, std::string>;  // (post id, dimension)

  DatasetBundle() = default;

  DatasetBundle(std::string name, std::vector<Post> posts, std::vector<Dimension> dimensions,
                std::map<LabelKey, Label> labels)
      : name_(std::move(name)),
        posts_(std::move(posts)),
        dimensions_(std::move(dimensions)),
        labels_(std::move(labels)) {
    for (std::size_t i = 0; i < posts_.size(); ++i) {
      const auto& p = posts_[i];
      if (p.id.empty()) throw DataError("corpus", "post with empty id", i + 1);
      if (p.text.empty()) throw DataError("corpus", "post '" + p.id + "' has empty text", i + 1);
      if (!index_.emplace(p.id, i).second)
        throw DataError("corpus", "duplicate id '" + p.id + "'", i + 1);
    }
    for (const auto& d : dimensions_) {
      d.validate();
      counts_.emplace(d.name, Counts{});
    }
    if (counts_.size() != dimensions_.size()) throw DataError("corpus", "duplicate dimension");
    for (const auto& [key, label] : labels_) {
      if (!index_.count(key.first))
        throw DataError("corpus", "label references unknown post '" + key.first + "'");
      auto it = counts_.find(key.second);
      if (it == counts_.end())
        throw DataError("corpus", "label references unknown dimension '" + key.second + "'");
      ++it->second.labeled;
      if (label == Label::positive) ++it->second.positive;
    }
  }

  const std::string& name() const { return name_; }
  const std::vector<Post>& posts() const { return posts_; }
  const std::vector<Dimension>& dimensions() const { return dimensions_; }
  const std::map<LabelKey, Label>& labels() const { return labels_; }
  std::size_t size() const { return posts_.size(); }

  bool has_dimension(std::string_view dim) const { return counts_.count(std::string(dim)) > 0; }

  const Dimension& dimension(std::string_view dim) const {
    for (const auto& d : dimensions_)
      if (d.name == dim) return d;
    throw DataError("corpus", "unknown dimension '" + std::string(dim) + "'");
  }

  const Post* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &posts_[it->second];
  }

  std::optional<Label> label(std::string_view id, std::string_view dim) const {
    auto it = labels_.find({std::string(id), std::string(dim)});
    if (it == labels_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t labeled_count(std::string_view dim) const { return counts_at(dim).labeled; }
  std::size_t positive_count(std::string_view dim) const { return counts_at(dim).positive; }

  /// Posts labeled under `dim`, in bundle order.
  std::vector<LabeledExample> examples(std::string_view dim, Provenance provenance) const {
    counts_at(dim);
    std::vector<LabeledExample> out;
    for (const auto& p : posts_)
      if (auto l = label(p.id, dim)) out.push_back({p, std::string(dim), *l, provenance});
    return out;
  }

  /// Bundle restricted to `ids` (kept in this bundle's order).
  DatasetBundle subset(const std::set<std::string>& ids) const {
    std::vector<Post> posts;
    std::map<LabelKey, Label> labels;
    for (const auto& p : posts_)
      if (ids.count(p.id)) posts.push_back(p);
    for (const auto& [key, l] : labels_)
      if (ids.count(key.first)) labels.emplace(key, l);
    return DatasetBundle(name_, std::move(posts), dimensions_, std::move(labels));
  }

  bool operator==(const DatasetBundle& o) const {
    return name_ == o.name_ && posts_ == o.posts_ && dimensions_ == o.dimensions_ &&
           labels_ == o.labels_;
  }

 private:
  struct Counts {
    std::size_t labeled = 0;
    std::size_t positive = 0;
  };

  const Counts& counts_at(std::string_view dim) const {
    auto it = counts_.find(std::string(dim));
    if (it == counts_.end()) throw DataError("corpus", "unknown dimension '" + std::string(dim) + "'");
    return it->second;
  }

  std::string name_;
  std::vector<Post> posts_;
  std::vector<Dimension> dimensions_;
  std::map<LabelKey, Label> labels_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, Counts> counts_;
};

/// Exact fraction of positive labels among posts labeled under `dim`.
inline double positive_rate(const DatasetBundle& bundle, std::string_view dim) {
  const auto labeled = bundle.labeled_count(dim);
  if (labeled == 0)
    throw PreconditionError("corpus", "no labeled posts for dimension '" + std::string(dim) + "'");
  return static_cast<double>(bundle.positive_count(dim)) / static_cast<double>(labeled);
}

enum class Format { jsonl, csv };

inline Format format_from_string(std::string_view s) {
  if (s == "jsonl") return Format::jsonl;
  if (s == "csv") return Format::csv;
  throw PreconditionError("corpus", "unknown format '" + std::string(s) + "'");
}

/// Field mapping for ingestion. JSONL records may carry labels in an inline
/// object (`labels_field`), in top-level fields listed in `label_columns`,
/// or both. CSV input requires `label_columns`.
struct Schema {
  std::string dataset;
  std::string id_field = "id";
  std::string text_field = "text";
  std::string labels_field = "labels";
  std::vector<std::pair<std::string, std::string>> label_columns;  // field -> dimension

  static Schema from_json(const nlohmann::json& j) {
    Schema s;
    s.dataset = j.value("dataset", std::string());
    s.id_field = j.value("id", s.id_field);
    s.text_field = j.value("text", s.text_field);
    s.labels_field = j.value("labels_field", s.labels_field);
    if (j.contains("labels")) {
      for (const auto& [field, dim] : j.at("labels").items())
        s.label_columns.emplace_back(field, dim.get<std::string>());
    }
    return s;
  }
};

namespace detail {

// RFC 4180 records: quoted fields may contain separators, quotes ("") and
// newlines. Each record is returned with the 1-based line it started on.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read_csv(std::istream& in) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t record_line = 1;
  auto end_field = [&] {
    fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(fields.size() == 1 && fields[0].empty())) rows.emplace_back(record_line, std::move(fields));
    fields.clear();
  };
  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started || !field.empty())
          throw DataError("corpus", "stray quote in unquoted CSV field", line);
        quoted = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        record_line = line;
        break;
      default:
        field.push_back(c);
    }
  }
  if (quoted) throw DataError("corpus", "unterminated quoted CSV field", record_line);
  if (!field.empty() || !fields.empty() || field_started) end_record();
  return rows;
}

inline std::optional<Label> parse_label(const nlohmann::ordered_json& v, std::size_t line,
                                        const std::string& field) {
  if (v.is_null()) return std::nullopt;
  if (v.is_boolean()) return v.get<bool>() ? Label::positive : Label::negative;
  if (v.is_number_integer() || v.is_number_unsigned()) {
    const auto x = v.get<long long>();
    if (x == 0 || x == 1) return x ? Label::positive : Label::negative;
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s.empty()) return std::nullopt;
    if (s == "0" || s == "1") return s == "1" ? Label::positive : Label::negative;
  }
  throw DataError("corpus", "label field '" + field + "' must be 0 or 1", line);
}

class BundleBuilder {
 public:
  BundleBuilder(const Schema& schema, const DimensionRegistry& registry)
      : schema_(schema), registry_(registry) {
    for (const auto& [field, dim] : schema.label_columns) use_dimension(dim, 0);
  }

  void use_dimension(const std::string& dim, std::size_t line) {
    if (std::find(dim_names_.begin(), dim_names_.end(), dim) != dim_names_.end()) return;
    if (!registry_.find(dim)) throw DataError("corpus", "unknown dimension '" + dim + "'", line);
    dim_names_.push_back(dim);
  }

  void add(std::string id, const std::string& raw_text, std::size_t line,
           const std::vector<std::pair<std::string, std::optional<Label>>>& labels) {
    if (id.empty()) throw DataError("corpus", "record has empty id", line);
    auto text = normalize_text(raw_text);
    if (text.empty()) throw DataError("corpus", "record '" + id + "' has missing text", line);
    if (!seen_.insert(id).second) throw DataError("corpus", "duplicate id '" + id + "'", line);
    for (const auto& [dim, label] : labels) {
      use_dimension(dim, line);
      if (label) labels_[{id, dim}] = *label;
    }
    posts_.push_back({std::move(id), std::move(text), schema_.dataset});
  }

  DatasetBundle finish() {
    if (dim_names_.empty()) throw DataError("corpus", "schema maps no label field");
    std::vector<Dimension> dims;
    for (const auto& n : dim_names_) dims.push_back(registry_.at(n));
    return DatasetBundle(schema_.dataset, std::move(posts_), std::move(dims), std::move(labels_));
  }

 private:
  const Schema& schema_;
  const DimensionRegistry& registry_;
  std::vector<std::string> dim_names_;
  std::vector<Post> posts_;
  std::map<DatasetBundle::LabelKey, Label> labels_;
  std::set<std::string> seen_;
};

inline std::string json_id(const nlohmann::ordered_json& v, std::size_t line) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  throw DataError("corpus", "id must be a string or integer", line);
}

}  // namespace detail

inline DatasetBundle parse_jsonl(std::istream& in, const Schema& schema,
                                 const DimensionRegistry& registry = DimensionRegistry::defaults()) {
  detail::BundleBuilder builder(schema, registry);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::ordered_json rec;
    try {
      rec = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw DataError("corpus", "malformed JSON record", lineno);
    }
    if (!rec.is_object()) throw DataError("corpus", "record is not an object", lineno);
    if (!rec.contains(schema.id_field))
      throw DataError("corpus", "record missing '" + schema.id_field + "'", lineno);
    const auto text_it = rec.find(schema.text_field);
    if (text_it == rec.end() || !text_it->is_string())
      throw DataError("corpus", "record has missing text", lineno);

    std::vector<std::pair<std::string, std::optional<Label>>> labels;
    if (auto it = rec.find(schema.labels_field); it != rec.end() && !it->is_null()) {
      if (!it->is_object()) throw DataError("corpus", "'labels' must be an object", lineno);
      for (const auto& [dim, v] : it->items())
        labels.emplace_back(dim, detail::parse_label(v, lineno, dim));
    }
    for (const auto& [field, dim] : schema.label_columns) {
      auto it = rec.find(field);
      labels.emplace_back(dim, it == rec.end() ? std::nullopt
                                               : detail::parse_label(*it, lineno, field));
    }
    builder.add(detail::json_id(rec.at(schema.id_field), lineno), text_it->get<std::string>(),
                lineno, labels);
  }
  return builder.finish();
}

inline DatasetBundle parse_csv(std::istream& in, const Schema& schema,
                               const DimensionRegistry& registry = DimensionRegistry::defaults()) {
  if (schema.label_columns.empty())
    throw PreconditionError("corpus", "CSV schema must map at least one label column");
  const auto rows = detail::read_csv(in);
  if (rows.empty()) throw DataError("corpus", "CSV has no header row", 1);
  const auto& header = rows.front().second;
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("corpus", "CSV header lacks column '" + name + "'", 1);
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto id_col = column(schema.id_field);
  const auto text_col = column(schema.text_field);
  std::vector<std::pair<std::size_t, std::string>> label_cols;
  for (const auto& [field, dim] : schema.label_columns) label_cols.emplace_back(column(field), dim);

  detail::BundleBuilder builder(schema, registry);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& [lineno, fields] = rows[r];
    if (fields.size() != header.size())
      throw DataError("corpus",
                      "expected " + std::to_string(header.size()) + " fields, got " +
                          std::to_string(fields.size()),
                      lineno);
    std::vector<std::pair<std::string, std::optional<Label>>> labels;
    for (const auto& [col, dim] : label_cols)
      labels.emplace_back(dim, detail::parse_label(nlohmann::ordered_json(fields[col]), lineno,
                                                   header[col]));
    builder.add(fields[id_col], fields[text_col], lineno, labels);
  }
  return builder.finish();
}

inline DatasetBundle load_dataset(const std::string& path, Format format, const Schema& schema,
                                  const DimensionRegistry& registry = DimensionRegistry::defaults()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("corpus", "cannot open " + path);
  return format == Format::jsonl ? parse_jsonl(in, schema, registry)
                                 : parse_csv(in, schema, registry);
}

/// Canonical JSONL: `{"id", "text", "labels": {dim: 0|1|null}}`, one post per
/// line. Every dimension is listed on every line (null when unlabeled) so
/// the dimension order survives a round trip.
inline void write_jsonl(const DatasetBundle& bundle, std::ostream& out) {
  for (const auto& p : bundle.posts()) {
    nlohmann::ordered_json labels = nlohmann::ordered_json::object();
    for (const auto& d : bundle.dimensions())
      if (auto l = bundle.label(p.id, d.name))
        labels[d.name] = l == Label::positive ? 1 : 0;
      else
        labels[d.name] = nullptr;
    nlohmann::ordered_json rec;
    rec["id"] = p.id;
    rec["text"] = p.text;
    rec["labels"] = std::move(labels);
    out << rec.dump() << '\n';
  }
}

inline void save_jsonl(const DatasetBundle& bundle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("corpus", "cannot write " + path);
  write_jsonl(bundle, out);
}

/// Canonical-format loader: the dimensions present in the file, resolved
/// against `registry`.
inline DatasetBundle load_canonical(const std::string& path, std::string dataset,
                                    const DimensionRegistry& registry = DimensionRegistry::defaults()) {
  Schema s;
  s.dataset = std::move(dataset);
  return load_dataset(path, Format::jsonl, s, registry);
}

/// Stratified, seeded partition into (pool, test). Posts are grouped by
/// their joint label pattern, shuffled within groups, and every group
/// contributes its proportional share to the test side, so per-dimension
/// positive rates track the full bundle.
inline std::pair<DatasetBundle, DatasetBundle> split(const DatasetBundle& bundle,
                                                     double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw PreconditionError("corpus", "test_fraction must be in (0, 1)");
  const auto n = bundle.size();
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction + 0.5));
  if (n_test == 0 || n_test >= n)
    throw PreconditionError("corpus", "bundle of " + std::to_string(n) +
                                          " posts is too small to stratify at this fraction");

  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& p : bundle.posts()) {
    std::string key;
    for (const auto& d : bundle.dimensions()) {
      const auto l = bundle.label(p.id, d.name);
      key.push_back(!l ? '?' : (*l == Label::positive ? '1' : '0'));
    }
    strata[key].push_back(p.id);
  }
  Rng rng(derive_seed(seed, "split"));
  std::vector<std::string> ordered;
  ordered.reserve(n);
  for (auto& [key, ids] : strata) {
    rng.shuffle(ids);
    ordered.insert(ordered.end(), ids.begin(), ids.end());
  }
  std::set<std::string> test_ids, pool_ids;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const auto before = std::floor(static_cast<double>(i) * test_fraction + 0.5);
    const auto after = std::floor(static_cast<double>(i + 1) * test_fraction + 0.5);
    (after > before ? test_ids : pool_ids).insert(ordered[i]);
  }
  return {bundle.subset(pool_ids), bundle.subset(test_ids)};
}

}  // namespace atf
