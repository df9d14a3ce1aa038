#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atf/corpus.hpp"
#include "atf/error.hpp"
#include "atf/selector.hpp"
#include "atf/text.hpp"

namespace atf {

struct PromptShot {
  std::string post_id;
  std::string text;
  Dimension dimension;  // the definition this shot was labeled under
  Label label = Label::negative;
  Provenance provenance = Provenance::target;
  double similarity = 0.0;

  const std::string& answer() const { return dimension.token(label); }
};

/// Instruction prompt: shot blocks followed by the query block.
///
///   Post: {text}\nQuestion: {definition}\nAnswer: {token}\n\n   (per shot)
///   Post: {query}\nQuestion: {target definition}\nAnswer:
///
/// The query cue ends flush at "Answer:" so the scored continuations carry
/// their own leading space (" Yes" / " No").
struct PromptSpec {
  std::vector<PromptShot> shots;
  std::string query_id;
  std::string query_text;
  Dimension query_dimension;
  std::string rendered;
  int token_budget = 2048;

  std::vector<std::string> shot_ids() const {
    std::vector<std::string> ids;
    for (const auto& s : shots) ids.push_back(s.post_id);
    return ids;
  }
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

inline TokenCounter unit_token_counter() {
  return [](std::string_view s) { return count_words(s); };
}

inline std::string render_shot_block(const PromptShot& s) {
  std::string out;
  out += "Post: ";
  out += s.text;
  out += "\nQuestion: ";
  out += s.dimension.definition;
  out += "\nAnswer: ";
  out += s.answer();
  out += "\n\n";
  return out;
}

inline std::string render_query_block(std::string_view text, const Dimension& dim) {
  std::string out;
  out += "Post: ";
  out += text;
  out += "\nQuestion: ";
  out += dim.definition;
  out += "\nAnswer:";
  return out;
}

/// Rebuild `rendered` from the structured fields.
inline void rerender(PromptSpec& spec) {
  std::string out;
  for (const auto& s : spec.shots) out += render_shot_block(s);
  out += render_query_block(spec.query_text, spec.query_dimension);
  spec.rendered = std::move(out);
}

/// Shots from the source domain carry the source definition; target shots
/// and the query carry the target definition. `source_dim` may be empty
/// when no source-domain shot is present.
inline PromptSpec render(const std::vector<Shot>& shots, const Post& query,
                         const std::optional<Dimension>& source_dim, const Dimension& target_dim,
                         int token_budget = 2048) {
  PromptSpec spec;
  spec.query_id = query.id;
  spec.query_text = query.text;
  spec.query_dimension = target_dim;
  spec.token_budget = token_budget;
  for (const auto& s : shots) {
    const auto& e = s.example;
    const Dimension* dim = nullptr;
    if (e.provenance == Provenance::source) {
      if (!source_dim) throw PreconditionError("prompter", "source shot '" + e.post.id + "' without a source dimension");
      dim = &*source_dim;
    } else if (e.provenance == Provenance::target) {
      dim = &target_dim;
    } else {
      throw PreconditionError("prompter", "shot '" + e.post.id + "' has unknown provenance");
    }
    spec.shots.push_back({e.post.id, e.post.text, *dim, e.label, e.provenance, s.similarity});
  }
  rerender(spec);
  return spec;
}

/// Drop the least similar shot of each class, one pair at a time, until the
/// rendered prompt fits in `max_tokens`.
inline PromptSpec truncate_to_budget(PromptSpec spec, std::size_t max_tokens,
                                     const TokenCounter& count = unit_token_counter()) {
  const auto query_tokens = count(render_query_block(spec.query_text, spec.query_dimension));
  if (query_tokens >= max_tokens)
    throw PreconditionError("prompter", "query block alone (" + std::to_string(query_tokens) +
                                            " tokens) does not fit budget " + std::to_string(max_tokens));
  while (count(spec.rendered) > max_tokens && !spec.shots.empty()) {
    for (Label cls : {Label::positive, Label::negative}) {
      auto weakest = spec.shots.end();
      for (auto it = spec.shots.begin(); it != spec.shots.end(); ++it) {
        if (it->label != cls) continue;
        if (weakest == spec.shots.end() || it->similarity < weakest->similarity ||
            (it->similarity == weakest->similarity && it->post_id > weakest->post_id))
          weakest = it;
      }
      if (weakest != spec.shots.end()) spec.shots.erase(weakest);
    }
    rerender(spec);
  }
  return spec;
}

/// A prompt split back into its blocks.
struct ParsedPrompt {
  struct Block {
    std::string post;
    std::string question;
    std::string answer;
  };
  std::vector<Block> shots;
  std::string query_post;
  std::string query_question;
};

/// Inverse of `render` for prompts whose texts don't contain the tag lines.
inline ParsedPrompt parse_prompt(std::string_view rendered) {
  ParsedPrompt out;
  std::size_t pos = 0;
  auto expect = [&](std::string_view tag) {
    if (rendered.substr(pos, tag.size()) != tag)
      throw PreconditionError("prompter", "malformed prompt: expected '" + std::string(tag) + "'");
    pos += tag.size();
  };
  auto until = [&](std::string_view stop) {
    const auto end = rendered.find(stop, pos);
    if (end == std::string_view::npos) throw PreconditionError("prompter", "malformed prompt");
    std::string s(rendered.substr(pos, end - pos));
    pos = end;
    return s;
  };
  while (true) {
    expect("Post: ");
    auto post = until("\nQuestion: ");
    expect("\nQuestion: ");
    auto question = until("\nAnswer:");
    expect("\nAnswer:");
    if (pos == rendered.size()) {
      out.query_post = std::move(post);
      out.query_question = std::move(question);
      return out;
    }
    expect(" ");
    auto answer = until("\n\n");
    expect("\n\n");
    out.shots.push_back({std::move(post), std::move(question), std::move(answer)});
  }
}

/// Audit record `{query_id, rendered, shot_ids}`.
inline nlohmann::ordered_json prompt_record(const PromptSpec& spec) {
  nlohmann::ordered_json rec;
  rec["query_id"] = spec.query_id;
  rec["rendered"] = spec.rendered;
  rec["shot_ids"] = spec.shot_ids();
  return rec;
}

}  // namespace atf
