#pragma once

// Source tags and preference pairs shared by the data pipeline and the losses.

#include <compare>
#include <string>
#include <vector>

#include "tso/error.hpp"
#include "tso/policy_io.hpp"
#include "tso/seq.hpp"

namespace tso {

/// (version, size) coordinate in the model matrix. Both ordinals are >= 1.
struct ModelId {
  int version = 1;
  int size = 1;
  auto operator<=>(const ModelId&) const = default;
};

/// Where a response came from: a matrix entry, the human policy, or the
/// current base policy's re-inference.
struct SourceTag {
  enum class Kind { Model, Human, Base };
  Kind kind = Kind::Human;
  ModelId id{};

  static SourceTag human() { return {Kind::Human, {}}; }
  static SourceTag base() { return {Kind::Base, {}}; }
  static SourceTag model(ModelId id) { return {Kind::Model, id}; }

  bool operator==(const SourceTag& o) const {
    return kind == o.kind && (kind != Kind::Model || id == o.id);
  }
  auto operator<=>(const SourceTag& o) const {
    if (auto c = kind <=> o.kind; c != 0) return c;
    if (kind != Kind::Model) return std::strong_ordering::equal;
    return id <=> o.id;
  }
};

inline std::string to_string(const SourceTag& s) {
  switch (s.kind) {
    case SourceTag::Kind::Human: return "HUMAN";
    case SourceTag::Kind::Base: return "BASE";
    case SourceTag::Kind::Model: break;
  }
  return "v" + std::to_string(s.id.version) + "s" + std::to_string(s.id.size);
}

inline SourceTag parse_source_tag(std::string_view s) {
  if (s == "HUMAN") return SourceTag::human();
  if (s == "BASE") return SourceTag::base();
  const auto spos = s.find('s');
  if (s.size() < 4 || s[0] != 'v' || spos == std::string_view::npos) throw ParseError("bad source tag '" + std::string(s) + "'");
  return SourceTag::model({static_cast<int>(parse_int(s.substr(1, spos - 1))), static_cast<int>(parse_int(s.substr(spos + 1)))});
}

struct PreferencePair {
  Prompt prompt;
  Response chosen;
  Response rejected;
  SourceTag chosen_source;
  SourceTag rejected_source;
  bool operator==(const PreferencePair&) const = default;
};

using PreferenceDataset = std::vector<PreferencePair>;

inline std::string serialize_preferences(const PreferenceDataset& d) {
  std::string out;
  for (const auto& p : d)
    out += "prompt=" + join_tokens(p.prompt.tokens) + " chosen=" + join_tokens(p.chosen.tokens) +
           " rejected=" + join_tokens(p.rejected.tokens) + " src_w=" + to_string(p.chosen_source) +
           " src_l=" + to_string(p.rejected_source) + "\n";
  return out;
}

inline PreferenceDataset parse_preferences(std::string_view text) {
  PreferenceDataset d;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    d.push_back({Prompt{split_tokens(field(line, "prompt"))}, Response{split_tokens(field(line, "chosen"))},
                 Response{split_tokens(field(line, "rejected"))}, parse_source_tag(field(line, "src_w")),
                 parse_source_tag(field(line, "src_l"))});
  }
  return d;
}

}  // namespace tso
