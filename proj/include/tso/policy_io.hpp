#pragma once

/*
 * Plain-text policy tables.
 *
 *   vocab=<V> order=<k> eos=<id>
 *   ctx=<s1,...,sk> logits=<v1,...,vV>
 *   ...
 *
 * One ctx line per context in index order. Context symbols are token ids,
 * with the start-padding symbol written as V. Doubles use the shortest
 * representation that round-trips exactly.
 */

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "tso/error.hpp"
#include "tso/seq.hpp"

namespace tso {

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("bad number '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("bad integer '" + std::string(s) + "'");
  return v;
}

template <typename T>
std::string join_tokens(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

inline std::vector<Token> split_tokens(std::string_view s) {
  std::vector<Token> out;
  if (s.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = s.find(',', pos);
    out.push_back(static_cast<Token>(parse_int(s.substr(pos, comma - pos))));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

/// Value of `key=` in a whitespace-separated field list.
inline std::string_view field(std::string_view line, std::string_view key) {
  std::size_t pos = 0;
  while (pos <= line.size()) {
    auto end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    auto tok = line.substr(pos, end - pos);
    if (tok.size() > key.size() && tok.substr(0, key.size()) == key && tok[key.size()] == '=')
      return tok.substr(key.size() + 1);
    if (tok.size() == key.size() + 1 && tok.substr(0, key.size()) == key && tok.back() == '=') return {};
    pos = end + 1;
  }
  throw ParseError("missing field '" + std::string(key) + "' in line: " + std::string(line));
}

inline std::string serialize_policy(const TabularPolicy& p) {
  std::string out = "vocab=" + std::to_string(p.vocab().size) + " order=" + std::to_string(p.order()) +
                    " eos=" + std::to_string(p.vocab().eos_id) + "\n";
  for (std::size_t c = 0; c < p.num_contexts(); ++c) {
    out += "ctx=" + join_tokens(p.context_symbols(c)) + " logits=";
    auto row = p.row(c);
    for (std::size_t v = 0; v < row.size(); ++v) {
      if (v) out += ',';
      out += format_double(row[v]);
    }
    out += '\n';
  }
  return out;
}

inline TabularPolicy parse_policy(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty policy text");
  Vocabulary vocab{static_cast<int>(parse_int(field(line, "vocab"))), static_cast<Token>(parse_int(field(line, "eos")))};
  const int order = static_cast<int>(parse_int(field(line, "order")));
  TabularPolicy p(vocab, order);
  std::size_t ctx = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (ctx >= p.num_contexts()) throw ParseError("more context lines than the table holds");
    const auto sym = split_tokens(field(line, "ctx"));
    if (sym != p.context_symbols(ctx)) throw ParseError("context lines out of order at line " + std::to_string(ctx + 2));
    auto vals = field(line, "logits");
    auto row = p.row(ctx);
    std::size_t pos = 0, v = 0;
    while (true) {
      const auto comma = vals.find(',', pos);
      if (v >= row.size()) throw ParseError("too many logits in context line");
      row[v++] = parse_double(vals.substr(pos, comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (v != row.size()) throw ParseError("too few logits in context line");
    ++ctx;
  }
  if (ctx != p.num_contexts()) throw ParseError("policy table is missing context lines");
  return p;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_policy(const TabularPolicy& p, const std::string& path) { write_text_file(path, serialize_policy(p)); }
inline TabularPolicy load_policy(const std::string& path) { return parse_policy(read_text_file(path)); }

}  // namespace tso
