/* Copyright 2026 The probeagg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "probeagg/error.hpp"
#include "probeagg/utf8.hpp"

namespace probeagg {

enum class RuleKind {
  kLowercase,
  kTrimWhitespace,
  kStripTerminalPunctuation,
  kCollapseInternalWhitespace,
  kStripPrefix,
  kStripSuffix,
  kFirstCommaTerm,
  kReplace,
};

struct Rule {
  RuleKind kind;
  // strip_prefix / strip_suffix literals.
  std::vector<std::string> literals;
  // replace: applied left to right, every occurrence.
  std::vector<std::pair<std::string, std::string>> replacements;

  bool operator==(const Rule&) const = default;
};

// An ordered pipeline of string reductions. Applying it means running the
// rules in order until the output stops changing.
struct CanonRuleset {
  std::string name;
  std::vector<Rule> rules;

  bool operator==(const CanonRuleset&) const = default;
};

inline constexpr int kBuiltinRulesetVersion = 1;
inline constexpr int kMaxFixpointPasses = 4;

namespace canon_detail {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_terminal_punct(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
}

inline bool is_word_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || u >= 0x80;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string collapse(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = false;
  for (char c : s) {
    if (is_space(c)) {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  return out;
}

inline std::string strip_terminal_punct(std::string_view s) {
  std::size_t e = s.size();
  while (e > 0 && (is_terminal_punct(s[e - 1]) || is_space(s[e - 1]))) --e;
  return std::string(s.substr(0, e));
}

inline std::string strip_prefix(std::string_view s, const std::vector<std::string>& literals) {
  for (const auto& lit : literals) {
    if (lit.empty() || s.size() < lit.size() || s.substr(0, lit.size()) != lit) continue;
    // Anchored on a word boundary so "of" never eats the start of "offset".
    if (s.size() > lit.size() && is_word_char(s[lit.size()]) && is_word_char(lit.back())) continue;
    std::size_t b = lit.size();
    while (b < s.size() && is_space(s[b])) ++b;
    return std::string(s.substr(b));
  }
  return std::string(s);
}

inline std::string strip_suffix(std::string_view s, const std::vector<std::string>& literals) {
  for (const auto& lit : literals) {
    if (lit.empty() || s.size() < lit.size() || s.substr(s.size() - lit.size()) != lit) continue;
    std::size_t e = s.size() - lit.size();
    if (e > 0 && is_word_char(s[e - 1]) && is_word_char(lit.front())) continue;
    while (e > 0 && (is_space(s[e - 1]) || s[e - 1] == ',')) --e;
    return std::string(s.substr(0, e));
  }
  return std::string(s);
}

inline std::string first_comma_term(std::string_view s) {
  auto pos = s.find(',');
  if (pos == std::string_view::npos) return std::string(s);
  return trim(s.substr(0, pos));
}

inline std::string replace_all(std::string s, const std::vector<std::pair<std::string, std::string>>& reps) {
  for (const auto& [from, to] : reps) {
    if (from.empty()) continue;
    std::string out;
    std::size_t pos = 0;
    while (true) {
      auto hit = s.find(from, pos);
      if (hit == std::string::npos) break;
      out.append(s, pos, hit - pos);
      out += to;
      pos = hit + from.size();
    }
    out.append(s, pos, std::string::npos);
    s = std::move(out);
  }
  return s;
}

inline std::string apply_rule(const Rule& rule, std::string s) {
  switch (rule.kind) {
    case RuleKind::kLowercase: return utf8::lowercase(s);
    case RuleKind::kTrimWhitespace: return trim(s);
    case RuleKind::kStripTerminalPunctuation: return strip_terminal_punct(s);
    case RuleKind::kCollapseInternalWhitespace: return collapse(s);
    case RuleKind::kStripPrefix: return strip_prefix(s, rule.literals);
    case RuleKind::kStripSuffix: return strip_suffix(s, rule.literals);
    case RuleKind::kFirstCommaTerm: return first_comma_term(s);
    case RuleKind::kReplace: return replace_all(std::move(s), rule.replacements);
  }
  return s;
}

}  // namespace canon_detail

inline std::string_view rule_name(RuleKind kind) {
  switch (kind) {
    case RuleKind::kLowercase: return "lowercase";
    case RuleKind::kTrimWhitespace: return "trim_whitespace";
    case RuleKind::kStripTerminalPunctuation: return "strip_terminal_punctuation";
    case RuleKind::kCollapseInternalWhitespace: return "collapse_internal_whitespace";
    case RuleKind::kStripPrefix: return "strip_prefix";
    case RuleKind::kStripSuffix: return "strip_suffix";
    case RuleKind::kFirstCommaTerm: return "first_comma_term";
    case RuleKind::kReplace: return "replace";
  }
  return "?";
}

// Reduces `text` to its canonical form under `ruleset`. The result is a fixed
// point of the rule pipeline, so canonicalize is idempotent. May return "".
inline std::string canonicalize(std::string_view text, const CanonRuleset& ruleset) {
  std::string current(text);
  if (ruleset.rules.empty()) return current;
  for (int pass = 0; pass <= kMaxFixpointPasses; ++pass) {
    std::string next = current;
    for (const auto& rule : ruleset.rules) next = canon_detail::apply_rule(rule, std::move(next));
    if (next == current) return current;
    current = std::move(next);
  }
  throw Error(Errc::kRulesetDivergent,
              "ruleset '" + ruleset.name + "' did not reach a fixed point on \"" + std::string(text) + "\"");
}

namespace builtin_rulesets {

inline CanonRuleset identity() { return {"identity", {}}; }

inline CanonRuleset caption() {
  return {"caption",
          {{RuleKind::kLowercase, {}, {}},
           {RuleKind::kTrimWhitespace, {}, {}},
           {RuleKind::kCollapseInternalWhitespace, {}, {}},
           {RuleKind::kStripTerminalPunctuation, {}, {}},
           {RuleKind::kStripSuffix, {"on a white background", "against a white background"}, {}}}};
}

inline CanonRuleset vqa_first_term() {
  return {"vqa-first-term",
          {{RuleKind::kLowercase, {}, {}},
           {RuleKind::kTrimWhitespace, {}, {}},
           {RuleKind::kStripTerminalPunctuation, {}, {}},
           {RuleKind::kFirstCommaTerm, {}, {}}}};
}

inline CanonRuleset cap3d_compare() {
  return {"cap3d-compare",
          {{RuleKind::kLowercase, {}, {}},
           {RuleKind::kTrimWhitespace, {}, {}},
           {RuleKind::kStripPrefix, {"3d model of"}, {}}}};
}

// LVIS category names use underscores ("teddy_bear").
inline CanonRuleset lvis_label() {
  return {"lvis-label",
          {{RuleKind::kReplace, {}, {{"_", " "}}},
           {RuleKind::kLowercase, {}, {}},
           {RuleKind::kTrimWhitespace, {}, {}},
           {RuleKind::kCollapseInternalWhitespace, {}, {}}}};
}

// Trim + lowercase; used for tag baselines and keyword-free comparisons.
inline CanonRuleset basic() {
  return {"basic",
          {{RuleKind::kLowercase, {}, {}},
           {RuleKind::kTrimWhitespace, {}, {}},
           {RuleKind::kCollapseInternalWhitespace, {}, {}}}};
}

}  // namespace builtin_rulesets

namespace canon_detail {

[[noreturn]] inline void malformed(const std::string& origin, std::size_t line, std::size_t col,
                                   const std::string& why) {
  throw Error(Errc::kMalformedRulesetFile,
              origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + why);
}

struct Arg {
  std::string text;
  bool quoted = false;
};

// Splits "a, \"b,c\", d" on commas outside double quotes. Unquoted pieces are
// trimmed; quoted pieces are literal with \" and \\ escapes.
inline std::vector<std::string> split_args(std::string_view s, const std::string& origin, std::size_t line,
                                           std::size_t col0) {
  std::vector<std::string> out;
  std::string cur;
  bool any_quoted = false;
  bool in_quotes = false;
  std::string quoted_buf;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (in_quotes) {
      if (c == '\\' && i + 1 < s.size()) {
        quoted_buf.push_back(s[++i]);
      } else if (c == '"') {
        in_quotes = false;
        cur += '\x01';  // placeholder for the quoted run
      } else {
        quoted_buf.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
      any_quoted = true;
      continue;
    }
    if (c == ',') {
      if (any_quoted) {
        auto t = trim(cur);
        if (t != "\x01") malformed(origin, line, col0 + i, "text outside quoted argument");
        out.push_back(quoted_buf);
      } else {
        out.push_back(trim(cur));
      }
      cur.clear();
      quoted_buf.clear();
      any_quoted = false;
      continue;
    }
    cur.push_back(c);
  }
  if (in_quotes) malformed(origin, line, col0 + s.size(), "unterminated quote");
  if (any_quoted) {
    if (trim(cur) != "\x01") malformed(origin, line, col0 + s.size(), "text outside quoted argument");
    out.push_back(quoted_buf);
  } else {
    out.push_back(trim(cur));
  }
  return out;
}

}  // namespace canon_detail

// Parses the line-oriented ruleset format:
//   # comment
//   lowercase
//   strip_suffix: on a white background, against a white background
//   replace: "_"=>" ", "&"=>"and"
inline CanonRuleset parse_ruleset(std::string_view text, std::string name, const std::string& origin = "<ruleset>") {
  CanonRuleset rs;
  rs.name = std::move(name);
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    std::string line = canon_detail::trim(raw);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') {
      if (end == text.size()) break;
      continue;
    }
    auto colon = line.find(':');
    std::string head = canon_detail::trim(std::string_view(line).substr(0, colon));
    std::string rest = colon == std::string::npos ? "" : line.substr(colon + 1);
    std::size_t rest_col = colon == std::string::npos ? line.size() : colon + 2;
    Rule rule{};
    bool needs_args = false;
    if (head == "lowercase") {
      rule.kind = RuleKind::kLowercase;
    } else if (head == "trim_whitespace" || head == "trim") {
      rule.kind = RuleKind::kTrimWhitespace;
    } else if (head == "strip_terminal_punctuation") {
      rule.kind = RuleKind::kStripTerminalPunctuation;
    } else if (head == "collapse_internal_whitespace") {
      rule.kind = RuleKind::kCollapseInternalWhitespace;
    } else if (head == "first_comma_term") {
      rule.kind = RuleKind::kFirstCommaTerm;
    } else if (head == "strip_prefix") {
      rule.kind = RuleKind::kStripPrefix;
      needs_args = true;
    } else if (head == "strip_suffix") {
      rule.kind = RuleKind::kStripSuffix;
      needs_args = true;
    } else if (head == "replace") {
      rule.kind = RuleKind::kReplace;
      needs_args = true;
    } else {
      canon_detail::malformed(origin, line_no, 1, "unknown rule '" + head + "'");
    }
    if (!needs_args) {
      if (!canon_detail::trim(rest).empty()) {
        canon_detail::malformed(origin, line_no, rest_col, "rule '" + head + "' takes no arguments");
      }
    } else {
      if (canon_detail::trim(rest).empty()) {
        canon_detail::malformed(origin, line_no, rest_col, "rule '" + head + "' requires arguments");
      }
      auto args = canon_detail::split_args(rest, origin, line_no, rest_col);
      for (auto& a : args) {
        if (rule.kind == RuleKind::kReplace) {
          // The first "=>" separates FROM and TO.
          auto arrow = a.find("=>");
          if (arrow == std::string::npos) {
            canon_detail::malformed(origin, line_no, rest_col, "replace argument needs FROM=>TO");
          }
          std::string from = a.substr(0, arrow);
          std::string to = a.substr(arrow + 2);
          if (from.empty()) canon_detail::malformed(origin, line_no, rest_col, "replace FROM must be non-empty");
          rule.replacements.emplace_back(std::move(from), std::move(to));
        } else {
          if (a.empty()) canon_detail::malformed(origin, line_no, rest_col, "empty literal");
          rule.literals.push_back(std::move(a));
        }
      }
    }
    rs.rules.push_back(std::move(rule));
    if (end == text.size()) break;
  }
  return rs;
}

// Inverse of parse_ruleset (quoted literals, so every ruleset round-trips).
inline std::string format_ruleset(const CanonRuleset& rs) {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"' || c == '\\') out.push_back('\\');
      out.push_back(c);
    }
    return out + "\"";
  };
  std::string out;
  for (const auto& r : rs.rules) {
    out += rule_name(r.kind);
    if (r.kind == RuleKind::kStripPrefix || r.kind == RuleKind::kStripSuffix) {
      out += ": ";
      for (std::size_t i = 0; i < r.literals.size(); ++i) out += (i ? ", " : "") + quote(r.literals[i]);
    } else if (r.kind == RuleKind::kReplace) {
      out += ": ";
      for (std::size_t i = 0; i < r.replacements.size(); ++i) {
        out += (i ? ", " : "") + quote(r.replacements[i].first + "=>" + r.replacements[i].second);
      }
    }
    out += "\n";
  }
  return out;
}

// Resolves a built-in name or reads a ruleset file.
inline CanonRuleset load_ruleset(const std::string& name_or_path) {
  if (name_or_path == "identity") return builtin_rulesets::identity();
  if (name_or_path == "caption") return builtin_rulesets::caption();
  if (name_or_path == "vqa-first-term") return builtin_rulesets::vqa_first_term();
  if (name_or_path == "cap3d-compare") return builtin_rulesets::cap3d_compare();
  if (name_or_path == "lvis-label") return builtin_rulesets::lvis_label();
  if (name_or_path == "basic") return builtin_rulesets::basic();
  std::ifstream in(name_or_path, std::ios::binary);
  if (!in) {
    throw Error(Errc::kUnknownRuleset, "'" + name_or_path + "' is neither a built-in ruleset nor a readable file");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ruleset(ss.str(), name_or_path, name_or_path);
}

}  // namespace probeagg
