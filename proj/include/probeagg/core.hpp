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

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "probeagg/error.hpp"

namespace probeagg {

enum class Mode { kVlm, kLlm };

inline std::string_view mode_name(Mode m) { return m == Mode::kVlm ? "vlm" : "llm"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "vlm") return Mode::kVlm;
  if (s == "llm") return Mode::kLlm;
  throw Error(Errc::kInvalidArgument, "unknown mode '" + std::string(s) + "'");
}

// One sampled text and its natural-log likelihood.
struct ScoredResponse {
  std::string text;
  double score = 0.0;

  bool operator==(const ScoredResponse&) const = default;
};

// One model query: object x optional view x question x mode, with up to J
// scored responses.
struct ProbeRecord {
  std::string object_id;
  std::optional<int> view_id;
  std::string question_id;
  std::string prompt_text;
  Mode mode = Mode::kVlm;
  std::vector<ScoredResponse> responses;
  // Provider that produced the responses; aggregation refuses to mix them.
  std::optional<std::string> backend_id;

  bool operator==(const ProbeRecord&) const = default;
};

struct CanonicalScore {
  std::string canonical;
  double score = -INFINITY;

  bool operator==(const CanonicalScore&) const = default;
};

struct ProvenanceItem {
  std::optional<int> view_id;
  std::string question_id;
  std::string raw_text;
  double score = 0.0;

  bool operator==(const ProvenanceItem&) const = default;
};

struct DistributionEntry {
  std::string canonical;
  double agg_score = 0.0;
  double prob = 0.0;
  std::vector<ProvenanceItem> provenance;

  bool operator==(const DistributionEntry&) const = default;
};

// How equal-probability entries are ordered. Aggregates break ties by
// ascending canonical string; tag baselines keep the uploader's order.
enum class TieOrder { kCanonical, kGiven };

struct AggregateDistribution {
  std::string object_id;
  std::string property;
  std::vector<DistributionEntry> entries;
  TieOrder tie_order = TieOrder::kCanonical;
  // Set by support_cap: entries were dropped without renormalizing.
  bool display_only = false;

  bool operator==(const AggregateDistribution&) const = default;

  const DistributionEntry* top() const { return entries.empty() ? nullptr : &entries.front(); }
};

struct LabelRecord {
  std::string object_id;
  std::string property;
  std::string label;
  std::string source;

  bool operator==(const LabelRecord&) const = default;
};

enum class Decision { kAccept, kReject };

inline std::string_view decision_name(Decision d) {
  return d == Decision::kAccept ? "accept" : "reject";
}

inline Decision parse_decision(std::string_view s) {
  if (s == "accept") return Decision::kAccept;
  if (s == "reject") return Decision::kReject;
  throw Error(Errc::kInvalidDecision, "decision must be accept or reject, got '" + std::string(s) + "'");
}

using Timestamp = std::chrono::sys_seconds;

inline std::string format_timestamp(Timestamp t) {
  std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline Timestamp parse_timestamp(std::string_view s) {
  int y, mo, d, h, mi, sec;
  char z = 0;
  std::string str(s);
  if (std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &sec, &z) != 7 ||
      z != 'Z' || str.size() != 20) {
    throw Error(Errc::kParseError, "timestamp must be YYYY-MM-DDTHH:MM:SSZ, got '" + str + "'");
  }
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) {
    throw Error(Errc::kParseError, "timestamp out of range: '" + str + "'");
  }
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec};
}

inline Timestamp now_utc() {
  return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
}

struct CurationDecision {
  std::string object_id;
  std::string candidate_label;
  Decision decision = Decision::kAccept;
  std::string annotator = "anonymous";
  Timestamp timestamp{};

  bool operator==(const CurationDecision&) const = default;
};

namespace detail {
inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}
}  // namespace detail

// Lists every ProbeRecord invariant the record breaks. Empty means valid.
inline std::vector<std::string> validate_probe_record(const ProbeRecord& record) {
  std::vector<std::string> out;
  if (record.question_id.empty()) out.emplace_back("question_id must be non-empty");
  if (record.mode == Mode::kLlm && record.view_id) out.emplace_back("llm mode must not carry view_id");
  if (record.mode == Mode::kVlm && !record.view_id) out.emplace_back("vlm mode requires view_id");
  if (record.view_id && *record.view_id < 0) out.emplace_back("view_id must be non-negative");
  if (record.responses.empty()) out.emplace_back("responses must be non-empty");
  for (std::size_t i = 0; i < record.responses.size(); ++i) {
    const auto& r = record.responses[i];
    if (detail::is_blank(r.text)) {
      out.push_back("response " + std::to_string(i) + " text must be non-empty");
    }
    if (!std::isfinite(r.score)) {
      out.push_back("response " + std::to_string(i) + " score must be finite");
    }
  }
  return out;
}

inline bool check_distribution(const AggregateDistribution& dist, double tolerance) {
  if (!(tolerance > 0)) throw Error(Errc::kInvalidArgument, "tolerance must be positive");
  double sum = 0.0;
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < dist.entries.size(); ++i) {
    const auto& e = dist.entries[i];
    if (!(e.prob >= 0.0 && e.prob <= 1.0)) return false;
    if (!seen.insert(e.canonical).second) return false;
    sum += e.prob;
    if (i == 0) continue;
    const auto& prev = dist.entries[i - 1];
    if (prev.prob < e.prob) return false;
    if (prev.prob == e.prob && dist.tie_order == TieOrder::kCanonical && !(prev.canonical < e.canonical)) {
      return false;
    }
  }
  if (dist.display_only) return sum <= 1.0 + tolerance;
  return std::abs(sum - 1.0) <= tolerance;
}

using DecisionKey = std::pair<std::string, std::string>;

// Replays an append-only decision log; later entries supersede earlier ones.
inline std::map<DecisionKey, CurationDecision> effective_decisions(
    const std::vector<CurationDecision>& log) {
  std::map<DecisionKey, CurationDecision> out;
  for (const auto& d : log) out.insert_or_assign(DecisionKey{d.object_id, d.candidate_label}, d);
  return out;
}

}  // namespace probeagg
