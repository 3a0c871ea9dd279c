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
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "probeagg/canonicalize.hpp"
#include "probeagg/core.hpp"
#include "probeagg/error.hpp"

namespace probeagg {

struct QueryKey {
  std::optional<int> view_id;
  std::string question_id;

  auto operator<=>(const QueryKey&) const = default;
};

// Per-query supremum score of every canonical response. Absent responses are
// simply missing (their score is -inf).
struct QueryScoreMap {
  QueryKey key;
  std::map<std::string, double> scores;
};

enum class AggMode { kLse, kMax };

inline std::string_view agg_mode_name(AggMode m) { return m == AggMode::kLse ? "lse" : "max"; }

inline AggMode parse_agg_mode(std::string_view s) {
  if (s == "lse") return AggMode::kLse;
  if (s == "max") return AggMode::kMax;
  throw Error(Errc::kInvalidArgument, "aggregation mode must be lse or max, got '" + std::string(s) + "'");
}

// Selects a subset of probes. An absent field means "all".
struct ProbeFilter {
  std::optional<std::set<int>> views;
  std::optional<std::set<std::string>> questions;
  std::optional<Mode> mode;

  bool accepts(const ProbeRecord& r) const {
    if (mode && r.mode != *mode) return false;
    if (views && (!r.view_id || !views->count(*r.view_id))) return false;
    if (questions && !questions->count(r.question_id)) return false;
    return true;
  }
};

// Parses "views=0,1,2;questions=q1,q2;mode=vlm". Empty string is "all".
inline ProbeFilter parse_filter(std::string_view spec) {
  ProbeFilter f;
  auto trim = [](std::string_view s) { return canon_detail::trim(s); };
  auto split = [](std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      auto pos = s.find(sep, start);
      out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    return out;
  };
  if (trim(spec).empty()) return f;
  for (const auto& clause : split(spec, ';')) {
    if (trim(clause).empty()) continue;
    auto eq = clause.find('=');
    if (eq == std::string::npos) throw Error(Errc::kInvalidArgument, "filter clause '" + clause + "' lacks '='");
    std::string key = trim(std::string_view(clause).substr(0, eq));
    std::vector<std::string> values;
    for (const auto& v : split(std::string_view(clause).substr(eq + 1), ',')) {
      auto t = trim(v);
      if (!t.empty()) values.push_back(t);
    }
    if (values.empty()) {
      throw Error(Errc::kInvalidArgument, "filter '" + key + "' has an empty set; omit it to select all");
    }
    if (key == "views") {
      std::set<int> vs;
      for (const auto& v : values) {
        std::size_t used = 0;
        int id = -1;
        try {
          id = std::stoi(v, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != v.size() || id < 0) throw Error(Errc::kInvalidArgument, "bad view id '" + v + "'");
        vs.insert(id);
      }
      f.views = std::move(vs);
    } else if (key == "questions") {
      f.questions = std::set<std::string>(values.begin(), values.end());
    } else if (key == "mode") {
      if (values.size() != 1) throw Error(Errc::kInvalidArgument, "filter mode takes one value");
      f.mode = parse_mode(values.front());
    } else {
      throw Error(Errc::kInvalidArgument, "unknown filter key '" + key + "'");
    }
  }
  return f;
}

using ProvenanceIndex = std::map<std::string, std::vector<ProvenanceItem>>;

// Collapses responses of one query that share a canonical form onto their
// highest score. Responses canonicalizing to "" are dropped. When `provenance`
// is given, every surviving raw response is recorded under its canonical.
inline QueryScoreMap dedupe_rescore(const ProbeRecord& record, const CanonRuleset& ruleset,
                                    ProvenanceIndex* provenance = nullptr) {
  QueryScoreMap out{{record.view_id, record.question_id}, {}};
  for (const auto& resp : record.responses) {
    std::string canonical = canonicalize(resp.text, ruleset);
    if (canonical.empty()) continue;
    auto [it, inserted] = out.scores.try_emplace(canonical, resp.score);
    if (!inserted) it->second = std::max(it->second, resp.score);
    if (provenance) {
      (*provenance)[canonical].push_back({record.view_id, record.question_id, resp.text, resp.score});
    }
  }
  return out;
}

namespace agg_detail {

// log(sum exp(x)) with the largest term factored out. `xs` is sorted in place
// (descending) so the result does not depend on input order.
inline double log_sum_exp(std::vector<double>& xs) {
  std::sort(xs.begin(), xs.end(), std::greater<>());
  const double m = xs.front();
  double tail = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) tail += std::exp(xs[i] - m);
  return m + std::log1p(tail);
}

}  // namespace agg_detail

// Combines per-query scores: log-sum-exp across the queries where a response
// occurs (kLse), or the best single score (kMax).
inline std::map<std::string, double> combine_queries(const std::vector<QueryScoreMap>& maps, AggMode mode) {
  if (maps.empty()) throw Error(Errc::kEmptyAggregation, "no queries to combine");
  std::map<std::string, std::vector<double>> per_response;
  for (const auto& q : maps) {
    for (const auto& [canonical, score] : q.scores) per_response[canonical].push_back(score);
  }
  if (per_response.empty()) throw Error(Errc::kEmptyAggregation, "no canonical response survived");
  std::map<std::string, double> out;
  for (auto& [canonical, scores] : per_response) {
    if (mode == AggMode::kMax) {
      out.emplace(canonical, *std::max_element(scores.begin(), scores.end()));
    } else {
      out.emplace(canonical, agg_detail::log_sum_exp(scores));
    }
  }
  return out;
}

// Softmax over aggregate scores, max-shifted. Entries come back ordered by
// probability (descending), ties by canonical string (ascending).
inline AggregateDistribution to_distribution(const std::map<std::string, double>& agg_scores,
                                             const std::string& object_id, const std::string& property,
                                             const ProvenanceIndex& provenance = {}) {
  if (agg_scores.empty()) throw Error(Errc::kEmptyAggregation, "no aggregate scores for " + object_id);
  double m = -INFINITY;
  for (const auto& [c, s] : agg_scores) {
    if (!std::isfinite(s)) throw Error(Errc::kInvalidArgument, "non-finite aggregate score for '" + c + "'");
    m = std::max(m, s);
  }
  std::vector<double> weights;
  weights.reserve(agg_scores.size());
  double z = 0.0;
  for (const auto& [c, s] : agg_scores) {
    weights.push_back(std::exp(s - m));
    z += weights.back();
  }
  AggregateDistribution dist;
  dist.object_id = object_id;
  dist.property = property;
  std::size_t i = 0;
  for (const auto& [c, s] : agg_scores) {
    DistributionEntry e{c, s, weights[i++] / z, {}};
    if (auto it = provenance.find(c); it != provenance.end()) e.provenance = it->second;
    dist.entries.push_back(std::move(e));
  }
  std::stable_sort(dist.entries.begin(), dist.entries.end(), [](const auto& a, const auto& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return a.canonical < b.canonical;
  });
  return dist;
}

// End-to-end aggregation for one object: filter, dedupe each query, combine
// across queries, normalize.
inline AggregateDistribution aggregate(const std::vector<ProbeRecord>& records, const ProbeFilter& filter,
                                       const CanonRuleset& ruleset, AggMode mode, const std::string& property) {
  if (records.empty()) throw Error(Errc::kNoRecordsAfterFilter, "no records given");
  const std::string& object_id = records.front().object_id;
  std::optional<std::string> backend;
  for (const auto& r : records) {
    if (r.object_id != object_id) {
      throw Error(Errc::kMixedObjects, "records for '" + object_id + "' and '" + r.object_id + "'");
    }
    if (r.backend_id) {
      if (backend && *backend != *r.backend_id) {
        throw Error(Errc::kMixedBackends, "backends '" + *backend + "' and '" + *r.backend_id + "' for " + object_id);
      }
      backend = r.backend_id;
    }
  }
  std::vector<QueryScoreMap> maps;
  ProvenanceIndex provenance;
  for (const auto& r : records) {
    if (!filter.accepts(r)) continue;
    auto problems = validate_probe_record(r);
    if (!problems.empty()) {
      throw Error(Errc::kInvalidArgument, "invalid probe record for " + object_id + ": " + problems.front());
    }
    maps.push_back(dedupe_rescore(r, ruleset, &provenance));
  }
  if (maps.empty()) throw Error(Errc::kNoRecordsAfterFilter, "no records for " + object_id + " pass the filter");
  for (auto& [c, items] : provenance) {
    std::sort(items.begin(), items.end(), [](const ProvenanceItem& a, const ProvenanceItem& b) {
      return std::tie(a.view_id, a.question_id, b.score, a.raw_text) <
             std::tie(b.view_id, b.question_id, a.score, b.raw_text);
    });
  }
  return to_distribution(combine_queries(maps, mode), object_id, property, provenance);
}

// Display view: drops entries whose aggregate score is below `threshold`
// without renormalizing.
inline AggregateDistribution support_cap(const AggregateDistribution& dist, double threshold) {
  if (!std::isfinite(threshold)) throw Error(Errc::kInvalidArgument, "support_cap threshold must be finite");
  AggregateDistribution out = dist;
  std::erase_if(out.entries, [&](const DistributionEntry& e) { return e.agg_score < threshold; });
  out.display_only = true;
  return out;
}

}  // namespace probeagg
