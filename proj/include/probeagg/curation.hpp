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
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "probeagg/core.hpp"
#include "probeagg/error.hpp"
#include "probeagg/store.hpp"

namespace probeagg {

enum class QueueStatus { kPending, kAccepted, kRejected };

inline const char* queue_status_name(QueueStatus s) {
  switch (s) {
    case QueueStatus::kPending: return "pending";
    case QueueStatus::kAccepted: return "accepted";
    case QueueStatus::kRejected: return "rejected";
  }
  return "?";
}

inline QueueStatus parse_queue_status(std::string_view s) {
  if (s == "pending") return QueueStatus::kPending;
  if (s == "accepted") return QueueStatus::kAccepted;
  if (s == "rejected") return QueueStatus::kRejected;
  throw Error(Errc::kInvalidArgument, "status must be pending, accepted or rejected, got '" + std::string(s) + "'");
}

struct CurationQueueItem {
  CurationCandidate candidate;
  const AggregateDistribution* aggregate = nullptr;
  QueueStatus status = QueueStatus::kPending;
};

struct QueueCounts {
  std::size_t pending = 0, accepted = 0, rejected = 0, total = 0;
};

struct CurationExport {
  std::vector<LabelRecord> records;
  std::map<std::string, std::size_t> histogram;
};

inline constexpr const char* kCurationSource = "curation";

// Verified labels from a candidate set and a replayed decision log. Only
// accepted candidate pairs are exported; log entries for pairs outside the
// candidate set are ignored. Two different accepted labels for one
// (object, property) after merging is a conflict the annotator must resolve.
inline CurationExport build_export(const std::vector<CurationCandidate>& candidates,
                                   const std::vector<CurationDecision>& log, const MergeMap& merges) {
  validate_merges(merges);
  const auto effective = effective_decisions(log);
  std::map<std::pair<std::string, std::string>, std::string> chosen;
  for (const auto& c : candidates) {
    auto it = effective.find({c.object_id, c.candidate_label});
    if (it == effective.end() || it->second.decision != Decision::kAccept) continue;
    std::string label = c.candidate_label;
    if (auto m = merges.find(label); m != merges.end()) label = m->second;
    auto [slot, inserted] = chosen.emplace(std::pair{c.object_id, c.property}, label);
    if (!inserted && slot->second != label) {
      throw Error(Errc::kConflictingLabels, c.object_id + "/" + c.property + ": '" + slot->second + "' and '" + label + "'");
    }
  }
  CurationExport out;
  for (const auto& [key, label] : chosen) {
    out.records.push_back(LabelRecord{key.first, key.second, label, kCurationSource});
    ++out.histogram[label];
  }
  return out;
}

// {records: [label records], histogram: {label: count}}
inline Json export_json(const CurationExport& ex) {
  Json records = Json::array();
  for (const auto& r : ex.records) records.push_back(RecordTraits<LabelRecord>::to_json(r));
  Json hist = Json::object();
  for (const auto& [label, n] : ex.histogram) hist[label] = n;
  Json j;
  j["records"] = records;
  j["histogram"] = hist;
  return j;
}

struct CurationConfig {
  std::string candidates_path;
  std::string decisions_path;
  std::optional<std::string> aggregates_path;
  std::optional<std::string> merges_path;
};

class CurationService {
 public:
  using Clock = std::function<Timestamp()>;

  CurationService(std::vector<CurationCandidate> candidates, std::string decisions_path,
                  std::vector<AggregateDistribution> aggregates = {}, MergeMap merges = {}, Clock clock = now_utc)
      : candidates_(std::move(candidates)),
        decisions_path_(std::move(decisions_path)),
        merges_(std::move(merges)),
        clock_(std::move(clock)) {
    validate_merges(merges_);
    std::sort(candidates_.begin(), candidates_.end(), [](const auto& a, const auto& b) {
      return std::tie(a.object_id, a.candidate_label) < std::tie(b.object_id, b.candidate_label);
    });
    for (std::size_t i = 0; i + 1 < candidates_.size(); ++i) {
      if (candidates_[i].object_id == candidates_[i + 1].object_id &&
          candidates_[i].candidate_label == candidates_[i + 1].candidate_label) {
        throw Error(Errc::kInvalidArgument,
                    "duplicate candidate " + candidates_[i].object_id + "/" + candidates_[i].candidate_label);
      }
    }
    for (auto& a : aggregates) {
      std::pair key{a.object_id, a.property};
      aggregates_.insert_or_assign(std::move(key), std::move(a));
    }
    if (std::filesystem::exists(decisions_path_)) log_ = read_items<CurationDecision>(decisions_path_);
    effective_ = effective_decisions(log_);
  }

  static CurationService from_config(const CurationConfig& cfg) {
    std::vector<AggregateDistribution> aggs;
    if (cfg.aggregates_path) aggs = read_items<AggregateDistribution>(*cfg.aggregates_path);
    MergeMap merges;
    if (cfg.merges_path) merges = load_merges(*cfg.merges_path);
    return CurationService(read_items<CurationCandidate>(cfg.candidates_path), cfg.decisions_path, std::move(aggs),
                           std::move(merges));
  }

  std::vector<CurationQueueItem> queue(std::optional<QueueStatus> status = std::nullopt,
                                       std::optional<std::size_t> limit = std::nullopt) const {
    std::shared_lock lock(mu_);
    std::vector<CurationQueueItem> out;
    for (const auto& c : candidates_) {
      if (limit && out.size() >= *limit) break;
      QueueStatus s = status_locked(c);
      if (status && s != *status) continue;
      out.push_back(CurationQueueItem{c, find_aggregate(c), s});
    }
    return out;
  }

  QueueCounts counts() const {
    std::shared_lock lock(mu_);
    QueueCounts n;
    for (const auto& c : candidates_) {
      switch (status_locked(c)) {
        case QueueStatus::kPending: ++n.pending; break;
        case QueueStatus::kAccepted: ++n.accepted; break;
        case QueueStatus::kRejected: ++n.rejected; break;
      }
    }
    n.total = candidates_.size();
    return n;
  }

  // Returns the effective decision after the call. Re-posting the current
  // decision returns the existing record without appending.
  CurationDecision decide(const std::string& object_id, const std::string& candidate_label,
                          std::string_view decision, const std::string& annotator = "anonymous") {
    const Decision d = parse_decision(decision);
    if (!find_candidate(object_id, candidate_label)) {
      throw Error(Errc::kUnknownPair, object_id + "/" + candidate_label);
    }
    std::unique_lock lock(mu_);
    const DecisionKey key{object_id, candidate_label};
    if (auto it = effective_.find(key); it != effective_.end() && it->second.decision == d) return it->second;
    CurationDecision rec{object_id, candidate_label, d, annotator.empty() ? "anonymous" : annotator, clock_()};
    append_decision(decisions_path_, rec);
    log_.push_back(rec);
    effective_.insert_or_assign(key, rec);
    return rec;
  }

  const CurationCandidate* find_candidate(const std::string& object_id, const std::string& label) const {
    auto it = std::lower_bound(candidates_.begin(), candidates_.end(), std::pair{object_id, label},
                               [](const CurationCandidate& c, const auto& k) {
                                 return std::tie(c.object_id, c.candidate_label) < std::tie(k.first, k.second);
                               });
    if (it == candidates_.end() || it->object_id != object_id || it->candidate_label != label) return nullptr;
    return &*it;
  }

  // All candidates of one object, in label order. Throws UnknownPair if none.
  std::vector<CurationQueueItem> object(const std::string& object_id) const {
    std::shared_lock lock(mu_);
    std::vector<CurationQueueItem> out;
    for (const auto& c : candidates_) {
      if (c.object_id == object_id) out.push_back(CurationQueueItem{c, find_aggregate(c), status_locked(c)});
    }
    if (out.empty()) throw Error(Errc::kUnknownPair, "no candidates for object '" + object_id + "'");
    return out;
  }

  // Re-reads the log from disk so the export reflects exactly what is durable.
  CurationExport export_labels(const std::optional<MergeMap>& merges = std::nullopt) const {
    std::shared_lock lock(mu_);
    std::vector<CurationDecision> log;
    if (std::filesystem::exists(decisions_path_)) log = read_items<CurationDecision>(decisions_path_);
    return build_export(candidates_, log, merges ? *merges : merges_);
  }

  const std::vector<CurationDecision>& log() const { return log_; }

 private:
  QueueStatus status_locked(const CurationCandidate& c) const {
    auto it = effective_.find({c.object_id, c.candidate_label});
    if (it == effective_.end()) return QueueStatus::kPending;
    return it->second.decision == Decision::kAccept ? QueueStatus::kAccepted : QueueStatus::kRejected;
  }

  const AggregateDistribution* find_aggregate(const CurationCandidate& c) const {
    auto it = aggregates_.find({c.object_id, c.property});
    return it == aggregates_.end() ? nullptr : &it->second;
  }

  std::vector<CurationCandidate> candidates_;
  std::string decisions_path_;
  std::map<std::pair<std::string, std::string>, AggregateDistribution> aggregates_;
  MergeMap merges_;
  Clock clock_;
  std::vector<CurationDecision> log_;
  std::map<DecisionKey, CurationDecision> effective_;
  mutable std::shared_mutex mu_;
};

}  // namespace probeagg
