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

#include <stdexcept>
#include <string>
#include <string_view>

namespace probeagg {

// Every failure raised by the library carries one of these codes so callers
// (and the CLI exit-code table) can dispatch without parsing messages.
enum class Errc {
  kInvalidArgument,
  // canonicalize
  kRulesetDivergent,
  kUnknownRuleset,
  kMalformedRulesetFile,
  // aggregate
  kEmptyAggregation,
  kNoRecordsAfterFilter,
  kMixedObjects,
  kMixedBackends,
  // metrics
  kEmbedderFailure,
  kZeroVector,
  kDegenerateInput,
  kAllCaptionsEmpty,
  kEmptyTagList,
  // probes
  kMissingSlot,
  kUnresolvedPlaceholder,
  kNoViews,
  kEmptyTemplates,
  kMissingUpstreamAggregate,
  kCyclicDependency,
  // backends
  kTimeout,
  kProtocolError,
  kTransportError,
  kReplayMiss,
  kEmbedderMiss,
  kBatchAborted,
  kConfigError,
  // store
  kIoError,
  kSerializationError,
  kParseError,
  kKindMismatch,
  kDuplicateLabelRecord,
  kCyclicMerge,
  kManifestInvalid,
  // curation
  kUnknownPair,
  kInvalidDecision,
  kConflictingLabels,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kRulesetDivergent: return "RulesetDivergent";
    case Errc::kUnknownRuleset: return "UnknownRuleset";
    case Errc::kMalformedRulesetFile: return "MalformedRulesetFile";
    case Errc::kEmptyAggregation: return "EmptyAggregation";
    case Errc::kNoRecordsAfterFilter: return "NoRecordsAfterFilter";
    case Errc::kMixedObjects: return "MixedObjects";
    case Errc::kMixedBackends: return "MixedBackends";
    case Errc::kEmbedderFailure: return "EmbedderFailure";
    case Errc::kZeroVector: return "ZeroVector";
    case Errc::kDegenerateInput: return "DegenerateInput";
    case Errc::kAllCaptionsEmpty: return "AllCaptionsEmpty";
    case Errc::kEmptyTagList: return "EmptyTagList";
    case Errc::kMissingSlot: return "MissingSlot";
    case Errc::kUnresolvedPlaceholder: return "UnresolvedPlaceholder";
    case Errc::kNoViews: return "NoViews";
    case Errc::kEmptyTemplates: return "EmptyTemplates";
    case Errc::kMissingUpstreamAggregate: return "MissingUpstreamAggregate";
    case Errc::kCyclicDependency: return "CyclicDependency";
    case Errc::kTimeout: return "Timeout";
    case Errc::kProtocolError: return "ProtocolError";
    case Errc::kTransportError: return "TransportError";
    case Errc::kReplayMiss: return "ReplayMiss";
    case Errc::kEmbedderMiss: return "EmbedderMiss";
    case Errc::kBatchAborted: return "BatchAborted";
    case Errc::kConfigError: return "ConfigError";
    case Errc::kIoError: return "IoError";
    case Errc::kSerializationError: return "SerializationError";
    case Errc::kParseError: return "ParseError";
    case Errc::kKindMismatch: return "KindMismatch";
    case Errc::kDuplicateLabelRecord: return "DuplicateLabelRecord";
    case Errc::kCyclicMerge: return "CyclicMerge";
    case Errc::kManifestInvalid: return "ManifestInvalid";
    case Errc::kUnknownPair: return "UnknownPair";
    case Errc::kInvalidDecision: return "InvalidDecision";
    case Errc::kConflictingLabels: return "ConflictingLabels";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace probeagg
