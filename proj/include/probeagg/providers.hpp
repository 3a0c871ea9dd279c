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

#include <optional>
#include <string>
#include <vector>

#include "probeagg/core.hpp"

namespace probeagg {

struct GenerationRequest {
  std::string prompt;
  // Present iff the probe runs with visual input.
  std::optional<std::string> image_ref;
  int num_candidates = 5;

  bool operator==(const GenerationRequest&) const = default;
};

struct GenerationResult {
  // Sorted by score, best first.
  std::vector<ScoredResponse> candidates;
  std::string backend_id;
  double latency_ms = 0.0;
};

struct EmbeddingResult {
  std::vector<double> vector;
  std::size_t dimension = 0;
};

// Scored text generation. Implementations must be safe to call from several
// threads at once.
class GenerationProvider {
 public:
  virtual ~GenerationProvider() = default;
  virtual GenerationResult generate_scored(const GenerationRequest& request) const = 0;
  virtual std::string backend_id() const = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual EmbeddingResult embed(const std::string& text) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual bool unit_norm() const { return false; }
};

}  // namespace probeagg
