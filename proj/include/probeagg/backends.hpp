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
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "probeagg/error.hpp"
#include "probeagg/hashing.hpp"
#include "probeagg/providers.hpp"

namespace probeagg {

inline void validate_request(const GenerationRequest& request) {
  if (request.num_candidates < 1) throw Error(Errc::kInvalidArgument, "num_candidates must be >= 1");
}

// Deterministic offline backend. Candidates are drawn from a fixed vocabulary
// by hashing (seed, prompt, image_ref); scores lie in [-5, 0] and strictly
// decrease down the list.
class StubProvider final : public GenerationProvider {
 public:
  explicit StubProvider(std::uint64_t seed = 0, std::vector<std::string> vocabulary = default_vocabulary())
      : seed_(seed), vocabulary_(std::move(vocabulary)) {
    if (vocabulary_.empty()) throw Error(Errc::kConfigError, "stub vocabulary is empty");
  }

  static std::vector<std::string> default_vocabulary() {
    return {"chair", "table", "lamp",   "vase",    "statue", "toy",   "sword", "lion",
            "wood",  "metal", "plastic", "stone",  "glass",  "ceramic", "fabric", "paper",
            "yes",   "no",    "red",    "blue",    "green",  "water", "food",  "tools"};
  }

  GenerationResult generate_scored(const GenerationRequest& request) const override {
    validate_request(request);
    std::string key;
    for (int b = 0; b < 8; ++b) key.push_back(static_cast<char>((seed_ >> (8 * b)) & 0xFF));
    key += request.prompt;
    key.push_back('\0');
    if (request.image_ref) key += *request.image_ref;
    std::uint64_t state = fnv1a64(key);

    const std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(request.num_candidates), vocabulary_.size());
    std::vector<std::size_t> order(vocabulary_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Partial Fisher-Yates with a platform-independent generator.
    for (std::size_t i = 0; i < j; ++i) {
      std::size_t pick = i + static_cast<std::size_t>(splitmix64(state) % (order.size() - i));
      std::swap(order[i], order[pick]);
    }
    std::vector<double> scores(j);
    for (auto& s : scores) s = -5.0 * static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    std::sort(scores.begin(), scores.end(), std::greater<>());
    for (std::size_t i = 1; i < j; ++i) {
      if (scores[i] >= scores[i - 1]) scores[i] = std::nextafter(scores[i - 1], -5.0);
    }
    GenerationResult out;
    out.backend_id = backend_id();
    for (std::size_t i = 0; i < j; ++i) out.candidates.push_back({vocabulary_[order[i]], scores[i]});
    return out;
  }

  std::string backend_id() const override { return "stub:seed=" + std::to_string(seed_); }

 private:
  std::uint64_t seed_;
  std::vector<std::string> vocabulary_;
};

struct ReplayEntry {
  std::string key;
  std::string prompt;
  std::optional<std::string> image_ref;
  std::vector<ScoredResponse> candidates;

  bool operator==(const ReplayEntry&) const = default;
};

// Serves recorded generations keyed by replay_key(prompt, image_ref).
class ReplayProvider final : public GenerationProvider {
 public:
  explicit ReplayProvider(const std::vector<ReplayEntry>& entries, std::string id = "replay") : id_(std::move(id)) {
    for (const auto& e : entries) table_.insert_or_assign(e.key, e.candidates);
  }

  GenerationResult generate_scored(const GenerationRequest& request) const override {
    validate_request(request);
    const std::string key = replay_key(request.prompt, request.image_ref);
    auto it = table_.find(key);
    if (it == table_.end()) {
      throw Error(Errc::kReplayMiss, key + " (prompt \"" + request.prompt + "\", image " +
                                         request.image_ref.value_or("<none>") + ")");
    }
    GenerationResult out;
    out.backend_id = id_;
    const auto n = std::min<std::size_t>(it->second.size(), static_cast<std::size_t>(request.num_candidates));
    out.candidates.assign(it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  }

  std::string backend_id() const override { return id_; }
  std::size_t size() const { return table_.size(); }

 private:
  std::string id_;
  std::map<std::string, std::vector<ScoredResponse>> table_;
};

// Wraps another provider and keeps every successful generation so it can be
// written out as a replay fixture.
class RecordingProvider final : public GenerationProvider {
 public:
  explicit RecordingProvider(const GenerationProvider& inner) : inner_(inner) {}

  GenerationResult generate_scored(const GenerationRequest& request) const override {
    GenerationResult r = inner_.generate_scored(request);
    std::lock_guard<std::mutex> lock(mu_);
    const std::string key = replay_key(request.prompt, request.image_ref);
    recorded_.insert_or_assign(key, ReplayEntry{key, request.prompt, request.image_ref, r.candidates});
    return r;
  }

  std::string backend_id() const override { return inner_.backend_id(); }

  // Ordered by key, so the fixture file is byte-stable.
  std::vector<ReplayEntry> entries() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<ReplayEntry> out;
    for (const auto& [k, e] : recorded_) out.push_back(e);
    return out;
  }

 private:
  const GenerationProvider& inner_;
  mutable std::mutex mu_;
  mutable std::map<std::string, ReplayEntry> recorded_;
};

// Text -> vector lookup table; misses are errors.
class FixtureEmbedder final : public EmbeddingProvider {
 public:
  explicit FixtureEmbedder(std::map<std::string, std::vector<double>> table, bool unit_norm = false)
      : table_(std::move(table)), unit_norm_(unit_norm) {
    for (const auto& [text, v] : table_) {
      if (dimension_ == 0) dimension_ = v.size();
      if (v.size() != dimension_ || v.empty()) {
        throw Error(Errc::kConfigError, "embedding fixture has inconsistent dimension at '" + text + "'");
      }
      for (double x : v) {
        if (!std::isfinite(x)) throw Error(Errc::kConfigError, "non-finite embedding for '" + text + "'");
      }
    }
  }

  EmbeddingResult embed(const std::string& text) const override {
    if (text.empty()) throw Error(Errc::kInvalidArgument, "cannot embed empty text");
    auto it = table_.find(text);
    if (it == table_.end()) throw Error(Errc::kEmbedderMiss, "no fixture vector for '" + text + "'");
    return {it->second, it->second.size()};
  }

  std::size_t dimension() const override { return dimension_; }
  bool unit_norm() const override { return unit_norm_; }

 private:
  std::map<std::string, std::vector<double>> table_;
  std::size_t dimension_ = 0;
  bool unit_norm_;
};

using BatchItem = std::variant<GenerationResult, Error>;

// Runs `requests` with at most `max_in_flight` concurrent calls. Results are
// positionally aligned with the requests; a failure is stored at its position
// and does not abort the rest of the batch.
inline std::vector<BatchItem> batch_generate(const GenerationProvider& provider,
                                             const std::vector<GenerationRequest>& requests, int max_in_flight) {
  if (max_in_flight < 1) throw Error(Errc::kBatchAborted, "max_in_flight must be >= 1");
  std::vector<std::optional<BatchItem>> slots(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      auto started = std::chrono::steady_clock::now();
      try {
        GenerationResult r = provider.generate_scored(requests[i]);
        if (r.latency_ms == 0.0) {
          r.latency_ms =
              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        }
        slots[i].emplace(std::move(r));
      } catch (const Error& e) {
        slots[i].emplace(e);
      } catch (const std::exception& e) {
        slots[i].emplace(Error(Errc::kProtocolError, e.what()));
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), requests.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<BatchItem> out;
  out.reserve(requests.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace probeagg
