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

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "probeagg/backends.hpp"
#include "probeagg/error.hpp"
#include "probeagg/hashing.hpp"
#include "probeagg/providers.hpp"

namespace probeagg {

// Connection settings shared by the live generation and embedding clients.
struct HttpEndpoint {
  std::string base_url;  // scheme://host[:port]/path
  std::string api_key;
  int timeout_ms = 30000;
  int max_attempts = 3;
  int backoff_base_ms = 250;
};

// Field mapping for the JSON-over-HTTP generation protocol. The defaults
// describe {prompt, image, n} -> {candidates: [{text, logprob}]}.
struct LiveGenerationConfig {
  HttpEndpoint endpoint;
  std::string backend_id = "live";
  std::string prompt_field = "prompt";
  std::string image_field = "image";
  std::string n_field = "n";
  std::string candidates_pointer = "/candidates";
  std::string text_field = "text";
  std::string score_field = "logprob";
};

struct LiveEmbeddingConfig {
  HttpEndpoint endpoint;
  std::size_t dimension = 0;
  bool unit_norm = false;
  std::string text_field = "text";
  std::string vector_pointer = "/embedding";
};

// BASE_URL, API_KEY and TIMEOUT_MS take precedence over file settings.
inline void apply_env_overrides(HttpEndpoint& ep) {
  if (const char* v = std::getenv("BASE_URL"); v && *v) ep.base_url = v;
  if (const char* v = std::getenv("API_KEY"); v && *v) ep.api_key = v;
  if (const char* v = std::getenv("TIMEOUT_MS"); v && *v) {
    try {
      ep.timeout_ms = std::stoi(v);
    } catch (const std::exception&) {
      throw Error(Errc::kConfigError, std::string("TIMEOUT_MS is not an integer: ") + v);
    }
  }
}

namespace live_detail {

struct SplitUrl {
  std::string origin;  // scheme://host:port
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::kConfigError, "base_url lacks a scheme: '" + url + "'");
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http") {
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    throw Error(Errc::kConfigError, "only http:// endpoints are supported in this build: '" + url + "'");
#endif
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::string excerpt(const std::string& body, std::size_t n = 200) {
  return body.size() <= n ? body : body.substr(0, n) + "...";
}

// POSTs `payload` and returns the parsed JSON body. Transport failures are
// retried with exponential backoff; HTTP and payload errors are not.
inline nlohmann::json post_json(const HttpEndpoint& ep, const nlohmann::json& payload) {
  const auto url = split_url(ep.base_url);
  const auto timeout = std::chrono::milliseconds(ep.timeout_ms);
  const int attempts = std::max(1, ep.max_attempts);
  const std::string body = payload.dump();
  httplib::Error last = httplib::Error::Unknown;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(ep.backoff_base_ms) * (1 << (attempt - 1)));
    }
    httplib::Client client(url.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!ep.api_key.empty()) headers.emplace("Authorization", "Bearer " + ep.api_key);
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last = res.error();
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(Errc::kProtocolError, "HTTP " + std::to_string(res->status) + ": " + excerpt(res->body));
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::kProtocolError, "response is not JSON: " + excerpt(res->body));
    }
  }
  if (last == httplib::Error::ConnectionTimeout || last == httplib::Error::Read) {
    throw Error(Errc::kTimeout, "no response from " + ep.base_url + " within " + std::to_string(ep.timeout_ms) +
                                    " ms after " + std::to_string(attempts) + " attempts");
  }
  throw Error(Errc::kTransportError, httplib::to_string(last) + " talking to " + ep.base_url);
}

inline std::string load_image_payload(const std::string& ref) {
  if (ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0) return ref;
  std::ifstream in(ref, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot read image '" + ref + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return base64_encode(ss.str());
}

}  // namespace live_detail

class LiveProvider final : public GenerationProvider {
 public:
  explicit LiveProvider(LiveGenerationConfig config) : config_(std::move(config)) {
    live_detail::split_url(config_.endpoint.base_url);
  }

  GenerationResult generate_scored(const GenerationRequest& request) const override {
    validate_request(request);
    nlohmann::json payload;
    payload[config_.prompt_field] = request.prompt;
    if (request.image_ref) payload[config_.image_field] = live_detail::load_image_payload(*request.image_ref);
    payload[config_.n_field] = request.num_candidates;
    auto started = std::chrono::steady_clock::now();
    nlohmann::json body = live_detail::post_json(config_.endpoint, payload);
    GenerationResult out;
    out.backend_id = config_.backend_id;
    out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    const nlohmann::json::json_pointer ptr(config_.candidates_pointer);
    if (!body.contains(ptr) || !body.at(ptr).is_array()) {
      throw Error(Errc::kProtocolError, "missing candidates array at " + config_.candidates_pointer + ": " +
                                            live_detail::excerpt(body.dump()));
    }
    for (const auto& c : body.at(ptr)) {
      if (!c.is_object() || !c.contains(config_.text_field) || !c[config_.text_field].is_string() ||
          !c.contains(config_.score_field) || !c[config_.score_field].is_number()) {
        throw Error(Errc::kProtocolError, "malformed candidate: " + live_detail::excerpt(c.dump()));
      }
      double score = c[config_.score_field].get<double>();
      if (!std::isfinite(score)) throw Error(Errc::kProtocolError, "non-finite candidate score");
      out.candidates.push_back({c[config_.text_field].get<std::string>(), score});
    }
    std::stable_sort(out.candidates.begin(), out.candidates.end(),
                     [](const auto& a, const auto& b) { return a.score > b.score; });
    if (out.candidates.size() > static_cast<std::size_t>(request.num_candidates)) {
      out.candidates.resize(static_cast<std::size_t>(request.num_candidates));
    }
    return out;
  }

  std::string backend_id() const override { return config_.backend_id; }

 private:
  LiveGenerationConfig config_;
};

class LiveEmbedder final : public EmbeddingProvider {
 public:
  explicit LiveEmbedder(LiveEmbeddingConfig config) : config_(std::move(config)) {
    if (config_.dimension == 0) throw Error(Errc::kConfigError, "live embedder needs a positive dimension");
    live_detail::split_url(config_.endpoint.base_url);
  }

  EmbeddingResult embed(const std::string& text) const override {
    if (text.empty()) throw Error(Errc::kInvalidArgument, "cannot embed empty text");
    nlohmann::json payload;
    payload[config_.text_field] = text;
    nlohmann::json body = live_detail::post_json(config_.endpoint, payload);
    const nlohmann::json::json_pointer ptr(config_.vector_pointer);
    if (!body.contains(ptr) || !body.at(ptr).is_array()) {
      throw Error(Errc::kProtocolError, "missing embedding array at " + config_.vector_pointer);
    }
    EmbeddingResult out;
    for (const auto& x : body.at(ptr)) {
      if (!x.is_number()) throw Error(Errc::kProtocolError, "embedding component is not a number");
      double v = x.get<double>();
      if (!std::isfinite(v)) throw Error(Errc::kProtocolError, "non-finite embedding component");
      out.vector.push_back(v);
    }
    if (out.vector.size() != config_.dimension) {
      throw Error(Errc::kProtocolError, "dimension mismatch: expected " + std::to_string(config_.dimension) +
                                            ", got " + std::to_string(out.vector.size()));
    }
    out.dimension = out.vector.size();
    return out;
  }

  std::size_t dimension() const override { return config_.dimension; }
  bool unit_norm() const override { return config_.unit_norm; }

 private:
  LiveEmbeddingConfig config_;
};

}  // namespace probeagg
