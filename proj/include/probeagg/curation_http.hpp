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

#include "httplib.h"
#include "json.hpp"
#include "probeagg/curation.hpp"
#include "probeagg/store.hpp"

namespace probeagg {

struct CurationServerOptions {
  std::string host = "127.0.0.1";
  int port = 7878;
  std::optional<std::string> views_dir;
  std::optional<std::string> ui_dir;
  std::optional<std::string> bearer_token;
};

inline int http_status_for(Errc c) {
  switch (c) {
    case Errc::kUnknownPair: return 404;
    case Errc::kInvalidDecision: return 422;
    case Errc::kConflictingLabels: return 409;
    case Errc::kInvalidArgument:
    case Errc::kCyclicMerge: return 400;
    default: return 500;
  }
}

inline Json queue_item_json(const CurationQueueItem& item) {
  Json j;
  j["object_id"] = item.candidate.object_id;
  j["candidate_label"] = item.candidate.candidate_label;
  j["property"] = item.candidate.property;
  j["view_refs"] = item.candidate.view_refs;
  if (item.aggregate) j["aggregate"] = RecordTraits<AggregateDistribution>::to_json(*item.aggregate);
  j["status"] = queue_status_name(item.status);
  return j;
}

namespace http_detail {

inline void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& error, const std::string& detail) {
  Json j;
  j["error"] = error;
  j["detail"] = detail;
  send_json(res, status, j);
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_error(res, http_status_for(e.code()), std::string(errc_name(e.code())), e.detail());
  } catch (const std::exception& e) {
    send_error(res, 500, "Internal", e.what());
  }
}

inline std::size_t parse_limit(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 9) {
    throw Error(Errc::kInvalidArgument, "limit must be a non-negative integer, got '" + s + "'");
  }
  return static_cast<std::size_t>(std::stoul(s));
}

inline std::string body_string(const Json& j, const char* key, bool required) {
  if (!j.contains(key) || j.at(key).is_null()) {
    if (required) throw Error(Errc::kInvalidArgument, std::string("missing field '") + key + "'");
    return {};
  }
  if (!j.at(key).is_string()) throw Error(Errc::kInvalidArgument, std::string("field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace http_detail

// Registers the four API routes plus optional static mounts. The service
// must outlive the server.
inline void install_curation_routes(httplib::Server& svr, CurationService& service,
                                    const CurationServerOptions& opts = {}) {
  using namespace http_detail;

  if (opts.bearer_token) {
    const std::string expected = "Bearer " + *opts.bearer_token;
    svr.set_pre_routing_handler([expected](const httplib::Request& req, httplib::Response& res) {
      if (req.path.rfind("/api/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") == expected) return httplib::Server::HandlerResponse::Unhandled;
      send_error(res, 401, "Unauthorized", "missing or wrong bearer token");
      return httplib::Server::HandlerResponse::Handled;
    });
  }

  svr.Get("/api/queue", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<QueueStatus> status;
      std::optional<std::size_t> limit;
      if (req.has_param("status")) status = parse_queue_status(req.get_param_value("status"));
      if (req.has_param("limit")) limit = parse_limit(req.get_param_value("limit"));
      Json items = Json::array();
      for (const auto& item : service.queue(status, limit)) items.push_back(queue_item_json(item));
      send_json(res, 200, items);
    });
  });

  svr.Post("/api/decisions", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      Json body;
      try {
        body = Json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::kInvalidArgument, std::string("body is not JSON: ") + e.what());
      }
      if (!body.is_object()) throw Error(Errc::kInvalidArgument, "body must be a JSON object");
      auto rec = service.decide(body_string(body, "object_id", true), body_string(body, "candidate_label", true),
                                body_string(body, "decision", true), body_string(body, "annotator", false));
      send_json(res, 200, RecordTraits<CurationDecision>::to_json(rec));
    });
  });

  svr.Get(R"(/api/objects/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto items = service.object(req.matches[1].str());
      const auto& first = items.front();
      Json j;
      j["object_id"] = first.candidate.object_id;
      j["view_refs"] = first.candidate.view_refs;
      j["candidate_label"] = first.candidate.candidate_label;
      if (first.aggregate) j["aggregate"] = RecordTraits<AggregateDistribution>::to_json(*first.aggregate);
      Json cands = Json::array();
      for (const auto& item : items) cands.push_back(queue_item_json(item));
      j["candidates"] = cands;
      send_json(res, 200, j);
    });
  });

  svr.Get("/api/export", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<MergeMap> merges;
      if (req.has_param("merges")) {
        try {
          merges = load_merges(req.get_param_value("merges"));
        } catch (const Error& e) {
          throw Error(Errc::kInvalidArgument, "merges: " + e.detail());
        }
      }
      send_json(res, 200, export_json(service.export_labels(merges)));
    });
  });

  if (opts.views_dir && !svr.set_mount_point("/views", *opts.views_dir)) {
    throw Error(Errc::kConfigError, "views dir not found: " + *opts.views_dir);
  }
  if (opts.ui_dir && !svr.set_mount_point("/", *opts.ui_dir)) {
    throw Error(Errc::kConfigError, "ui dir not found: " + *opts.ui_dir);
  }
}

// Blocks until the server stops.
inline void run_curation_server(CurationService& service, const CurationServerOptions& opts) {
  httplib::Server svr;
  install_curation_routes(svr, service, opts);
  if (!svr.listen(opts.host, opts.port)) {
    throw Error(Errc::kIoError, "cannot listen on " + opts.host + ":" + std::to_string(opts.port));
  }
}

}  // namespace probeagg
