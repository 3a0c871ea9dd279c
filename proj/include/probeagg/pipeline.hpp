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
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "probeagg/aggregate.hpp"
#include "probeagg/backends.hpp"
#include "probeagg/canonicalize.hpp"
#include "probeagg/live_backend.hpp"
#include "probeagg/metrics.hpp"
#include "probeagg/probes.hpp"
#include "probeagg/store.hpp"

namespace probeagg {

// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitBackend = 3,
  kExitIo = 4,
  kExitEmpty = 5,
};

inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::kInvalidArgument:
    case Errc::kConfigError:
    case Errc::kUnknownRuleset:
    case Errc::kMalformedRulesetFile:
    case Errc::kRulesetDivergent:
    case Errc::kCyclicDependency:
    case Errc::kCyclicMerge:
    case Errc::kMissingSlot:
    case Errc::kUnresolvedPlaceholder:
    case Errc::kEmptyTemplates:
    case Errc::kNoViews:
      return kExitConfig;
    case Errc::kTimeout:
    case Errc::kProtocolError:
    case Errc::kTransportError:
    case Errc::kReplayMiss:
    case Errc::kEmbedderMiss:
    case Errc::kEmbedderFailure:
    case Errc::kBatchAborted:
      return kExitBackend;
    case Errc::kIoError:
    case Errc::kSerializationError:
    case Errc::kParseError:
    case Errc::kKindMismatch:
    case Errc::kDuplicateLabelRecord:
    case Errc::kManifestInvalid:
    case Errc::kMixedObjects:
    case Errc::kMixedBackends:
      return kExitIo;
    case Errc::kEmptyAggregation:
    case Errc::kNoRecordsAfterFilter:
    case Errc::kDegenerateInput:
    case Errc::kAllCaptionsEmpty:
    case Errc::kEmptyTagList:
    case Errc::kZeroVector:
      return kExitEmpty;
    default:
      return kExitFailure;
  }
}

// Streams a command writes to: data and summaries on `out`, diagnostics on `err`.
struct Console {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

// Runs `f`, turning library errors into a diagnostic and an exit code.
template <typename F>
int run_guarded(Console io, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

inline std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m.mean, m.std);
  return buf;
}

// ---------------------------------------------------------------------------
// Backend and embedder selection.
//
// A backend spec is `stub`, `replay:PATH`, or the path of a JSON config:
//   {"type": "stub", "seed": 0}
//   {"type": "replay", "fixture": "fixture.jsonl"}
//   {"type": "live", "base_url": ..., "api_key": ..., "timeout_ms": ...,
//    "max_attempts": ..., "backend_id": ..., "fields": {...}}
// Relative paths inside a config resolve against the config's directory.

namespace pipeline_detail {

inline Json load_config_json(const std::string& path) {
  try {
    return Json::parse(store_detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kConfigError, path + ": " + e.what());
  } catch (const Error& e) {
    throw Error(Errc::kConfigError, e.detail());
  }
}

inline std::string resolve_relative(const std::string& base_file, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return p;
  return (std::filesystem::path(base_file).parent_path() / path).string();
}

template <typename T>
T cfg_get(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::kConfigError, std::string("config key '") + key + "' has the wrong type");
  }
}

inline void endpoint_from_json(const Json& j, HttpEndpoint& ep) {
  ep.base_url = cfg_get<std::string>(j, "base_url", ep.base_url);
  ep.api_key = cfg_get<std::string>(j, "api_key", ep.api_key);
  ep.timeout_ms = cfg_get<int>(j, "timeout_ms", ep.timeout_ms);
  ep.max_attempts = cfg_get<int>(j, "max_attempts", ep.max_attempts);
  ep.backoff_base_ms = cfg_get<int>(j, "backoff_base_ms", ep.backoff_base_ms);
  apply_env_overrides(ep);
  if (ep.base_url.empty()) throw Error(Errc::kConfigError, "live backend needs base_url (or BASE_URL)");
}

inline std::vector<ReplayEntry> load_replay(const std::string& path) {
  try {
    return read_items<ReplayEntry>(path);
  } catch (const Error& e) {
    if (e.code() == Errc::kIoError) throw Error(Errc::kConfigError, "replay fixture: " + e.detail());
    throw;
  }
}

}  // namespace pipeline_detail

inline std::unique_ptr<GenerationProvider> make_backend(const std::string& spec, std::optional<std::uint64_t> seed) {
  using namespace pipeline_detail;
  if (spec.empty()) throw Error(Errc::kConfigError, "no backend given");
  if (spec == "stub") return std::make_unique<StubProvider>(seed.value_or(0));
  if (spec.rfind("replay:", 0) == 0) return std::make_unique<ReplayProvider>(load_replay(spec.substr(7)));
  const Json j = load_config_json(spec);
  const std::string type = cfg_get<std::string>(j, "type", "");
  if (type == "stub") return std::make_unique<StubProvider>(seed.value_or(cfg_get<std::uint64_t>(j, "seed", 0)));
  if (type == "replay") {
    const auto fixture = cfg_get<std::string>(j, "fixture", "");
    if (fixture.empty()) throw Error(Errc::kConfigError, "replay backend needs 'fixture'");
    return std::make_unique<ReplayProvider>(load_replay(resolve_relative(spec, fixture)),
                                            cfg_get<std::string>(j, "backend_id", "replay"));
  }
  if (type == "live") {
    LiveGenerationConfig cfg;
    endpoint_from_json(j, cfg.endpoint);
    cfg.backend_id = cfg_get<std::string>(j, "backend_id", cfg.backend_id);
    if (j.contains("fields")) {
      const Json& f = j.at("fields");
      cfg.prompt_field = cfg_get<std::string>(f, "prompt", cfg.prompt_field);
      cfg.image_field = cfg_get<std::string>(f, "image", cfg.image_field);
      cfg.n_field = cfg_get<std::string>(f, "n", cfg.n_field);
      cfg.candidates_pointer = cfg_get<std::string>(f, "candidates", cfg.candidates_pointer);
      cfg.text_field = cfg_get<std::string>(f, "text", cfg.text_field);
      cfg.score_field = cfg_get<std::string>(f, "score", cfg.score_field);
    }
    return std::make_unique<LiveProvider>(std::move(cfg));
  }
  throw Error(Errc::kConfigError, spec + ": backend type must be stub, replay or live");
}

// An embedder spec is `fixture:PATH` or a JSON config:
//   {"type": "fixture", "fixture": "vectors.jsonl", "unit_norm": false}
//   {"type": "live", "base_url": ..., "dimension": 512, "unit_norm": true, "fields": {...}}
inline std::unique_ptr<EmbeddingProvider> make_embedder(const std::string& spec) {
  using namespace pipeline_detail;
  auto from_fixture = [](const std::string& path, bool unit_norm) {
    std::map<std::string, std::vector<double>> table;
    for (auto& e : read_items<EmbeddingFixtureEntry>(path)) table[e.text] = std::move(e.vector);
    if (table.empty()) throw Error(Errc::kConfigError, path + ": embedding fixture is empty");
    return std::make_unique<FixtureEmbedder>(std::move(table), unit_norm);
  };
  if (spec.rfind("fixture:", 0) == 0) return from_fixture(spec.substr(8), false);
  const Json j = load_config_json(spec);
  const std::string type = cfg_get<std::string>(j, "type", "");
  if (type == "fixture") {
    return from_fixture(resolve_relative(spec, cfg_get<std::string>(j, "fixture", "")),
                        cfg_get<bool>(j, "unit_norm", false));
  }
  if (type == "live") {
    LiveEmbeddingConfig cfg;
    endpoint_from_json(j, cfg.endpoint);
    cfg.dimension = cfg_get<std::size_t>(j, "dimension", 0);
    cfg.unit_norm = cfg_get<bool>(j, "unit_norm", false);
    if (j.contains("fields")) {
      cfg.text_field = cfg_get<std::string>(j.at("fields"), "text", cfg.text_field);
      cfg.vector_pointer = cfg_get<std::string>(j.at("fields"), "vector", cfg.vector_pointer);
    }
    return std::make_unique<LiveEmbedder>(std::move(cfg));
  }
  throw Error(Errc::kConfigError, spec + ": embedder type must be fixture or live");
}

// "all" or a comma list of non-negative view indices.
inline std::optional<std::vector<int>> parse_views(const std::string& spec) {
  if (spec == "all") return std::nullopt;
  std::vector<int> out;
  std::set<int> seen;
  std::size_t start = 0;
  while (start <= spec.size()) {
    auto end = spec.find(',', start);
    if (end == std::string::npos) end = spec.size();
    const std::string tok = spec.substr(start, end - start);
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 6) {
      throw Error(Errc::kInvalidArgument, "views must be 'all' or a list of view indices, got '" + spec + "'");
    }
    const int v = std::stoi(tok);
    if (seen.insert(v).second) out.push_back(v);
    start = end + 1;
  }
  return out;
}

inline std::set<Mode> parse_modes(const std::string& spec) {
  std::set<Mode> out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    auto end = spec.find(',', start);
    if (end == std::string::npos) end = spec.size();
    out.insert(parse_mode(spec.substr(start, end - start)));
    start = end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeArgs {
  std::string manifest;
  std::string templates;
  std::string views = "all";
  std::string modes = "vlm";
  std::string backend = "stub";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> record;
  int num_candidates = 5;
  int max_in_flight = 8;
  bool keep_going = false;
};

inline int cmd_probe(const ProbeArgs& a, Console io = {}) {
  return run_guarded(io, [&] {
    const auto views_sel = parse_views(a.views);
    const auto modes = parse_modes(a.modes);
    auto backend = make_backend(a.backend, a.seed);
    const auto templates = read_items<PromptTemplate>(a.templates);
    for (const auto& t : templates) {
      if (!required_slots(t).empty()) {
        throw Error(Errc::kConfigError, "template '" + t.id + "' has slots; use the chain command");
      }
    }
    const auto manifest = load_manifest(a.manifest);

    std::vector<GenerationRequest> requests;
    std::vector<ProbeRecord> shells;
    for (const auto& obj : manifest.objects) {
      std::vector<int> views;
      if (views_sel) {
        views = *views_sel;
      } else {
        for (std::size_t v = 0; v < obj.view_refs.size(); ++v) views.push_back(static_cast<int>(v));
      }
      for (int v : views) {
        if (static_cast<std::size_t>(v) >= obj.view_refs.size()) {
          throw Error(Errc::kNoViews, obj.object_id + " has no view " + std::to_string(v));
        }
      }
      const auto plan = plan_probes(obj.object_id, templates, views, modes, {});
      for (const auto& p : plan.probes) {
        std::optional<std::string> image;
        if (p.view_id) image = obj.view_refs[static_cast<std::size_t>(*p.view_id)];
        requests.push_back({p.prompt_text, image, a.num_candidates});
        shells.push_back({obj.object_id, p.view_id, p.question_id, p.prompt_text, p.mode, {}, std::nullopt});
      }
    }
    for (const auto& r : requests) validate_request(r);

    std::unique_ptr<RecordingProvider> recorder;
    const GenerationProvider* provider = backend.get();
    if (a.record) {
      recorder = std::make_unique<RecordingProvider>(*backend);
      provider = recorder.get();
    }
    auto results = batch_generate(*provider, requests, a.max_in_flight);

    std::vector<ProbeRecord> records;
    std::size_t errors = 0;
    std::optional<Error> first_error;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (const auto* e = std::get_if<Error>(&results[i])) {
        ++errors;
        io.err << "probe " << shells[i].object_id << "/" << shells[i].question_id;
        if (shells[i].view_id) io.err << "/view" << *shells[i].view_id;
        io.err << ": " << e->what() << "\n";
        if (!first_error) first_error = *e;
        continue;
      }
      ProbeRecord r = shells[i];
      const auto& g = std::get<GenerationResult>(results[i]);
      r.responses = g.candidates;
      r.backend_id = g.backend_id;
      records.push_back(std::move(r));
    }
    if (first_error && !a.keep_going) throw *first_error;
    write_records(records, a.out);
    if (recorder) write_records(recorder->entries(), *a.record);
    io.out << "probe: " << records.size() << " records for " << manifest.objects.size() << " objects, " << errors
           << " errors\n";
    return errors == 0 ? int(kExitOk) : int(kExitBackend);
  });
}

// ---------------------------------------------------------------------------
// aggregate

struct AggregateArgs {
  std::string probes;
  std::string ruleset = "vqa-first-term";
  std::string mode = "lse";
  std::string filter;
  std::string property = "type";
  std::string out;
};

// One distribution per object in object_id order. Objects with nothing left
// after filtering are collected and reported together.
inline std::vector<AggregateDistribution> aggregate_all(const std::vector<ProbeRecord>& records,
                                                        const ProbeFilter& filter, const CanonRuleset& ruleset,
                                                        AggMode mode, const std::string& property) {
  std::map<std::string, std::vector<ProbeRecord>> by_object;
  for (const auto& r : records) by_object[r.object_id].push_back(r);
  if (by_object.empty()) throw Error(Errc::kNoRecordsAfterFilter, "probe file holds no records");
  std::vector<AggregateDistribution> out;
  std::vector<std::string> empty;
  for (const auto& [id, recs] : by_object) {
    try {
      out.push_back(aggregate(recs, filter, ruleset, mode, property));
    } catch (const Error& e) {
      if (e.code() != Errc::kNoRecordsAfterFilter && e.code() != Errc::kEmptyAggregation) throw;
      empty.push_back(id);
    }
  }
  if (!empty.empty()) {
    std::string ids;
    for (const auto& id : empty) ids += (ids.empty() ? "" : ", ") + id;
    throw Error(Errc::kNoRecordsAfterFilter, "nothing to aggregate for: " + ids);
  }
  return out;
}

inline int cmd_aggregate(const AggregateArgs& a, Console io = {}) {
  return run_guarded(io, [&] {
    const auto ruleset = load_ruleset(a.ruleset);
    const auto mode = parse_agg_mode(a.mode);
    const auto filter = a.filter.empty() ? ProbeFilter{} : parse_filter(a.filter);
    const auto dists = aggregate_all(read_items<ProbeRecord>(a.probes), filter, ruleset, mode, a.property);
    write_records(dists, a.out);
    io.out << "aggregate: " << dists.size() << " distributions (" << agg_mode_name(mode) << ", ruleset "
           << ruleset.name << ")\n";
    return int(kExitOk);
  });
}

// ---------------------------------------------------------------------------
// eval

inline Json mean_std_json(const MeanStd& m) {
  Json j;
  j["mean"] = m.mean;
  j["std"] = m.std;
  j["n"] = m.n;
  return j;
}

inline Json eval_result_json(const EvalResult& r) {
  Json j;
  j["kind"] = "eval_result";
  j["schema_version"] = kSchemaVersion;
  j["matcher"] = r.matcher;
  j["k"] = r.k;
  Json s;
  s["top1"] = mean_std_json(r.summary.top1);
  s["top5"] = mean_std_json(r.summary.top5);
  s["topk"] = mean_std_json(r.summary.topk);
  s["top_inf"] = mean_std_json(r.summary.top_inf);
  s["soft"] = mean_std_json(r.summary.soft);
  if (r.summary.similarity) s["similarity"] = mean_std_json(*r.summary.similarity);
  j["summary"] = s;
  Json per = Json::array();
  for (const auto& [id, o] : r.per_object) {
    Json jo;
    jo["object_id"] = id;
    jo["top1"] = o.top1;
    jo["top5"] = o.top5;
    jo["topk"] = o.topk;
    jo["top_inf"] = o.top_inf;
    jo["soft"] = o.soft;
    if (o.similarity) jo["similarity"] = *o.similarity;
    per.push_back(jo);
  }
  j["per_object"] = per;
  return j;
}

inline std::string top_k_row_name(std::size_t k) {
  return k == kTopInfinity ? "Top-∞" : "Top-" + std::to_string(k);
}

// Fixed-width rows of "name  mean ± std".
inline void print_eval_table(std::ostream& out, const EvalResult& r, const std::set<std::string>& metrics) {
  auto row = [&](const std::string& name, const MeanStd& m) {
    // Pad by code points so the multibyte infinity sign lines up.
    std::size_t width = 0;
    for (unsigned char c : name) width += (c & 0xC0) != 0x80;
    out << name << std::string(width < 13 ? 13 - width : 1, ' ') << format_mean_std(m) << "\n";
  };
  out << "objects: " << r.per_object.size() << "  matcher: " << r.matcher << "\n";
  if (metrics.count("topk")) {
    const bool extra = r.k != 1 && r.k != 5 && r.k != kTopInfinity;
    row("Top-1", r.summary.top1);
    if (extra && r.k < 5) row(top_k_row_name(r.k), r.summary.topk);
    row("Top-5", r.summary.top5);
    if (extra && r.k > 5) row(top_k_row_name(r.k), r.summary.topk);
    row(top_k_row_name(kTopInfinity), r.summary.top_inf);
  }
  if (metrics.count("soft")) row("Soft", r.summary.soft);
  if (metrics.count("similarity") && r.summary.similarity) row("Similarity", *r.summary.similarity);
}

inline std::string default_matcher_spec(const std::string& property) {
  return property == "material" ? "substring" : "canonical_equal";
}

struct EvalArgs {
  std::string aggregates;
  std::string labels;
  std::optional<std::string> merges;
  std::optional<std::string> property;
  std::string metrics = "topk,soft";
  // Defaults to substring matching for materials ("oak wood" credits
  // "wood") and canonical equality otherwise.
  std::optional<std::string> matcher;
  std::size_t k = 3;
  std::optional<std::string> embedder;
  std::string out;
};

inline int cmd_eval(const EvalArgs& a, Console io = {}) {
  return run_guarded(io, [&] {
    std::set<std::string> metrics;
    for (std::size_t start = 0; start <= a.metrics.size();) {
      auto end = std::min(a.metrics.find(',', start), a.metrics.size());
      const std::string m = a.metrics.substr(start, end - start);
      if (m != "topk" && m != "soft" && m != "similarity") {
        throw Error(Errc::kInvalidArgument, "metric must be topk, soft or similarity, got '" + m + "'");
      }
      metrics.insert(m);
      start = end + 1;
    }
    if (a.k == 0) throw Error(Errc::kInvalidArgument, "k must be >= 1");
    std::unique_ptr<EmbeddingProvider> embedder;
    if (metrics.count("similarity")) {
      if (!a.embedder) throw Error(Errc::kConfigError, "similarity metric needs --embedder");
      embedder = make_embedder(*a.embedder);
    }
    const auto dists = read_items<AggregateDistribution>(a.aggregates);
    std::string property;
    if (a.property) {
      property = *a.property;
    } else {
      std::set<std::string> props;
      for (const auto& d : dists) props.insert(d.property);
      if (props.size() > 1) throw Error(Errc::kInvalidArgument, "aggregates mix properties; pass --property");
      if (!props.empty()) property = *props.begin();
    }
    std::vector<AggregateDistribution> selected;
    for (const auto& d : dists) {
      if (d.property == property) selected.push_back(d);
    }
    const Matcher matcher = parse_matcher(a.matcher.value_or(default_matcher_spec(property)));
    const MergeMap merges = a.merges ? load_merges(*a.merges) : MergeMap{};
    const auto labels = load_label_set(a.labels, merges).labels_for(property);
    const auto result = evaluate(selected, labels, matcher, a.k, embedder.get());
    if (result.per_object.empty()) {
      throw Error(Errc::kEmptyAggregation, "no object has both an aggregate and a '" + property + "' label");
    }
    write_json_document(eval_result_json(result), a.out);
    print_eval_table(io.out, result, metrics);
    return int(kExitOk);
  });
}

// ---------------------------------------------------------------------------
// ablate

struct AblationPair {
  std::string object_id;
  std::string question_id;
  double distance = 0.0;
};

struct AblationResult {
  DivergenceReport report;
  std::vector<AblationPair> pairs;
  // Per-question mean VLM soft accuracy against labels, when labels were given.
  std::map<std::string, double> accuracy;
  std::optional<LinearFit> fit;
  std::optional<std::string> fit_note;
};

// Pairs VLM- and LLM-mode aggregates per (object, question); every key must
// be present on both sides.
inline AblationResult ablate(const std::vector<ProbeRecord>& vlm_records, const std::vector<ProbeRecord>& llm_records,
                             const CanonRuleset& ruleset, const std::map<std::string, std::string>* labels = nullptr,
                             const Matcher& matcher = {}) {
  using Key = std::pair<std::string, std::string>;
  auto group = [](const std::vector<ProbeRecord>& recs, Mode mode) {
    std::map<Key, std::vector<ProbeRecord>> out;
    for (const auto& r : recs) {
      if (r.mode == mode) out[{r.object_id, r.question_id}].push_back(r);
    }
    return out;
  };
  const auto vlm = group(vlm_records, Mode::kVlm);
  const auto llm = group(llm_records, Mode::kLlm);
  std::vector<std::string> unpaired;
  for (const auto& [k, _] : vlm) {
    if (!llm.count(k)) unpaired.push_back(k.first + "/" + k.second + " (vlm only)");
  }
  for (const auto& [k, _] : llm) {
    if (!vlm.count(k)) unpaired.push_back(k.first + "/" + k.second + " (llm only)");
  }
  if (!unpaired.empty()) {
    std::string msg;
    for (const auto& u : unpaired) msg += (msg.empty() ? "" : ", ") + u;
    throw Error(Errc::kNoRecordsAfterFilter, "unpairable records: " + msg);
  }
  if (vlm.empty()) throw Error(Errc::kNoRecordsAfterFilter, "no vlm/llm record pairs");

  AblationResult result;
  std::map<std::string, std::vector<double>> by_q;
  std::map<std::string, std::vector<double>> hits;
  for (const auto& [k, vrecs] : vlm) {
    const auto dv = aggregate(vrecs, ProbeFilter{}, ruleset, AggMode::kLse, k.second);
    const auto dl = aggregate(llm.at(k), ProbeFilter{}, ruleset, AggMode::kLse, k.second);
    const double h = hellinger(dv, dl);
    result.pairs.push_back({k.first, k.second, h});
    by_q[k.second].push_back(h);
    if (labels) {
      if (auto it = labels->find(k.first); it != labels->end()) {
        hits[k.second].push_back(soft_accuracy(dv, it->second, matcher));
      }
    }
  }
  result.report = divergence_report_from_distances(by_q);
  if (labels) {
    std::vector<FitPoint> points;
    for (const auto& row : result.report.rows) {
      auto it = hits.find(row.question_id);
      if (it == hits.end()) continue;
      const double acc = mean_std(it->second).mean;
      result.accuracy[row.question_id] = acc;
      points.push_back({row.mean, acc});
    }
    try {
      result.fit = accuracy_divergence_fit(points);
    } catch (const Error& e) {
      if (e.code() != Errc::kDegenerateInput) throw;
      result.fit_note = "no fit: " + e.detail();
    }
  }
  return result;
}

inline Json ablation_json(const AblationResult& r) {
  Json j;
  j["kind"] = "divergence_report";
  j["schema_version"] = kSchemaVersion;
  Json rows = Json::array();
  for (const auto& row : r.report.rows) {
    Json jr;
    jr["question_id"] = row.question_id;
    jr["mean"] = row.mean;
    jr["std"] = row.std;
    jr["n"] = row.n;
    if (auto it = r.accuracy.find(row.question_id); it != r.accuracy.end()) jr["accuracy"] = it->second;
    rows.push_back(jr);
  }
  j["rows"] = rows;
  if (r.fit) {
    Json f;
    f["slope"] = r.fit->slope;
    f["intercept"] = r.fit->intercept;
    f["pearson_r"] = r.fit->pearson_r;
    f["n"] = r.fit->n;
    j["fit"] = f;
  }
  Json pairs = Json::array();
  for (const auto& p : r.pairs) {
    Json jp;
    jp["object_id"] = p.object_id;
    jp["question_id"] = p.question_id;
    jp["distance"] = p.distance;
    pairs.push_back(jp);
  }
  j["pairs"] = pairs;
  return j;
}

struct AblateArgs {
  std::string probes_vlm;
  std::string probes_llm;
  std::string ruleset = "vqa-first-term";
  std::optional<std::string> labels;
  std::optional<std::string> merges;
  std::string property = "type";
  std::optional<std::string> matcher;
  std::string out;
};

inline int cmd_ablate(const AblateArgs& a, Console io = {}) {
  return run_guarded(io, [&] {
    const auto ruleset = load_ruleset(a.ruleset);
    const Matcher matcher = parse_matcher(a.matcher.value_or(default_matcher_spec(a.property)));
    std::optional<std::map<std::string, std::string>> labels;
    if (a.labels) {
      const MergeMap merges = a.merges ? load_merges(*a.merges) : MergeMap{};
      labels = load_label_set(*a.labels, merges).labels_for(a.property);
    }
    const auto result = ablate(read_items<ProbeRecord>(a.probes_vlm), read_items<ProbeRecord>(a.probes_llm), ruleset,
                               labels ? &*labels : nullptr, matcher);
    write_json_document(ablation_json(result), a.out);
    char buf[160];
    io.out << "question     hellinger        n\n";
    for (const auto& row : result.report.rows) {
      std::snprintf(buf, sizeof buf, "%-12s %-16s %zu\n", row.question_id.c_str(),
                    format_mean_std({row.mean, row.std, row.n}).c_str(), row.n);
      io.out << buf;
    }
    if (result.fit) {
      std::snprintf(buf, sizeof buf, "fit: accuracy = %.4f * distance + %.4f  (r = %.4f, n = %zu)\n",
                    result.fit->slope, result.fit->intercept, result.fit->pearson_r, result.fit->n);
      io.out << buf;
    } else if (result.fit_note) {
      io.err << *result.fit_note << "\n";
    }
    return int(kExitOk);
  });
}

// ---------------------------------------------------------------------------
// audit

struct BlowUpRow {
  std::string object_id;
  double ratio = 0.0;
  std::size_t summary_words = 0;
  std::size_t max_view_words = 0;
};

struct AuditResult {
  std::vector<BlowUpRow> blow_up;  // worst first
  std::vector<std::string> skipped;  // joined objects with no usable per-view caption
  KeywordAudit keywords;
};

// Summaries are caption records without view_id, per-view captions carry one.
inline AuditResult audit(const std::vector<CaptionRecord>& summaries, const std::vector<CaptionRecord>& per_view,
                         const std::vector<KeywordRule>& rules, std::optional<std::size_t> total = std::nullopt) {
  std::map<std::string, std::optional<std::string>> summary_by_id;
  for (const auto& s : summaries) {
    auto [it, inserted] = summary_by_id.emplace(s.object_id, s.text);
    if (!inserted) throw Error(Errc::kParseError, "two summaries for '" + s.object_id + "'");
  }
  std::map<std::string, std::vector<std::string>> views_by_id;
  for (const auto& v : per_view) {
    auto& slot = views_by_id[v.object_id];
    if (v.text) slot.push_back(*v.text);
  }
  AuditResult result;
  for (const auto& [id, text] : summary_by_id) {
    auto it = views_by_id.find(id);
    if (!text || it == views_by_id.end()) continue;
    std::size_t longest = 0;
    for (const auto& c : it->second) longest = std::max(longest, word_count(c));
    if (longest == 0) {
      result.skipped.push_back(id);
      continue;
    }
    result.blow_up.push_back({id, blow_up_ratio(*text, it->second), word_count(*text), longest});
  }
  if (result.blow_up.empty()) throw Error(Errc::kEmptyAggregation, "no object has both a summary and per-view captions");
  std::stable_sort(result.blow_up.begin(), result.blow_up.end(),
                   [](const BlowUpRow& a, const BlowUpRow& b) { return a.ratio > b.ratio; });
  std::map<std::string, std::optional<std::string>> corpus = summary_by_id;
  for (const auto& [id, _] : views_by_id) corpus.emplace(id, std::nullopt);
  result.keywords = keyword_audit(corpus, rules, total);
  return result;
}

inline Json audit_json(const AuditResult& r) {
  Json j;
  j["kind"] = "audit_report";
  j["schema_version"] = kSchemaVersion;
  std::vector<double> ratios;
  Json rows = Json::array();
  for (const auto& b : r.blow_up) {
    Json jb;
    jb["object_id"] = b.object_id;
    jb["ratio"] = b.ratio;
    jb["summary_words"] = b.summary_words;
    jb["max_view_words"] = b.max_view_words;
    rows.push_back(jb);
    ratios.push_back(b.ratio);
  }
  j["blow_up_summary"] = mean_std_json(mean_std(ratios));
  j["blow_up"] = rows;
  j["skipped"] = r.skipped;
  Json k;
  k["corpus_size"] = r.keywords.corpus_size;
  k["missing"] = r.keywords.missing;
  k["missing_fraction"] = r.keywords.missing_fraction;
  Json rules = Json::array();
  for (const auto& rr : r.keywords.rules) {
    Json jr;
    jr["name"] = rr.name;
    jr["count"] = rr.count;
    jr["fraction"] = rr.fraction;
    rules.push_back(jr);
  }
  k["rules"] = rules;
  j["keywords"] = k;
  return j;
}

struct AuditArgs {
  std::string summaries;
  std::string per_view;
  std::optional<std::string> keywords;
  std::optional<std::size_t> total;
  std::size_t show = 10;
  std::string out;
};

inline int cmd_audit(const AuditArgs& a, Console io = {}) {
  return run_guarded(io, [&] {
    // Third-party caption dumps are read leniently: unknown fields are kept aside.
    const auto summaries = read_items<CaptionRecord>(a.summaries, false);
    const auto per_view = read_items<CaptionRecord>(a.per_view, false);
    std::vector<KeywordRule> rules;
    if (a.keywords) rules = read_items<KeywordRule>(*a.keywords);
    const auto result = audit(summaries, per_view, rules, a.total);
    write_json_document(audit_json(result), a.out);
    char buf[160];
    io.out << "blow-up ratio (worst first)\n";
    for (std::size_t i = 0; i < std::min(a.show, result.blow_up.size()); ++i) {
      const auto& b = result.blow_up[i];
      std::snprintf(buf, sizeof buf, "  %-24s %.2f  (%zu / %zu words)\n", b.object_id.c_str(), b.ratio,
                    b.summary_words, b.max_view_words);
      io.out << buf;
    }
    std::snprintf(buf, sizeof buf, "missing captions: %zu / %zu (%.4f)\n", result.keywords.missing,
                  result.keywords.corpus_size, result.keywords.missing_fraction);
    io.out << buf;
    for (const auto& r : result.keywords.rules) {
      std::snprintf(buf, sizeof buf, "  %-24s %zu (%.4f)\n", r.name.c_str(), r.count, r.fraction);
      io.out << buf;
    }
    return int(kExitOk);
  });
}

// ---------------------------------------------------------------------------
// chain

struct ChainArgs {
  std::string stages;
  std::string manifest;
  std::string backend = "stub";
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string views = "all";
  std::string mode = "lse";
  std::optional<std::string> record;
  int num_candidates = 5;
  int max_in_flight = 8;
};

inline int cmd_chain(const ChainArgs& a, Console io = {}) {
  return run_guarded(io, [&] {
    const auto stages = read_items<ChainStage>(a.stages);
    if (stages.empty()) throw Error(Errc::kConfigError, a.stages + ": no stages");
    static const std::regex kSafeName("[A-Za-z0-9_.-]+");
    for (const auto& s : stages) {
      if (!std::regex_match(s.property, kSafeName)) {
        throw Error(Errc::kConfigError, "stage property '" + s.property + "' is not usable as a file name");
      }
    }
    order_stages(stages);
    ChainOptions opts;
    opts.num_candidates = a.num_candidates;
    opts.max_in_flight = a.max_in_flight;
    opts.agg_mode = parse_agg_mode(a.mode);
    opts.views = parse_views(a.views);
    auto backend = make_backend(a.backend, a.seed);
    const auto manifest = load_manifest(a.manifest);
    std::vector<ChainObject> objects;
    for (const auto& o : manifest.objects) objects.push_back({o.object_id, o.view_refs});

    std::unique_ptr<RecordingProvider> recorder;
    const GenerationProvider* provider = backend.get();
    if (a.record) {
      recorder = std::make_unique<RecordingProvider>(*backend);
      provider = recorder.get();
    }
    AggregateStore store;
    const auto result = chain(objects, stages, *provider, store, opts);

    std::error_code ec;
    std::filesystem::create_directories(a.out_dir, ec);
    if (ec) throw Error(Errc::kIoError, "cannot create " + a.out_dir + ": " + ec.message());
    const std::filesystem::path dir(a.out_dir);
    for (const auto& s : result.stages) {
      write_records(s.probes, (dir / (s.property + ".probes.jsonl")).string());
      write_records(s.aggregates, (dir / (s.property + ".aggregates.jsonl")).string());
      io.out << "stage " << s.property << ": " << s.probes.size() << " probes, " << s.aggregates.size()
             << " aggregates\n";
    }
    write_records(result.trace, (dir / "trace.jsonl").string());
    if (recorder) write_records(recorder->entries(), *a.record);
    return int(kExitOk);
  });
}

}  // namespace probeagg
