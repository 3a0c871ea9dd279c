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

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "probeagg/backends.hpp"
#include "probeagg/core.hpp"
#include "probeagg/error.hpp"
#include "probeagg/hashing.hpp"
#include "probeagg/metrics.hpp"
#include "probeagg/probes.hpp"

namespace probeagg {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// Record kinds beyond the core domain types.

struct ManifestObject {
  struct SourceCaptions {
    std::vector<std::string> per_view;
    std::string aggregate;
    bool operator==(const SourceCaptions&) const = default;
  };
  std::string object_id;
  std::vector<std::string> view_refs;
  std::optional<std::vector<std::string>> tags;
  std::optional<std::map<std::string, SourceCaptions>> source_captions;

  bool operator==(const ManifestObject&) const = default;
};

struct CurationCandidate {
  std::string object_id;
  std::string candidate_label;
  std::string property = "material";
  std::vector<std::string> view_refs;

  bool operator==(const CurationCandidate&) const = default;
};

// Third-party caption dumps: only object_id is required; text may be null.
struct CaptionRecord {
  std::string object_id;
  std::optional<int> view_id;
  std::optional<std::string> text;

  bool operator==(const CaptionRecord&) const = default;
};

struct EmbeddingFixtureEntry {
  std::string text;
  std::vector<double> vector;

  bool operator==(const EmbeddingFixtureEntry&) const = default;
};

namespace store_detail {

[[noreturn]] inline void bad(const std::string& why) { throw Error(Errc::kParseError, why); }

// Typed access to one JSON object that remembers which keys were consumed so
// strict reads can reject the rest.
class Fields {
 public:
  explicit Fields(const Json& j) : j_(j) {
    if (!j.is_object()) bad("record is not a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const Json& raw(const char* key) {
    used_.insert(key);
    if (!j_.contains(key)) bad(std::string("missing field '") + key + "'");
    return j_.at(key);
  }

  std::string str(const char* key) {
    const Json& v = raw(key);
    if (!v.is_string()) bad(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  }

  std::optional<std::string> opt_str(const char* key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return str(key);
  }

  double num(const char* key) {
    const Json& v = raw(key);
    if (!v.is_number()) bad(std::string("field '") + key + "' must be a number");
    return v.get<double>();
  }

  int integer(const char* key) {
    const Json& v = raw(key);
    if (!v.is_number_integer()) bad(std::string("field '") + key + "' must be an integer");
    return v.get<int>();
  }

  std::optional<int> opt_int(const char* key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return integer(key);
  }

  bool boolean(const char* key, bool fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) bad(std::string("field '") + key + "' must be a boolean");
    return v.get<bool>();
  }

  std::vector<std::string> str_list(const char* key) {
    const Json& v = raw(key);
    if (!v.is_array()) bad(std::string("field '") + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& x : v) {
      if (!x.is_string()) bad(std::string("field '") + key + "' must hold strings");
      out.push_back(x.get<std::string>());
    }
    return out;
  }

  void mark(const char* key) { used_.insert(key); }

  // Unknown keys as an object; strict mode turns them into an error.
  Json leftovers(bool strict) const {
    Json extra = Json::object();
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) extra[it.key()] = it.value();
    }
    if (strict && !extra.empty()) bad("unknown field '" + extra.begin().key() + "'");
    return extra;
  }

 private:
  const Json& j_;
  std::set<std::string> used_;
};

inline Json scored_to_json(const ScoredResponse& r) {
  Json j;
  j["text"] = r.text;
  j["score"] = r.score;
  return j;
}

inline ScoredResponse scored_from_json(const Json& j, bool strict) {
  Fields f(j);
  ScoredResponse r{f.str("text"), f.num("score")};
  f.leftovers(strict);
  return r;
}

inline std::vector<ScoredResponse> scored_list(const Json& arr, bool strict, const char* what) {
  if (!arr.is_array()) bad(std::string(what) + " must be an array");
  std::vector<ScoredResponse> out;
  for (const auto& x : arr) out.push_back(scored_from_json(x, strict));
  return out;
}

inline Json template_to_json(const PromptTemplate& t) {
  Json j;
  j["id"] = t.id;
  j["text"] = t.text;
  if (t.vlm_text) j["vlm_text"] = *t.vlm_text;
  if (t.llm_text) j["llm_text"] = *t.llm_text;
  Json slots = Json::array();
  for (const auto& s : required_slots(t)) slots.push_back(s);
  j["required_slots"] = slots;
  return j;
}

inline PromptTemplate template_from_json(const Json& j, bool strict) {
  Fields f(j);
  PromptTemplate t{f.str("id"), f.str("text"), f.opt_str("vlm_text"), f.opt_str("llm_text")};
  if (t.id.empty()) bad("template id must be non-empty");
  std::set<std::string> derived;
  try {
    derived = required_slots(t);
  } catch (const Error& e) {
    bad("template '" + t.id + "': " + e.detail());
  }
  f.mark("required_slots");
  if (f.has("required_slots")) {
    auto declared = f.str_list("required_slots");
    if (std::set<std::string>(declared.begin(), declared.end()) != derived) {
      bad("template '" + t.id + "' required_slots do not match its placeholders");
    }
  }
  f.leftovers(strict);
  return t;
}

}  // namespace store_detail

// Serialization traits: one specialization per record kind. Keys are always
// emitted in the order written here, so output files are byte-stable.
template <typename T>
struct RecordTraits;

template <>
struct RecordTraits<ProbeRecord> {
  static constexpr const char* kind = "probe";
  static Json to_json(const ProbeRecord& r) {
    Json j;
    j["object_id"] = r.object_id;
    if (r.view_id) j["view_id"] = *r.view_id;
    j["question_id"] = r.question_id;
    j["prompt_text"] = r.prompt_text;
    j["mode"] = mode_name(r.mode);
    if (r.backend_id) j["backend_id"] = *r.backend_id;
    Json rs = Json::array();
    for (const auto& x : r.responses) rs.push_back(store_detail::scored_to_json(x));
    j["responses"] = rs;
    return j;
  }
  static ProbeRecord from_json(store_detail::Fields& f, bool strict) {
    ProbeRecord r;
    r.object_id = f.str("object_id");
    r.view_id = f.opt_int("view_id");
    r.question_id = f.str("question_id");
    r.prompt_text = f.str("prompt_text");
    try {
      r.mode = parse_mode(f.str("mode"));
    } catch (const Error& e) {
      store_detail::bad(e.detail());
    }
    r.backend_id = f.opt_str("backend_id");
    r.responses = store_detail::scored_list(f.raw("responses"), strict, "responses");
    auto problems = validate_probe_record(r);
    if (!problems.empty()) store_detail::bad(problems.front());
    return r;
  }
};

template <>
struct RecordTraits<AggregateDistribution> {
  static constexpr const char* kind = "aggregate";
  static Json to_json(const AggregateDistribution& d) {
    Json j;
    j["object_id"] = d.object_id;
    j["property"] = d.property;
    if (d.tie_order == TieOrder::kGiven) j["tie_order"] = "given";
    if (d.display_only) j["display_only"] = true;
    Json es = Json::array();
    for (const auto& e : d.entries) {
      Json je;
      je["canonical"] = e.canonical;
      je["agg_score"] = e.agg_score;
      je["prob"] = e.prob;
      Json prov = Json::array();
      for (const auto& p : e.provenance) {
        Json jp;
        if (p.view_id) jp["view_id"] = *p.view_id;
        jp["question_id"] = p.question_id;
        jp["raw_text"] = p.raw_text;
        jp["score"] = p.score;
        prov.push_back(jp);
      }
      je["provenance"] = prov;
      es.push_back(je);
    }
    j["entries"] = es;
    return j;
  }
  static AggregateDistribution from_json(store_detail::Fields& f, bool strict) {
    AggregateDistribution d;
    d.object_id = f.str("object_id");
    d.property = f.str("property");
    if (auto t = f.opt_str("tie_order")) {
      if (*t == "given") {
        d.tie_order = TieOrder::kGiven;
      } else if (*t != "canonical") {
        store_detail::bad("tie_order must be canonical or given");
      }
    }
    d.display_only = f.boolean("display_only", false);
    const Json& es = f.raw("entries");
    if (!es.is_array()) store_detail::bad("entries must be an array");
    for (const auto& je : es) {
      store_detail::Fields fe(je);
      DistributionEntry e;
      e.canonical = fe.str("canonical");
      e.agg_score = fe.num("agg_score");
      e.prob = fe.num("prob");
      const Json& prov = fe.raw("provenance");
      if (!prov.is_array()) store_detail::bad("provenance must be an array");
      for (const auto& jp : prov) {
        store_detail::Fields fp(jp);
        ProvenanceItem p;
        p.view_id = fp.opt_int("view_id");
        p.question_id = fp.str("question_id");
        p.raw_text = fp.str("raw_text");
        p.score = fp.num("score");
        fp.leftovers(strict);
        e.provenance.push_back(std::move(p));
      }
      fe.leftovers(strict);
      d.entries.push_back(std::move(e));
    }
    if (!check_distribution(d, 1e-9)) store_detail::bad("aggregate for '" + d.object_id + "' is not a valid distribution");
    return d;
  }
};

template <>
struct RecordTraits<LabelRecord> {
  static constexpr const char* kind = "label";
  static Json to_json(const LabelRecord& r) {
    Json j;
    j["object_id"] = r.object_id;
    j["property"] = r.property;
    j["label"] = r.label;
    j["source"] = r.source;
    return j;
  }
  static LabelRecord from_json(store_detail::Fields& f, bool) {
    LabelRecord r{f.str("object_id"), f.str("property"), f.str("label"), f.str("source")};
    if (r.label.empty()) store_detail::bad("label must be non-empty");
    return r;
  }
};

template <>
struct RecordTraits<CurationDecision> {
  static constexpr const char* kind = "decision";
  static Json to_json(const CurationDecision& d) {
    Json j;
    j["object_id"] = d.object_id;
    j["candidate_label"] = d.candidate_label;
    j["decision"] = decision_name(d.decision);
    j["annotator"] = d.annotator;
    j["timestamp"] = format_timestamp(d.timestamp);
    return j;
  }
  static CurationDecision from_json(store_detail::Fields& f, bool) {
    CurationDecision d;
    d.object_id = f.str("object_id");
    d.candidate_label = f.str("candidate_label");
    try {
      d.decision = parse_decision(f.str("decision"));
      d.timestamp = parse_timestamp(f.str("timestamp"));
    } catch (const Error& e) {
      store_detail::bad(e.detail());
    }
    d.annotator = f.opt_str("annotator").value_or("anonymous");
    return d;
  }
};

template <>
struct RecordTraits<PromptTemplate> {
  static constexpr const char* kind = "template";
  static Json to_json(const PromptTemplate& t) { return store_detail::template_to_json(t); }
  static PromptTemplate from_json(store_detail::Fields& f, bool strict) {
    // Templates validate their own fields; re-enter through the raw object.
    Json j = Json::object();
    for (const char* k : {"id", "text", "vlm_text", "llm_text", "required_slots"}) {
      if (f.has(k)) j[k] = f.raw(k);
      f.mark(k);
    }
    return store_detail::template_from_json(j, strict);
  }
};

template <>
struct RecordTraits<ReplayEntry> {
  static constexpr const char* kind = "replay_fixture";
  static Json to_json(const ReplayEntry& e) {
    Json j;
    j["key"] = e.key;
    j["prompt"] = e.prompt;
    if (e.image_ref) j["image_ref"] = *e.image_ref;
    Json cs = Json::array();
    for (const auto& c : e.candidates) cs.push_back(store_detail::scored_to_json(c));
    j["candidates"] = cs;
    return j;
  }
  static ReplayEntry from_json(store_detail::Fields& f, bool strict) {
    ReplayEntry e;
    e.key = f.str("key");
    e.prompt = f.str("prompt");
    e.image_ref = f.opt_str("image_ref");
    e.candidates = store_detail::scored_list(f.raw("candidates"), strict, "candidates");
    if (e.key != replay_key(e.prompt, e.image_ref)) store_detail::bad("replay key does not match prompt/image_ref");
    for (const auto& c : e.candidates) {
      if (!std::isfinite(c.score)) store_detail::bad("replay candidate score must be finite");
    }
    return e;
  }
};

template <>
struct RecordTraits<EmbeddingFixtureEntry> {
  static constexpr const char* kind = "embedding_fixture";
  static Json to_json(const EmbeddingFixtureEntry& e) {
    Json j;
    j["text"] = e.text;
    j["vector"] = e.vector;
    return j;
  }
  static EmbeddingFixtureEntry from_json(store_detail::Fields& f, bool) {
    EmbeddingFixtureEntry e;
    e.text = f.str("text");
    const Json& v = f.raw("vector");
    if (!v.is_array() || v.empty()) store_detail::bad("vector must be a non-empty array");
    for (const auto& x : v) {
      if (!x.is_number()) store_detail::bad("vector components must be numbers");
      e.vector.push_back(x.get<double>());
    }
    return e;
  }
};

template <>
struct RecordTraits<ManifestObject> {
  static constexpr const char* kind = "manifest";
  static Json to_json(const ManifestObject& m) {
    Json j;
    j["object_id"] = m.object_id;
    j["view_refs"] = m.view_refs;
    if (m.tags) j["tags"] = *m.tags;
    if (m.source_captions) {
      Json sc = Json::object();
      for (const auto& [src, c] : *m.source_captions) {
        Json jc;
        jc["per_view"] = c.per_view;
        jc["aggregate"] = c.aggregate;
        sc[src] = jc;
      }
      j["source_captions"] = sc;
    }
    return j;
  }
  static ManifestObject from_json(store_detail::Fields& f, bool strict) {
    ManifestObject m;
    m.object_id = f.str("object_id");
    m.view_refs = f.str_list("view_refs");
    f.mark("tags");
    if (f.has("tags")) m.tags = f.str_list("tags");
    f.mark("source_captions");
    if (f.has("source_captions")) {
      const Json& sc = f.raw("source_captions");
      if (!sc.is_object()) store_detail::bad("source_captions must be an object");
      std::map<std::string, ManifestObject::SourceCaptions> out;
      for (auto it = sc.begin(); it != sc.end(); ++it) {
        store_detail::Fields fc(it.value());
        out[it.key()] = {fc.str_list("per_view"), fc.str("aggregate")};
        fc.leftovers(strict);
      }
      m.source_captions = std::move(out);
    }
    return m;
  }
};

template <>
struct RecordTraits<CurationCandidate> {
  static constexpr const char* kind = "candidate";
  static Json to_json(const CurationCandidate& c) {
    Json j;
    j["object_id"] = c.object_id;
    j["candidate_label"] = c.candidate_label;
    j["property"] = c.property;
    j["view_refs"] = c.view_refs;
    return j;
  }
  static CurationCandidate from_json(store_detail::Fields& f, bool) {
    CurationCandidate c;
    c.object_id = f.str("object_id");
    c.candidate_label = f.str("candidate_label");
    c.property = f.opt_str("property").value_or("material");
    f.mark("view_refs");
    if (f.has("view_refs")) c.view_refs = f.str_list("view_refs");
    if (c.candidate_label.empty()) store_detail::bad("candidate_label must be non-empty");
    return c;
  }
};

template <>
struct RecordTraits<CaptionRecord> {
  static constexpr const char* kind = "caption";
  static Json to_json(const CaptionRecord& c) {
    Json j;
    j["object_id"] = c.object_id;
    if (c.view_id) j["view_id"] = *c.view_id;
    j["text"] = c.text ? Json(*c.text) : Json(nullptr);
    return j;
  }
  static CaptionRecord from_json(store_detail::Fields& f, bool) {
    CaptionRecord c;
    c.object_id = f.str("object_id");
    c.view_id = f.opt_int("view_id");
    c.text = f.opt_str("text");
    return c;
  }
};

template <>
struct RecordTraits<KeywordRule> {
  static constexpr const char* kind = "keyword_rule";
  static Json to_json(const KeywordRule& r) {
    Json j;
    j["name"] = r.name;
    j["keywords"] = r.keywords;
    j["case_sensitive"] = r.case_sensitive;
    j["exclusions"] = r.exclusions;
    return j;
  }
  static KeywordRule from_json(store_detail::Fields& f, bool) {
    KeywordRule r;
    r.name = f.str("name");
    r.keywords = f.str_list("keywords");
    r.case_sensitive = f.boolean("case_sensitive", false);
    f.mark("exclusions");
    if (f.has("exclusions")) r.exclusions = f.str_list("exclusions");
    if (r.keywords.empty()) store_detail::bad("keyword rule '" + r.name + "' has no keywords");
    return r;
  }
};

template <>
struct RecordTraits<ChainStage> {
  static constexpr const char* kind = "stage";
  static Json to_json(const ChainStage& s) {
    Json j;
    j["property"] = s.property;
    Json modes = Json::array();
    for (Mode m : s.modes) modes.push_back(mode_name(m));
    j["modes"] = modes;
    j["ruleset"] = s.ruleset;
    Json slots = Json::object();
    for (const auto& [name, policy] : s.slots) {
      Json p;
      if (const auto* m = std::get_if<ModeOfDistribution>(&policy)) {
        p["property"] = m->property;
      } else {
        p["fixed"] = std::get<FixedValue>(policy).value;
      }
      slots[name] = p;
    }
    j["slots"] = slots;
    Json ts = Json::array();
    for (const auto& t : s.templates) ts.push_back(store_detail::template_to_json(t));
    j["templates"] = ts;
    return j;
  }
  static ChainStage from_json(store_detail::Fields& f, bool strict) {
    ChainStage s;
    s.property = f.str("property");
    s.modes.clear();
    try {
      for (const auto& m : f.str_list("modes")) s.modes.insert(parse_mode(m));
    } catch (const Error& e) {
      store_detail::bad(e.detail());
    }
    if (s.modes.empty()) store_detail::bad("stage '" + s.property + "' has no modes");
    s.ruleset = f.opt_str("ruleset").value_or("vqa-first-term");
    f.mark("slots");
    if (f.has("slots")) {
      const Json& slots = f.raw("slots");
      if (!slots.is_object()) store_detail::bad("slots must be an object");
      for (auto it = slots.begin(); it != slots.end(); ++it) {
        store_detail::Fields fs(it.value());
        auto prop = fs.opt_str("property");
        auto fixed = fs.opt_str("fixed");
        fs.leftovers(strict);
        if (prop.has_value() == fixed.has_value()) {
          store_detail::bad("slot '" + it.key() + "' needs exactly one of property or fixed");
        }
        if (prop) {
          s.slots[it.key()] = ModeOfDistribution{*prop};
        } else {
          if (fixed->empty()) store_detail::bad("slot '" + it.key() + "' fixed value is empty");
          s.slots[it.key()] = FixedValue{*fixed};
        }
      }
    }
    const Json& ts = f.raw("templates");
    if (!ts.is_array() || ts.empty()) store_detail::bad("stage '" + s.property + "' needs templates");
    for (const auto& t : ts) s.templates.push_back(store_detail::template_from_json(t, strict));
    for (const auto& t : s.templates) {
      for (const auto& slot : required_slots(t)) {
        if (!s.slots.count(slot)) store_detail::bad("stage '" + s.property + "' template '" + t.id + "' needs slot " + slot);
      }
    }
    return s;
  }
};

template <>
struct RecordTraits<TraceEntry> {
  static constexpr const char* kind = "trace";
  static Json to_json(const TraceEntry& t) {
    Json j;
    j["stage"] = t.stage;
    j["object_id"] = t.object_id;
    if (t.view_id) j["view_id"] = *t.view_id;
    j["question_id"] = t.question_id;
    j["mode"] = mode_name(t.mode);
    j["prompt_text"] = t.prompt_text;
    if (t.image_ref) j["image_ref"] = *t.image_ref;
    j["slots"] = t.slots;
    return j;
  }
  static TraceEntry from_json(store_detail::Fields& f, bool) {
    TraceEntry t;
    t.stage = f.str("stage");
    t.object_id = f.str("object_id");
    t.view_id = f.opt_int("view_id");
    t.question_id = f.str("question_id");
    try {
      t.mode = parse_mode(f.str("mode"));
    } catch (const Error& e) {
      store_detail::bad(e.detail());
    }
    t.prompt_text = f.str("prompt_text");
    t.image_ref = f.opt_str("image_ref");
    const Json& slots = f.raw("slots");
    if (!slots.is_object()) store_detail::bad("slots must be an object");
    for (auto it = slots.begin(); it != slots.end(); ++it) {
      if (!it.value().is_string()) store_detail::bad("slot values must be strings");
      t.slots[it.key()] = it.value().get<std::string>();
    }
    return t;
  }
};

// One line per record: {"kind": ..., "schema_version": ..., <fields>}.
template <typename T>
std::string to_record_line(const T& item) {
  Json j;
  j["kind"] = RecordTraits<T>::kind;
  j["schema_version"] = kSchemaVersion;
  Json body = RecordTraits<T>::to_json(item);
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = std::move(it.value());
  return j.dump();
}

template <typename T>
T from_record_line(const std::string& line, bool strict, Json* extras = nullptr) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    store_detail::bad(std::string("invalid JSON: ") + e.what());
  }
  store_detail::Fields f(j);
  const std::string kind = f.str("kind");
  if (kind != RecordTraits<T>::kind) {
    throw Error(Errc::kKindMismatch, "expected '" + std::string(RecordTraits<T>::kind) + "' record, found '" + kind + "'");
  }
  const int version = f.integer("schema_version");
  if (version < 1 || version > kSchemaVersion) store_detail::bad("unsupported schema_version " + std::to_string(version));
  T item = RecordTraits<T>::from_json(f, strict);
  Json left = f.leftovers(strict);
  if (extras) *extras = std::move(left);
  return item;
}

namespace store_detail {

inline void write_all(int fd, const std::string& data, const std::string& path) {
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::kIoError, "write " + path + ": " + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

// Replaces `path` with `data` and fsyncs before returning.
inline void write_file_durable(const std::string& path, const std::string& data) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(Errc::kIoError, "open " + path + ": " + std::strerror(errno));
  try {
    write_all(fd, data, path);
    if (::fsync(fd) != 0) throw Error(Errc::kIoError, "fsync " + path + ": " + std::strerror(errno));
  } catch (...) {
    ::close(fd);
    throw;
  }
  if (::close(fd) != 0) throw Error(Errc::kIoError, "close " + path + ": " + std::strerror(errno));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace store_detail

template <typename T>
std::size_t write_records(const std::vector<T>& items, const std::string& path) {
  std::string data;
  for (std::size_t i = 0; i < items.size(); ++i) {
    try {
      data += to_record_line(items[i]);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::kSerializationError, "item " + std::to_string(i) + ": " + e.what());
    }
    data += '\n';
  }
  store_detail::write_file_durable(path, data);
  return items.size();
}

template <typename T>
struct ReadResult {
  std::vector<T> items;
  // Unknown fields per item (always empty objects in strict mode).
  std::vector<Json> extras;
};

template <typename T>
ReadResult<T> parse_records(const std::string& data, const std::string& origin, bool strict = true) {
  ReadResult<T> out;
  std::size_t line_no = 0, start = 0;
  while (start < data.size()) {
    auto end = data.find('\n', start);
    if (end == std::string::npos) end = data.size();
    std::string line = data.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      Json extra;
      out.items.push_back(from_record_line<T>(line, strict, &extra));
      out.extras.push_back(std::move(extra));
    } catch (const Error& e) {
      if (e.code() == Errc::kKindMismatch) throw Error(e.code(), origin + ":" + std::to_string(line_no) + ": " + e.detail());
      throw Error(Errc::kParseError, origin + ":" + std::to_string(line_no) + ": " + e.detail());
    }
  }
  return out;
}

template <typename T>
ReadResult<T> read_records(const std::string& path, bool strict = true) {
  return parse_records<T>(store_detail::read_file(path), path, strict);
}

template <typename T>
std::vector<T> read_items(const std::string& path, bool strict = true) {
  return read_records<T>(path, strict).items;
}

// Appends one decision under an exclusive lock and fsyncs before returning.
inline void append_decision(const std::string& path, const CurationDecision& d) {
  const std::string line = to_record_line(d) + "\n";
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(Errc::kIoError, "open " + path + ": " + std::strerror(errno));
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw Error(Errc::kIoError, "lock " + path + ": " + std::strerror(errno));
  }
  try {
    store_detail::write_all(fd, line, path);
    if (::fsync(fd) != 0) throw Error(Errc::kIoError, "fsync " + path + ": " + std::strerror(errno));
  } catch (...) {
    ::flock(fd, LOCK_UN);
    ::close(fd);
    throw;
  }
  ::flock(fd, LOCK_UN);
  ::close(fd);
}

inline void write_json_document(const Json& doc, const std::string& path) {
  store_detail::write_file_durable(path, doc.dump(2) + "\n");
}

struct DatasetManifest {
  std::vector<ManifestObject> objects;

  const ManifestObject* find(const std::string& id) const {
    for (const auto& o : objects) {
      if (o.object_id == id) return &o;
    }
    return nullptr;
  }
};

// Object ids must be unique and every object must have the same view count.
inline DatasetManifest validate_manifest(std::vector<ManifestObject> objects) {
  std::set<std::string> seen;
  std::vector<std::string> dupes, uneven;
  for (const auto& o : objects) {
    if (!seen.insert(o.object_id).second) dupes.push_back(o.object_id);
  }
  if (!objects.empty()) {
    const auto v = objects.front().view_refs.size();
    for (const auto& o : objects) {
      if (o.view_refs.size() != v) uneven.push_back(o.object_id);
    }
  }
  if (!dupes.empty() || !uneven.empty()) {
    std::string msg;
    for (const auto& d : dupes) msg += " duplicate:" + d;
    for (const auto& u : uneven) msg += " view-count:" + u;
    throw Error(Errc::kManifestInvalid, "manifest violations:" + msg);
  }
  return DatasetManifest{std::move(objects)};
}

inline DatasetManifest load_manifest(const std::string& path) {
  return validate_manifest(read_items<ManifestObject>(path));
}

using MergeMap = std::map<std::string, std::string>;

// Merges are single-level: no merge target may itself be merged.
inline void validate_merges(const MergeMap& merges) {
  for (const auto& [from, to] : merges) {
    if (merges.count(to)) throw Error(Errc::kCyclicMerge, "'" + from + "' -> '" + to + "' -> '" + merges.at(to) + "'");
  }
}

// Merge files are a single JSON object {"from": "to", ...}.
inline MergeMap load_merges(const std::string& path) {
  Json j;
  try {
    j = Json::parse(store_detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kParseError, path + ": " + e.what());
  }
  if (!j.is_object()) throw Error(Errc::kParseError, path + ": merge map must be a JSON object");
  MergeMap out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw Error(Errc::kParseError, path + ": merge target for '" + it.key() + "' is not a string");
    out[it.key()] = it.value().get<std::string>();
  }
  validate_merges(out);
  return out;
}

struct LabelSet {
  std::vector<LabelRecord> records;
  std::map<std::string, std::size_t> histogram;

  // object_id -> label for one property.
  std::map<std::string, std::string> labels_for(const std::string& property) const {
    std::map<std::string, std::string> out;
    for (const auto& r : records) {
      if (r.property == property) out[r.object_id] = r.label;
    }
    return out;
  }
};

inline LabelSet build_label_set(std::vector<LabelRecord> records, const MergeMap& merges = {}) {
  validate_merges(merges);
  LabelSet set;
  std::set<std::tuple<std::string, std::string, std::string>> keys;
  for (auto& r : records) {
    if (auto it = merges.find(r.label); it != merges.end()) r.label = it->second;
    if (!keys.insert({r.object_id, r.property, r.source}).second) {
      throw Error(Errc::kDuplicateLabelRecord, r.object_id + "/" + r.property + "/" + r.source);
    }
    ++set.histogram[r.label];
  }
  set.records = std::move(records);
  return set;
}

inline LabelSet load_label_set(const std::string& path, const MergeMap& merges = {}) {
  return build_label_set(read_items<LabelRecord>(path), merges);
}

}  // namespace probeagg
