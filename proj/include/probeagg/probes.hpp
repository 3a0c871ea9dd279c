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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "probeagg/aggregate.hpp"
#include "probeagg/backends.hpp"
#include "probeagg/canonicalize.hpp"
#include "probeagg/core.hpp"
#include "probeagg/error.hpp"

namespace probeagg {

// A question with slot placeholders.
//
//   {T}, {M}, ...  slot values (any upper-case name), inserted verbatim
//   {a} / {A}      indefinite article, "a" or "an" depending on the next word
//   {a}/this       determiner region: the article in llm mode, "this" in vlm
//
// vlm_text / llm_text, when set, replace `text` for that mode.
struct PromptTemplate {
  std::string id;
  std::string text;
  std::optional<std::string> vlm_text;
  std::optional<std::string> llm_text;

  bool operator==(const PromptTemplate&) const = default;

  const std::string& text_for(Mode mode) const {
    if (mode == Mode::kVlm && vlm_text) return *vlm_text;
    if (mode == Mode::kLlm && llm_text) return *llm_text;
    return text;
  }
};

namespace probe_detail {

struct Segment {
  enum Kind { kLiteral, kSlot, kArticle } kind;
  std::string value;      // literal text or slot name
  bool capital = false;   // {A}
};

inline bool is_slot_name(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
           return std::isupper(c) || std::isdigit(c) || c == '_';
         }) && std::isupper(static_cast<unsigned char>(s.front()));
}

// Splits template text into literals, slots and article markers, resolving
// determiner regions for `mode`.
inline std::vector<Segment> parse(const std::string& text, Mode mode) {
  std::vector<Segment> out;
  std::string lit;
  auto flush = [&] {
    if (!lit.empty()) out.push_back({Segment::kLiteral, std::move(lit), false});
    lit.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] != '{') {
      if (text[i] == '}') throw Error(Errc::kUnresolvedPlaceholder, "stray '}' in \"" + text + "\"");
      lit.push_back(text[i++]);
      continue;
    }
    auto close = text.find('}', i);
    if (close == std::string::npos) throw Error(Errc::kUnresolvedPlaceholder, "unclosed '{' in \"" + text + "\"");
    std::string name = text.substr(i + 1, close - i - 1);
    i = close + 1;
    if (name == "a" || name == "A") {
      // Determiner region "{a}/word".
      if (i < text.size() && text[i] == '/') {
        std::size_t j = i + 1;
        while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
        if (j == i + 1) throw Error(Errc::kUnresolvedPlaceholder, "determiner region lacks a word in \"" + text + "\"");
        std::string word = text.substr(i + 1, j - i - 1);
        i = j;
        if (mode == Mode::kVlm) {
          if (name == "A" && !word.empty()) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
          lit += word;
          continue;
        }
      }
      flush();
      out.push_back({Segment::kArticle, "", name == "A"});
      continue;
    }
    if (!is_slot_name(name)) throw Error(Errc::kUnresolvedPlaceholder, "unknown placeholder {" + name + "}");
    flush();
    out.push_back({Segment::kSlot, name, false});
  }
  flush();
  return out;
}

inline std::string first_word(std::string_view s) {
  std::size_t b = 0;
  while (b < s.size() && canon_detail::is_space(s[b])) ++b;
  std::size_t e = b;
  while (e < s.size() && !canon_detail::is_space(s[e])) ++e;
  std::string w;
  for (std::size_t k = b; k < e; ++k) {
    unsigned char c = static_cast<unsigned char>(s[k]);
    if (std::isalpha(c)) {
      w.push_back(static_cast<char>(std::tolower(c)));
    } else if (!w.empty()) {
      break;
    } else if (std::isdigit(c)) {
      break;
    }
  }
  return w;
}

}  // namespace probe_detail

// "a" or "an" for the word that follows, by initial vowel letter with a
// short list of exceptions in both directions.
inline std::string_view indefinite_article(std::string_view next_word) {
  static const std::set<std::string, std::less<>> kConsonantSound = {"one", "user", "unicorn", "university",
                                                                     "unique"};
  static const std::set<std::string, std::less<>> kVowelSound = {"hour", "honest", "heir"};
  const std::string w = probe_detail::first_word(next_word);
  if (w.empty()) return "a";
  if (kConsonantSound.count(w)) return "a";
  if (kVowelSound.count(w)) return "an";
  return std::string_view("aeiou").find(w.front()) != std::string_view::npos ? "an" : "a";
}

// Slot names the template needs in `mode` (or in either mode when absent).
inline std::set<std::string> required_slots(const PromptTemplate& t) {
  std::set<std::string> out;
  for (Mode m : {Mode::kVlm, Mode::kLlm}) {
    for (const auto& seg : probe_detail::parse(t.text_for(m), m)) {
      if (seg.kind == probe_detail::Segment::kSlot) out.insert(seg.value);
    }
  }
  return out;
}

inline std::string render_prompt(const PromptTemplate& tmpl, Mode mode, const std::map<std::string, std::string>& slots) {
  using probe_detail::Segment;
  auto segments = probe_detail::parse(tmpl.text_for(mode), mode);
  std::vector<std::string> rendered(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    if (seg.kind == Segment::kLiteral) {
      rendered[i] = seg.value;
    } else if (seg.kind == Segment::kSlot) {
      auto it = slots.find(seg.value);
      if (it == slots.end()) throw Error(Errc::kMissingSlot, seg.value + " (template '" + tmpl.id + "')");
      rendered[i] = it->second;
    }
  }
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].kind != Segment::kArticle) {
      out += rendered[i];
      continue;
    }
    std::string rest;
    for (std::size_t j = i + 1; j < segments.size() && rest.find_first_not_of(" \t") == std::string::npos; ++j) {
      rest += rendered[j];
    }
    std::string article(indefinite_article(rest));
    if (segments[i].capital) article[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(article[0])));
    out += article;
  }
  return out;
}

struct PlannedProbe {
  std::optional<int> view_id;
  std::string question_id;
  std::string prompt_text;
  Mode mode = Mode::kVlm;

  bool operator==(const PlannedProbe&) const = default;
};

struct ProbePlan {
  std::string object_id;
  std::vector<PlannedProbe> probes;
  std::set<std::string> upstream_requirements;
};

// Fans templates out over views (vlm) and once per template (llm).
inline ProbePlan plan_probes(const std::string& object_id, const std::vector<PromptTemplate>& templates,
                             const std::vector<int>& views, const std::set<Mode>& modes,
                             const std::map<std::string, std::string>& slots) {
  if (templates.empty()) throw Error(Errc::kEmptyTemplates, "no templates for " + object_id);
  if (modes.count(Mode::kVlm) && views.empty()) throw Error(Errc::kNoViews, "vlm probes need views for " + object_id);
  ProbePlan plan;
  plan.object_id = object_id;
  for (const auto& t : templates) {
    auto req = required_slots(t);
    plan.upstream_requirements.insert(req.begin(), req.end());
  }
  if (modes.count(Mode::kVlm)) {
    for (const auto& t : templates) {
      const std::string prompt = render_prompt(t, Mode::kVlm, slots);
      for (int v : views) plan.probes.push_back({v, t.id, prompt, Mode::kVlm});
    }
  }
  if (modes.count(Mode::kLlm)) {
    for (const auto& t : templates) plan.probes.push_back({std::nullopt, t.id, render_prompt(t, Mode::kLlm, slots), Mode::kLlm});
  }
  return plan;
}

// In-memory aggregates keyed by (object_id, property); the handle chained
// stages read their slots from.
class AggregateStore {
 public:
  void put(AggregateDistribution d) {
    auto key = std::make_pair(d.object_id, d.property);
    table_.insert_or_assign(std::move(key), std::move(d));
  }

  const AggregateDistribution* find(const std::string& object_id, const std::string& property) const {
    auto it = table_.find({object_id, property});
    return it == table_.end() ? nullptr : &it->second;
  }

  std::vector<AggregateDistribution> all() const {
    std::vector<AggregateDistribution> out;
    for (const auto& [k, d] : table_) out.push_back(d);
    return out;
  }

 private:
  std::map<std::pair<std::string, std::string>, AggregateDistribution> table_;
};

struct ModeOfDistribution {
  std::string property;
  bool operator==(const ModeOfDistribution&) const = default;
};

struct FixedValue {
  std::string value;
  bool operator==(const FixedValue&) const = default;
};

using SlotPolicy = std::variant<ModeOfDistribution, FixedValue>;

inline std::string resolve_slot(const std::string& object_id, const AggregateStore& aggregates, const SlotPolicy& policy) {
  if (const auto* fixed = std::get_if<FixedValue>(&policy)) {
    if (fixed->value.empty()) throw Error(Errc::kInvalidArgument, "fixed slot value must be non-empty");
    return fixed->value;
  }
  const auto& property = std::get<ModeOfDistribution>(policy).property;
  const AggregateDistribution* d = aggregates.find(object_id, property);
  if (!d || !d->top()) throw Error(Errc::kMissingUpstreamAggregate, property + " for " + object_id);
  return d->top()->canonical;
}

struct ChainStage {
  std::string property;
  std::vector<PromptTemplate> templates;
  std::set<Mode> modes = {Mode::kVlm};
  std::map<std::string, SlotPolicy> slots;
  std::string ruleset = "vqa-first-term";
};

struct ChainObject {
  std::string object_id;
  std::vector<std::string> view_refs;
};

struct ChainOptions {
  int num_candidates = 5;
  int max_in_flight = 8;
  AggMode agg_mode = AggMode::kLse;
  // Subset of view indices to probe; all views when absent.
  std::optional<std::vector<int>> views;
};

struct TraceEntry {
  std::string stage;
  std::string object_id;
  std::optional<int> view_id;
  std::string question_id;
  Mode mode = Mode::kVlm;
  std::string prompt_text;
  std::optional<std::string> image_ref;
  std::map<std::string, std::string> slots;

  bool operator==(const TraceEntry&) const = default;
};

struct StageOutput {
  std::string property;
  std::vector<ProbeRecord> probes;
  std::vector<AggregateDistribution> aggregates;
};

struct ChainResult {
  std::vector<StageOutput> stages;
  std::vector<TraceEntry> trace;
};

// Property name under which the llm-mode side of a two-mode stage is stored.
inline std::string llm_property(const std::string& property) { return property + ":llm"; }

// Orders stages so every slot that reads another stage's property runs after
// it. Stable: stages already in order keep their order.
inline std::vector<std::size_t> order_stages(const std::vector<ChainStage>& stages) {
  std::map<std::string, std::size_t> producer;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!producer.emplace(stages[i].property, i).second) {
      throw Error(Errc::kInvalidArgument, "two stages produce '" + stages[i].property + "'");
    }
  }
  std::vector<std::set<std::size_t>> deps(stages.size());
  for (std::size_t i = 0; i < stages.size(); ++i) {
    for (const auto& [slot, policy] : stages[i].slots) {
      if (const auto* m = std::get_if<ModeOfDistribution>(&policy)) {
        if (auto it = producer.find(m->property); it != producer.end()) deps[i].insert(it->second);
      }
    }
  }
  std::vector<std::size_t> order;
  std::vector<bool> done(stages.size(), false);
  while (order.size() < stages.size()) {
    bool progressed = false;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (done[i]) continue;
      if (std::all_of(deps[i].begin(), deps[i].end(), [&](std::size_t d) { return done[d]; })) {
        done[i] = true;
        order.push_back(i);
        progressed = true;
        break;
      }
    }
    if (!progressed) {
      std::string names;
      for (std::size_t i = 0; i < stages.size(); ++i) {
        if (!done[i]) names += (names.empty() ? "" : ", ") + stages[i].property;
      }
      throw Error(Errc::kCyclicDependency, "stages " + names);
    }
  }
  return order;
}

// Runs each stage over every object: resolve slots from earlier aggregates,
// fan out probes, query the backend, aggregate, publish to `store`.
inline ChainResult chain(const std::vector<ChainObject>& objects, const std::vector<ChainStage>& stages,
                         const GenerationProvider& provider, AggregateStore& store, const ChainOptions& options = {}) {
  ChainResult result;
  for (std::size_t si : order_stages(stages)) {
    const ChainStage& stage = stages[si];
    auto fail = [&](const Error& e) {
      return Error(e.code(), "stage '" + stage.property + "': " + e.detail());
    };
    CanonRuleset ruleset;
    try {
      ruleset = load_ruleset(stage.ruleset);
    } catch (const Error& e) {
      throw fail(e);
    }
    StageOutput out;
    out.property = stage.property;
    std::vector<GenerationRequest> requests;
    std::vector<TraceEntry> pending;
    for (const auto& obj : objects) {
      std::map<std::string, std::string> slot_values;
      std::vector<int> views;
      try {
        for (const auto& [name, policy] : stage.slots) slot_values[name] = resolve_slot(obj.object_id, store, policy);
        if (options.views) {
          views = *options.views;
        } else {
          for (std::size_t v = 0; v < obj.view_refs.size(); ++v) views.push_back(static_cast<int>(v));
        }
        for (int v : views) {
          if (v < 0 || static_cast<std::size_t>(v) >= obj.view_refs.size()) {
            throw Error(Errc::kNoViews, "view " + std::to_string(v) + " missing for " + obj.object_id);
          }
        }
        ProbePlan plan = plan_probes(obj.object_id, stage.templates, views, stage.modes, slot_values);
        for (const auto& p : plan.probes) {
          std::optional<std::string> image;
          if (p.view_id) image = obj.view_refs[static_cast<std::size_t>(*p.view_id)];
          requests.push_back({p.prompt_text, image, options.num_candidates});
          pending.push_back({stage.property, obj.object_id, p.view_id, p.question_id, p.mode, p.prompt_text, image, slot_values});
        }
      } catch (const Error& e) {
        throw fail(e);
      }
    }
    auto results = batch_generate(provider, requests, options.max_in_flight);
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (const auto* err = std::get_if<Error>(&results[i])) throw fail(*err);
      const auto& gen = std::get<GenerationResult>(results[i]);
      const auto& t = pending[i];
      out.probes.push_back({t.object_id, t.view_id, t.question_id, t.prompt_text, t.mode, gen.candidates, gen.backend_id});
    }
    std::sort(out.probes.begin(), out.probes.end(), [](const ProbeRecord& a, const ProbeRecord& b) {
      return std::tie(a.object_id, a.mode, a.view_id, a.question_id) < std::tie(b.object_id, b.mode, b.view_id, b.question_id);
    });
    for (const auto& obj : objects) {
      std::vector<ProbeRecord> mine;
      for (const auto& r : out.probes) {
        if (r.object_id == obj.object_id) mine.push_back(r);
      }
      if (mine.empty()) continue;
      const Mode primary = stage.modes.count(Mode::kVlm) ? Mode::kVlm : Mode::kLlm;
      try {
        ProbeFilter f;
        f.mode = primary;
        auto d = aggregate(mine, f, ruleset, options.agg_mode, stage.property);
        store.put(d);
        out.aggregates.push_back(std::move(d));
        if (primary == Mode::kVlm && stage.modes.count(Mode::kLlm)) {
          f.mode = Mode::kLlm;
          auto dl = aggregate(mine, f, ruleset, options.agg_mode, llm_property(stage.property));
          store.put(dl);
          out.aggregates.push_back(std::move(dl));
        }
      } catch (const Error& e) {
        throw fail(e);
      }
    }
    result.trace.insert(result.trace.end(), pending.begin(), pending.end());
    result.stages.push_back(std::move(out));
  }
  return result;
}

}  // namespace probeagg
