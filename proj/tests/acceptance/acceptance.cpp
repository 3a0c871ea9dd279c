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

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracle/oracle.hpp"
#include "probeagg/aggregate.hpp"
#include "probeagg/curation.hpp"
#include "probeagg/metrics.hpp"
#include "probeagg/pipeline.hpp"
#include "probeagg/probes.hpp"
#include "support/gen.hpp"
#include "support/tempdir.hpp"

namespace {

using namespace probeagg;
using Clock = std::chrono::steady_clock;

// Collects the first few failures of one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) detail_ += (detail_.empty() ? "" : "; ") + what;
  }
  bool ok() const { return failures_ == 0; }
  std::string summary() const {
    if (ok()) return std::to_string(checks_) + " checks";
    return std::to_string(failures_) + "/" + std::to_string(checks_) + " failed: " + detail_;
  }
  void note(const std::string& s) { notes_ += " " + s; }
  const std::string& notes() const { return notes_; }

 private:
  std::size_t checks_ = 0, failures_ = 0;
  std::string detail_, notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

AggregateDistribution run(const std::vector<ProbeRecord>& recs, AggMode mode = AggMode::kLse) {
  static const CanonRuleset rs = builtin_rulesets::vqa_first_term();
  return aggregate(recs, ProbeFilter{}, rs, mode, "type");
}

std::map<std::string, double> scores_of(const AggregateDistribution& d) {
  std::map<std::string, double> m;
  for (const auto& e : d.entries) m[e.canonical] = e.agg_score;
  return m;
}

// Number of queries in which each canonical appears.
std::map<std::string, int> support_counts(const std::vector<oracle::Query>& qs) {
  std::map<std::string, int> n;
  for (const auto& q : qs) {
    std::set<std::string> seen;
    for (const auto& [c, s] : q) seen.insert(c);
    for (const auto& c : seen) ++n[c];
  }
  return n;
}

void oracle_equivalence(Check& c) {
  gen::Rng rng(1);
  std::vector<gen::Instance> instances;
  for (int i = 0; i < 1000; ++i) instances.push_back(gen::aggregation_instance(rng));
  const auto t0 = Clock::now();
  std::vector<AggregateDistribution> got;
  for (const auto& inst : instances) got.push_back(run(inst.records));
  const double pipeline_s = seconds_since(t0);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto want = oracle::probs(instances[i].queries);
    c.expect(want.size() == got[i].entries.size(), "support size differs on instance " + std::to_string(i));
    for (const auto& e : got[i].entries) {
      auto it = want.find(e.canonical);
      if (it == want.end()) {
        c.expect(false, "unexpected canonical " + e.canonical);
        continue;
      }
      const double err = std::abs(e.prob - static_cast<double>(it->second));
      worst = std::max(worst, err);
      c.expect(err <= 1e-9, "instance " + std::to_string(i) + " " + e.canonical + " off by " + fmt("%.3g", err));
    }
  }
  const double total_s = seconds_since(t0);
  c.expect(total_s < 5.0, "runtime " + fmt("%.2f", total_s) + " s");
  c.note("max |err| " + fmt("%.2g", worst) + ", pipeline " + fmt("%.3f", pipeline_s) + " s, with oracle " +
         fmt("%.2f", total_s) + " s");
}

void lse_dominance(Check& c) {
  gen::Rng rng(2);
  std::size_t equal_cases = 0;
  for (int it = 0; it < 1000; ++it) {
    auto inst = gen::aggregation_instance(rng);
    const auto lse = scores_of(run(inst.records, AggMode::kLse));
    const auto mx = scores_of(run(inst.records, AggMode::kMax));
    const auto support = support_counts(inst.queries);
    const std::string tag = "instance " + std::to_string(it);
    for (const auto& [canon, s] : lse) {
      if (support.at(canon) == 1) {
        // Single supporting query: log-sum-exp collapses to that query's score.
        ++equal_cases;
        c.expect(s == mx.at(canon), tag + " " + canon + " lse != max with one query");
      } else {
        c.expect(s > mx.at(canon), tag + " " + canon + " lse not above max");
      }
      c.expect(s <= mx.at(canon) + std::log(static_cast<double>(support.at(canon))) + 1e-12,
               tag + " " + canon + " lse above max + log n");
    }
    // Monotonicity: one more supporting query strictly raises that score and
    // leaves the others alone.
    const std::string target = lse.begin()->first;
    auto recs = inst.records;
    ProbeRecord extra = recs.front();
    extra.question_id = "extra";
    extra.responses = {{target, rng.real_in(-20.0, 0.0)}};
    recs.push_back(extra);
    const auto after = scores_of(run(recs));
    for (const auto& [canon, s] : lse) {
      if (canon == target) {
        c.expect(after.at(canon) > s, tag + " adding support did not raise " + canon);
      } else {
        c.expect(after.at(canon) == s, tag + " adding support moved " + canon);
      }
    }
  }
  c.note(std::to_string(equal_cases) + " single-query equality cases");
}

void softmax_normalization(Check& c) {
  gen::Rng rng(3);
  double worst_sum = 0.0, worst_shift = 0.0;
  for (int it = 0; it < 1000; ++it) {
    auto inst = gen::aggregation_instance(rng);
    for (AggMode mode : {AggMode::kLse, AggMode::kMax}) {
      const auto d = run(inst.records, mode);
      double sum = 0.0;
      for (const auto& e : d.entries) sum += e.prob;
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      c.expect(std::abs(sum - 1.0) <= 1e-9, "instance " + std::to_string(it) + " sums to " + fmt("%.17g", sum));
    }
    // Softmax itself is shift invariant.
    const auto scores = scores_of(run(inst.records));
    const double delta = rng.real_in(-100.0, 100.0);
    std::map<std::string, double> shifted;
    for (const auto& [k, v] : scores) shifted[k] = v + delta;
    const auto a = gen::as_map(to_distribution(scores, "o", "type"));
    const auto b = gen::as_map(to_distribution(shifted, "o", "type"));
    for (const auto& [k, p] : a) {
      worst_shift = std::max(worst_shift, std::abs(p - b.at(k)));
      c.expect(std::abs(p - b.at(k)) <= 1e-12, "instance " + std::to_string(it) + " shift moved " + k);
    }
  }
  c.note("max |sum-1| " + fmt("%.2g", worst_sum) + ", max shift drift " + fmt("%.2g", worst_shift));
}

void offset_stability(Check& c) {
  gen::Rng rng(4);
  double worst = 0.0;
  for (int it = 0; it < 1000; ++it) {
    auto inst = gen::aggregation_instance(rng);
    auto offset = inst.records;
    for (auto& r : offset) {
      for (auto& x : r.responses) x.score -= 1e4;
    }
    const auto a = gen::as_map(run(inst.records));
    const auto b = run(offset);
    c.expect(check_distribution(b, 1e-9), "instance " + std::to_string(it) + " offset run not normalized");
    for (const auto& e : b.entries) {
      const double err = std::abs(e.prob - a.at(e.canonical));
      worst = std::max(worst, err);
      c.expect(std::isfinite(e.prob) && err <= 1e-9, "instance " + std::to_string(it) + " " + e.canonical);
    }
  }
  c.note("max |err| " + fmt("%.2g", worst));
}

void hellinger_suite(Check& c) {
  gen::Rng rng(5);
  for (int it = 0; it < 1000; ++it) {
    const auto p = gen::distribution(rng), q = gen::distribution(rng), r = gen::distribution(rng);
    const std::string tag = "triple " + std::to_string(it);
    const double pq = hellinger(p, q), qp = hellinger(q, p);
    c.expect(std::abs(pq - qp) <= 1e-9, tag + " asymmetric");
    c.expect(pq >= 0.0 && pq <= 1.0, tag + " out of range");
    c.expect(hellinger(p, p) == 0.0, tag + " h(p,p) != 0");
    c.expect((pq == 0.0) == (gen::as_map(p) == gen::as_map(q)), tag + " zero iff equal");
    c.expect(pq <= hellinger(p, r) + hellinger(r, q) + 1e-9, tag + " triangle");
    c.expect(std::abs(pq - static_cast<double>(oracle::hellinger(gen::as_map(p), gen::as_map(q)))) <= 1e-9,
             tag + " differs from oracle");
  }
  AggregateDistribution a{"o", "p", {{"a", 0.0, 1.0, {}}}};
  AggregateDistribution b{"o", "p", {{"a", 0.0, 0.5, {}}, {"b", 0.0, 0.5, {}}}};
  const double h = hellinger(a, b);
  c.expect(std::abs(h - 0.541196) <= 1e-6, "worked value " + fmt("%.9f", h));
  c.note("worked value " + fmt("%.6f", h));
}

std::string golden_dir() { return std::string(PROBEAGG_TEST_DATA) + "/golden/"; }

void golden_end_to_end(Check& c) {
  testing_support::TempDir dir;
  const auto t0 = Clock::now();
  std::ostringstream sink;
  Console quiet{sink, sink};
  std::vector<std::string> eval_tables;
  for (int run = 0; run < 2; ++run) {
    ProbeArgs p;
    p.manifest = golden_dir() + "manifest.jsonl";
    p.templates = golden_dir() + "templates.jsonl";
    p.backend = "replay:" + golden_dir() + "replay.jsonl";
    p.out = dir.file("probes.jsonl");
    c.expect(cmd_probe(p, quiet) == kExitOk, "probe failed");
    AggregateArgs ag;
    ag.probes = p.out;
    ag.out = dir.file("aggregates.jsonl");
    c.expect(cmd_aggregate(ag, quiet) == kExitOk, "aggregate failed");
    EvalArgs ev;
    ev.aggregates = ag.out;
    ev.labels = golden_dir() + "labels.jsonl";
    ev.out = dir.file("eval.json");
    std::ostringstream table;
    c.expect(cmd_eval(ev, Console{table, sink}) == kExitOk, "eval failed");
    for (const char* f : {"probes.jsonl", "aggregates.jsonl", "eval.json"}) {
      c.expect(testing_support::slurp(dir.file(f)) == testing_support::slurp(golden_dir() + "expected/" + f),
               std::string(f) + " differs from the committed file on run " + std::to_string(run + 1));
    }
    eval_tables.push_back(table.str());
  }
  c.expect(eval_tables[0] == eval_tables[1], "eval tables differ between runs");
  c.expect(eval_tables[0] == testing_support::slurp(golden_dir() + "expected/eval.txt"), "eval table differs");
  const double s = seconds_since(t0);
  c.expect(s < 10.0, "runtime " + fmt("%.2f", s) + " s");

  // The committed aggregates are themselves checked against the oracle.
  const auto probes = read_items<ProbeRecord>(golden_dir() + "expected/probes.jsonl");
  const auto canon = builtin_rulesets::vqa_first_term();
  std::map<std::string, std::vector<oracle::Query>> queries;
  for (const auto& r : probes) {
    oracle::Query q;
    for (const auto& x : r.responses) q.emplace_back(canonicalize(x.text, canon), x.score);
    queries[r.object_id].push_back(q);
  }
  for (const auto& d : read_items<AggregateDistribution>(golden_dir() + "expected/aggregates.jsonl")) {
    const auto want = oracle::probs(queries.at(d.object_id));
    for (const auto& e : d.entries) {
      c.expect(std::abs(e.prob - static_cast<double>(want.at(e.canonical))) <= 1e-9, d.object_id + " " + e.canonical);
    }
  }
  c.note("2 runs in " + fmt("%.2f", s) + " s");
}

std::string words_of(int n, const std::string& stem) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(i);
  return s;
}

void blow_up_audit(Check& c) {
  // Summaries chosen from the object's own per-view captions. The ratio can
  // never exceed 1.0 and equals 1.0 exactly when the chosen caption is a
  // longest one, which is what a summary-by-selection pipeline produces when
  // it keeps the most detailed view.
  gen::Rng rng(6);
  std::vector<CaptionRecord> summaries, views;
  std::size_t at_one = 0;
  std::map<std::string, bool> chosen_longest;
  for (int o = 0; o < 200; ++o) {
    const std::string id = "obj" + std::to_string(o);
    std::vector<std::string> caps;
    for (int v = 0; v < 8; ++v) {
      caps.push_back(words_of(rng.int_in(1, 12), "w"));
      views.push_back({id, v, caps.back()});
    }
    std::size_t longest = 0;
    for (const auto& cap : caps) longest = std::max(longest, word_count(cap));
    const std::string pick = rng.pick(caps);
    chosen_longest[id] = word_count(pick) == longest;
    summaries.push_back({id, std::nullopt, pick});
  }
  const auto result = audit(summaries, views, {});
  for (const auto& row : result.blow_up) {
    c.expect(row.ratio <= 1.0, row.object_id + " ratio above 1");
    c.expect((row.ratio == 1.0) == chosen_longest.at(row.object_id), row.object_id + " ratio " + fmt("%.17g", row.ratio));
    at_one += row.ratio == 1.0;
  }
  // The same corpus with every summary set to the longest view caption.
  std::vector<CaptionRecord> longest_summaries;
  std::map<std::string, std::string> best;
  for (const auto& v : views) {
    if (word_count(*v.text) > word_count(best[v.object_id])) best[v.object_id] = *v.text;
  }
  for (const auto& [id, text] : best) longest_summaries.push_back({id, std::nullopt, text});
  for (const auto& row : audit(longest_summaries, views, {}).blow_up) {
    c.expect(row.ratio == 1.0, row.object_id + " selection pipeline ratio " + fmt("%.17g", row.ratio));
  }

  // Constructed hallucination case: 56-word summary over 10-word views.
  std::vector<CaptionRecord> s2{{"big", std::nullopt, words_of(56, "x")}, {"fine", std::nullopt, words_of(4, "y")}};
  std::vector<CaptionRecord> v2{{"big", 0, words_of(10, "x")}, {"big", 1, words_of(7, "z")}, {"fine", 0, words_of(4, "y")}};
  const auto r2 = audit(s2, v2, {});
  c.expect(r2.blow_up.front().object_id == "big", "5.6 case not ranked first");
  c.expect(r2.blow_up.front().ratio == 5.6, "constructed ratio " + fmt("%.17g", r2.blow_up.front().ratio));
  c.note(std::to_string(at_one) + "/200 random picks were a longest caption");
}

void chaining_contract(Check& c) {
  ChainStage type{"type", {{"t", "What is this?", std::nullopt, std::nullopt}}, {Mode::kVlm}, {}};
  ChainStage material{"material", {{"m", "What is {a}/this {T} made of?", std::nullopt, std::nullopt}},
                      {Mode::kVlm}, {{"T", ModeOfDistribution{"type"}}}};
  ChainStage fragility{"fragility",
                       {{"f1", "Is {a}/this {M} {T} fragile?", std::nullopt, std::nullopt},
                        {"f2", "Can a human lift {a}/this {T} made of {M}?", std::nullopt, std::nullopt}},
                       {Mode::kVlm, Mode::kLlm},
                       {{"T", ModeOfDistribution{"type"}}, {"M", ModeOfDistribution{"material"}}}};
  std::vector<ChainObject> objects;
  for (int o = 0; o < 12; ++o) {
    std::vector<std::string> refs;
    for (int v = 0; v < 4; ++v) refs.push_back("obj" + std::to_string(o) + "/view" + std::to_string(v) + ".png");
    objects.push_back({"obj" + std::to_string(o), refs});
  }
  StubProvider stub(42);
  AggregateStore store;
  const auto result = chain(objects, {fragility, material, type}, stub, store);
  std::map<std::pair<std::string, std::string>, std::set<std::string>> vlm_prompts, llm_prompts;
  std::size_t stage3 = 0;
  for (const auto& t : result.trace) {
    if (t.stage != "fragility") continue;
    ++stage3;
    const std::string T = store.find(t.object_id, "type")->top()->canonical;
    const std::string M = store.find(t.object_id, "material")->top()->canonical;
    c.expect(t.prompt_text.find(T) != std::string::npos && t.prompt_text.find(M) != std::string::npos,
             "prompt lacks slot values: " + t.prompt_text);
    (t.mode == Mode::kVlm ? vlm_prompts : llm_prompts)[{t.object_id, t.question_id}].insert(t.prompt_text);
  }
  c.expect(stage3 == 12u * 2u * (4u + 1u), "stage 3 probe count " + std::to_string(stage3));
  for (const auto& [key, vset] : vlm_prompts) {
    c.expect(vset.size() == 1 && llm_prompts[key].size() == 1, key.first + "/" + key.second + " prompt sets");
    const std::string& v = *vset.begin();
    const std::string& l = *llm_prompts[key].begin();
    // Strip the common prefix and suffix; what remains must be the
    // determiner pair this / a|an.
    std::size_t pre = 0;
    while (pre < v.size() && pre < l.size() && v[pre] == l[pre]) ++pre;
    while (pre > 0 && v[pre - 1] != ' ') --pre;
    std::size_t suf = 0;
    while (suf < v.size() - pre && suf < l.size() - pre && v[v.size() - 1 - suf] == l[l.size() - 1 - suf]) ++suf;
    const std::string dv = v.substr(pre, v.size() - pre - suf), dl = l.substr(pre, l.size() - pre - suf);
    c.expect(dv == "this" && (dl == "a" || dl == "an"), "'" + v + "' vs '" + l + "'");
  }
  c.note(std::to_string(stage3) + " stage-3 probes");
}

void metrics_oracle(Check& c) {
  gen::Rng rng(7);
  const auto& vocab = gen::words();
  std::vector<AggregateDistribution> dists;
  std::map<std::string, std::string> labels;
  for (int o = 0; o < 20; ++o) {
    auto inst = gen::aggregation_instance(rng, 8, 5);
    for (auto& r : inst.records) r.object_id = "obj" + std::to_string(o);
    dists.push_back(run(inst.records));
    // Half the labels come from the support so ranks beyond 1 are exercised.
    const auto& entries = dists.back().entries;
    labels[dists.back().object_id] =
        rng.coin() ? entries[static_cast<std::size_t>(rng.int_in(0, static_cast<int>(entries.size()) - 1))].canonical
                   : rng.pick(vocab);
  }
  std::map<std::string, std::vector<double>> table;
  for (const auto& w : vocab) {
    std::vector<double> v(6);
    for (auto& x : v) x = rng.real_in(-1.0, 1.0);
    table[w] = v;
  }
  FixtureEmbedder embedder(table);
  const Matcher matcher = parse_matcher("canonical_equal");
  const std::size_t k = 3;
  const auto result = evaluate(dists, labels, matcher, k, &embedder);
  c.expect(result.per_object.size() == 20, "object count");
  for (const auto& d : dists) {
    const std::string& label = labels.at(d.object_id);
    // Rank of the label: how many entries beat it under (prob desc, name asc).
    std::optional<std::size_t> rank;
    double soft = 0.0;
    for (const auto& e : d.entries) {
      if (e.canonical != label) continue;
      std::size_t better = 0;
      for (const auto& f : d.entries) {
        better += f.prob > e.prob || (f.prob == e.prob && f.canonical < e.canonical);
      }
      rank = better;
      soft = e.prob;
    }
    const auto& got = result.per_object.at(d.object_id);
    const std::string& id = d.object_id;
    c.expect(got.top1 == (rank && *rank < 1), id + " top1");
    c.expect(got.top5 == (rank && *rank < 5), id + " top5");
    c.expect(got.topk == (rank && *rank < k), id + " topk");
    c.expect(got.top_inf == rank.has_value(), id + " top-inf");
    c.expect(got.soft == soft, id + " soft");
    c.expect(got.top_inf == (got.soft > 0.0), id + " top-inf iff soft > 0");
    // Cosine by brute force over the fixture vectors.
    std::string best;
    double best_p = -1.0;
    for (const auto& e : d.entries) {
      if (e.prob > best_p || (e.prob == best_p && e.canonical < best)) {
        best = e.canonical;
        best_p = e.prob;
      }
    }
    const auto& a = table.at(best);
    const auto& b = table.at(label);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    const double cosine = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    c.expect(got.similarity && *got.similarity == cosine, id + " similarity");
  }
  std::size_t hits = 0;
  for (const auto& [id, s] : result.per_object) hits += s.top_inf;
  c.note(std::to_string(hits) + "/20 objects with the label in support");
}

void ols_fit(Check& c) {
  gen::Rng rng(8);
  for (int it = 0; it < 100; ++it) {
    std::vector<FitPoint> pts;
    std::vector<std::pair<double, double>> raw;
    const int n = rng.int_in(2, 60);
    for (int i = 0; i < n; ++i) {
      pts.push_back({rng.real_in(0.0, 1.0), rng.real_in(0.0, 1.0)});
      raw.emplace_back(pts.back().distance, pts.back().accuracy);
    }
    const auto fit = accuracy_divergence_fit(pts);
    const auto want = oracle::ols(raw);
    const std::string tag = "set " + std::to_string(it);
    c.expect(std::abs(fit.slope - static_cast<double>(want.slope)) <= 1e-9, tag + " slope");
    c.expect(std::abs(fit.intercept - static_cast<double>(want.intercept)) <= 1e-9, tag + " intercept");
    c.expect(std::abs(fit.pearson_r - static_cast<double>(want.r)) <= 1e-9, tag + " r");
  }
  const auto f = accuracy_divergence_fit({{0, 0}, {1, 1}, {2, 1}});
  c.expect(std::abs(f.slope - 0.5) <= 1e-12, "slope " + fmt("%.17g", f.slope));
  c.expect(std::abs(f.intercept - 1.0 / 6.0) <= 1e-12, "intercept " + fmt("%.17g", f.intercept));
  c.expect(std::abs(f.pearson_r - std::sqrt(3.0) / 2.0) <= 1e-12, "r " + fmt("%.17g", f.pearson_r));
  c.note("3-point case slope " + fmt("%.4f", f.slope) + ", r " + fmt("%.4f", f.pearson_r));
}

void curation_determinism(Check& c) {
  testing_support::TempDir dir;
  // 30 objects with two candidate materials each; obj00 and obj01 carry
  // labels that the merge map folds together.
  const std::vector<std::string> materials = {"wood", "stone", "glass", "plastic", "fabric", "paper", "ceramic"};
  std::vector<CurationCandidate> cands;
  for (int o = 0; o < 30; ++o) {
    const std::string id = "obj" + std::string(o < 10 ? "0" : "") + std::to_string(o);
    std::pair<std::string, std::string> pair{materials[o % 7], materials[(o + 3) % 7]};
    if (o == 0) pair = {"metal", "metallic"};
    if (o == 1) pair = {"timber", "wood"};
    cands.push_back({id, pair.first, "material", {id + "/view0.png"}});
    cands.push_back({id, pair.second, "material", {id + "/view0.png"}});
  }
  const MergeMap merges{{"metallic", "metal"}, {"timber", "wood"}};
  std::int64_t tick = 1767225600;  // 2026-01-01T00:00:00Z
  auto clock = [&tick] { return Timestamp(std::chrono::seconds(tick++)); };
  const std::string log_path = dir.file("decisions.jsonl");
  CurationService svc(cands, log_path, {}, merges, clock);

  auto check_counts = [&](const CurationService& s, const std::string& when) {
    const auto n = s.counts();
    c.expect(n.pending + n.accepted + n.rejected == n.total && n.total == cands.size(), "counts " + when);
  };
  check_counts(svc, "at start");
  gen::Rng rng(9);
  std::vector<std::pair<std::string, std::string>> accepted;
  std::size_t appended = 0;
  // 45 first decisions: one accept per object at most, except the merge
  // objects whose two labels agree after merging.
  for (int i = 0; i < 45; ++i) {
    const auto& cand = cands[static_cast<std::size_t>(i)];
    const bool second = i % 2 == 1;
    const bool merge_obj = cand.object_id == "obj00" || cand.object_id == "obj01";
    const bool accept = merge_obj || !second ? rng.coin(0.7) || merge_obj : false;
    svc.decide(cand.object_id, cand.candidate_label, accept ? "accept" : "reject", "ann" + std::to_string(i % 3));
    ++appended;
    if (accept) accepted.emplace_back(cand.object_id, cand.candidate_label);
    check_counts(svc, "after decision " + std::to_string(i));
  }
  // 5 supersedes: flip earlier accepts to rejects.
  for (int i = 0; i < 5; ++i) {
    const auto& [obj, label] = accepted[static_cast<std::size_t>(i * 3 + 2)];
    svc.decide(obj, label, "reject", "reviewer");
    ++appended;
    check_counts(svc, "after supersede " + std::to_string(i));
  }
  const auto log = read_items<CurationDecision>(log_path);
  c.expect(log.size() == 50 && appended == 50, "log holds " + std::to_string(log.size()) + " decisions");

  const std::string first = dir.file("export1.json"), second = dir.file("export2.json");
  const auto ex = svc.export_labels();
  write_json_document(export_json(ex), first);
  // Fresh service over the same log, and a direct replay of the log.
  CurationService replayed(cands, log_path, {}, merges, clock);
  write_json_document(export_json(replayed.export_labels()), second);
  c.expect(testing_support::slurp(first) == testing_support::slurp(second), "exports differ");
  const auto direct = build_export(cands, log, merges);
  c.expect(direct.records == ex.records && direct.histogram == ex.histogram, "direct replay differs");
  check_counts(replayed, "after replay");
  bool merged = true;
  for (const auto& r : ex.records) merged = merged && r.label != "metallic" && r.label != "timber";
  c.expect(merged, "merged labels leaked into export");
  const auto n = replayed.counts();
  c.note(std::to_string(ex.records.size()) + " labels exported; pending " + std::to_string(n.pending) + ", accepted " +
         std::to_string(n.accepted) + ", rejected " + std::to_string(n.rejected));
}

struct Criterion {
  const char* name;
  std::function<void(Check&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"aggregation oracle equivalence", oracle_equivalence},
      {"LSE dominance and monotonicity", lse_dominance},
      {"softmax normalization", softmax_normalization},
      {"numerical stability at -1e4 offset", offset_stability},
      {"Hellinger suite", hellinger_suite},
      {"golden end-to-end", golden_end_to_end},
      {"blow-up audit", blow_up_audit},
      {"chaining contract", chaining_contract},
      {"metrics oracle", metrics_oracle},
      {"OLS fit", ols_fit},
      {"curation export determinism", curation_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      criteria[i].run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("threw: ") + e.what());
    }
    failed += !c.ok();
    std::printf("%s  %2zu %-36s %s;%s\n", c.ok() ? "PASS" : "FAIL", i + 1, criteria[i].name, c.summary().c_str(),
                c.notes().c_str());
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
