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
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "probeagg/canonicalize.hpp"
#include "probeagg/core.hpp"
#include "probeagg/error.hpp"
#include "probeagg/providers.hpp"

namespace probeagg {

enum class MatchKind { kCanonicalEqual, kSubstring, kExact };

inline std::string_view match_kind_name(MatchKind k) {
  switch (k) {
    case MatchKind::kCanonicalEqual: return "canonical_equal";
    case MatchKind::kSubstring: return "substring";
    case MatchKind::kExact: return "exact";
  }
  return "?";
}

// Decides whether a distribution entry counts as the ground-truth label.
struct Matcher {
  MatchKind kind = MatchKind::kCanonicalEqual;
  CanonRuleset label_ruleset = builtin_rulesets::lvis_label();
  CanonRuleset response_ruleset = builtin_rulesets::identity();

  bool matches(const std::string& response, const std::string& label) const {
    if (kind == MatchKind::kExact) return response == label;
    std::string r = canonicalize(response, response_ruleset);
    std::string l = canonicalize(label, label_ruleset);
    if (kind == MatchKind::kCanonicalEqual) return r == l;
    return !l.empty() && r.find(l) != std::string::npos;
  }

  std::string describe() const {
    return std::string(match_kind_name(kind)) + ":label=" + label_ruleset.name + ",response=" +
           response_ruleset.name;
  }
};

// "substring", "canonical_equal:label=lvis-label,response=basic", "exact".
inline Matcher parse_matcher(std::string_view spec) {
  Matcher m;
  std::string s(spec);
  auto colon = s.find(':');
  std::string kind = s.substr(0, colon);
  if (kind == "canonical_equal") {
    m.kind = MatchKind::kCanonicalEqual;
  } else if (kind == "substring") {
    m.kind = MatchKind::kSubstring;
  } else if (kind == "exact") {
    m.kind = MatchKind::kExact;
  } else {
    throw Error(Errc::kInvalidArgument, "unknown matcher kind '" + kind + "'");
  }
  if (colon == std::string::npos) return m;
  std::string rest = s.substr(colon + 1);
  std::size_t start = 0;
  while (start <= rest.size()) {
    auto comma = rest.find(',', start);
    std::string opt = rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    auto eq = opt.find('=');
    if (eq == std::string::npos) throw Error(Errc::kInvalidArgument, "matcher option '" + opt + "' lacks '='");
    std::string key = opt.substr(0, eq), value = opt.substr(eq + 1);
    if (key == "label") {
      m.label_ruleset = load_ruleset(value);
    } else if (key == "response") {
      m.response_ruleset = load_ruleset(value);
    } else {
      throw Error(Errc::kInvalidArgument, "unknown matcher option '" + key + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return m;
}

inline constexpr std::size_t kTopInfinity = std::numeric_limits<std::size_t>::max();

inline bool top_k_hit(const AggregateDistribution& dist, const std::string& label, std::size_t k,
                      const Matcher& matcher) {
  if (k == 0) throw Error(Errc::kInvalidArgument, "k must be positive");
  const std::size_t n = std::min(k, dist.entries.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (matcher.matches(dist.entries[i].canonical, label)) return true;
  }
  return false;
}

// Probability mass on entries matching `label`. Substring matchers can match
// several entries; their mass is summed unless `best_only` is set.
inline double soft_accuracy(const AggregateDistribution& dist, const std::string& label, const Matcher& matcher,
                            bool best_only = false) {
  double total = 0.0;
  for (const auto& e : dist.entries) {
    if (!matcher.matches(e.canonical, label)) continue;
    if (best_only) return e.prob;
    total += e.prob;
  }
  return std::min(total, 1.0);
}

inline double embedding_similarity(const std::string& a, const std::string& b, const EmbeddingProvider& embedder) {
  EmbeddingResult ea = embedder.embed(a);
  EmbeddingResult eb = embedder.embed(b);
  if (ea.vector.size() != eb.vector.size()) {
    throw Error(Errc::kEmbedderFailure, "embedding dimensions differ: " + std::to_string(ea.vector.size()) +
                                            " vs " + std::to_string(eb.vector.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < ea.vector.size(); ++i) {
    if (!std::isfinite(ea.vector[i]) || !std::isfinite(eb.vector[i])) {
      throw Error(Errc::kEmbedderFailure, "non-finite embedding component");
    }
    dot += ea.vector[i] * eb.vector[i];
    na += ea.vector[i] * ea.vector[i];
    nb += eb.vector[i] * eb.vector[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) throw Error(Errc::kZeroVector, "zero-norm embedding for '" + (na < 1e-12 ? a : b) + "'");
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

namespace metrics_detail {

inline std::map<std::string, double> aligned_mass(const AggregateDistribution& d, const CanonRuleset& rs) {
  std::map<std::string, double> out;
  for (const auto& e : d.entries) out[canonicalize(e.canonical, rs)] += e.prob;
  return out;
}

}  // namespace metrics_detail

// Hellinger distance over the union of supports after re-canonicalizing both
// sides with `align_ruleset`. Missing mass counts as zero.
inline double hellinger(const AggregateDistribution& p, const AggregateDistribution& q,
                        const CanonRuleset& align_ruleset = builtin_rulesets::identity()) {
  auto pm = metrics_detail::aligned_mass(p, align_ruleset);
  auto qm = metrics_detail::aligned_mass(q, align_ruleset);
  // Walk the union in key order so h(p, q) and h(q, p) add the same terms in
  // the same order.
  double sum = 0.0;
  auto a = pm.begin(), b = qm.begin();
  while (a != pm.end() || b != qm.end()) {
    double x = 0.0, y = 0.0;
    if (b == qm.end() || (a != pm.end() && a->first < b->first)) {
      x = (a++)->second;
    } else if (a == pm.end() || b->first < a->first) {
      y = (b++)->second;
    } else {
      x = (a++)->second;
      y = (b++)->second;
    }
    const double d = std::sqrt(x) - std::sqrt(y);
    sum += d * d;
  }
  return std::clamp(std::sqrt(0.5 * sum), 0.0, 1.0);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

// Population mean and standard deviation, accumulated in input order.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  out.n = xs.size();
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return out;
}

struct DivergenceRow {
  std::string question_id;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

struct DivergenceReport {
  std::vector<DivergenceRow> rows;
};

struct DivergencePair {
  std::string object_id;
  std::string question_id;
  AggregateDistribution vlm;
  AggregateDistribution llm;
};

// Groups per-pair distances by question; rows ordered by question_id.
inline DivergenceReport divergence_report_from_distances(
    const std::map<std::string, std::vector<double>>& distances_by_question) {
  DivergenceReport report;
  for (const auto& [qid, ds] : distances_by_question) {
    if (ds.empty()) continue;
    auto ms = mean_std(ds);
    report.rows.push_back({qid, std::clamp(ms.mean, 0.0, 1.0), ms.std, ms.n});
  }
  return report;
}

inline DivergenceReport divergence_report(const std::vector<DivergencePair>& pairs,
                                          const CanonRuleset& align_ruleset = builtin_rulesets::identity()) {
  std::map<std::string, std::vector<double>> by_q;
  for (const auto& p : pairs) by_q[p.question_id].push_back(hellinger(p.vlm, p.llm, align_ruleset));
  return divergence_report_from_distances(by_q);
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double pearson_r = 0.0;
  std::size_t n = 0;
};

struct FitPoint {
  double distance = 0.0;
  double accuracy = 0.0;
};

// Ordinary least squares accuracy ~ distance, plus Pearson's r.
inline LinearFit accuracy_divergence_fit(const std::vector<FitPoint>& points) {
  if (points.size() < 2) throw Error(Errc::kDegenerateInput, "need at least two points");
  const double n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : points) {
    mx += p.distance;
    my += p.accuracy;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : points) {
    const double dx = p.distance - mx, dy = p.accuracy - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw Error(Errc::kDegenerateInput, "all distances are equal");
  LinearFit fit;
  fit.n = points.size();
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.pearson_r = syy == 0.0 ? 0.0 : std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return fit;
}

// Number of maximal runs of non-whitespace characters.
inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    if (canon_detail::is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

// Summary length relative to the longest single-view caption it summarizes.
inline double blow_up_ratio(const std::string& summary, const std::vector<std::string>& per_view_captions) {
  std::size_t longest = 0;
  for (const auto& c : per_view_captions) longest = std::max(longest, word_count(c));
  if (longest == 0) throw Error(Errc::kAllCaptionsEmpty, "every per-view caption is empty");
  return static_cast<double>(word_count(summary)) / static_cast<double>(longest);
}

struct KeywordRule {
  std::string name;
  std::vector<std::string> keywords;
  bool case_sensitive = false;
  std::vector<std::string> exclusions;

  bool operator==(const KeywordRule&) const = default;
};

struct KeywordRuleResult {
  std::string name;
  std::size_t count = 0;
  double fraction = 0.0;
};

struct KeywordAudit {
  std::size_t corpus_size = 0;
  std::size_t missing = 0;
  double missing_fraction = 0.0;
  std::vector<KeywordRuleResult> rules;
};

inline bool keyword_rule_matches(const KeywordRule& rule, const std::string& caption) {
  auto fold = [&](const std::string& s) { return rule.case_sensitive ? s : utf8::lowercase(s); };
  const std::string text = fold(caption);
  for (const auto& ex : rule.exclusions) {
    if (!ex.empty() && text.find(fold(ex)) != std::string::npos) return false;
  }
  for (const auto& kw : rule.keywords) {
    if (!kw.empty() && text.find(fold(kw)) != std::string::npos) return true;
  }
  return false;
}

// Fraction of the corpus whose caption hits each rule. Missing or blank
// captions count toward the total but never match. `total` overrides the
// denominator (e.g. the size of the full dataset the captions came from).
inline KeywordAudit keyword_audit(const std::map<std::string, std::optional<std::string>>& captions,
                                  const std::vector<KeywordRule>& rules,
                                  std::optional<std::size_t> total = std::nullopt) {
  const std::size_t n = total.value_or(captions.size());
  if (n == 0) throw Error(Errc::kInvalidArgument, "keyword audit needs a non-empty corpus");
  if (n < captions.size()) throw Error(Errc::kInvalidArgument, "total is smaller than the caption corpus");
  KeywordAudit audit;
  audit.corpus_size = n;
  for (const auto& [id, c] : captions) {
    if (!c || detail::is_blank(*c)) ++audit.missing;
  }
  audit.missing += n - captions.size();
  audit.missing_fraction = static_cast<double>(audit.missing) / static_cast<double>(n);
  for (const auto& rule : rules) {
    KeywordRuleResult r{rule.name, 0, 0.0};
    for (const auto& [id, c] : captions) {
      if (c && keyword_rule_matches(rule, *c)) ++r.count;
    }
    r.fraction = static_cast<double>(r.count) / static_cast<double>(n);
    audit.rules.push_back(std::move(r));
  }
  return audit;
}

// Uploader tags as a uniform distribution; tag order is kept as the rank.
inline AggregateDistribution tags_to_distribution(const std::vector<std::string>& tags,
                                                  const CanonRuleset& ruleset = builtin_rulesets::basic(),
                                                  const std::string& object_id = "",
                                                  const std::string& property = "type") {
  std::vector<std::string> distinct;
  for (const auto& t : tags) {
    std::string c = canonicalize(t, ruleset);
    if (c.empty() || std::find(distinct.begin(), distinct.end(), c) != distinct.end()) continue;
    distinct.push_back(std::move(c));
  }
  if (distinct.empty()) throw Error(Errc::kEmptyTagList, "no usable tags for '" + object_id + "'");
  AggregateDistribution dist;
  dist.object_id = object_id;
  dist.property = property;
  dist.tie_order = TieOrder::kGiven;
  const double p = 1.0 / static_cast<double>(distinct.size());
  const double s = -std::log(static_cast<double>(distinct.size()));
  for (auto& c : distinct) dist.entries.push_back({std::move(c), s, p, {}});
  return dist;
}

struct ObjectScores {
  bool top1 = false;
  bool top5 = false;
  bool topk = false;
  bool top_inf = false;
  double soft = 0.0;
  std::optional<double> similarity;
};

struct EvalSummary {
  MeanStd top1, top5, topk, top_inf, soft;
  std::optional<MeanStd> similarity;
};

struct EvalResult {
  std::string matcher;
  std::size_t k = 3;
  std::map<std::string, ObjectScores> per_object;
  EvalSummary summary;
};

// Recomputes the summary from per-object scores (object_id order).
inline EvalSummary summarize(const std::map<std::string, ObjectScores>& per_object) {
  std::vector<double> t1, t5, tk, ti, soft, sim;
  for (const auto& [id, s] : per_object) {
    t1.push_back(s.top1);
    t5.push_back(s.top5);
    tk.push_back(s.topk);
    ti.push_back(s.top_inf);
    soft.push_back(s.soft);
    if (s.similarity) sim.push_back(*s.similarity);
  }
  EvalSummary out{mean_std(t1), mean_std(t5), mean_std(tk), mean_std(ti), mean_std(soft), std::nullopt};
  if (!sim.empty()) out.similarity = mean_std(sim);
  return out;
}

// Scores every object that has both a distribution and a label.
inline EvalResult evaluate(const std::vector<AggregateDistribution>& dists,
                           const std::map<std::string, std::string>& labels, const Matcher& matcher, std::size_t k,
                           const EmbeddingProvider* embedder = nullptr) {
  EvalResult result;
  result.matcher = matcher.describe();
  result.k = k;
  for (const auto& d : dists) {
    auto it = labels.find(d.object_id);
    if (it == labels.end()) continue;
    const std::string& label = it->second;
    ObjectScores s;
    s.top1 = top_k_hit(d, label, 1, matcher);
    s.top5 = top_k_hit(d, label, 5, matcher);
    s.topk = top_k_hit(d, label, k, matcher);
    s.top_inf = top_k_hit(d, label, kTopInfinity, matcher);
    s.soft = soft_accuracy(d, label, matcher);
    if (embedder && d.top()) {
      s.similarity = embedding_similarity(d.top()->canonical, canonicalize(label, matcher.label_ruleset), *embedder);
    }
    result.per_object.insert_or_assign(d.object_id, s);
  }
  result.summary = summarize(result.per_object);
  return result;
}

}  // namespace probeagg
