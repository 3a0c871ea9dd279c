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

#include <gtest/gtest.h>

#include <sstream>

#include "probeagg/pipeline.hpp"
#include "support/tempdir.hpp"

namespace probeagg {
namespace {

using testing_support::slurp;
using testing_support::TempDir;

const std::string kGolden = std::string(PROBEAGG_TEST_DATA) + "/golden/";

struct Captured {
  std::ostringstream out, err;
  Console io() { return Console{out, err}; }
};

class PipelineTest : public ::testing::Test {
 protected:
  ProbeArgs golden_probe() const {
    ProbeArgs a;
    a.manifest = kGolden + "manifest.jsonl";
    a.templates = kGolden + "templates.jsonl";
    a.backend = "replay:" + kGolden + "replay.jsonl";
    a.out = dir_.file("probes.jsonl");
    return a;
  }
  TempDir dir_;
};

TEST_F(PipelineTest, GoldenEndToEnd) {
  Captured c;
  ASSERT_EQ(cmd_probe(golden_probe(), c.io()), kExitOk) << c.err.str();
  EXPECT_EQ(c.out.str(), "probe: 320 records for 10 objects, 0 errors\n");

  AggregateArgs ag;
  ag.probes = dir_.file("probes.jsonl");
  ag.out = dir_.file("aggregates.jsonl");
  ASSERT_EQ(cmd_aggregate(ag, c.io()), kExitOk) << c.err.str();
  EXPECT_EQ(read_items<AggregateDistribution>(ag.out).size(), 10u);

  EvalArgs ev;
  ev.aggregates = ag.out;
  ev.labels = kGolden + "labels.jsonl";
  ev.out = dir_.file("eval.json");
  Captured e;
  ASSERT_EQ(cmd_eval(ev, e.io()), kExitOk) << e.err.str();
  const std::string table = e.out.str();
  EXPECT_NE(table.find("Top-1        0.60 ± 0.49\n"), std::string::npos) << table;
  EXPECT_NE(table.find("Top-∞        1.00 ± 0.00\n"), std::string::npos) << table;
  auto j = Json::parse(slurp(ev.out));
  EXPECT_EQ(j["kind"], "eval_result");
  EXPECT_EQ(j["per_object"].size(), 10u);
}

TEST_F(PipelineTest, GoldenOutputsAreByteIdenticalAcrossRuns) {
  std::vector<std::string> runs;
  for (int i = 0; i < 2; ++i) {
    Captured c;
    ProbeArgs p = golden_probe();
    p.max_in_flight = i == 0 ? 1 : 8;
    ASSERT_EQ(cmd_probe(p, c.io()), kExitOk);
    AggregateArgs ag;
    ag.probes = p.out;
    ag.out = dir_.file("aggregates.jsonl");
    ASSERT_EQ(cmd_aggregate(ag, c.io()), kExitOk);
    runs.push_back(slurp(p.out) + slurp(ag.out));
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST_F(PipelineTest, ReplayMissNamesTheKeyAndExitsBackend) {
  dir_.write("manifest.jsonl",
             R"({"kind":"manifest","schema_version":1,"object_id":"new","view_refs":["new/view0.png"]})" "\n");
  ProbeArgs p = golden_probe();
  p.manifest = dir_.file("manifest.jsonl");
  Captured c;
  EXPECT_EQ(cmd_probe(p, c.io()), kExitBackend);
  EXPECT_NE(c.err.str().find(replay_key("What is in the image?", std::string("new/view0.png"))), std::string::npos)
      << c.err.str();
  EXPECT_FALSE(std::filesystem::exists(p.out));

  // keep-going writes what succeeded and still reports failure.
  dir_.write("manifest.jsonl",
             R"({"kind":"manifest","schema_version":1,"object_id":"new","view_refs":["new/view0.png"]})" "\n"
             R"({"kind":"manifest","schema_version":1,"object_id":"obj00","view_refs":["obj00/view0.png"]})" "\n");
  p.keep_going = true;
  Captured k;
  EXPECT_EQ(cmd_probe(p, k.io()), kExitBackend);
  EXPECT_EQ(read_items<ProbeRecord>(p.out).size(), 4u);
  EXPECT_NE(k.out.str().find("4 errors"), std::string::npos);
}

TEST_F(PipelineTest, ConfigErrors) {
  ProbeArgs p = golden_probe();
  p.backend = "carrier-pigeon";
  Captured c;
  EXPECT_EQ(cmd_probe(p, c.io()), kExitConfig);
  p = golden_probe();
  p.views = "0,x";
  EXPECT_EQ(cmd_probe(p, c.io()), kExitConfig);
  p = golden_probe();
  p.templates = dir_.write("t.jsonl", R"({"kind":"template","schema_version":1,"id":"q","text":"Is {a} {T} hot?"})" "\n");
  EXPECT_EQ(cmd_probe(p, c.io()), kExitConfig);
  p = golden_probe();
  p.manifest = dir_.file("missing.jsonl");
  EXPECT_EQ(cmd_probe(p, c.io()), kExitIo);

  EvalArgs ev;
  ev.aggregates = kGolden + "labels.jsonl";
  ev.labels = kGolden + "labels.jsonl";
  ev.metrics = "topk,similarity";
  ev.out = dir_.file("eval.json");
  Captured e;
  EXPECT_EQ(cmd_eval(ev, e.io()), kExitConfig);
  EXPECT_NE(e.err.str().find("--embedder"), std::string::npos);
  ev.metrics = "topk,vibes";
  EXPECT_EQ(cmd_eval(ev, e.io()), kExitConfig);
  ev.metrics = "topk";
  // A label file is not an aggregate file.
  EXPECT_EQ(cmd_eval(ev, e.io()), kExitIo);
}

TEST_F(PipelineTest, EmptyResultsExitFive) {
  Captured c;
  ASSERT_EQ(cmd_probe(golden_probe(), c.io()), kExitOk);
  AggregateArgs ag;
  ag.probes = dir_.file("probes.jsonl");
  ag.filter = "questions=q9";
  ag.out = dir_.file("aggregates.jsonl");
  EXPECT_EQ(cmd_aggregate(ag, c.io()), kExitEmpty);

  ag.filter = "";
  ASSERT_EQ(cmd_aggregate(ag, c.io()), kExitOk);
  EvalArgs ev;
  ev.aggregates = ag.out;
  ev.labels = dir_.write("labels.jsonl",
                         R"({"kind":"label","schema_version":1,"object_id":"elsewhere","property":"type","label":"cup","source":"s"})" "\n");
  ev.out = dir_.file("eval.json");
  EXPECT_EQ(cmd_eval(ev, c.io()), kExitEmpty);
}

ProbeRecord probe(std::string obj, std::string q, Mode mode, std::vector<ScoredResponse> rs) {
  std::optional<int> view;
  if (mode == Mode::kVlm) view = 0;
  return {std::move(obj), view, std::move(q), "prompt", mode, std::move(rs), std::nullopt};
}

TEST_F(PipelineTest, AblateIdenticalAndDisjoint) {
  std::vector<ProbeRecord> vlm{probe("o1", "q1", Mode::kVlm, {{"cup", -0.1}, {"mug", -1.0}}),
                               probe("o1", "q2", Mode::kVlm, {{"cup", -0.1}})};
  std::vector<ProbeRecord> llm{probe("o1", "q1", Mode::kLlm, {{"cup", -0.1}, {"mug", -1.0}}),
                               probe("o1", "q2", Mode::kLlm, {{"bowl", -0.1}})};
  write_records(vlm, dir_.file("vlm.jsonl"));
  write_records(llm, dir_.file("llm.jsonl"));
  AblateArgs a;
  a.probes_vlm = dir_.file("vlm.jsonl");
  a.probes_llm = dir_.file("llm.jsonl");
  a.out = dir_.file("report.json");
  Captured c;
  ASSERT_EQ(cmd_ablate(a, c.io()), kExitOk) << c.err.str();
  auto j = Json::parse(slurp(a.out));
  EXPECT_EQ(j["kind"], "divergence_report");
  ASSERT_EQ(j["rows"].size(), 2u);
  EXPECT_NEAR(j["rows"][0]["mean"].get<double>(), 0.0, 1e-12);
  EXPECT_NEAR(j["rows"][1]["mean"].get<double>(), 1.0, 1e-12);

  llm.pop_back();
  write_records(llm, dir_.file("llm.jsonl"));
  Captured u;
  EXPECT_EQ(cmd_ablate(a, u.io()), kExitEmpty);
  EXPECT_NE(u.err.str().find("o1/q2 (vlm only)"), std::string::npos) << u.err.str();
}

TEST_F(PipelineTest, AblateFitsAccuracyAgainstDivergence) {
  std::vector<ProbeRecord> vlm, llm;
  // q1 agrees and is right; q2 disagrees and is wrong; q3 sits between.
  for (std::string obj : {"o1", "o2"}) {
    vlm.push_back(probe(obj, "q1", Mode::kVlm, {{"cup", -0.1}}));
    llm.push_back(probe(obj, "q1", Mode::kLlm, {{"cup", -0.1}}));
    vlm.push_back(probe(obj, "q2", Mode::kVlm, {{"bowl", -0.1}}));
    llm.push_back(probe(obj, "q2", Mode::kLlm, {{"cup", -0.1}}));
    vlm.push_back(probe(obj, "q3", Mode::kVlm, {{"cup", -0.1}, {"bowl", -0.1}}));
    llm.push_back(probe(obj, "q3", Mode::kLlm, {{"cup", -0.1}}));
  }
  std::map<std::string, std::string> labels{{"o1", "cup"}, {"o2", "cup"}};
  auto r = ablate(vlm, llm, builtin_rulesets::identity(), &labels, parse_matcher("canonical_equal"));
  ASSERT_TRUE(r.fit.has_value());
  EXPECT_EQ(r.fit->n, 3u);
  EXPECT_LT(r.fit->slope, 0.0);
  EXPECT_NEAR(r.accuracy.at("q1"), 1.0, 1e-12);
  EXPECT_NEAR(r.accuracy.at("q2"), 0.0, 1e-12);
  EXPECT_NEAR(r.accuracy.at("q3"), 0.5, 1e-12);

  // One question cannot be fit; the report still comes back.
  std::vector<ProbeRecord> v1(vlm.begin(), vlm.begin() + 1), l1(llm.begin(), llm.begin() + 1);
  auto one = ablate(v1, l1, builtin_rulesets::identity(), &labels, parse_matcher("canonical_equal"));
  EXPECT_FALSE(one.fit.has_value());
  EXPECT_TRUE(one.fit_note.has_value());
}

TEST_F(PipelineTest, AuditBlowUpRatios) {
  std::string long_summary;
  for (int i = 0; i < 28; ++i) long_summary += (i ? " w" : "w") + std::to_string(i);
  Json s1 = {{"kind", "caption"}, {"schema_version", 1}, {"object_id", "a"}, {"text", "a red chair"}};
  Json s2 = {{"kind", "caption"}, {"schema_version", 1}, {"object_id", "b"}, {"text", long_summary}};
  Json s3 = {{"kind", "caption"}, {"schema_version", 1}, {"object_id", "c"}, {"text", nullptr}, {"origin", "x"}};
  dir_.write("summaries.jsonl", s1.dump() + "\n" + s2.dump() + "\n" + s3.dump() + "\n");
  std::string views;
  for (auto [obj, view, text] : std::vector<std::tuple<std::string, int, std::string>>{
           {"a", 0, "a red chair"}, {"a", 1, "chair"}, {"b", 0, "one two three four five"}, {"b", 1, "one"}}) {
    views += Json({{"kind", "caption"}, {"schema_version", 1}, {"object_id", obj}, {"view_id", view}, {"text", text}}).dump() + "\n";
  }
  dir_.write("views.jsonl", views);
  dir_.write("rules.jsonl", R"({"kind":"keyword_rule","schema_version":1,"name":"color","keywords":["red"]})" "\n");
  AuditArgs a;
  a.summaries = dir_.file("summaries.jsonl");
  a.per_view = dir_.file("views.jsonl");
  a.keywords = dir_.file("rules.jsonl");
  a.out = dir_.file("audit.json");
  Captured c;
  ASSERT_EQ(cmd_audit(a, c.io()), kExitOk) << c.err.str();
  auto j = Json::parse(slurp(a.out));
  ASSERT_EQ(j["blow_up"].size(), 2u);
  EXPECT_EQ(j["blow_up"][0]["object_id"], "b");
  EXPECT_NEAR(j["blow_up"][0]["ratio"].get<double>(), 5.6, 1e-12);
  EXPECT_NEAR(j["blow_up"][1]["ratio"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(j["keywords"]["corpus_size"], 3);
  EXPECT_EQ(j["keywords"]["rules"][0]["count"], 1);
  EXPECT_EQ(j["keywords"]["missing"], 1);
}

TEST_F(PipelineTest, ChainWritesStageFiles) {
  dir_.write("stages.jsonl",
             R"({"kind":"stage","schema_version":1,"property":"material","modes":["vlm"],"slots":{"T":{"property":"type"}},"templates":[{"id":"m","text":"What is {a}/this {T} made of?"}]})" "\n"
             R"({"kind":"stage","schema_version":1,"property":"type","modes":["vlm"],"templates":[{"id":"t","text":"What is this?"}]})" "\n");
  ChainArgs a;
  a.stages = dir_.file("stages.jsonl");
  a.manifest = kGolden + "manifest.jsonl";
  a.views = "0,1";
  a.out_dir = dir_.file("out");
  a.record = dir_.file("recorded.jsonl");
  Captured c;
  ASSERT_EQ(cmd_chain(a, c.io()), kExitOk) << c.err.str();
  EXPECT_EQ(c.out.str(), "stage type: 20 probes, 10 aggregates\nstage material: 20 probes, 10 aggregates\n");
  EXPECT_EQ(read_items<ProbeRecord>(dir_.file("out/material.probes.jsonl")).size(), 20u);
  EXPECT_EQ(read_items<TraceEntry>(dir_.file("out/trace.jsonl")).size(), 40u);
  EXPECT_EQ(read_items<ReplayEntry>(*a.record).size(), 40u);

  // Replaying the recording reproduces the run byte for byte.
  const std::string first = slurp(dir_.file("out/material.aggregates.jsonl"));
  a.backend = "replay:" + *a.record;
  a.record.reset();
  ASSERT_EQ(cmd_chain(a, c.io()), kExitOk) << c.err.str();
  EXPECT_EQ(slurp(dir_.file("out/material.aggregates.jsonl")), first);

  dir_.write("cyclic.jsonl",
             R"({"kind":"stage","schema_version":1,"property":"a","modes":["vlm"],"slots":{"T":{"property":"b"}},"templates":[{"id":"x","text":"{T}?"}]})" "\n"
             R"({"kind":"stage","schema_version":1,"property":"b","modes":["vlm"],"slots":{"T":{"property":"a"}},"templates":[{"id":"y","text":"{T}?"}]})" "\n");
  a.stages = dir_.file("cyclic.jsonl");
  EXPECT_EQ(cmd_chain(a, c.io()), kExitConfig);
}

}  // namespace
}  // namespace probeagg
