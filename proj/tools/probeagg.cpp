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

// probeagg command-line tool. Exit codes: 0 ok, 2 config, 3 backend, 4 io,
// 5 empty input (nothing to aggregate, no overlap, unpairable records).

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "probeagg/curation_http.hpp"
#include "probeagg/pipeline.hpp"

namespace {

using namespace probeagg;

void add_probe(CLI::App& app, ProbeArgs& a, std::optional<std::uint64_t>& seed, int& rc) {
  auto* c = app.add_subcommand("probe", "Fan templates over views and query a backend");
  c->add_option("--manifest", a.manifest, "Manifest record file")->required();
  c->add_option("--templates", a.templates, "Template record file")->required();
  c->add_option("--views", a.views, "'all' or comma list of view indices")->capture_default_str();
  c->add_option("--modes", a.modes, "vlm, llm or vlm,llm")->capture_default_str();
  c->add_option("--backend", a.backend, "stub, replay:PATH or a backend config file")->capture_default_str();
  c->add_option("--seed", seed, "Stub backend seed");
  c->add_option("--out", a.out, "Probe record output")->required();
  c->add_option("--record", a.record, "Also write a replay fixture of every call");
  c->add_option("--num-candidates", a.num_candidates)->capture_default_str()->check(CLI::Range(1, 1000));
  c->add_option("--max-in-flight", a.max_in_flight)->capture_default_str()->check(CLI::Range(1, 1024));
  c->add_flag("--keep-going", a.keep_going, "Write successful records even if some calls fail");
  c->callback([&] {
    a.seed = seed;
    rc = cmd_probe(a);
  });
}

void add_aggregate(CLI::App& app, AggregateArgs& a, int& rc) {
  auto* c = app.add_subcommand("aggregate", "Aggregate probe records into per-object distributions");
  c->add_option("--probes", a.probes)->required();
  c->add_option("--ruleset", a.ruleset, "Built-in ruleset name or ruleset file")->capture_default_str();
  c->add_option("--mode", a.mode, "lse or max")->capture_default_str();
  c->add_option("--filter", a.filter, "e.g. views=0,1;questions=q1;mode=vlm");
  c->add_option("--property", a.property)->capture_default_str();
  c->add_option("--out", a.out)->required();
  c->callback([&] { rc = cmd_aggregate(a); });
}

void add_eval(CLI::App& app, EvalArgs& a, int& rc) {
  auto* c = app.add_subcommand("eval", "Score aggregates against labels");
  c->add_option("--aggregates", a.aggregates)->required();
  c->add_option("--labels", a.labels)->required();
  c->add_option("--merges", a.merges, "JSON object mapping label -> merged label");
  c->add_option("--property", a.property);
  c->add_option("--metric", a.metrics, "Comma list of topk, soft, similarity")->capture_default_str();
  c->add_option("--matcher", a.matcher, "e.g. substring:label=lvis-label,response=identity (default by property)");
  c->add_option("--k", a.k)->capture_default_str();
  c->add_option("--embedder", a.embedder, "fixture:PATH or an embedder config file");
  c->add_option("--out", a.out)->required();
  c->callback([&] { rc = cmd_eval(a); });
}

void add_ablate(CLI::App& app, AblateArgs& a, int& rc) {
  auto* c = app.add_subcommand("ablate", "Hellinger divergence between VLM- and LLM-mode outputs");
  c->add_option("--probes-vlm", a.probes_vlm)->required();
  c->add_option("--probes-llm", a.probes_llm)->required();
  c->add_option("--ruleset", a.ruleset)->capture_default_str();
  c->add_option("--labels", a.labels, "Labels for the accuracy-divergence fit");
  c->add_option("--merges", a.merges);
  c->add_option("--property", a.property)->capture_default_str();
  c->add_option("--matcher", a.matcher);
  c->add_option("--out", a.out)->required();
  c->callback([&] { rc = cmd_ablate(a); });
}

void add_audit(CLI::App& app, AuditArgs& a, int& rc) {
  auto* c = app.add_subcommand("audit", "Caption blow-up ratios and keyword audit");
  c->add_option("--summaries", a.summaries)->required();
  c->add_option("--per-view", a.per_view)->required();
  c->add_option("--keywords", a.keywords, "Keyword rule record file");
  c->add_option("--total", a.total, "Corpus size, if larger than the caption files");
  c->add_option("--show", a.show, "Rows of the ranking to print")->capture_default_str();
  c->add_option("--out", a.out)->required();
  c->callback([&] { rc = cmd_audit(a); });
}

void add_chain(CLI::App& app, ChainArgs& a, std::optional<std::uint64_t>& seed, int& rc) {
  auto* c = app.add_subcommand("chain", "Run chained probe stages");
  c->add_option("--stages", a.stages)->required();
  c->add_option("--manifest", a.manifest)->required();
  c->add_option("--backend", a.backend)->capture_default_str();
  c->add_option("--seed", seed, "Stub backend seed");
  c->add_option("--out", a.out_dir, "Output directory")->required();
  c->add_option("--views", a.views)->capture_default_str();
  c->add_option("--mode", a.mode)->capture_default_str();
  c->add_option("--record", a.record);
  c->add_option("--num-candidates", a.num_candidates)->capture_default_str()->check(CLI::Range(1, 1000));
  c->add_option("--max-in-flight", a.max_in_flight)->capture_default_str()->check(CLI::Range(1, 1024));
  c->callback([&] {
    a.seed = seed;
    rc = cmd_chain(a);
  });
}

struct ServeArgs {
  CurationConfig cfg;
  CurationServerOptions server;
  std::optional<std::string> export_path;
};

void add_serve(CLI::App& app, ServeArgs& a, int& rc) {
  auto* c = app.add_subcommand("serve-curation", "Serve the label curation API");
  c->add_option("--candidates", a.cfg.candidates_path)->required();
  c->add_option("--decisions", a.cfg.decisions_path, "Append-only decision log")->required();
  c->add_option("--aggregates", a.cfg.aggregates_path);
  c->add_option("--merges", a.cfg.merges_path);
  c->add_option("--views-dir", a.server.views_dir, "Served under /views");
  c->add_option("--ui-dir", a.server.ui_dir, "Static frontend served under /");
  c->add_option("--host", a.server.host)->capture_default_str();
  c->add_option("--port", a.server.port)->capture_default_str()->check(CLI::Range(0, 65535));
  c->add_option("--token", a.server.bearer_token, "Require this bearer token on /api")
      ->envname("PROBEAGG_CURATION_TOKEN");
  c->add_option("--export", a.export_path, "Write the verified label records and exit");
  c->callback([&] {
    rc = run_guarded({}, [&] {
      CurationService service = CurationService::from_config(a.cfg);
      if (a.export_path) {
        const auto ex = service.export_labels();
        write_records(ex.records, *a.export_path);
        std::cout << "export: " << ex.records.size() << " labels, " << ex.histogram.size() << " classes\n";
        return int(kExitOk);
      }
      const auto n = service.counts();
      std::cerr << "serving " << n.total << " candidates (" << n.pending << " pending) on http://" << a.server.host
                << ":" << a.server.port << "\n";
      run_curation_server(service, a.server);
      return int(kExitOk);
    });
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"probeagg: score-based multi-probe aggregation"};
  app.set_config("--config", "", "TOML config file; keys mirror the flags, one [section] per command");
  app.require_subcommand(1);
  int rc = 0;
  ProbeArgs probe;
  AggregateArgs agg;
  EvalArgs eval;
  AblateArgs ablate;
  AuditArgs audit;
  ChainArgs chain;
  ServeArgs serve;
  std::optional<std::uint64_t> probe_seed, chain_seed;
  add_probe(app, probe, probe_seed, rc);
  add_aggregate(app, agg, rc);
  add_eval(app, eval, rc);
  add_ablate(app, ablate, rc);
  add_audit(app, audit, rc);
  add_chain(app, chain, chain_seed, rc);
  add_serve(app, serve, rc);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  return rc;
}
