// scholar: command-line front end over the service.

#include "scholar/service.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace scholar;
namespace fs = std::filesystem;

namespace {

void emit(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + out);
  f << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Taxonomy-anchored scholarly analysis engine"};
  app.require_subcommand(1);

  std::string config_path, data_dir, cassette, cassette_mode, rules, evidence, cache_path;
  int max_parallel = 0;
  bool deterministic = false;
  app.add_option("--config", config_path, "Config file (JSON)");
  app.add_option("--data-dir", data_dir, "Data directory");
  app.add_option("--cassette", cassette, "Cassette file");
  app.add_option("--cassette-mode", cassette_mode, "off|record|replay|replay-strict");
  app.add_option("--rules", rules, "Scripted provider rule file");
  app.add_option("--evidence", evidence, "Trend evidence fixture");
  app.add_option("--cache", cache_path, "Persistent cache file");
  app.add_option("--max-parallel", max_parallel, "Engine worker count");
  app.add_flag("--deterministic", deterministic, "Logical clock in traces");

  auto* ingest = app.add_subcommand("ingest", "Ingest a directory of document bundles");
  std::string corpus, biblio;
  ingest->add_option("--corpus", corpus, "Bundle directory")->required();
  ingest->add_option("--biblio", biblio, "Bibliographic fixture");

  auto* tax = app.add_subcommand("build-taxonomy", "Build and anchor a taxonomy");
  std::string kind = "problem";
  taxonomy::TaxonomyConfig tcfg;
  tax->add_option("--kind", kind, "problem|method")->check(CLI::IsMember({"problem", "method"}));
  tax->add_option("--alpha", tcfg.alpha, "Refinement slack");
  tax->add_option("--tau-match", tcfg.tau_match, "Class match threshold");
  tax->add_option("--k-max", tcfg.k_max, "Max subtopics per refinement");

  auto* query = app.add_subcommand("query", "Plan and execute a query");
  std::string qtext, session, plan_in, plan_out, out;
  bool plan_only = false;
  query->add_option("text", qtext, "Query text");
  query->add_option("--session", session, "Session id");
  query->add_option("--plan-in", plan_in, "Execute this plan instead of planning");
  query->add_option("--plan-out", plan_out, "Write the plan here");
  query->add_flag("--plan-only", plan_only, "Stop after planning");
  query->add_option("--out", out, "Write the result here");

  auto* trace = app.add_subcommand("trace", "Print an execution trace");
  std::string exec_id;
  trace->add_option("id", exec_id, "Execution id")->required();
  trace->add_option("--out", out, "Output file");

  auto* status = app.add_subcommand("status", "Print a query status");
  status->add_option("id", exec_id, "Execution id")->required();

  auto* result = app.add_subcommand("result", "Print a query result");
  result->add_option("id", exec_id, "Execution id")->required();
  result->add_option("--out", out, "Output file");

  auto* eval = app.add_subcommand("eval", "Retrieval metrics over an evaluation file");
  std::string eval_file;
  eval->add_option("--file", eval_file, "Evaluation file")->required();
  eval->add_option("--out", out, "Output file");

  auto* report = app.add_subcommand("report", "Build a Tier-3 report");
  std::string view;
  std::vector<std::string> nodes;
  int k = 5;
  int ideas = 0;
  bool expand = false;
  report->add_option("view", view, "trend|matrix|milestones")->required()->check(
      CLI::IsMember({"trend", "matrix", "milestones"}));
  report->add_option("--node", nodes, "Taxonomy node id or name (repeatable)");
  report->add_option("--kind", kind, "Taxonomy for trends")->check(CLI::IsMember({"problem", "method"}));
  report->add_option("--k", k, "Top-k");
  report->add_option("--ideas", ideas, "Also propose this many ideas (matrix)");
  report->add_flag("--expand-variants", expand, "Query variants for trend evidence");
  report->add_option("--out", out, "Output file");

  auto* browse = app.add_subcommand("browse", "Print a stored view document");
  browse->add_option("view", view, "taxonomy/problem|taxonomy/method|matrix|trend|milestones")->required();

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  auto* catalog = app.add_subcommand("catalog", "Print the operator catalog, handlers and plan library");
  catalog->add_option("--out", out, "Output file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (catalog->parsed()) {
      json doc = ops::catalog_json();
      doc["library"] = planner::library_json(planner::builtin_library())["plans"];
      emit(doc, out);
      return 0;
    }

    service::ServiceConfig cfg;
    if (!config_path.empty()) cfg = service::ServiceConfig::load(config_path);
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    if (!cassette.empty()) {
      cfg.cassette = cassette;
      if (cassette_mode.empty() && cfg.cassette_mode == llm::CassetteMode::Off) cfg.cassette_mode = llm::CassetteMode::Replay;
    }
    if (!cassette_mode.empty()) cfg.cassette_mode = llm::cassette_mode_from_string(cassette_mode);
    if (!rules.empty()) cfg.rules = rules;
    if (!evidence.empty()) cfg.evidence = evidence;
    if (!cache_path.empty()) cfg.cache_path = cache_path;
    if (max_parallel > 0) cfg.engine.max_parallel = max_parallel;
    if (deterministic) cfg.engine.deterministic = true;

    service::Service svc(cfg);
    auto save_cassette = [&] {
      if (cfg.cassette && cfg.cassette_mode == llm::CassetteMode::Record) svc.client().cassette().save(*cfg.cassette);
    };

    if (ingest->parsed()) {
      auto rep = svc.ingest(corpus, biblio.empty() ? std::nullopt : std::optional<fs::path>(biblio));
      save_cassette();
      std::cout << rep.to_json().dump(2) << "\n";
    } else if (tax->parsed()) {
      auto tree = svc.build_taxonomy(taxonomy::taxonomy_kind_from_string(kind), tcfg);
      save_cassette();
      std::cout << tree.dump(2) << "\n";
    } else if (query->parsed()) {
      if (plan_only) {
        auto o = svc.plan_query(qtext);
        save_cassette();
        if (!plan_out.empty()) o.plan.save(plan_out);
        emit(o.to_json(), out);
        return 0;
      }
      service::SubmitOptions opt;
      opt.session_id = session;
      opt.wait = true;
      if (!plan_in.empty()) opt.plan = planner::Plan::load(plan_in);
      auto sub = svc.submit(qtext, opt);
      save_cassette();
      auto st = svc.status(sub.execution_id);
      if (!plan_out.empty()) {
        try {
          planner::Plan::from_json(svc.plan_of(sub.execution_id).at("plan")).save(plan_out);
        } catch (const Error&) {
        }
      }
      std::cerr << "execution " << sub.execution_id << " (session " << sub.session_id << "): "
                << service::to_string(st.state) << "\n";
      if (st.state != service::QueryState::Done) {
        if (st.issues) std::cerr << st.issues->describe() << "\n";
        if (!st.error.empty()) std::cerr << st.error << "\n";
        for (const auto& [id, msg] : st.failures) std::cerr << "  " << id << ": " << msg << "\n";
        return 1;
      }
      emit(svc.result(sub.execution_id), out);
    } else if (trace->parsed()) {
      emit(svc.trace(exec_id), out);
    } else if (status->parsed()) {
      emit(svc.status(exec_id).to_json(), "");
    } else if (result->parsed()) {
      emit(svc.result(exec_id), out);
    } else if (eval->parsed()) {
      auto rep = svc.eval(eval_file);
      save_cassette();
      emit(rep.to_json(), out);
    } else if (report->parsed()) {
      json doc;
      if (view == "trend") doc = svc.run_trend(taxonomy::taxonomy_kind_from_string(kind), nodes, 0, expand);
      else if (view == "matrix") doc = svc.run_matrix(ideas > 0 ? std::optional<int>(ideas) : std::nullopt);
      else doc = svc.run_milestones(nodes, k);
      save_cassette();
      emit(doc, out);
    } else if (browse->parsed()) {
      emit(svc.browse(view), "");
    } else if (serve->parsed()) {
      service::HttpServer http(svc);
      int bound = http.bind(host, port);
      std::cerr << "listening on " << host << ":" << bound << "\n";
      http.listen();
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
