#include "scholar/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>

namespace scholar::service {

namespace fs = std::filesystem;

namespace {

constexpr std::pair<QueryState, std::string_view> kStateNames[] = {
    {QueryState::Planning, "planning"}, {QueryState::Validating, "validating"},
    {QueryState::Executing, "executing"}, {QueryState::Done, "done"}, {QueryState::Failed, "failed"},
};

void write_json(const fs::path& p, const json& j) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, p);
}

std::optional<json> read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptSnapshot, p.string() + ": " + e.what());
  }
}

std::optional<fs::path> opt_path(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  fs::path p = j[key].get<std::string>();
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

json opt_path_json(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() < 128 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
}

std::string kind_file(taxonomy::TaxonomyKind k) { return "taxonomy-" + std::string(taxonomy::to_string(k)) + ".json"; }

}  // namespace

std::string_view to_string(QueryState s) {
  for (const auto& [k, v] : kStateNames) {
    if (k == s) return v;
  }
  return "?";
}

QueryState query_state_from_string(std::string_view s) {
  for (const auto& [k, v] : kStateNames) {
    if (v == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown query state: " + std::string(s));
}

// ---------------------------------------------------------------- config

json ServiceConfig::to_json() const {
  return json{{"data_dir", data_dir.string()},
              {"provider", provider},
              {"rules", opt_path_json(rules)},
              {"http_base_url", http_base_url},
              {"api_key_env", api_key_env},
              {"cassette", opt_path_json(cassette)},
              {"cassette_mode", llm::to_string(cassette_mode)},
              {"cache_path", opt_path_json(cache_path)},
              {"evidence", opt_path_json(evidence)},
              {"library", opt_path_json(library)},
              {"demos", opt_path_json(demos)},
              {"embedding_dim", embedding_dim},
              {"engine", engine.to_json()},
              {"planner", planner.to_json()},
              {"retrieval", retrieval.to_json()}};
}

ServiceConfig ServiceConfig::from_json(const json& j, const fs::path& base) {
  ServiceConfig c;
  if (j.contains("data_dir")) {
    c.data_dir = j["data_dir"].get<std::string>();
    if (c.data_dir.is_relative() && !base.empty()) c.data_dir = base / c.data_dir;
  }
  c.provider = j.value("provider", c.provider);
  if (c.provider != "scripted" && c.provider != "http") {
    throw Error(ErrorCode::InvalidArgument, "provider must be scripted or http");
  }
  c.rules = opt_path(j, "rules", base);
  c.http_base_url = j.value("http_base_url", c.http_base_url);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.cassette = opt_path(j, "cassette", base);
  if (j.contains("cassette_mode")) c.cassette_mode = llm::cassette_mode_from_string(j["cassette_mode"].get<std::string>());
  c.cache_path = opt_path(j, "cache_path", base);
  c.evidence = opt_path(j, "evidence", base);
  c.library = opt_path(j, "library", base);
  c.demos = opt_path(j, "demos", base);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  if (j.contains("engine")) c.engine = engine::EngineConfig::from_json(j["engine"]);
  if (j.contains("max_parallel")) c.engine.max_parallel = j["max_parallel"].get<int>();
  if (j.contains("planner")) c.planner = planner::PlannerConfig::from_json(j["planner"]);
  if (j.contains("retrieval")) c.retrieval = retrieval::RetrievalConfig::from_json(j["retrieval"]);
  return c;
}

ServiceConfig ServiceConfig::load(const fs::path& path) {
  auto j = read_json(path);
  if (!j) throw Error(ErrorCode::Io, "cannot read config " + path.string());
  return from_json(*j, path.parent_path());
}

// ---------------------------------------------------------------- documents

json QueryStatus::to_json() const {
  json fs_ = json::array();
  for (const auto& [id, m] : failures) fs_.push_back({{"exec_id", id}, {"message", m}});
  return json{{"execution_id", execution_id},
              {"session_id", session_id},
              {"query", query},
              {"state", to_string(state)},
              {"progress", {{"done", done_nodes}, {"total", total_nodes}}},
              {"issues", issues ? issues->to_json() : json(nullptr)},
              {"error", error},
              {"failures", fs_}};
}

QueryStatus QueryStatus::from_json(const json& j) {
  QueryStatus s;
  s.execution_id = j.at("execution_id").get<std::string>();
  s.session_id = j.value("session_id", "");
  s.query = j.value("query", "");
  s.state = query_state_from_string(j.value("state", std::string("planning")));
  s.done_nodes = j.value("progress", json::object()).value("done", 0);
  s.total_nodes = j.value("progress", json::object()).value("total", 0);
  if (j.contains("issues") && j["issues"].is_object()) {
    planner::ValidationReport r;
    for (const auto& i : j["issues"].value("issues", json::array())) {
      planner::Issue is;
      is.severity = i.value("severity", "error");
      auto cat = i.value("category", "");
      is.category = cat == "step-internal"   ? planner::Category::StepInternal
                    : cat == "inter-step" ? planner::Category::InterStep
                                             : planner::Category::Overall;
      is.step_ids = i.value("step_ids", std::vector<std::string>{});
      is.message = i.value("message", "");
      r.issues.push_back(is);
    }
    s.issues = r;
  }
  s.error = j.value("error", "");
  for (const auto& f : j.value("failures", json::array())) {
    s.failures.push_back({f.value("exec_id", ""), f.value("message", "")});
  }
  return s;
}

json Turn::to_json() const {
  return json{{"query", query}, {"plan_id", plan_id}, {"execution_id", execution_id}, {"result_digest", result_digest}};
}

Turn Turn::from_json(const json& j) {
  return Turn{j.value("query", ""), j.value("plan_id", ""), j.value("execution_id", ""), j.value("result_digest", "")};
}

json QuerySession::to_json() const {
  json ts = json::array();
  for (const auto& t : turns) ts.push_back(t.to_json());
  return json{{"session_id", session_id}, {"submitted", submitted}, {"turns", ts}};
}

QuerySession QuerySession::from_json(const json& j) {
  QuerySession s;
  s.session_id = j.at("session_id").get<std::string>();
  s.submitted = j.value("submitted", 0);
  for (const auto& t : j.value("turns", json::array())) s.turns.push_back(Turn::from_json(t));
  return s;
}

// ---------------------------------------------------------------- service

namespace {

std::shared_ptr<llm::LlmClient> make_client(const ServiceConfig& cfg) {
  std::shared_ptr<llm::Provider> provider;
  if (cfg.provider == "http") {
    llm::HttpProvider::Options o;
    o.base_url = cfg.http_base_url;
    if (const char* k = std::getenv(cfg.api_key_env.c_str())) o.api_key = k;
    provider = std::make_shared<llm::HttpProvider>(o);
  } else {
    auto sp = std::make_shared<llm::ScriptedProvider>();
    if (cfg.rules) sp->load_rules(*cfg.rules);
    provider = sp;
  }
  std::shared_ptr<llm::Cassette> cassette;
  if (cfg.cassette && cfg.cassette_mode != llm::CassetteMode::Off) {
    cassette = llm::Cassette::load(*cfg.cassette, cfg.cassette_mode);
  } else {
    cassette = std::make_shared<llm::Cassette>(llm::CassetteMode::Off);
  }
  llm::ClientConfig cc;
  cc.embedding_dim = cfg.embedding_dim;
  return std::make_shared<llm::LlmClient>(provider, cassette, cc);
}

planner::Planner make_planner(const ServiceConfig& cfg) {
  auto lib = cfg.library ? planner::load_library(*cfg.library) : planner::builtin_library();
  auto demos = cfg.demos ? planner::load_demos(*cfg.demos) : planner::builtin_demos();
  return planner::Planner(std::move(lib), std::move(demos), cfg.planner);
}

}  // namespace

Service::Service(ServiceConfig cfg, std::shared_ptr<llm::LlmClient> client)
    : cfg_(std::move(cfg)),
      client_(client ? std::move(client) : make_client(cfg_)),
      registry_(ops::Registry::with_builtins()),
      planner_(make_planner(cfg_)) {
  fs::create_directories(cfg_.data_dir);
  cache_ = std::make_shared<engine::PersistentCache>(cfg_.cache_path ? *cfg_.cache_path : path("cache.jsonl"));
  traces_ = std::make_shared<engine::TraceStore>(path("traces"));
  if (cfg_.evidence) {
    evidence_ = std::make_shared<pipelines::FixtureEvidenceSource>(pipelines::FixtureEvidenceSource::load(*cfg_.evidence));
  } else if (fs::exists(path("evidence.json"))) {
    evidence_ = std::make_shared<pipelines::FixtureEvidenceSource>(
        pipelines::FixtureEvidenceSource::load(path("evidence.json")));
  }
  pipelines::register_operators(registry_, {evidence_, 1});
  engine_ = std::make_unique<engine::Engine>(registry_, cache_, cfg_.engine);
  engine_->set_trace_store(traces_);

  std::shared_ptr<kg::Graph> g;
  if (fs::exists(path("graph.json"))) {
    g = std::make_shared<kg::Graph>(kg::Graph::snapshot_load(path("graph.json")));
  } else {
    g = std::make_shared<kg::Graph>(client_->embedding_dim());
  }
  graph_ = g;
  retriever_ = std::make_shared<retrieval::Retriever>(retrieval::Retriever::build(*g));

  // Runs cut short by a restart cannot resume.
  if (fs::exists(path("queries"))) {
    for (const auto& e : fs::directory_iterator(path("queries"))) {
      if (e.path().extension() != ".json") continue;
      auto st = QueryStatus::from_json(*read_json(e.path()));
      if (st.state != QueryState::Done && st.state != QueryState::Failed) {
        st.state = QueryState::Failed;
        st.error = "interrupted by a service restart";
        write_json(e.path(), st.to_json());
      }
    }
  }
}

Service::~Service() {
  std::vector<std::thread> ws;
  {
    std::lock_guard lock(mu_);
    ws.swap(workers_);
  }
  for (auto& t : ws) {
    if (t.joinable()) t.join();
  }
}

std::shared_ptr<const kg::Graph> Service::graph() const {
  std::lock_guard lock(mu_);
  return graph_;
}

void Service::save_graph(std::shared_ptr<kg::Graph> g) {
  g->snapshot_save(path("graph.json"));
  auto r = std::make_shared<retrieval::Retriever>(retrieval::Retriever::build(*g));
  std::lock_guard lock(mu_);
  graph_ = std::move(g);
  retriever_ = std::move(r);
}

ops::OperatorContext Service::context(const std::shared_ptr<const kg::Graph>& g,
                                      const std::shared_ptr<const retrieval::Retriever>& r) {
  ops::OperatorContext ctx;
  ctx.graph = g.get();
  ctx.retriever = r.get();
  ctx.llm = client_.get();
  ctx.retrieval_cfg = cfg_.retrieval;
  ctx.registry = &registry_;
  return ctx;
}

ingest::IngestReport Service::ingest(const fs::path& corpus_dir, const std::optional<fs::path>& biblio) {
  std::lock_guard alock(artifact_mu_);
  auto bundles = ingest::load_corpus(corpus_dir);
  std::optional<ingest::FixtureBiblioClient> client;
  if (biblio) client = ingest::FixtureBiblioClient::load(*biblio);
  auto g = std::make_shared<kg::Graph>(*graph());
  auto rep = ingest::ingest_corpus(bundles, *g, *client_, client ? &*client : nullptr);
  save_graph(g);
  write_json(path("ingest-report.json"), rep.to_json());
  return rep;
}

json Service::build_taxonomy(taxonomy::TaxonomyKind kind, taxonomy::TaxonomyConfig tcfg) {
  std::lock_guard alock(artifact_mu_);
  auto g = std::make_shared<kg::Graph>(*graph());
  std::vector<std::string> papers;
  for (const auto& n : g->nodes_of_kind(kg::NodeKind::Paper)) papers.push_back(n.id);
  if (papers.empty()) throw Error(ErrorCode::Precondition, "build-taxonomy: no papers ingested");
  taxonomy::Taxonomy t(kind, tcfg);
  t.build(*g, papers, *client_);
  t.anchor_into_graph(*g, *client_);
  auto tree = t.export_tree();
  write_json(path("taxonomy-" + std::string(taxonomy::to_string(kind)) + ".state.json"), t.to_state_json());
  write_json(path(kind_file(kind)), tree);
  save_graph(g);
  return tree;
}

retrieval::EvalReport Service::eval(const fs::path& eval_file) {
  auto qs = retrieval::load_eval_file(eval_file);
  std::shared_ptr<const retrieval::Retriever> r;
  {
    std::lock_guard lock(mu_);
    r = retriever_;
  }
  auto rep = retrieval::evaluate(qs, *r, cfg_.retrieval, *client_);
  write_json(path("eval-report.json"), rep.to_json());
  return rep;
}

// ---------------------------------------------------------------- queries

void Service::put_status(const QueryStatus& st) {
  write_json(path("queries/" + st.execution_id + ".json"), st.to_json());
}

planner::PlanningOutcome Service::plan_query(const std::string& query) { return planner_.plan(query, *client_); }

Submission Service::submit(const std::string& query, SubmitOptions opt) {
  if (trim(query).empty() && !opt.plan) throw Error(ErrorCode::InvalidArgument, "empty query");
  std::string sid = opt.session_id;
  std::string id;
  {
    std::lock_guard lock(mu_);
    QuerySession s;
    if (sid.empty()) {
      sid = "s-" + json_digest(json{{"query", query}, {"n", fs::exists(path("sessions"))
                                                             ? std::distance(fs::directory_iterator(path("sessions")),
                                                                             fs::directory_iterator{})
                                                             : 0}})
                       .substr(0, 12);
      s.session_id = sid;
    } else {
      if (!valid_id(sid)) throw Error(ErrorCode::InvalidArgument, "bad session id");
      auto j = read_json(path("sessions/" + sid + ".json"));
      if (j) s = QuerySession::from_json(*j);
      else s.session_id = sid;
    }
    id = "q-" + json_digest(json{{"session", sid},
                                 {"n", s.submitted},
                                 {"query", query},
                                 {"plan", opt.plan ? opt.plan->to_json() : json(nullptr)},
                                 {"corpus", graph_->corpus_version()}})
                    .substr(0, 16);
    ++s.submitted;
    write_json(path("sessions/" + sid + ".json"), s.to_json());
    QueryStatus st;
    st.execution_id = id;
    st.session_id = sid;
    st.query = query;
    put_status(st);
  }
  if (opt.wait) {
    run_query(id, sid, query, opt.plan);
  } else {
    std::lock_guard lock(mu_);
    workers_.emplace_back([this, id, sid, query, plan = opt.plan] { run_query(id, sid, query, plan); });
  }
  return {id, sid};
}

void Service::run_query(std::string id, std::string sid, std::string query, std::optional<planner::Plan> plan) {
  QueryStatus st = status(id);
  auto set_state = [&](QueryState s) {
    st.state = s;
    put_status(st);
    if (s == QueryState::Done || s == QueryState::Failed) cv_.notify_all();
  };
  std::string plan_id = "supplied";
  try {
    auto g = graph();
    std::shared_ptr<const retrieval::Retriever> r;
    {
      std::lock_guard lock(mu_);
      r = retriever_;
    }
    planner::PlanningOutcome outcome;
    if (plan) {
      outcome.query = query;
      outcome.plan = *plan;
    } else {
      outcome = planner_.plan(query, *client_);
      plan_id = outcome.predefined_id ? "predefined-" + std::to_string(*outcome.predefined_id) : "dynamic";
    }
    write_json(path("plans/" + id + ".json"), outcome.to_json());
    set_state(QueryState::Validating);
    auto report = planner::validate(outcome.plan, {true});
    if (!report.ok()) {
      st.issues = report;
      st.error = "plan failed validation";
      set_state(QueryState::Failed);
      return;
    }
    set_state(QueryState::Executing);
    auto ctx = context(g, r);
    std::mutex pmu;
    auto res = engine_->execute(outcome.plan, ctx, id, query, [&](int done, int total) {
      std::lock_guard lock(pmu);
      if (done < st.done_nodes && total == st.total_nodes) return;
      st.done_nodes = done;
      st.total_nodes = total;
      put_status(st);
    });
    auto rj = res.result_json();
    write_json(path("results/" + id + ".json"), rj);
    st.done_nodes = static_cast<int>(res.trace.records.size());
    st.total_nodes = static_cast<int>(res.trace.records.size());
    st.failures = res.failures;
    {
      std::lock_guard lock(mu_);
      auto s = QuerySession::from_json(*read_json(path("sessions/" + sid + ".json")));
      s.turns.push_back({query, plan_id, id, json_digest(rj.at("terminals"))});
      write_json(path("sessions/" + sid + ".json"), s.to_json());
    }
    if (!res.ok) st.error = "execution had failed nodes";
    set_state(res.ok ? QueryState::Done : QueryState::Failed);
  } catch (const planner::PlanningError& e) {
    st.issues = e.report();
    st.error = e.what();
    set_state(QueryState::Failed);
  } catch (const std::exception& e) {
    st.error = e.what();
    set_state(QueryState::Failed);
  }
}

QueryStatus Service::status(const std::string& id) const {
  if (!valid_id(id)) throw Error(ErrorCode::NotFound, "unknown execution id: " + id);
  auto j = read_json(path("queries/" + id + ".json"));
  if (!j) throw Error(ErrorCode::NotFound, "unknown execution id: " + id);
  return QueryStatus::from_json(*j);
}

QueryStatus Service::wait(const std::string& id) {
  std::unique_lock lock(mu_);
  for (;;) {
    auto st = status(id);
    if (st.state == QueryState::Done || st.state == QueryState::Failed) return st;
    cv_.wait_for(lock, std::chrono::milliseconds(50));
  }
}

json Service::result(const std::string& id) const {
  auto st = status(id);
  if (st.state != QueryState::Done) {
    throw Error(ErrorCode::Precondition, "result unavailable: query is " + std::string(to_string(st.state)));
  }
  auto j = read_json(path("results/" + id + ".json"));
  if (!j) throw Error(ErrorCode::ArtifactMissing, "result file missing for " + id);
  return *j;
}

json Service::trace(const std::string& id) const {
  auto st = status(id);
  if (traces_->exists(id)) return traces_->load(id).to_json();
  if (st.state == QueryState::Executing) {
    return json{{"execution_id", id}, {"status", "running"},
                {"progress", {{"done", st.done_nodes}, {"total", st.total_nodes}}}, {"records", json::array()},
                {"edges", json::array()}};
  }
  throw Error(ErrorCode::NotFound, "no trace for " + id + " (state " + std::string(to_string(st.state)) + ")");
}

json Service::plan_of(const std::string& id) const {
  status(id);
  auto j = read_json(path("plans/" + id + ".json"));
  if (!j) throw Error(ErrorCode::NotFound, "no plan recorded for " + id);
  return *j;
}

QuerySession Service::session(const std::string& sid) const {
  if (!valid_id(sid)) throw Error(ErrorCode::NotFound, "unknown session " + sid);
  std::lock_guard lock(mu_);
  auto j = read_json(path("sessions/" + sid + ".json"));
  if (!j) throw Error(ErrorCode::NotFound, "unknown session " + sid);
  return QuerySession::from_json(*j);
}

// ---------------------------------------------------------------- reports

std::string Service::resolve_node(const kg::Graph& g, const std::string& s) const {
  if (g.contains(s)) return s;
  auto low = to_lower(trim(s));
  for (auto k : {kg::NodeKind::ProblemNode, kg::NodeKind::MethodNode}) {
    for (const auto& n : g.nodes_of_kind(k)) {
      if (to_lower(n.attrs.value("name", "")) == low) return n.id;
    }
  }
  throw Error(ErrorCode::NotFound, "no taxonomy node named '" + s + "'");
}

json Service::run_trend(taxonomy::TaxonomyKind kind, const std::vector<std::string>& nodes, int k, bool expand) {
  if (!evidence_) throw Error(ErrorCode::ArtifactMissing, "no trend evidence source configured");
  auto g = graph();
  std::vector<std::string> ids;
  auto nk = kind == taxonomy::TaxonomyKind::Problem ? kg::NodeKind::ProblemNode : kg::NodeKind::MethodNode;
  if (nodes.empty()) {
    for (const auto& n : g->nodes_of_kind(nk)) {
      if (g->neighbors(n.id, kg::EdgeKind::CHILD_OF, kg::Direction::Out, nk).empty()) ids.push_back(n.id);
    }
  } else {
    for (const auto& n : nodes) ids.push_back(resolve_node(*g, n));
  }
  if (ids.empty()) throw Error(ErrorCode::ArtifactMissing, "taxonomy not built");
  auto rep = pipelines::trend_analysis(*g, ids, *evidence_, *client_, {expand, k});
  json doc = rep.to_json();
  doc["taxonomy"] = taxonomy::to_string(kind);
  doc["nodes"] = ids;
  write_json(path("reports/trend.json"), doc);
  return doc;
}

json Service::run_matrix(std::optional<int> idea_k) {
  auto g = graph();
  std::shared_ptr<const retrieval::Retriever> r;
  {
    std::lock_guard lock(mu_);
    r = retriever_;
  }
  auto ctx = context(g, r);
  auto m = ops::op_matrix_construct({}, ctx);
  json doc = m.value;
  if (idea_k) {
    pipelines::IdeaOptions opt;
    opt.k = *idea_k;
    doc["ideas"] = pipelines::idea_exploration(m, *client_, opt).to_json();
  }
  write_json(path("reports/matrix.json"), doc);
  return doc;
}

json Service::run_milestones(const std::vector<std::string>& nodes, int k) {
  auto g = graph();
  std::vector<std::string> ids;
  for (const auto& n : nodes) ids.push_back(resolve_node(*g, n));
  std::vector<std::string> papers;
  if (ids.empty()) {
    for (const auto& n : g->nodes_of_kind(kg::NodeKind::Paper)) papers.push_back(n.id);
  } else {
    papers = pipelines::topic_papers(*g, ids);
  }
  auto ms = pipelines::milestone_selection(*g, papers, k, client_.get());
  json doc = pipelines::milestone_list_json(ms);
  doc["topic"] = ids;
  write_json(path("reports/milestones.json"), doc);
  return doc;
}

json Service::browse(const std::string& kind) const {
  fs::path p;
  if (kind == "taxonomy/problem") p = path(kind_file(taxonomy::TaxonomyKind::Problem));
  else if (kind == "taxonomy/method") p = path(kind_file(taxonomy::TaxonomyKind::Method));
  else if (kind == "matrix") p = path("reports/matrix.json");
  else if (kind == "trend") p = path("reports/trend.json");
  else if (kind == "milestones") p = path("reports/milestones.json");
  else throw Error(ErrorCode::InvalidArgument, "unknown view " + kind);
  auto j = read_json(p);
  if (!j) throw Error(ErrorCode::ArtifactMissing, kind + " has not been built");
  return *j;
}

// ---------------------------------------------------------------- http

namespace {

int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::NotFound:
    case ErrorCode::ArtifactMissing: return 404;
    case ErrorCode::InvalidArgument:
    case ErrorCode::SchemaViolation: return 400;
    case ErrorCode::Precondition: return 409;
    case ErrorCode::PlanningFailed: return 422;
    default: return 500;
  }
}

void reply(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(2), "application/json");
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      reply(res, {{"error", scholar::to_string(e.code())}, {"message", e.what()}}, http_status(e.code()));
    } catch (const json::exception& e) {
      reply(res, {{"error", "invalid-argument"}, {"message", e.what()}}, 400);
    } catch (const std::exception& e) {
      reply(res, {{"error", "internal"}, {"message", e.what()}}, 500);
    }
  };
}

}  // namespace

struct HttpServer::Impl {
  Service& svc;
  httplib::Server server;
  std::thread thread;
  explicit Impl(Service& s) : svc(s) {}
};

HttpServer::HttpServer(Service& svc) : impl_(std::make_unique<Impl>(svc)) {
  auto& s = impl_->server;
  auto& svc_ = impl_->svc;
  s.Post("/queries", guarded([&svc_](const httplib::Request& req, httplib::Response& res) {
           auto body = json::parse(req.body.empty() ? "{}" : req.body);
           SubmitOptions opt;
           opt.session_id = body.value("session_id", "");
           if (body.contains("plan") && !body["plan"].is_null()) opt.plan = planner::Plan::from_json(body["plan"]);
           auto sub = svc_.submit(body.value("query", ""), opt);
           reply(res, {{"execution_id", sub.execution_id}, {"session_id", sub.session_id}}, 202);
         }));
  s.Get(R"(/queries/([A-Za-z0-9_-]+))", guarded([&svc_](const httplib::Request& req, httplib::Response& res) {
          reply(res, svc_.status(req.matches[1]).to_json());
        }));
  s.Get(R"(/queries/([A-Za-z0-9_-]+)/result)", guarded([&svc_](const httplib::Request& req, httplib::Response& res) {
          reply(res, svc_.result(req.matches[1]));
        }));
  s.Get(R"(/queries/([A-Za-z0-9_-]+)/trace)", guarded([&svc_](const httplib::Request& req, httplib::Response& res) {
          reply(res, svc_.trace(req.matches[1]));
        }));
  s.Get(R"(/taxonomy/(problem|method))", guarded([&svc_](const httplib::Request& req, httplib::Response& res) {
          reply(res, svc_.browse("taxonomy/" + std::string(req.matches[1])));
        }));
  for (const char* v : {"matrix", "trend", "milestones"}) {
    std::string view = v;
    s.Get("/" + view, guarded([&svc_, view](const httplib::Request&, httplib::Response& res) {
            reply(res, svc_.browse(view));
          }));
  }
  s.Post("/ingest", guarded([&svc_](const httplib::Request& req, httplib::Response& res) {
           auto body = json::parse(req.body.empty() ? "{}" : req.body);
           std::optional<fs::path> biblio;
           if (body.contains("biblio") && !body["biblio"].is_null()) biblio = body["biblio"].get<std::string>();
           auto rep = svc_.ingest(body.at("corpus").get<std::string>(), biblio);
           reply(res, rep.to_json());
         }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  if (!impl_->server.bind_to_port(host, port)) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace scholar::service
