#pragma once
// Query service over a data directory: ingestion, taxonomy builds, query
// sessions (plan + execute, asynchronous), traces, Tier-3 reports, and the
// HTTP surface. The CLI drives the same object.

#include "scholar/engine.hpp"
#include "scholar/ingest.hpp"
#include "scholar/pipelines.hpp"
#include "scholar/planner.hpp"
#include "scholar/retrieval.hpp"
#include "scholar/taxonomy.hpp"

#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace scholar::service {

struct ServiceConfig {
  std::filesystem::path data_dir = "scholar-data";
  std::string provider = "scripted";  // scripted | http
  std::optional<std::filesystem::path> rules;  // scripted provider rule file
  std::string http_base_url = "https://api.openai.com";
  std::string api_key_env = "OPENAI_API_KEY";
  std::optional<std::filesystem::path> cassette;
  llm::CassetteMode cassette_mode = llm::CassetteMode::Off;
  std::optional<std::filesystem::path> cache_path;  // default <data_dir>/cache.jsonl
  std::optional<std::filesystem::path> evidence;    // trend evidence fixture
  std::optional<std::filesystem::path> library;     // plan library file
  std::optional<std::filesystem::path> demos;
  std::size_t embedding_dim = 64;
  engine::EngineConfig engine;
  planner::PlannerConfig planner;
  retrieval::RetrievalConfig retrieval;

  json to_json() const;
  // Relative paths resolve against `base`.
  static ServiceConfig from_json(const json& j, const std::filesystem::path& base = {});
  static ServiceConfig load(const std::filesystem::path& path);
};

enum class QueryState { Planning, Validating, Executing, Done, Failed };
std::string_view to_string(QueryState s);
QueryState query_state_from_string(std::string_view s);

struct QueryStatus {
  std::string execution_id;
  std::string session_id;
  std::string query;
  QueryState state = QueryState::Planning;
  int done_nodes = 0;
  int total_nodes = 0;
  std::optional<planner::ValidationReport> issues;
  std::string error;
  std::vector<std::pair<std::string, std::string>> failures;

  json to_json() const;
  static QueryStatus from_json(const json& j);
};

struct Turn {
  std::string query;
  std::string plan_id;
  std::string execution_id;
  std::string result_digest;

  json to_json() const;
  static Turn from_json(const json& j);
};

struct QuerySession {
  std::string session_id;
  int submitted = 0;
  std::vector<Turn> turns;

  json to_json() const;
  static QuerySession from_json(const json& j);
};

struct SubmitOptions {
  std::string session_id;             // empty = new session
  std::optional<planner::Plan> plan;  // skip planning
  bool wait = false;
};

struct Submission {
  std::string execution_id;
  std::string session_id;
};

class Service {
 public:
  // Builds the provider/cassette/client from the config unless a client is given.
  explicit Service(ServiceConfig cfg, std::shared_ptr<llm::LlmClient> client = nullptr);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const ServiceConfig& config() const noexcept { return cfg_; }
  llm::LlmClient& client() { return *client_; }
  std::shared_ptr<const kg::Graph> graph() const;
  const ops::Registry& registry() const noexcept { return registry_; }
  engine::PersistentCache& cache() { return *cache_; }

  // ---- artifacts
  ingest::IngestReport ingest(const std::filesystem::path& corpus_dir,
                              const std::optional<std::filesystem::path>& biblio);
  json build_taxonomy(taxonomy::TaxonomyKind kind, taxonomy::TaxonomyConfig tcfg);
  retrieval::EvalReport eval(const std::filesystem::path& eval_file);

  // ---- queries
  planner::PlanningOutcome plan_query(const std::string& query);
  Submission submit(const std::string& query, SubmitOptions opt = {});
  QueryStatus status(const std::string& execution_id) const;
  json result(const std::string& execution_id) const;  // Precondition unless done
  json trace(const std::string& execution_id) const;
  json plan_of(const std::string& execution_id) const;
  QuerySession session(const std::string& session_id) const;
  QueryStatus wait(const std::string& execution_id);

  // ---- Tier-3 reports (persisted, then served by browse)
  json run_trend(taxonomy::TaxonomyKind kind, const std::vector<std::string>& nodes, int k, bool expand);
  json run_matrix(std::optional<int> idea_k);
  json run_milestones(const std::vector<std::string>& nodes, int k);

  // kind: "taxonomy/problem" | "taxonomy/method" | "matrix" | "trend" | "milestones"
  json browse(const std::string& kind) const;

  std::filesystem::path path(const std::string& rel) const { return cfg_.data_dir / rel; }

 private:
  void run_query(std::string id, std::string session_id, std::string query, std::optional<planner::Plan> plan);
  void put_status(const QueryStatus& st);
  void save_graph(std::shared_ptr<kg::Graph> g);
  ops::OperatorContext context(const std::shared_ptr<const kg::Graph>& g,
                               const std::shared_ptr<const retrieval::Retriever>& r);
  std::string resolve_node(const kg::Graph& g, const std::string& name_or_id) const;

  ServiceConfig cfg_;
  std::shared_ptr<llm::LlmClient> client_;
  std::shared_ptr<engine::PersistentCache> cache_;
  std::shared_ptr<engine::TraceStore> traces_;
  std::shared_ptr<pipelines::EvidenceSource> evidence_;
  ops::Registry registry_;
  planner::Planner planner_;
  std::unique_ptr<engine::Engine> engine_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::shared_ptr<const kg::Graph> graph_;
  std::shared_ptr<const retrieval::Retriever> retriever_;
  std::mutex artifact_mu_;  // serializes graph-mutating commands
  std::vector<std::thread> workers_;
};

// Bind and serve the wire protocol. port 0 picks a free port.
class HttpServer {
 public:
  explicit HttpServer(Service& svc);
  ~HttpServer();
  int bind(const std::string& host, int port);
  void listen();  // blocks
  void start();   // background thread
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace scholar::service
