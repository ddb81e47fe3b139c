#pragma once
// Plan execution: scope phase, unfolding into an execution graph,
// dependency-counted parallel dispatch, buffer + persistent cache, traces.

#include "scholar/operators.hpp"
#include "scholar/planner.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace scholar::engine {

enum class NodeStatus { Pending, Ready, Running, Done, Failed, CacheHit };
std::string_view to_string(NodeStatus s);
NodeStatus node_status_from_string(std::string_view s);

// One consumed value: a whole upstream output, or item `item` of an
// upstream entity list.
struct InputRef {
  std::string exec_id;
  std::optional<int> item;

  bool operator==(const InputRef&) const = default;
};

struct ExecutionNode {
  std::string exec_id;
  std::string origin_step_id;
  std::string op_name;
  json params = json::object();
  ops::ExecMode mode = ops::ExecMode::NA;
  std::optional<int> instance_index;
  std::vector<InputRef> inputs;
  bool scope = false;
  // Group node whose declared inputs all unfolded to nothing.
  bool empty_group = false;
  int dep_count = 0;
  NodeStatus status = NodeStatus::Pending;

  std::vector<std::string> upstream() const;  // distinct, in input order
  json to_json() const;
};

struct ExecutionGraph {
  std::vector<ExecutionNode> nodes;
  std::vector<std::string> terminals;  // exec ids in plan terminal order

  const ExecutionNode* find(const std::string& id) const;
  std::vector<std::pair<std::string, std::string>> edges() const;  // upstream -> downstream
  // Throws InvalidArgument on an unknown upstream or a cycle.
  void check() const;
  json to_json() const;
};

// Content-addressed memo store. Append-only JSONL file when a path is given.
class PersistentCache {
 public:
  explicit PersistentCache(std::optional<std::filesystem::path> path = std::nullopt);

  std::optional<ops::OperatorResult> get(const std::string& key) const;
  // First writer wins; losers get the stored value back.
  ops::OperatorResult get_or_insert(const std::string& key, const ops::OperatorResult& value, bool* inserted = nullptr);
  std::size_t size() const;
  std::vector<std::string> warnings() const;
  const std::optional<std::filesystem::path>& path() const noexcept { return path_; }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, ops::OperatorResult> entries_;
  std::optional<std::filesystem::path> path_;
  std::vector<std::string> warnings_;
};

std::string cache_key(const std::string& op_name, const json& params, const std::vector<std::string>& input_digests,
                      const std::string& corpus_version, const std::string& op_version);

struct Transition {
  NodeStatus status = NodeStatus::Pending;
  double t_ms = 0.0;      // since execution start; ordinal in deterministic mode
  std::uint64_t seq = 0;  // global event order; ordinal in deterministic mode
};

struct TraceRecord {
  std::string exec_id;
  std::string origin_step_id;
  std::string op_name;
  json params = json::object();
  std::optional<int> instance_index;
  bool scope = false;
  std::vector<InputRef> inputs;
  std::vector<std::string> deps;
  std::string inputs_digest;
  std::string output_digest;
  std::string cache_key;
  NodeStatus status = NodeStatus::Pending;
  std::vector<Transition> transitions;
  double wall_ms = 0.0;
  llm::AccountingSummary tokens;
  std::string error;

  json to_json() const;
  static TraceRecord from_json(const json& j);
};

struct ExecutionTrace {
  std::string execution_id;
  std::string query;
  json plan;
  std::string corpus_version;
  std::string status;  // done | failed
  std::vector<TraceRecord> records;  // node creation order
  std::vector<std::string> terminals;
  json summary = json::object();

  // Edge set recovered from the records alone.
  std::vector<std::pair<std::string, std::string>> edges() const;
  const TraceRecord* find(const std::string& exec_id) const;
  json to_json() const;
  static ExecutionTrace from_json(const json& j);
};

class TraceStore {
 public:
  explicit TraceStore(std::filesystem::path dir);
  void save(const ExecutionTrace& t) const;
  ExecutionTrace load(const std::string& execution_id) const;  // NotFound for unknown ids
  bool exists(const std::string& execution_id) const;
  std::vector<std::string> list() const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
};

struct EngineConfig {
  int max_parallel = 4;
  bool use_cache = true;
  // Logical clock and zeroed wall times in traces.
  bool deterministic = false;
  std::string op_version = "1";

  json to_json() const;
  static EngineConfig from_json(const json& j);
};

struct TerminalOutput {
  std::string step_id;
  std::vector<ops::OperatorResult> results;  // one per unfolded node

  json to_json() const;
};

struct ExecutionResult {
  std::string execution_id;
  bool ok = false;
  std::vector<TerminalOutput> terminals;
  std::vector<std::pair<std::string, std::string>> failures;  // exec id, message
  ExecutionTrace trace;

  json result_json() const;
};

// (done-or-failed nodes, known nodes)
using ProgressFn = std::function<void(int, int)>;

// Scope steps: the n/a-mode steps fed only by other n/a-mode steps.
std::vector<std::string> scope_steps(const planner::Plan& plan);

// Instance steps are replicated per item of their per-item source (scope
// entity list or upstream instance step); group steps get one node.
ExecutionGraph unfold(const planner::Plan& plan, const std::map<std::string, ops::OperatorResult>& scope_results);

class Engine {
 public:
  Engine(const ops::Registry& registry, std::shared_ptr<PersistentCache> cache, EngineConfig cfg = {});

  void set_trace_store(std::shared_ptr<TraceStore> store) { traces_ = std::move(store); }
  const EngineConfig& config() const noexcept { return cfg_; }
  PersistentCache* cache() const noexcept { return cache_.get(); }

  ExecutionResult execute(const planner::Plan& plan, ops::OperatorContext& ctx, const std::string& execution_id = "",
                          const std::string& query = "", ProgressFn progress = {});

  // Runs an already-unfolded graph (all nodes pending).
  ExecutionResult run_graph(ExecutionGraph graph, ops::OperatorContext& ctx, const std::string& execution_id,
                            ProgressFn progress = {});

 private:
  struct RunState;
  void run_nodes(RunState& st, std::vector<ExecutionNode*> nodes, ops::OperatorContext& ctx);
  ops::OperatorResult fetch_input(RunState& st, const InputRef& ref) const;
  ExecutionResult finish(RunState& st, const std::vector<std::pair<std::string, std::vector<std::string>>>& terms);
  std::string next_id(const json& seed);

  const ops::Registry& registry_;
  std::shared_ptr<PersistentCache> cache_;
  EngineConfig cfg_;
  std::shared_ptr<TraceStore> traces_;
  std::mutex id_mutex_;
  std::uint64_t seq_ = 0;
};

}  // namespace scholar::engine
