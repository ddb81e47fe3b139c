#include "scholar/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <queue>
#include <set>
#include <thread>

namespace scholar::engine {

using ops::OperatorResult;
using ops::PayloadKind;

namespace {

constexpr std::pair<NodeStatus, std::string_view> kStatusNames[] = {
    {NodeStatus::Pending, "pending"}, {NodeStatus::Ready, "ready"},   {NodeStatus::Running, "running"},
    {NodeStatus::Done, "done"},       {NodeStatus::Failed, "failed"}, {NodeStatus::CacheHit, "cache-hit"},
};

json input_ref_json(const InputRef& r) {
  json j{{"exec_id", r.exec_id}};
  if (r.item) j["item"] = *r.item;
  return j;
}

InputRef input_ref_from_json(const json& j) {
  InputRef r{j.at("exec_id").get<std::string>(), std::nullopt};
  if (j.contains("item") && !j["item"].is_null()) r.item = j["item"].get<int>();
  return r;
}

json summary_json(const llm::AccountingSummary& s) { return s.to_json(); }

llm::AccountingSummary summary_from_json(const json& j) {
  llm::AccountingSummary s;
  s.input_tokens = j.value("input_tokens", std::int64_t{0});
  s.output_tokens = j.value("output_tokens", std::int64_t{0});
  s.call_count = j.value("call_count", std::int64_t{0});
  s.embed_calls = j.value("embed_calls", std::int64_t{0});
  s.wall_ms = j.value("wall_ms", 0.0);
  return s;
}

}  // namespace

std::string_view to_string(NodeStatus s) {
  for (const auto& [k, v] : kStatusNames) {
    if (k == s) return v;
  }
  return "?";
}

NodeStatus node_status_from_string(std::string_view s) {
  for (const auto& [k, v] : kStatusNames) {
    if (v == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown node status: " + std::string(s));
}

// ---------------------------------------------------------------- graph

std::vector<std::string> ExecutionNode::upstream() const {
  std::vector<std::string> out;
  for (const auto& r : inputs) {
    if (std::find(out.begin(), out.end(), r.exec_id) == out.end()) out.push_back(r.exec_id);
  }
  return out;
}

json ExecutionNode::to_json() const {
  json in = json::array();
  for (const auto& r : inputs) in.push_back(input_ref_json(r));
  return json{{"exec_id", exec_id},
              {"origin_step_id", origin_step_id},
              {"op_name", op_name},
              {"params", params},
              {"execution_mode", ops::to_string(mode)},
              {"instance_index", instance_index ? json(*instance_index) : json(nullptr)},
              {"inputs", in},
              {"scope", scope},
              {"dep_count", dep_count},
              {"status", to_string(status)}};
}

const ExecutionNode* ExecutionGraph::find(const std::string& id) const {
  for (const auto& n : nodes) {
    if (n.exec_id == id) return &n;
  }
  return nullptr;
}

std::vector<std::pair<std::string, std::string>> ExecutionGraph::edges() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& n : nodes) {
    for (const auto& u : n.upstream()) out.push_back({u, n.exec_id});
  }
  return out;
}

void ExecutionGraph::check() const {
  std::map<std::string, int> indeg;
  std::map<std::string, std::vector<std::string>> down;
  for (const auto& n : nodes) {
    if (!indeg.emplace(n.exec_id, 0).second) throw Error(ErrorCode::InvalidArgument, "duplicate exec id " + n.exec_id);
  }
  for (const auto& n : nodes) {
    for (const auto& u : n.upstream()) {
      if (!indeg.count(u)) throw Error(ErrorCode::InvalidArgument, n.exec_id + " consumes unknown node " + u);
      ++indeg[n.exec_id];
      down[u].push_back(n.exec_id);
    }
  }
  std::deque<std::string> q;
  for (const auto& [id, d] : indeg) {
    if (d == 0) q.push_back(id);
  }
  std::size_t seen = 0;
  while (!q.empty()) {
    auto id = q.front();
    q.pop_front();
    ++seen;
    for (const auto& d : down[id]) {
      if (--indeg[d] == 0) q.push_back(d);
    }
  }
  if (seen != nodes.size()) throw Error(ErrorCode::InvalidArgument, "execution graph has a cycle");
}

json ExecutionGraph::to_json() const {
  json ns = json::array();
  for (const auto& n : nodes) ns.push_back(n.to_json());
  json es = json::array();
  for (const auto& [a, b] : edges()) es.push_back({a, b});
  return json{{"nodes", ns}, {"edges", es}, {"terminals", terminals}};
}

// ---------------------------------------------------------------- cache

PersistentCache::PersistentCache(std::optional<std::filesystem::path> path) : path_(std::move(path)) {
  if (!path_) return;
  std::error_code ec;
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path(), ec);
  std::ifstream in(*path_);
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      entries_.emplace(j.at("key").get<std::string>(), OperatorResult::from_json(j.at("value")));
    } catch (const std::exception& e) {
      warnings_.push_back("cache line " + std::to_string(lineno) + " skipped: " + e.what());
    }
  }
}

std::optional<OperatorResult> PersistentCache::get(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

OperatorResult PersistentCache::get_or_insert(const std::string& key, const OperatorResult& value, bool* inserted) {
  std::lock_guard lock(mutex_);
  auto [it, fresh] = entries_.emplace(key, value);
  if (inserted) *inserted = fresh;
  if (fresh && path_) {
    std::ofstream out(*path_, std::ios::app);
    auto created = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
    if (out) {
      out << json{{"key", key}, {"value", value.to_json()}, {"created_at", created}}.dump() << "\n";
    }
    if (!out) warnings_.push_back("cache write failed for " + path_->string());
  }
  return it->second;
}

std::size_t PersistentCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<std::string> PersistentCache::warnings() const {
  std::lock_guard lock(mutex_);
  return warnings_;
}

std::string cache_key(const std::string& op_name, const json& params, const std::vector<std::string>& input_digests,
                      const std::string& corpus_version, const std::string& op_version) {
  return json_digest(json{{"op", op_name},
                          {"params", params},
                          {"inputs", input_digests},
                          {"corpus_version", corpus_version},
                          {"op_version", op_version}});
}

// ---------------------------------------------------------------- traces

json TraceRecord::to_json() const {
  json in = json::array();
  for (const auto& r : inputs) in.push_back(input_ref_json(r));
  json tr = json::array();
  for (const auto& t : transitions) tr.push_back({{"status", to_string(t.status)}, {"t_ms", t.t_ms}, {"seq", t.seq}});
  return json{{"exec_id", exec_id},
              {"origin_step_id", origin_step_id},
              {"op_name", op_name},
              {"params", params},
              {"instance_index", instance_index ? json(*instance_index) : json(nullptr)},
              {"scope", scope},
              {"inputs", in},
              {"deps", deps},
              {"inputs_digest", inputs_digest},
              {"output_digest", output_digest},
              {"cache_key", cache_key},
              {"status", to_string(status)},
              {"transitions", tr},
              {"wall_ms", wall_ms},
              {"tokens", summary_json(tokens)},
              {"error", error}};
}

TraceRecord TraceRecord::from_json(const json& j) {
  TraceRecord r;
  r.exec_id = j.at("exec_id").get<std::string>();
  r.origin_step_id = j.value("origin_step_id", "");
  r.op_name = j.value("op_name", "");
  r.params = j.value("params", json::object());
  if (j.contains("instance_index") && !j["instance_index"].is_null()) r.instance_index = j["instance_index"].get<int>();
  r.scope = j.value("scope", false);
  for (const auto& x : j.value("inputs", json::array())) r.inputs.push_back(input_ref_from_json(x));
  r.deps = j.value("deps", std::vector<std::string>{});
  r.inputs_digest = j.value("inputs_digest", "");
  r.output_digest = j.value("output_digest", "");
  r.cache_key = j.value("cache_key", "");
  r.status = node_status_from_string(j.value("status", std::string("pending")));
  for (const auto& t : j.value("transitions", json::array())) {
    r.transitions.push_back({node_status_from_string(t.at("status").get<std::string>()), t.value("t_ms", 0.0),
                             t.value("seq", std::uint64_t{0})});
  }
  r.wall_ms = j.value("wall_ms", 0.0);
  r.tokens = summary_from_json(j.value("tokens", json::object()));
  r.error = j.value("error", "");
  return r;
}

std::vector<std::pair<std::string, std::string>> ExecutionTrace::edges() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& r : records) {
    for (const auto& d : r.deps) out.push_back({d, r.exec_id});
  }
  return out;
}

const TraceRecord* ExecutionTrace::find(const std::string& exec_id) const {
  for (const auto& r : records) {
    if (r.exec_id == exec_id) return &r;
  }
  return nullptr;
}

json ExecutionTrace::to_json() const {
  json rs = json::array();
  for (const auto& r : records) rs.push_back(r.to_json());
  json es = json::array();
  for (const auto& [a, b] : edges()) es.push_back({a, b});
  return json{{"execution_id", execution_id},
              {"query", query},
              {"plan", plan},
              {"corpus_version", corpus_version},
              {"status", status},
              {"records", rs},
              {"edges", es},
              {"terminals", terminals},
              {"summary", summary}};
}

ExecutionTrace ExecutionTrace::from_json(const json& j) {
  ExecutionTrace t;
  t.execution_id = j.at("execution_id").get<std::string>();
  t.query = j.value("query", "");
  t.plan = j.value("plan", json());
  t.corpus_version = j.value("corpus_version", "");
  t.status = j.value("status", "");
  for (const auto& r : j.value("records", json::array())) t.records.push_back(TraceRecord::from_json(r));
  t.terminals = j.value("terminals", std::vector<std::string>{});
  t.summary = j.value("summary", json::object());
  return t;
}

TraceStore::TraceStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create trace directory " + dir_.string());
}

void TraceStore::save(const ExecutionTrace& t) const {
  auto path = dir_ / (t.execution_id + ".json");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out << t.to_json().dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

ExecutionTrace TraceStore::load(const std::string& execution_id) const {
  auto path = dir_ / (execution_id + ".json");
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "unknown execution id: " + execution_id);
  try {
    return ExecutionTrace::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptSnapshot, "trace " + execution_id + ": " + e.what());
  }
}

bool TraceStore::exists(const std::string& execution_id) const {
  return std::filesystem::exists(dir_ / (execution_id + ".json"));
}

std::vector<std::string> TraceStore::list() const {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir_)) {
    if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- config / results

json EngineConfig::to_json() const {
  return json{{"max_parallel", max_parallel}, {"use_cache", use_cache}, {"deterministic", deterministic},
              {"op_version", op_version}};
}

EngineConfig EngineConfig::from_json(const json& j) {
  EngineConfig c;
  c.max_parallel = j.value("max_parallel", c.max_parallel);
  c.use_cache = j.value("use_cache", c.use_cache);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.op_version = j.value("op_version", c.op_version);
  if (c.max_parallel < 1) throw Error(ErrorCode::InvalidArgument, "max_parallel must be >= 1");
  return c;
}

json TerminalOutput::to_json() const {
  json rs = json::array();
  for (const auto& r : results) rs.push_back(r.to_json());
  return json{{"step_id", step_id}, {"results", rs}};
}

json ExecutionResult::result_json() const {
  json ts = json::array();
  for (const auto& t : terminals) ts.push_back(t.to_json());
  json fs = json::array();
  for (const auto& [id, msg] : failures) fs.push_back({{"exec_id", id}, {"message", msg}});
  return json{{"execution_id", execution_id}, {"ok", ok}, {"terminals", ts}, {"failures", fs}};
}

// ---------------------------------------------------------------- unfolding

std::vector<std::string> scope_steps(const planner::Plan& plan) {
  std::set<std::string> scope;
  for (const auto& id : plan.topo_order()) {
    const auto* s = plan.find(id);
    if (s->execution_mode != ops::ExecMode::NA) continue;
    bool all_scope = std::all_of(s->inputs.begin(), s->inputs.end(), [&](const auto& in) { return scope.count(in) > 0; });
    if (all_scope) scope.insert(id);
  }
  std::vector<std::string> out;
  for (const auto& s : plan.steps) {
    if (scope.count(s.step_id)) out.push_back(s.step_id);
  }
  return out;
}

ExecutionGraph unfold(const planner::Plan& plan, const std::map<std::string, OperatorResult>& scope_results) {
  ExecutionGraph g;
  std::map<std::string, std::vector<std::string>> nodes_of;
  std::set<std::string> per_item;  // steps unfolded per item
  auto scopes = scope_steps(plan);
  std::set<std::string> scope_set(scopes.begin(), scopes.end());
  for (const auto& id : plan.topo_order()) {
    const auto* s = plan.find(id);
    if (scope_set.count(id)) {
      nodes_of[id] = {id};
      continue;
    }
    const auto* spec = ops::find_spec(s->op_name);
    if (!spec) throw Error(ErrorCode::EngineFailure, "unfold: unknown operator " + s->op_name);
    if (s->execution_mode != ops::ExecMode::NA &&
        std::find(spec->modes.begin(), spec->modes.end(), s->execution_mode) == spec->modes.end()) {
      throw Error(ErrorCode::EngineFailure, "unfold: mode " + std::string(ops::to_string(s->execution_mode)) +
                                                " illegal for " + s->op_name);
    }
    auto make = [&](std::string exec_id, std::optional<int> idx) {
      ExecutionNode n;
      n.exec_id = std::move(exec_id);
      n.origin_step_id = id;
      n.op_name = s->op_name;
      n.params = s->params;
      n.mode = s->execution_mode;
      n.instance_index = idx;
      return n;
    };
    if (s->execution_mode == ops::ExecMode::Instance) {
      std::optional<int> count;
      for (const auto& in : s->inputs) {
        int n;
        if (scope_set.count(in)) {
          auto it = scope_results.find(in);
          if (it == scope_results.end()) throw Error(ErrorCode::EngineFailure, "unfold: no scope result for " + in);
          n = it->second.kind == PayloadKind::EntityList ? static_cast<int>(it->second.value.size()) : 1;
        } else if (per_item.count(in)) {
          n = static_cast<int>(nodes_of[in].size());
        } else {
          continue;
        }
        if (count && *count != n) {
          throw Error(ErrorCode::EngineFailure, "unfold: inputs of " + id + " disagree on the item count");
        }
        count = n;
      }
      if (count) {
        per_item.insert(id);
        for (int i = 0; i < *count; ++i) {
          auto n = make(id + "#" + std::to_string(i), i);
          for (const auto& in : s->inputs) {
            if (scope_set.count(in)) {
              n.inputs.push_back({in, scope_results.at(in).kind == PayloadKind::EntityList ? std::optional<int>(i)
                                                                                            : std::nullopt});
            } else if (per_item.count(in)) {
              n.inputs.push_back({nodes_of[in][i], std::nullopt});
            } else {
              for (const auto& u : nodes_of[in]) n.inputs.push_back({u, std::nullopt});
            }
          }
          nodes_of[id].push_back(n.exec_id);
          g.nodes.push_back(std::move(n));
        }
        continue;
      }
    }
    auto n = make(id, s->execution_mode == ops::ExecMode::Instance ? std::optional<int>(0) : std::nullopt);
    for (const auto& in : s->inputs) {
      for (const auto& u : nodes_of[in]) n.inputs.push_back({u, std::nullopt});
    }
    n.empty_group = !s->inputs.empty() && n.inputs.empty();
    nodes_of[id] = {n.exec_id};
    g.nodes.push_back(std::move(n));
  }
  for (const auto& t : plan.terminals()) {
    for (const auto& e : nodes_of[t]) g.terminals.push_back(e);
  }
  return g;
}

// ---------------------------------------------------------------- engine

struct Engine::RunState {
  std::string execution_id;
  std::string query;
  json plan;
  std::string corpus_version;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  std::mutex mu;
  std::condition_variable cv;
  std::map<std::string, OperatorResult> buffer;
  std::vector<std::unique_ptr<ExecutionNode>> nodes;
  std::map<std::string, ExecutionNode*> by_id;
  std::map<std::string, std::size_t> index;
  std::map<std::string, TraceRecord> records;
  std::vector<std::pair<std::string, std::string>> failures;
  std::uint64_t seq = 0;
  int finished = 0;
  ProgressFn progress;

  ExecutionNode* add(ExecutionNode n) {
    auto p = std::make_unique<ExecutionNode>(std::move(n));
    auto* raw = p.get();
    index[raw->exec_id] = nodes.size();
    by_id[raw->exec_id] = raw;
    TraceRecord r;
    r.exec_id = raw->exec_id;
    r.origin_step_id = raw->origin_step_id;
    r.op_name = raw->op_name;
    r.params = raw->params;
    r.instance_index = raw->instance_index;
    r.scope = raw->scope;
    r.inputs = raw->inputs;
    r.deps = raw->upstream();
    records[raw->exec_id] = r;
    nodes.push_back(std::move(p));
    return raw;
  }
};

Engine::Engine(const ops::Registry& registry, std::shared_ptr<PersistentCache> cache, EngineConfig cfg)
    : registry_(registry), cache_(std::move(cache)), cfg_(std::move(cfg)) {
  if (cfg_.max_parallel < 1) throw Error(ErrorCode::InvalidArgument, "max_parallel must be >= 1");
  if (!cache_) cache_ = std::make_shared<PersistentCache>();
}

std::string Engine::next_id(const json& seed) {
  std::lock_guard lock(id_mutex_);
  return "exec-" + json_digest(json{{"seed", seed}, {"n", seq_++}}).substr(0, 16);
}

OperatorResult Engine::fetch_input(RunState& st, const InputRef& ref) const {
  OperatorResult whole;
  {
    std::lock_guard lock(st.mu);
    auto it = st.buffer.find(ref.exec_id);
    if (it == st.buffer.end()) {
      throw Error(ErrorCode::EngineFailure, "input " + ref.exec_id + " missing from buffer");
    }
    whole = it->second;
  }
  if (!ref.item) return whole;
  if (whole.kind != PayloadKind::EntityList || *ref.item < 0 ||
      *ref.item >= static_cast<int>(whole.value.size())) {
    throw Error(ErrorCode::EngineFailure, "item " + std::to_string(*ref.item) + " of " + ref.exec_id + " missing");
  }
  const auto& e = whole.value[static_cast<std::size_t>(*ref.item)];
  return ops::make_result(PayloadKind::EntityList, json::array({e}), {e.value("id", "")});
}

void Engine::run_nodes(RunState& st, std::vector<ExecutionNode*> batch, ops::OperatorContext& ctx) {
  if (batch.empty()) return;
  std::set<std::string> in_batch;
  for (auto* n : batch) in_batch.insert(n->exec_id);
  std::map<std::string, std::vector<ExecutionNode*>> down;
  auto cmp = [&st](const ExecutionNode* a, const ExecutionNode* b) {
    return st.index[a->exec_id] > st.index[b->exec_id];
  };
  std::priority_queue<ExecutionNode*, std::vector<ExecutionNode*>, decltype(cmp)> ready(cmp);
  int remaining = static_cast<int>(batch.size());

  auto stamp = [&](ExecutionNode& n, NodeStatus s) {
    // Caller holds st.mu.
    n.status = s;
    auto& rec = st.records[n.exec_id];
    rec.status = s;
    Transition t{s, 0.0, 0};
    if (cfg_.deterministic) {
      t.t_ms = static_cast<double>(rec.transitions.size());
      t.seq = rec.transitions.size();
    } else {
      t.t_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - st.t0).count();
      t.seq = ++st.seq;
    }
    rec.transitions.push_back(t);
  };
  auto report = [&]() {
    if (st.progress) st.progress(st.finished, static_cast<int>(st.nodes.size()));
  };
  // Caller holds st.mu.
  std::function<void(ExecutionNode&, const std::string&)> fail = [&](ExecutionNode& n, const std::string& msg) {
    stamp(n, NodeStatus::Failed);
    st.records[n.exec_id].error = msg;
    st.failures.push_back({n.exec_id, msg});
    --remaining;
    ++st.finished;
    for (auto* d : down[n.exec_id]) {
      if (d->status == NodeStatus::Pending) fail(*d, "upstream " + n.exec_id + " failed");
    }
  };

  {
    std::lock_guard lock(st.mu);
    for (auto* n : batch) {
      n->dep_count = 0;
      for (const auto& u : n->upstream()) {
        if (in_batch.count(u)) {
          ++n->dep_count;
          down[u].push_back(n);
        }
      }
    }
    for (auto* n : batch) {
      if (n->status != NodeStatus::Pending) continue;
      std::string bad;
      for (const auto& u : n->upstream()) {
        if (in_batch.count(u)) continue;
        auto it = st.by_id.find(u);
        if (!st.buffer.count(u) || (it != st.by_id.end() && it->second->status == NodeStatus::Failed)) bad = u;
      }
      if (!bad.empty()) {
        fail(*n, "upstream " + bad + " unavailable");
      } else if (n->dep_count == 0) {
        stamp(*n, NodeStatus::Ready);
        ready.push(n);
      }
    }
  }

  auto execute_one = [&](ExecutionNode& n) {
    const auto* spec = ops::find_spec(n.op_name);
    llm::CallScope calls;
    auto t_start = std::chrono::steady_clock::now();
    std::optional<OperatorResult> out;
    bool hit = false;
    std::string key, inputs_digest, error;
    try {
      if (!spec) throw Error(ErrorCode::NotFound, "unknown operator " + n.op_name);
      std::vector<OperatorResult> inputs;
      std::vector<std::string> digests;
      for (const auto& ref : n.inputs) {
        inputs.push_back(fetch_input(st, ref));
        digests.push_back(inputs.back().digest());
      }
      inputs_digest = json_digest(json(digests));
      const bool all_empty = !n.inputs.empty() && std::all_of(inputs.begin(), inputs.end(),
                                                              [](const auto& r) { return r.empty(); });
      const bool group_like = n.mode != ops::ExecMode::Instance && !n.scope;
      if (n.empty_group || (group_like && all_empty && !spec->source_less)) {
        out = ops::empty_result(spec->output_kind);
        std::lock_guard lock(st.mu);
        stamp(n, NodeStatus::Running);
      } else {
        key = cache_key(n.op_name, n.params, digests, st.corpus_version, cfg_.op_version);
        if (cfg_.use_cache) {
          if (auto c = cache_->get(key)) {
            out = *c;
            hit = true;
          }
        }
        if (!hit) {
          {
            std::lock_guard lock(st.mu);
            stamp(n, NodeStatus::Running);
          }
          auto r = registry_.invoke(n.op_name, n.params, inputs, ctx);
          out = cfg_.use_cache ? cache_->get_or_insert(key, r) : r;
        }
      }
    } catch (const std::exception& e) {
      error = e.what();
      if (error.empty()) error = "operator failed";
    }
    double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
    std::lock_guard lock(st.mu);
    auto& rec = st.records[n.exec_id];
    rec.cache_key = key;
    rec.inputs_digest = inputs_digest;
    rec.wall_ms = cfg_.deterministic ? 0.0 : wall;
    rec.tokens = hit ? llm::AccountingSummary{} : calls.summary();
    if (cfg_.deterministic) rec.tokens.wall_ms = 0.0;
    if (!out) {
      if (n.status == NodeStatus::Ready) stamp(n, NodeStatus::Running);
      fail(n, error);
    } else {
      rec.output_digest = out->digest();
      if (!st.buffer.emplace(n.exec_id, *out).second) {
        fail(n, "buffer already holds " + n.exec_id);
      } else {
        stamp(n, hit ? NodeStatus::CacheHit : NodeStatus::Done);
        --remaining;
        ++st.finished;
        for (auto* d : down[n.exec_id]) {
          if (d->status != NodeStatus::Pending) continue;
          if (--d->dep_count == 0) {
            stamp(*d, NodeStatus::Ready);
            ready.push(d);
          }
        }
      }
    }
    report();
    st.cv.notify_all();
  };

  auto worker = [&]() {
    for (;;) {
      ExecutionNode* n = nullptr;
      {
        std::unique_lock lock(st.mu);
        st.cv.wait(lock, [&] { return remaining == 0 || !ready.empty(); });
        if (ready.empty()) return;
        n = ready.top();
        ready.pop();
      }
      execute_one(*n);
    }
  };

  const int workers = std::max(1, std::min(cfg_.max_parallel, static_cast<int>(batch.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (remaining != 0) throw Error(ErrorCode::EngineFailure, "scheduler stopped with unfinished nodes");
}

ExecutionResult Engine::finish(RunState& st,
                               const std::vector<std::pair<std::string, std::vector<std::string>>>& terms) {
  ExecutionResult res;
  res.execution_id = st.execution_id;
  res.failures = st.failures;
  res.ok = st.failures.empty();
  for (const auto& [step, ids] : terms) {
    TerminalOutput t{step, {}};
    for (const auto& id : ids) {
      auto it = st.buffer.find(id);
      if (it != st.buffer.end()) t.results.push_back(it->second);
    }
    res.terminals.push_back(std::move(t));
  }
  auto& tr = res.trace;
  tr.execution_id = st.execution_id;
  tr.query = st.query;
  tr.plan = st.plan;
  tr.corpus_version = st.corpus_version;
  tr.status = res.ok ? "done" : "failed";
  llm::AccountingSummary total;
  int done = 0, hits = 0, failed = 0;
  for (const auto& n : st.nodes) {
    auto rec = st.records[n->exec_id];
    total.input_tokens += rec.tokens.input_tokens;
    total.output_tokens += rec.tokens.output_tokens;
    total.call_count += rec.tokens.call_count;
    total.embed_calls += rec.tokens.embed_calls;
    if (rec.status == NodeStatus::Done) ++done;
    if (rec.status == NodeStatus::CacheHit) ++hits;
    if (rec.status == NodeStatus::Failed) ++failed;
    tr.records.push_back(std::move(rec));
  }
  for (const auto& [step, ids] : terms) tr.terminals.insert(tr.terminals.end(), ids.begin(), ids.end());
  double wall = cfg_.deterministic
                    ? 0.0
                    : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - st.t0).count();
  tr.summary = json{{"nodes", st.nodes.size()},
                    {"done", done},
                    {"cache_hits", hits},
                    {"failed", failed},
                    {"wall_ms", wall},
                    {"tokens", total.to_json()}};
  st.buffer.clear();
  if (traces_) traces_->save(tr);
  return res;
}

ExecutionResult Engine::execute(const planner::Plan& plan, ops::OperatorContext& ctx, const std::string& execution_id,
                                const std::string& query, ProgressFn progress) {
  auto report = planner::validate(plan, {true});
  if (!report.ok()) throw planner::PlanningError("plan failed validation:\n" + report.describe(), report);
  RunState st;
  st.query = query;
  st.plan = plan.to_json();
  st.corpus_version = ctx.graph ? ctx.graph->corpus_version() : std::string();
  st.execution_id = execution_id.empty() ? next_id(json{{"plan", st.plan}, {"corpus", st.corpus_version}})
                                         : execution_id;
  st.progress = std::move(progress);

  // Scope phase.
  auto scopes = scope_steps(plan);
  std::vector<ExecutionNode*> batch;
  for (const auto& id : scopes) {
    const auto* s = plan.find(id);
    ExecutionNode n;
    n.exec_id = id;
    n.origin_step_id = id;
    n.op_name = s->op_name;
    n.params = s->params;
    n.mode = ops::ExecMode::NA;
    n.scope = true;
    for (const auto& in : s->inputs) n.inputs.push_back({in, std::nullopt});
    batch.push_back(st.add(std::move(n)));
  }
  run_nodes(st, batch, ctx);

  std::vector<std::pair<std::string, std::vector<std::string>>> terms;
  if (!st.failures.empty()) {
    for (const auto& t : plan.terminals()) terms.push_back({t, {}});
    return finish(st, terms);
  }
  std::map<std::string, OperatorResult> scope_results;
  for (const auto& id : scopes) scope_results[id] = st.buffer.at(id);

  auto g = unfold(plan, scope_results);
  batch.clear();
  for (auto& n : g.nodes) batch.push_back(st.add(std::move(n)));
  run_nodes(st, batch, ctx);

  for (const auto& t : plan.terminals()) {
    std::vector<std::string> ids;
    for (const auto& n : st.nodes) {
      if (n->origin_step_id == t) ids.push_back(n->exec_id);
    }
    terms.push_back({t, ids});
  }
  return finish(st, terms);
}

ExecutionResult Engine::run_graph(ExecutionGraph graph, ops::OperatorContext& ctx, const std::string& execution_id,
                                  ProgressFn progress) {
  graph.check();
  RunState st;
  st.corpus_version = ctx.graph ? ctx.graph->corpus_version() : std::string();
  st.execution_id = execution_id.empty() ? next_id(graph.to_json()) : execution_id;
  st.plan = graph.to_json();
  st.progress = std::move(progress);
  std::vector<ExecutionNode*> batch;
  for (auto& n : graph.nodes) {
    n.status = NodeStatus::Pending;
    batch.push_back(st.add(std::move(n)));
  }
  run_nodes(st, batch, ctx);
  std::vector<std::pair<std::string, std::vector<std::string>>> terms;
  for (const auto& t : graph.terminals) terms.push_back({t, {t}});
  return finish(st, terms);
}

}  // namespace scholar::engine
