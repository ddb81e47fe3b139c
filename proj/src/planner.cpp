#include "scholar/planner.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <set>
#include <sstream>

namespace scholar::planner {

namespace {

using ops::PayloadKind;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::vector<std::string> string_list(const json& p, const char* key) {
  if (p.is_object() && p.contains(key) && p[key].is_array()) {
    std::vector<std::string> out;
    for (const auto& x : p[key]) {
      if (x.is_string()) out.push_back(x.get<std::string>());
    }
    return out;
  }
  return {};
}

std::string str_of(const json& p, const char* key) {
  if (p.is_object() && p.contains(key) && p[key].is_string()) return p[key].get<std::string>();
  return {};
}

// Section units an Extract step reads.
std::vector<std::string> extract_tags(const PlanStep& s) {
  auto tags = string_list(s.params, "section_tags");
  if (tags.empty()) {
    if (const auto* h = ops::find_handler(str_of(s.params, "handler"))) tags = h->section_tags;
  }
  return tags;
}

bool is_structured(PayloadKind k) {
  return k == PayloadKind::StructuredRecord || k == PayloadKind::TableGrid || k == PayloadKind::Ranking ||
         k == PayloadKind::Matrix;
}

json bind_slots(const json& v, const std::string& task) {
  if (v.is_string()) {
    auto s = v.get<std::string>();
    for (auto p = s.find("{task}"); p != std::string::npos; p = s.find("{task}", p + task.size())) {
      s.replace(p, 6, task);
    }
    return s;
  }
  if (v.is_object()) {
    json out = json::object();
    for (const auto& [k, x] : v.items()) out[k] = bind_slots(x, task);
    return out;
  }
  if (v.is_array()) {
    json out = json::array();
    for (const auto& x : v) out.push_back(bind_slots(x, task));
    return out;
  }
  return v;
}

json compact_catalog() {
  json out = json::array();
  for (const auto& s : ops::catalog()) {
    json in = json::array();
    for (auto k : s.input_kinds) in.push_back(ops::to_string(k));
    json modes = json::array();
    for (auto m : s.modes) modes.push_back(ops::to_string(m));
    json params = json::array();
    const json props = s.param_schema.value("properties", json::object());
    for (const auto& [k, _] : props.items()) params.push_back(k);
    out.push_back({{"name", s.name},
                   {"description", s.description},
                   {"input_kinds", in},
                   {"output_kind", ops::to_string(s.output_kind)},
                   {"execution_modes", modes},
                   {"params", params}});
  }
  return out;
}

json compact_handlers() {
  json out = json::array();
  for (const auto& h : ops::handlers()) {
    out.push_back({{"name", h.name}, {"op_name", h.op_name}, {"section_tags", h.section_tags}});
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- types

json ScopeTask::to_json() const { return json{{"scope", scope}, {"task", task}}; }

ScopeTask ScopeTask::from_json(const json& j) {
  return ScopeTask{j.at("scope").get<std::string>(), j.at("task").get<std::string>()};
}

json PlanStep::to_json() const {
  return json{{"step_id", step_id},
              {"op_name", op_name},
              {"params", params},
              {"execution_mode", ops::to_string(execution_mode)},
              {"inputs", inputs}};
}

PlanStep PlanStep::from_json(const json& j) {
  PlanStep s;
  s.step_id = j.contains("step_id") ? j.at("step_id").get<std::string>() : j.at("id").get<std::string>();
  s.op_name = j.at("op_name").get<std::string>();
  s.params = j.value("params", json::object());
  if (s.params.is_null()) s.params = json::object();
  s.execution_mode = ops::exec_mode_from_string(j.value("execution_mode", std::string("n/a")));
  s.inputs = j.value("inputs", std::vector<std::string>{});
  return s;
}

const PlanStep* Plan::find(const std::string& id) const {
  for (const auto& s : steps) {
    if (s.step_id == id) return &s;
  }
  return nullptr;
}

PlanStep* Plan::find(const std::string& id) {
  for (auto& s : steps) {
    if (s.step_id == id) return &s;
  }
  return nullptr;
}

std::vector<std::string> Plan::sinks() const {
  std::set<std::string> consumed;
  for (const auto& s : steps) consumed.insert(s.inputs.begin(), s.inputs.end());
  std::vector<std::string> out;
  for (const auto& s : steps) {
    if (!consumed.count(s.step_id)) out.push_back(s.step_id);
  }
  return out;
}

std::vector<std::string> Plan::terminals() const { return terminal_ids.empty() ? sinks() : terminal_ids; }

std::vector<std::string> Plan::topo_order() const {
  std::map<std::string, int> indeg;
  std::map<std::string, std::vector<std::string>> down;
  for (const auto& s : steps) indeg[s.step_id] = 0;
  for (const auto& s : steps) {
    for (const auto& in : s.inputs) {
      if (!indeg.count(in)) throw Error(ErrorCode::InvalidArgument, "step " + s.step_id + " consumes unknown " + in);
      ++indeg[s.step_id];
      down[in].push_back(s.step_id);
    }
  }
  // Declaration order among ready steps.
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < steps.size(); ++i) pos[steps[i].step_id] = i;
  auto cmp = [&](const std::string& a, const std::string& b) { return pos[a] > pos[b]; };
  std::priority_queue<std::string, std::vector<std::string>, decltype(cmp)> ready(cmp);
  for (const auto& [id, d] : indeg) {
    if (d == 0) ready.push(id);
  }
  std::vector<std::string> out;
  while (!ready.empty()) {
    auto id = ready.top();
    ready.pop();
    out.push_back(id);
    for (const auto& d : down[id]) {
      if (--indeg[d] == 0) ready.push(d);
    }
  }
  if (out.size() != indeg.size()) throw Error(ErrorCode::InvalidArgument, "plan is not a DAG");
  return out;
}

json Plan::to_json() const {
  json s = json::array();
  for (const auto& st : steps) s.push_back(st.to_json());
  return json{{"steps", s}, {"terminal_ids", terminal_ids}};
}

Plan Plan::from_json(const json& j) {
  Plan p;
  for (const auto& s : j.at("steps")) p.steps.push_back(PlanStep::from_json(s));
  p.terminal_ids = j.value("terminal_ids", std::vector<std::string>{});
  return p;
}

Plan Plan::load(const std::filesystem::path& path) {
  auto j = read_json_file(path);
  try {
    return from_json(j.contains("plan") ? j["plan"] : j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

void Plan::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

std::string_view to_string(DocScope d) {
  switch (d) {
    case DocScope::Single: return "single";
    case DocScope::Multiple: return "multiple";
    case DocScope::Topic: return "topic";
  }
  return "?";
}

DocScope doc_scope_from_string(std::string_view s) {
  if (s == "single") return DocScope::Single;
  if (s == "multiple") return DocScope::Multiple;
  if (s == "topic") return DocScope::Topic;
  throw Error(ErrorCode::InvalidArgument, "unknown doc scope: " + std::string(s));
}

json PredefinedPlan::to_json() const {
  return json{{"plan_id", plan_id},
              {"description", description},
              {"doc_scope", to_string(doc_scope)},
              {"template", templ.to_json()}};
}

PredefinedPlan PredefinedPlan::from_json(const json& j) {
  return PredefinedPlan{j.at("plan_id").get<int>(), j.at("description").get<std::string>(),
                        Plan::from_json(j.at("template")),
                        doc_scope_from_string(j.value("doc_scope", std::string("single")))};
}

json Demo::to_json() const { return json{{"query", query}, {"plan", plan.to_json()}}; }

Demo Demo::from_json(const json& j) { return Demo{j.at("query").get<std::string>(), Plan::from_json(j.at("plan"))}; }

// ---------------------------------------------------------------- library

namespace {

PlanStep step(std::string id, std::string op, json params, ExecMode mode, std::vector<std::string> inputs = {}) {
  return PlanStep{std::move(id), std::move(op), std::move(params), mode, std::move(inputs)};
}

constexpr auto I = ExecMode::Instance;
constexpr auto G = ExecMode::Group;

Plan retrieve_then(const std::string& tag, const std::string& op, json params) {
  params["query"] = "{task}";
  return Plan{{step("retrieve", "Retrieve", {{"section_tags", {tag}}}, I),
               step(to_lower(op), op, std::move(params), I, {"retrieve"})},
              {}};
}

Plan extract_then_group(const std::string& tag, const std::string& extract_handler, const std::string& op,
                        json params) {
  params["query"] = "{task}";
  return Plan{{step("retrieve", "Retrieve", {{"section_tags", {tag}}}, I),
               step("extract", "Extract",
                    {{"handler", extract_handler}, {"section_tags", {tag}}, {"query", "{task}"},
                     {"detail_level", "detailed"}},
                    I, {"retrieve"}),
               step(to_lower(op), op, std::move(params), G, {"extract"})},
              {}};
}

}  // namespace

const std::vector<PredefinedPlan>& builtin_library() {
  static const std::vector<PredefinedPlan> lib = [] {
    std::vector<PredefinedPlan> v;
    auto extract = [&](int id, std::string desc, std::string handler) {
      const auto* h = ops::find_handler(handler);
      auto tag = h->section_tags.front();
      v.push_back({id, std::move(desc),
                   retrieve_then(tag, "Extract",
                                 {{"handler", handler}, {"section_tags", {tag}}, {"detail_level", "detailed"}}),
                   DocScope::Single});
    };
    extract(1, "Extract experimental settings", "extract_exp_settings");
    extract(2, "Extract experimental datasets", "extract_datasets");
    extract(3, "Extract evaluation metrics", "extract_metrics");
    extract(4, "Extract compared baselines", "extract_baselines");
    extract(5, "Extract the experimental results of comparison with baselines", "extract_baseline_results");
    extract(6, "Extract the experimental results of parameter study", "extract_param_study");
    extract(7, "Extract the experimental results of ablation study", "extract_ablation");
    extract(8, "Extract the problem definition", "extract_problem_definition");
    extract(9, "Extract the input of the problem", "extract_problem_input");
    extract(10, "Extract the output of the problem", "extract_problem_output");
    extract(11, "Extract the goal of the problem", "extract_problem_goal");
    extract(12, "Extract the proposed method", "extract_method");
    v.push_back({13, "Summarize the impact of parameters based on experimental results",
                 retrieve_then("Experiments", "Summarize", {{"handler", "summarize_param_impact"}, {"detail_level", "detailed"}}),
                 DocScope::Single});
    v.push_back({14, "Rank variants of the proposed method based on experimental results",
                 retrieve_then("Experiments", "Rank", {{"handler", "rank_variants"}}), DocScope::Single});
    v.push_back({15, "Rank experimental datasets based on experimental results",
                 retrieve_then("Experiments", "Rank", {{"handler", "rank_datasets"}}), DocScope::Single});
    v.push_back({16, "Check inconsistencies between the used evaluation metrics and the original evaluation metrics",
                 Plan{{step("retrieve_exp", "Retrieve", {{"section_tags", {"Experiments"}}}, I),
                       step("extract_used", "Extract",
                            {{"handler", "extract_metrics"}, {"section_tags", {"Experiments"}}, {"query", "{task}"},
                             {"detail_level", "detailed"}},
                            I, {"retrieve_exp"}),
                       step("retrieve_pf", "Retrieve", {{"section_tags", {"ProblemFormulation"}}}, I),
                       step("extract_original", "Extract",
                            {{"handler", "extract_original_metrics"}, {"section_tags", {"ProblemFormulation"}},
                             {"query", "{task}"}, {"detail_level", "detailed"}},
                            I, {"retrieve_pf"}),
                       step("check", "Check", {{"handler", "check_metric_consistency"}, {"query", "{task}"}}, I,
                            {"extract_used", "extract_original"})},
                      {}},
                 DocScope::Single});
    v.push_back({17, "Summarize common settings in experiments",
                 extract_then_group("Experiments", "extract_exp_settings", "Summarize",
                                    {{"handler", "summarize_common_settings"}, {"detail_level", "detailed"}}),
                 DocScope::Multiple});
    v.push_back({18, "Summarize missing settings in experiments",
                 extract_then_group("Experiments", "extract_exp_settings", "Summarize",
                                    {{"handler", "summarize_missing_settings"}, {"detail_level", "detailed"}}),
                 DocScope::Multiple});
    v.push_back({19, "Summarize pros and cons across different methods",
                 extract_then_group("Methodology", "extract_method", "Summarize",
                                    {{"handler", "summarize_pros_cons"}, {"detail_level", "detailed"}}),
                 DocScope::Multiple});
    v.push_back({20, "Summarize differences among the problem definition",
                 extract_then_group("ProblemFormulation", "extract_problem_definition", "Summarize",
                                    {{"handler", "summarize_problem_differences"}, {"detail_level", "detailed"}}),
                 DocScope::Multiple});
    v.push_back({21, "Rank experiment results of different methods on a common dataset and a common evaluation metric",
                 extract_then_group("Experiments", "extract_baseline_results", "Rank", {{"handler", "rank_results"}}),
                 DocScope::Multiple});
    v.push_back({22, "Check inconsistencies in experiment results on a common dataset and a common evaluation metric",
                 extract_then_group("Experiments", "extract_baseline_results", "Check", {{"handler", "check_results"}}),
                 DocScope::Multiple});
    v.push_back({23, "Research trend analysis",
                 Plan{{step("trend", "TrendAnalysis", {{"query", "{task}"}}, G)}, {}}, DocScope::Topic});
    v.push_back({24, "Research idea exploration",
                 Plan{{step("matrix", "MatrixConstruct", {{"query", "{task}"}}, G),
                       step("ideas", "IdeaExploration", {{"query", "{task}"}}, G, {"matrix"})},
                      {}},
                 DocScope::Topic});
    v.push_back({25, "Milestone paper selection",
                 Plan{{step("milestones", "MilestoneSelection", {{"query", "{task}"}}, G)}, {}}, DocScope::Topic});
    return v;
  }();
  return lib;
}

std::vector<PredefinedPlan> load_library(const std::filesystem::path& path) {
  auto j = read_json_file(path);
  std::vector<PredefinedPlan> out;
  try {
    for (const auto& e : j.contains("plans") ? j["plans"] : j) out.push_back(PredefinedPlan::from_json(e));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  return out;
}

json library_json(const std::vector<PredefinedPlan>& lib) {
  json a = json::array();
  for (const auto& p : lib) a.push_back(p.to_json());
  return json{{"plans", a}};
}

const std::vector<Demo>& builtin_demos() {
  static const std::vector<Demo> demos = [] {
    std::vector<Demo> d;
    d.push_back({"Find papers on graph-based vector search and build a table comparing their recall and query latency",
                 Plan{{step("step_1", "Retrieve", {{"section_tags", {"Experiments"}}}, I),
                       step("step_2", "Extract",
                            {{"extract_instruction", "Extract recall and query latency per method and dataset"},
                             {"section_tags", {"Experiments"}}, {"detail_level", "detailed"}},
                            I, {"step_1"}),
                       step("step_3", "Generate",
                            {{"generation_instruction", "Build a comparison table of recall and query latency"},
                             {"output_format", "table"}},
                            G, {"step_2"})},
                      {}}});
    d.push_back({"Summarize the methods of papers on learned indexes",
                 Plan{{step("step_1", "Retrieve", {{"section_tags", {"Methodology"}}}, I),
                       step("step_2", "Summarize", {{"focus", "the proposed method"}, {"detail_level", "short"}}, I,
                            {"step_1"})},
                      {}}});
    d.push_back({"Which datasets are used most often by papers on entity resolution since 2020",
                 Plan{{step("step_1", "Retrieve", {{"section_tags", {"Experiments"}}}, I),
                       step("step_2", "Extract",
                            {{"handler", "extract_datasets"}, {"section_tags", {"Experiments"}},
                             {"detail_level", "short"}},
                            I, {"step_1"}),
                       step("step_3", "Rank", {{"rank_instruction", "Rank datasets by number of papers using them"}},
                            G, {"step_2"})},
                      {}}});
    d.push_back({"Check whether the two best methods on SIFT1M report consistent QPS",
                 Plan{{step("step_1", "Retrieve", {{"section_tags", {"Experiments"}}}, I),
                       step("step_2", "Extract",
                            {{"handler", "extract_baseline_results"}, {"section_tags", {"Experiments"}},
                             {"detail_level", "detailed_with_evidence"}},
                            I, {"step_1"}),
                       step("step_3", "Rank", {{"rank_instruction", "Rank methods by QPS on SIFT1M"}}, G, {"step_2"}),
                       step("step_4", "Check", {{"check_instruction", "Check consistency of the reported QPS"}}, G,
                            {"step_2"}),
                       step("step_5", "Generate",
                            {{"generation_instruction", "Explain the performance gap"}, {"output_format", "text"}}, G,
                            {"step_3", "step_4"})},
                      {}}});
    d.push_back({"Count papers per venue",
                 Plan{{step("step_1", "GroupBy", {{"grouping_key", "venue"}}, G),
                       step("step_2", "Aggregate", {{"aggregation_instruction", "COUNT"}}, G, {"step_1"})},
                      {}}});
    return d;
  }();
  return demos;
}

std::vector<Demo> load_demos(const std::filesystem::path& path) {
  auto j = read_json_file(path);
  std::vector<Demo> out;
  try {
    for (const auto& e : j.contains("demos") ? j["demos"] : j) out.push_back(Demo::from_json(e));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------- reports

std::string_view to_string(Category c) {
  switch (c) {
    case Category::StepInternal: return "step-internal";
    case Category::InterStep: return "inter-step";
    case Category::Overall: return "overall";
  }
  return "?";
}

json Issue::to_json() const {
  return json{{"severity", severity}, {"category", to_string(category)}, {"step_ids", step_ids}, {"message", message}};
}

json ValidationReport::to_json() const {
  json a = json::array();
  for (const auto& i : issues) a.push_back(i.to_json());
  return json{{"issues", a}};
}

std::string ValidationReport::describe() const {
  std::ostringstream os;
  for (const auto& i : issues) {
    os << "[" << to_string(i.category) << "] ";
    if (!i.step_ids.empty()) os << join(i.step_ids, ", ") << ": ";
    os << i.message << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------- decomposition

ScopeTask decompose(const std::string& query, llm::LlmClient& llm) {
  if (trim(query).empty()) throw Error(ErrorCode::InvalidArgument, "decompose: empty query");
  auto out = llm.complete_structured(
      "planner.decompose",
      "You analyze scholarly questions. Separate 'what to analyze' from 'how to analyze it'.",
      "Split the query into a Scope (the entities or conceptual boundary of analysis: a set of papers, a paper, "
      "the corpus or a taxonomy concept) and a Task (the analytical step to perform over that scope). Return "
      "{\"scope\", \"task\"}.",
      json{{"query", query}}, "scope_task");
  ScopeTask st{trim(out.at("scope").get<std::string>()), trim(out.at("task").get<std::string>())};
  if (st.scope.empty() || st.task.empty()) throw SchemaViolation("decompose: empty scope or task", out.dump());
  return st;
}

// ---------------------------------------------------------------- selection

std::optional<Selection> select_predefined(const std::string& task, const std::vector<PredefinedPlan>& library,
                                           llm::LlmClient& llm, int candidates, double threshold) {
  if (library.empty()) throw Error(ErrorCode::Precondition, "select_predefined: empty library");
  if (candidates < 1) throw Error(ErrorCode::InvalidArgument, "select_predefined: candidates < 1");
  auto q = llm.embed(task);
  std::vector<std::pair<double, const PredefinedPlan*>> scored;
  for (const auto& p : library) scored.push_back({cosine(q, llm.embed(p.description)), &p});
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->plan_id < b.second->plan_id;
  });
  // Candidates with no lexical or semantic overlap are dropped.
  std::vector<const PredefinedPlan*> cands;
  for (const auto& [s, p] : scored) {
    if (static_cast<int>(cands.size()) >= candidates) break;
    if (s > 0.0) cands.push_back(p);
  }
  if (cands.empty()) return std::nullopt;
  json listing = json::array();
  for (const auto* p : cands) {
    listing.push_back({{"plan_id", p->plan_id}, {"description", p->description},
                       {"doc_scope", to_string(p->doc_scope)}});
  }
  auto out = llm.complete_structured(
      "planner.select",
      "You judge whether a reusable analysis plan fits a task exactly.",
      "Score each candidate plan with your confidence (integer 0-100) that it accomplishes the task as stated. "
      "Return {\"scores\": [{\"plan_id\", \"confidence\"}]}.",
      json{{"task", task}, {"candidates", listing}}, "plan_confidence");
  const PredefinedPlan* best = nullptr;
  int best_conf = -1;
  for (const auto& s : out.at("scores")) {
    int id = s.at("plan_id").get<int>();
    int conf = s.at("confidence").get<int>();
    auto it = std::find_if(cands.begin(), cands.end(), [&](const auto* p) { return p->plan_id == id; });
    if (it == cands.end()) throw SchemaViolation("select_predefined: score for a non-candidate plan", out.dump());
    if (conf > best_conf || (conf == best_conf && best && id < best->plan_id)) {
      best_conf = conf;
      best = *it;
    }
  }
  if (!best) return std::nullopt;
  double confidence = best_conf / 100.0;
  if (!(confidence > threshold)) return std::nullopt;
  Selection sel{*best, confidence, {}};
  for (const auto* p : cands) sel.candidates.push_back(p->plan_id);
  return sel;
}

Plan instantiate(const PredefinedPlan& p, const std::string& task) {
  Plan out = p.templ;
  for (auto& s : out.steps) s.params = bind_slots(s.params, task);
  return out;
}

// ---------------------------------------------------------------- dynamic generation

Plan generate_dynamic(const std::string& task, const json& scope_hint, const std::vector<Demo>& demos,
                      llm::LlmClient& llm, int num_demos) {
  if (ops::catalog().empty()) throw Error(ErrorCode::Precondition, "generate_dynamic: empty catalog");
  json shots = json::array();
  if (!demos.empty() && num_demos > 0) {
    auto q = llm.embed(task);
    std::vector<std::pair<double, std::size_t>> sc;
    for (std::size_t i = 0; i < demos.size(); ++i) sc.push_back({cosine(q, llm.embed(demos[i].query)), i});
    std::stable_sort(sc.begin(), sc.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < sc.size() && static_cast<int>(i) < num_demos; ++i) {
      shots.push_back(demos[sc[i].second].to_json());
    }
  }
  auto hl = llm.complete_structured(
      "planner.high_level",
      "You are a query planner for a scholarly knowledge system. Plan in abstract analytical steps.",
      "Write a high-level logical plan for the task as a short list of abstract steps. Each step has an id, a "
      "description and optionally depends_on (ids of earlier steps); steps without depends_on follow the "
      "previous step. The scope has already been resolved to a set of entities. Return {\"steps\": [...]}.",
      json{{"task", task}, {"scope", scope_hint}, {"demonstrations", shots}}, "high_level_plan");
  Plan plan;
  std::set<std::string> ids;
  json so_far = json::array();
  const json catalog = compact_catalog();
  const json handlers = compact_handlers();
  for (const auto& abstract : hl.at("steps")) {
    auto id = abstract.at("id").get<std::string>();
    if (!ids.insert(id).second) throw SchemaViolation("generate_dynamic: duplicate step id " + id, hl.dump());
    auto inst = llm.complete_structured(
        "planner.instantiate",
        "You map one abstract analysis step to exactly one operator of the library.",
        "Select the single most appropriate operator for this step and fully parameterize it. Set "
        "execution_mode to instance (per item), group (whole collection) or n/a (Search, FindNode, Traverse). "
        "Return {\"op_name\", \"params\", \"execution_mode\"}.",
        json{{"task", task}, {"step", abstract}, {"plan_so_far", so_far}, {"operators", catalog},
             {"handlers", handlers}},
        "plan_step");
    PlanStep s;
    s.step_id = id;
    s.op_name = inst.at("op_name").get<std::string>();
    s.params = inst.at("params");
    s.execution_mode = ops::exec_mode_from_string(inst.at("execution_mode").get<std::string>());
    if (abstract.contains("depends_on")) {
      s.inputs = abstract["depends_on"].get<std::vector<std::string>>();
    } else if (!plan.steps.empty()) {
      s.inputs = {plan.steps.back().step_id};
    }
    so_far.push_back(s.to_json());
    plan.steps.push_back(std::move(s));
  }
  return plan;
}

// ---------------------------------------------------------------- validation

ValidationReport validate(const Plan& plan, ValidateOptions opt) {
  ValidationReport r;
  auto add = [&](Category c, std::vector<std::string> ids, std::string msg) {
    r.issues.push_back(Issue{"error", c, std::move(ids), std::move(msg)});
  };
  if (plan.steps.empty()) {
    add(Category::Overall, {}, "plan has no steps");
    return r;
  }
  std::map<std::string, const PlanStep*> by_id;
  for (const auto& s : plan.steps) {
    if (s.step_id.empty()) add(Category::Overall, {}, "step with an empty id");
    if (!by_id.emplace(s.step_id, &s).second) add(Category::Overall, {s.step_id}, "duplicate step id");
  }
  // Step-internal.
  for (const auto& s : plan.steps) {
    const auto* spec = ops::find_spec(s.op_name);
    if (!spec) {
      add(Category::StepInternal, {s.step_id}, "unknown operator '" + s.op_name + "'");
      continue;
    }
    if (!s.params.is_object()) {
      add(Category::StepInternal, {s.step_id}, "params must be an object");
      continue;
    }
    if (auto err = llm::check_schema(s.params, spec->param_schema, "params"); !err.empty()) {
      add(Category::StepInternal, {s.step_id}, s.op_name + " " + err);
    }
    const bool na_op = s.op_name == "Search" || s.op_name == "FindNode" || s.op_name == "Traverse";
    if (na_op && s.execution_mode != ExecMode::NA) {
      add(Category::StepInternal, {s.step_id}, s.op_name + " takes no execution_mode (must be n/a)");
    } else if (!na_op && std::find(spec->modes.begin(), spec->modes.end(), s.execution_mode) == spec->modes.end()) {
      add(Category::StepInternal, {s.step_id},
          "execution_mode '" + std::string(ops::to_string(s.execution_mode)) + "' is not legal for " + s.op_name);
    }
    auto handler_name = str_of(s.params, "handler");
    const ops::Handler* h = handler_name.empty() ? nullptr : ops::find_handler(handler_name);
    if (!handler_name.empty() && !h) {
      add(Category::StepInternal, {s.step_id}, "unknown handler '" + handler_name + "'");
    }
    if (h && h->op_name != s.op_name) {
      add(Category::StepInternal, {s.step_id},
          "handler '" + h->name + "' belongs to " + h->op_name + " but the step runs " + s.op_name);
    }
    if (h && !h->section_tags.empty()) {
      auto tags = string_list(s.params, "section_tags");
      for (const auto& t : tags) {
        if (std::find(h->section_tags.begin(), h->section_tags.end(), t) == h->section_tags.end()) {
          add(Category::StepInternal, {s.step_id},
              "handler '" + h->name + "' reads " + join(h->section_tags, "/") + " sections but the step targets '" +
                  t + "'; this is inconsistent");
          break;
        }
      }
    }
    if ((s.op_name == "Extract" && str_of(s.params, "extract_instruction").empty()) ||
        (s.op_name == "Rank" && str_of(s.params, "rank_instruction").empty()) ||
        (s.op_name == "Check" && str_of(s.params, "check_instruction").empty())) {
      if (!h) add(Category::StepInternal, {s.step_id}, s.op_name + " needs an instruction or a handler");
    }
    if (s.op_name == "FindNode") {
      bool by_id_set = !str_of(s.params, "node_id").empty();
      bool by_desc = !str_of(s.params, "node_description").empty();
      if (by_id_set == by_desc) {
        add(Category::StepInternal, {s.step_id}, "FindNode needs exactly one of node_id and node_description");
      }
    }
    if (s.op_name == "Search" && trim(str_of(s.params, "query")).empty()) {
      add(Category::StepInternal, {s.step_id}, "Search needs a non-empty query");
    }
    const int n_in = static_cast<int>(s.inputs.size());
    if (spec->source_less && n_in > 0) {
      add(Category::InterStep, {s.step_id}, s.op_name + " reads storage and takes no inputs");
    }
    if (spec->max_inputs >= 0 && n_in > spec->max_inputs) {
      add(Category::StepInternal, {s.step_id}, s.op_name + " takes at most " + std::to_string(spec->max_inputs) +
                                                   " input(s), got " + std::to_string(n_in));
    }
    // Retrieve reads its documents from an input unless one is named.
    int min_in = spec->min_inputs;
    if (s.op_name == "Retrieve" && str_of(s.params, "document_id").empty()) min_in = 1;
    if (n_in < min_in && (opt.require_closed || n_in > 0)) {
      add(Category::InterStep, {s.step_id}, s.op_name + " lacks the required input");
    }
    if (s.op_name == "Check" && s.execution_mode == ExecMode::Instance && n_in < 2) {
      add(Category::StepInternal, {s.step_id}, "Check in instance mode compares at least two peer inputs");
    }
  }
  // Inter-step.
  for (const auto& s : plan.steps) {
    const auto* spec = ops::find_spec(s.op_name);
    std::set<std::string> seen_inputs;
    for (const auto& in : s.inputs) {
      if (!seen_inputs.insert(in).second) add(Category::InterStep, {s.step_id, in}, "input listed twice");
      auto it = by_id.find(in);
      if (it == by_id.end()) {
        add(Category::InterStep, {s.step_id, in}, s.step_id + " consumes '" + in + "' which no step produces");
        continue;
      }
      if (in == s.step_id) add(Category::InterStep, {s.step_id}, "step consumes its own output");
      const auto* up = ops::find_spec(it->second->op_name);
      if (!spec || !up) continue;
      if (!spec->source_less && !ops::admits_input(*spec, up->output_kind)) {
        add(Category::InterStep, {s.step_id, in},
            s.step_id + " (" + s.op_name + ") cannot consume the " + std::string(ops::to_string(up->output_kind)) +
                " produced by " + in + " (" + up->name + ")");
      }
    }
    if (!spec) continue;
    if (s.op_name == "Extract") {
      auto want = extract_tags(s);
      for (const auto& in : s.inputs) {
        auto it = by_id.find(in);
        if (it == by_id.end() || it->second->op_name != "Retrieve") continue;
        auto have = string_list(it->second->params, "section_tags");
        std::vector<std::string> missing;
        for (const auto& t : want) {
          if (std::find(have.begin(), have.end(), t) == have.end()) missing.push_back(t);
        }
        if (!missing.empty()) {
          add(Category::InterStep, {s.step_id, in},
              s.step_id + " depends on " + in + " (retrieval of '" + join(have, "', '") +
                  "' sections) but aims to extract from '" + join(missing, "', '") + "' sections. Since " + in +
                  " only retrieves '" + join(have, "', '") + "' sections, " + s.step_id +
                  " lacks the required input.");
        }
      }
    }
    if (s.op_name == "Generate" && str_of(s.params, "output_format") == "table" && !s.inputs.empty()) {
      bool structured = false;
      for (const auto& in : s.inputs) {
        auto it = by_id.find(in);
        if (it == by_id.end()) continue;
        if (const auto* up = ops::find_spec(it->second->op_name); up && is_structured(up->output_kind)) structured = true;
      }
      if (!structured) {
        add(Category::InterStep, s.inputs.size() == 1 ? std::vector<std::string>{s.step_id, s.inputs.front()} :
                                                        std::vector<std::string>{s.step_id},
            "Generate with output_format 'table' requires structured numeric evidence, but its inputs produce "
            "only free text");
      }
    }
  }
  // Overall.
  {
    std::map<std::string, std::vector<std::string>> up;
    for (const auto& s : plan.steps) {
      for (const auto& in : s.inputs) {
        if (by_id.count(in)) up[s.step_id].push_back(in);
      }
    }
    std::map<std::string, int> color;
    bool cycle = false;
    std::function<void(const std::string&)> dfs = [&](const std::string& id) {
      color[id] = 1;
      for (const auto& u : up[id]) {
        if (color[u] == 1) cycle = true;
        else if (color[u] == 0) dfs(u);
      }
      color[id] = 2;
    };
    for (const auto& s : plan.steps) {
      if (color[s.step_id] == 0) dfs(s.step_id);
    }
    if (cycle) add(Category::Overall, {}, "plan is not a DAG (cycle among steps)");
  }
  auto sinks = plan.sinks();
  if (sinks.empty()) add(Category::Overall, {}, "plan has no terminal step");
  for (const auto& t : plan.terminal_ids) {
    if (!by_id.count(t)) {
      add(Category::Overall, {t}, "declared terminal '" + t + "' is not a step");
    } else if (std::find(sinks.begin(), sinks.end(), t) == sinks.end()) {
      add(Category::Overall, {t}, "declared terminal '" + t + "' has a downstream consumer");
    }
  }
  if (!plan.terminal_ids.empty()) {
    for (const auto& s : sinks) {
      if (std::find(plan.terminal_ids.begin(), plan.terminal_ids.end(), s) == plan.terminal_ids.end()) {
        add(Category::Overall, {s}, "output of '" + s + "' is never used and it is not a terminal");
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------- self-correction

Correction self_correct(const Plan& plan, const ValidationReport& report, llm::LlmClient& llm, int max_rounds,
                        ValidateOptions opt) {
  Correction c{plan, 0, {}};
  if (report.ok()) return c;
  if (max_rounds < 0) throw Error(ErrorCode::InvalidArgument, "self_correct: max_rounds < 0");
  ValidationReport last = report;
  c.reports.push_back(report);
  for (int round = 1; round <= max_rounds; ++round) {
    json issues = json::array();
    for (const auto& i : last.issues) issues.push_back(i.to_json());
    auto out = llm.complete_structured(
        "planner.repair",
        "You are debugging a query plan for a scholarly knowledge system.",
        "The plan below failed validation. Analyze each reported issue, fix the plan and return the complete "
        "corrected plan as {\"plan\": {\"steps\": [...], \"terminal_ids\": [...]}}.",
        json{{"plan", c.plan.to_json()}, {"issues", issues}, {"operators", compact_catalog()},
             {"handlers", compact_handlers()}},
        "repaired_plan");
    c.rounds = round;
    try {
      c.plan = Plan::from_json(out.at("plan"));
      last = validate(c.plan, opt);
    } catch (const std::exception& e) {
      last = ValidationReport{{Issue{"error", Category::Overall, {}, std::string("malformed plan: ") + e.what()}}};
    }
    if (last.ok()) return c;
    c.reports.push_back(last);
  }
  throw PlanningError("self-correction exhausted after " + std::to_string(max_rounds) + " rounds", last);
}

// ---------------------------------------------------------------- composition

Plan scope_plan(const ScopeTask& st, const Plan& task_plan) {
  bool taxonomy_entry = false;
  for (const auto& s : task_plan.steps) {
    if (!s.inputs.empty()) continue;
    if (s.op_name == "TrendAnalysis" || s.op_name == "MilestoneSelection" || s.op_name == "MatrixConstruct") {
      taxonomy_entry = true;
    }
  }
  Plan p;
  if (taxonomy_entry) {
    p.steps.push_back(step("find", "FindNode", {{"node_description", st.scope}}, ExecMode::NA));
  } else {
    p.steps.push_back(step("search", "Search", {{"query", st.scope}}, ExecMode::NA));
  }
  return p;
}

Plan compose(const Plan& scope, const Plan& task) {
  auto scope_terms = scope.terminals();
  if (scope_terms.size() != 1) throw Error(ErrorCode::JunctionError, "scope plan must have exactly one terminal");
  for (const auto& s : scope.steps) {
    const auto* spec = ops::find_spec(s.op_name);
    if (spec && s.step_id == scope_terms.front() && spec->output_kind != PayloadKind::EntityList) {
      throw Error(ErrorCode::JunctionError, "scope terminal does not produce an entity list");
    }
  }
  Plan out;
  std::set<std::string> used;
  std::map<std::string, std::string> scope_ids, task_ids;
  for (const auto& s : scope.steps) {
    auto id = "scope_" + s.step_id;
    scope_ids[s.step_id] = id;
    used.insert(id);
  }
  for (const auto& s : task.steps) {
    auto id = s.step_id;
    for (int n = 2; used.count(id); ++n) id = s.step_id + "_" + std::to_string(n);
    task_ids[s.step_id] = id;
    used.insert(id);
  }
  for (const auto& s : scope.steps) {
    PlanStep c = s;
    c.step_id = scope_ids[s.step_id];
    for (auto& in : c.inputs) in = scope_ids.count(in) ? scope_ids[in] : in;
    out.steps.push_back(std::move(c));
  }
  const std::string junction = scope_ids[scope_terms.front()];
  for (const auto& s : task.steps) {
    PlanStep c = s;
    c.step_id = task_ids[s.step_id];
    for (auto& in : c.inputs) in = task_ids.count(in) ? task_ids[in] : in;
    const auto* spec = ops::find_spec(s.op_name);
    bool by_doc = s.op_name == "Retrieve" && !str_of(s.params, "document_id").empty();
    if (c.inputs.empty() && spec && !spec->source_less && !by_doc) {
      if (!ops::admits_input(*spec, PayloadKind::EntityList)) {
        throw Error(ErrorCode::JunctionError, "task step '" + s.step_id + "' (" + s.op_name +
                                                  ") cannot consume the entity list produced by the scope");
      }
      c.inputs = {junction};
    }
    out.steps.push_back(std::move(c));
  }
  for (const auto& t : task.terminal_ids) out.terminal_ids.push_back(task_ids.count(t) ? task_ids[t] : t);
  return out;
}

// ---------------------------------------------------------------- planner

json PlannerConfig::to_json() const {
  return json{{"use_predefined", use_predefined}, {"candidates", candidates}, {"threshold", threshold},
              {"max_rounds", max_rounds}, {"num_demos", num_demos}};
}

PlannerConfig PlannerConfig::from_json(const json& j) {
  PlannerConfig c;
  c.use_predefined = j.value("use_predefined", c.use_predefined);
  c.candidates = j.value("candidates", c.candidates);
  c.threshold = j.value("threshold", c.threshold);
  c.max_rounds = j.value("max_rounds", c.max_rounds);
  c.num_demos = j.value("num_demos", c.num_demos);
  return c;
}

json PlanningOutcome::to_json() const {
  json reps = json::array();
  for (const auto& r : reports) reps.push_back(r.to_json());
  return json{{"query", query},
              {"scope_task", scope_task.to_json()},
              {"plan", plan.to_json()},
              {"predefined_id", predefined_id ? json(*predefined_id) : json(nullptr)},
              {"confidence", confidence},
              {"repair_rounds", repair_rounds},
              {"reports", reps},
              {"usage", usage.to_json()},
              {"planning_ms", planning_ms}};
}

Planner::Planner(std::vector<PredefinedPlan> library, std::vector<Demo> demos, PlannerConfig cfg)
    : library_(std::move(library)), demos_(std::move(demos)), cfg_(cfg) {}

Planner Planner::with_builtins(PlannerConfig cfg) { return Planner(builtin_library(), builtin_demos(), cfg); }

PlanningOutcome Planner::plan_task(const ScopeTask& st, llm::LlmClient& llm) const {
  PlanningOutcome o;
  o.scope_task = st;
  std::optional<Selection> sel;
  if (cfg_.use_predefined && !library_.empty()) sel = select_predefined(st.task, library_, llm, cfg_.candidates, cfg_.threshold);
  Plan task_plan;
  if (sel) {
    o.predefined_id = sel->plan.plan_id;
    o.confidence = sel->confidence;
    task_plan = instantiate(sel->plan, st.task);
  } else {
    task_plan = generate_dynamic(st.task, json{{"scope", st.scope}}, demos_, llm, cfg_.num_demos);
  }
  auto report = validate(task_plan);
  if (!report.ok()) {
    auto c = self_correct(task_plan, report, llm, cfg_.max_rounds);
    task_plan = c.plan;
    o.repair_rounds = c.rounds;
    o.reports = c.reports;
  }
  o.plan = task_plan;
  return o;
}

PlanningOutcome Planner::plan(const std::string& query, llm::LlmClient& llm) const {
  auto t0 = std::chrono::steady_clock::now();
  auto before = llm.accounting_summary();
  auto st = decompose(query, llm);
  auto o = plan_task(st, llm);
  o.query = query;
  auto composed = compose(scope_plan(st, o.plan), o.plan);
  auto report = validate(composed, {true});
  if (!report.ok()) {
    auto c = self_correct(composed, report, llm, cfg_.max_rounds - o.repair_rounds, {true});
    composed = c.plan;
    o.repair_rounds += c.rounds;
    o.reports.insert(o.reports.end(), c.reports.begin(), c.reports.end());
  }
  o.plan = composed;
  o.usage = llm.accounting_summary() - before;
  o.planning_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return o;
}

}  // namespace scholar::planner
