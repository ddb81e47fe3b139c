#include "scholar/operators.hpp"

#include "scholar/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>

namespace scholar::ops {

namespace {

constexpr std::pair<PayloadKind, std::string_view> kKindNames[] = {
    {PayloadKind::EntityList, "EntityList"}, {PayloadKind::Text, "Text"},
    {PayloadKind::StructuredRecord, "StructuredRecord"}, {PayloadKind::TableGrid, "TableGrid"},
    {PayloadKind::Ranking, "Ranking"}, {PayloadKind::Matrix, "Matrix"},
};

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<std::string> merged_provenance(const std::vector<OperatorResult>& inputs,
                                           std::vector<std::string> own = {}) {
  for (const auto& r : inputs) own.insert(own.end(), r.provenance.begin(), r.provenance.end());
  return sorted_unique(std::move(own));
}

// Compact view of an input for prompts.
json prompt_view(const OperatorResult& r) {
  json v = r.value;
  if (r.kind == PayloadKind::EntityList) {
    json items = json::array();
    for (const auto& e : r.value) items.push_back({{"id", e.value("id", "")}, {"kind", e.value("kind", "")},
                                                   {"attrs", e.value("attrs", json::object())}});
    v = items;
  }
  return json{{"kind", to_string(r.kind)}, {"value", v}};
}

json prompt_inputs(const std::vector<OperatorResult>& inputs) {
  json a = json::array();
  for (const auto& r : inputs) a.push_back(prompt_view(r));
  return a;
}

std::string str_param(const json& p, const char* key, std::string def = {}) {
  if (p.contains(key) && p[key].is_string()) return p[key].get<std::string>();
  return def;
}

std::vector<std::string> tags_param(const json& p) {
  if (p.contains("section_tags") && p["section_tags"].is_array()) {
    return p["section_tags"].get<std::vector<std::string>>();
  }
  return {};
}

json items_of(const OperatorResult& r) {
  switch (r.kind) {
    case PayloadKind::EntityList: return r.value;
    case PayloadKind::Ranking: return r.value.value("ranking", json::array());
    case PayloadKind::StructuredRecord:
      if (r.value.contains("groups")) return r.value["groups"];
      if (r.value.contains("records")) return r.value["records"];
      return json::array({r.value});
    default: return json::array({r.value});
  }
}

OperatorResult merge_entities(const std::vector<OperatorResult>& inputs) {
  json all = json::array();
  std::set<std::string> seen;
  for (const auto& r : inputs) {
    if (r.kind != PayloadKind::EntityList) {
      throw Error(ErrorCode::KindIncompatible, "expected EntityList input, got " + std::string(to_string(r.kind)));
    }
    for (const auto& e : r.value) {
      if (seen.insert(e.value("id", "")).second) all.push_back(e);
    }
  }
  return make_result(PayloadKind::EntityList, all, merged_provenance(inputs));
}

double as_number(const json& v, bool& ok) {
  ok = true;
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      std::size_t pos = 0;
      auto s = v.get<std::string>();
      double d = std::stod(s, &pos);
      if (pos == s.size()) return d;
    } catch (...) {
    }
  }
  ok = false;
  return 0.0;
}

json str_schema() { return {{"type", "string"}}; }
json detail_schema() {
  return {{"type", "string"}, {"enum", {"short", "detailed", "detailed_with_evidence"}}};
}
json tags_schema() {
  json labels = json::array();
  for (auto l : ingest::kAllLabels) labels.push_back(std::string(ingest::to_string(l)));
  return {{"type", "array"}, {"items", {{"type", "string"}, {"enum", labels}}}};
}
json params(json props, std::vector<std::string> required = {}) {
  props["query"] = str_schema();
  props["handler"] = str_schema();
  return {{"type", "object"}, {"properties", std::move(props)}, {"required", std::move(required)}};
}

}  // namespace

std::string_view to_string(PayloadKind k) {
  for (const auto& [kk, v] : kKindNames) {
    if (kk == k) return v;
  }
  return "?";
}

std::string_view to_string(ExecMode m) {
  switch (m) {
    case ExecMode::Instance: return "instance";
    case ExecMode::Group: return "group";
    case ExecMode::NA: return "n/a";
  }
  return "?";
}

PayloadKind payload_kind_from_string(std::string_view s) {
  for (const auto& [k, v] : kKindNames) {
    if (v == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown payload kind: " + std::string(s));
}

ExecMode exec_mode_from_string(std::string_view s) {
  if (s == "instance") return ExecMode::Instance;
  if (s == "group") return ExecMode::Group;
  if (s == "n/a" || s == "na" || s.empty()) return ExecMode::NA;
  throw Error(ErrorCode::InvalidArgument, "unknown execution mode: " + std::string(s));
}

// ---------------------------------------------------------------- results

bool OperatorResult::empty() const {
  if (value.is_null()) return true;
  switch (kind) {
    case PayloadKind::EntityList: return value.empty();
    case PayloadKind::Text: return value.value("text", std::string()).empty();
    case PayloadKind::Ranking: return value.value("ranking", json::array()).empty();
    case PayloadKind::Matrix: return value.value("rows", json::array()).empty() && value.value("cols", json::array()).empty();
    case PayloadKind::TableGrid: return value.value("rows", json::array()).empty();
    case PayloadKind::StructuredRecord: return value.empty() || value.value("empty", false);
  }
  return false;
}

std::string OperatorResult::digest() const { return json_digest(to_json()); }

json OperatorResult::to_json() const {
  return json{{"kind", to_string(kind)}, {"value", value}, {"provenance", provenance}};
}

OperatorResult OperatorResult::from_json(const json& j) {
  return OperatorResult{payload_kind_from_string(j.at("kind").get<std::string>()), j.at("value"),
                        j.value("provenance", std::vector<std::string>{})};
}

OperatorResult make_result(PayloadKind kind, json value, std::vector<std::string> provenance) {
  return OperatorResult{kind, std::move(value), sorted_unique(std::move(provenance))};
}

OperatorResult empty_result(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::EntityList: return {kind, json::array(), {}};
    case PayloadKind::Text: return {kind, json{{"text", ""}}, {}};
    case PayloadKind::Ranking: return {kind, json{{"ranking", json::array()}}, {}};
    case PayloadKind::Matrix: return {kind, json{{"rows", json::array()}, {"cols", json::array()}, {"cells", json::array()}}, {}};
    case PayloadKind::TableGrid: return {kind, json{{"columns", json::array()}, {"rows", json::array()}}, {}};
    case PayloadKind::StructuredRecord: return {kind, json{{"empty", true}}, {}};
  }
  return {kind, nullptr, {}};
}

json entity_json(const kg::GraphNode& n) {
  return json{{"id", n.id}, {"kind", kg::to_string(n.kind)}, {"attrs", n.attrs}};
}

std::vector<std::string> entity_ids(const OperatorResult& r) {
  std::vector<std::string> out;
  if (r.kind != PayloadKind::EntityList) return out;
  for (const auto& e : r.value) out.push_back(e.value("id", ""));
  return out;
}

// ---------------------------------------------------------------- catalog

json OperatorSpec::to_json() const {
  json in = json::array();
  for (auto k : input_kinds) in.push_back(to_string(k));
  json ms = json::array();
  for (auto m : modes) ms.push_back(to_string(m));
  return json{{"name", name},
              {"description", description},
              {"input_kinds", in},
              {"output_kind", to_string(output_kind)},
              {"execution_modes", ms},
              {"min_inputs", min_inputs},
              {"max_inputs", max_inputs},
              {"source_less", source_less},
              {"param_schema", param_schema}};
}

const std::vector<OperatorSpec>& catalog() {
  using K = PayloadKind;
  using M = ExecMode;
  static const std::vector<OperatorSpec> specs = [] {
    const std::vector<K> content{K::Text, K::StructuredRecord, K::TableGrid, K::Ranking, K::EntityList};
    const std::vector<K> any{K::EntityList, K::Text, K::StructuredRecord, K::TableGrid, K::Ranking, K::Matrix};
    const std::vector<M> both{M::Instance, M::Group};
    json hop = {{"type", "object"},
                {"properties",
                 {{"edge_kind", {{"type", "string"}, {"enum", {"ADDRESSES", "APPLIES", "USES", "HAS", "WRITTEN_BY", "PUBLISHED_IN", "CHILD_OF"}}}},
                  {"direction", {{"type", "string"}, {"enum", {"out", "in"}}}},
                  {"target_kind", str_schema()}}},
                {"required", {"edge_kind", "direction", "target_kind"}}};
    std::vector<OperatorSpec> s;
    s.push_back({"Search", "Locate documents from the knowledge graph", {}, K::EntityList, {M::NA}, 0, 0, true,
                 params({{"candidates_per_query", {{"type", "integer"}, {"minimum", 1}}},
                         {"top_k", {{"type", "integer"}, {"minimum", 1}}}},
                        {"query"})});
    s.push_back({"FindNode", "Locate an entry-point node in a taxonomy by id or description", {}, K::EntityList,
                 {M::NA}, 0, 0, true,
                 params({{"node_id", str_schema()},
                         {"node_description", str_schema()},
                         {"taxonomy", {{"type", "string"}, {"enum", {"problem", "method"}}}}})});
    s.push_back({"Traverse", "Traverse the knowledge graph from a set of starting nodes", {K::EntityList},
                 K::EntityList, {M::NA}, 1, -1, false,
                 params({{"traversal_path", {{"type", "array"}, {"minItems", 1}, {"items", hop}}}}, {"traversal_path"})});
    s.push_back({"Retrieve", "Fetch the raw content of specific sections of a document", {K::EntityList}, K::Text,
                 both, 0, -1, false,
                 params({{"document_id", str_schema()}, {"section_tags", tags_schema()}}, {"section_tags"})});
    s.push_back({"Extract", "Extract structured information from document content", {K::Text, K::EntityList},
                 K::StructuredRecord, both, 1, -1, false,
                 params({{"section_tags", tags_schema()},
                         {"extract_instruction", str_schema()},
                         {"detail_level", detail_schema()}})});
    s.push_back({"Summarize", "Condense content into a concise overview", any, K::Text, both, 1, -1, false,
                 params({{"detail_level", detail_schema()}, {"focus", str_schema()}})});
    s.push_back({"Check", "Identify inconsistencies across peer contents", content, K::Text, both, 1, -1, false,
                 params({{"check_instruction", str_schema()}})});
    s.push_back({"Verify", "Fact-check a claim against evidence", {K::Text, K::StructuredRecord}, K::Text, both, 0,
                 -1, false, params({{"claim", str_schema()}, {"evidence", str_schema()}}, {"claim"})});
    s.push_back({"Rank", "Order entities by a measurable criterion", content, K::Ranking, both, 1, -1, false,
                 params({{"rank_instruction", str_schema()},
                         {"order", {{"type", "string"}, {"enum", {"asc", "desc"}}}}})});
    s.push_back({"GroupBy", "Partition entities by an attribute", {K::EntityList, K::Ranking}, K::StructuredRecord,
                 both, 1, -1, false, params({{"grouping_key", str_schema()}}, {"grouping_key"})});
    s.push_back({"Aggregate", "Compute summary statistics over entities",
                 {K::EntityList, K::StructuredRecord, K::Ranking}, K::StructuredRecord, both, 1, -1, false,
                 params({{"aggregation_instruction", {{"type", "any"}}}}, {"aggregation_instruction"})});
    s.push_back({"Filter", "Keep the entities satisfying a condition", {K::EntityList}, K::EntityList, both, 1, -1,
                 false, params({{"filter_instruction", str_schema()}}, {"filter_instruction"})});
    s.push_back({"Generate", "Produce new text from inputs and an instruction", any, K::Text, both, 0, -1, false,
                 params({{"generation_instruction", str_schema()},
                         {"output_format", {{"type", "string"}, {"enum", {"text", "table"}}}}},
                        {"generation_instruction"})});
    s.push_back({"MatrixConstruct", "Build the problem-method matrix of a research area", {K::EntityList},
                 K::Matrix, both, 1, -1, false, params({})});
    s.push_back({"TrendAnalysis", "Research trend analysis over the leaves of a taxonomy node", {K::EntityList},
                 K::StructuredRecord, {M::Group}, 1, -1, false,
                 params({{"k", {{"type", "integer"}, {"minimum", 1}}}, {"expand_variants", {{"type", "boolean"}}}})});
    s.push_back({"IdeaExploration", "Research idea exploration over unexplored matrix cells", {K::Matrix},
                 K::StructuredRecord, {M::Group}, 1, 1, false, params({{"k", {{"type", "integer"}, {"minimum", 1}}}})});
    s.push_back({"MilestoneSelection", "Milestone paper selection within a topic", {K::EntityList}, K::Ranking,
                 {M::Group}, 1, -1, false, params({{"k", {{"type", "integer"}, {"minimum", 1}}}})});
    return s;
  }();
  return specs;
}

const OperatorSpec* find_spec(std::string_view name) {
  for (const auto& s : catalog()) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

json catalog_json() {
  json ops = json::array();
  for (const auto& s : catalog()) ops.push_back(s.to_json());
  json hs = json::array();
  for (const auto& h : handlers()) {
    hs.push_back({{"name", h.name}, {"op_name", h.op_name}, {"section_tags", h.section_tags},
                  {"instruction", h.instruction}});
  }
  return json{{"operators", ops}, {"handlers", hs}};
}

bool admits_input(const OperatorSpec& spec, PayloadKind k) {
  return std::find(spec.input_kinds.begin(), spec.input_kinds.end(), k) != spec.input_kinds.end();
}

const std::vector<Handler>& handlers() {
  static const std::vector<Handler> hs = {
      {"extract_exp_settings", "Extract", {"Experiments"},
       "Extract the experimental settings: hardware, software, parameter values and protocol. Report numeric values with units."},
      {"extract_datasets", "Extract", {"Experiments"},
       "Extract the experimental datasets with their sizes and dimensionality when stated."},
      {"extract_metrics", "Extract", {"Experiments"}, "Extract the evaluation metrics used in the experiments."},
      {"extract_baselines", "Extract", {"Experiments"}, "Extract the compared baseline methods."},
      {"extract_baseline_results", "Extract", {"Experiments"},
       "Extract the experimental results of the comparison with baselines, per dataset and metric, with numeric values."},
      {"extract_param_study", "Extract", {"Experiments"},
       "Extract the experimental results of the parameter study: each parameter, its range and the observed effect."},
      {"extract_ablation", "Extract", {"Experiments"},
       "Extract the experimental results of the ablation study: each removed component and the measured effect."},
      {"extract_problem_definition", "Extract", {"ProblemFormulation"},
       "Extract the formal problem definition."},
      {"extract_problem_input", "Extract", {"ProblemFormulation"}, "Extract the input of the problem."},
      {"extract_problem_output", "Extract", {"ProblemFormulation"}, "Extract the output of the problem."},
      {"extract_problem_goal", "Extract", {"ProblemFormulation"}, "Extract the goal of the problem."},
      {"extract_method", "Extract", {"Methodology"},
       "Extract the proposed method: its key components, algorithmic steps and complexity."},
      {"summarize_param_impact", "Summarize", {"Experiments"},
       "Summarize the impact of parameters based on experimental results."},
      {"rank_variants", "Rank", {"Experiments"},
       "Rank variants of the proposed method based on experimental results."},
      {"rank_datasets", "Rank", {"Experiments"}, "Rank experimental datasets based on experimental results."},
      {"extract_original_metrics", "Extract", {"ProblemFormulation"},
       "Extract the evaluation metrics the problem was originally defined with."},
      {"check_metric_consistency", "Check", {},
       "Check inconsistencies between the used evaluation metrics and the original evaluation metrics."},
      {"summarize_common_settings", "Summarize", {}, "Summarize common settings in experiments."},
      {"summarize_missing_settings", "Summarize", {}, "Summarize missing settings in experiments."},
      {"summarize_pros_cons", "Summarize", {}, "Summarize pros and cons across different methods."},
      {"summarize_problem_differences", "Summarize", {}, "Summarize differences among the problem definition."},
      {"rank_results", "Rank", {},
       "Rank experiment results of different methods on a common dataset and a common evaluation metric."},
      {"check_results", "Check", {},
       "Check inconsistencies in experiment results on a common dataset and a common evaluation metric."},
  };
  return hs;
}

const Handler* find_handler(std::string_view name) {
  for (const auto& h : handlers()) {
    if (h.name == name) return &h;
  }
  return nullptr;
}

// ---------------------------------------------------------------- registry

const kg::Graph& OperatorContext::g() const {
  if (!graph) throw Error(ErrorCode::Precondition, "operator context has no graph");
  return *graph;
}

llm::LlmClient& OperatorContext::client() const {
  if (!llm) throw Error(ErrorCode::Precondition, "operator context has no provider client");
  return *llm;
}

void Registry::add(const std::string& name, OperatorFn fn) {
  if (!find_spec(name)) throw Error(ErrorCode::InvalidArgument, "operator not in catalog: " + name);
  fns_[name] = std::move(fn);
}

OperatorResult Registry::invoke(const std::string& name, const json& p, const std::vector<OperatorResult>& inputs,
                                OperatorContext& ctx) const {
  const auto* spec = find_spec(name);
  if (!spec) throw Error(ErrorCode::NotFound, "unknown operator: " + name);
  auto it = fns_.find(name);
  if (it == fns_.end()) throw Error(ErrorCode::NotFound, "operator has no implementation: " + name);
  json params = p.is_null() ? json::object() : p;
  if (auto err = llm::check_schema(params, spec->param_schema, "params"); !err.empty()) {
    throw Error(ErrorCode::InvalidArgument, name + ": " + err);
  }
  for (const auto& in : inputs) {
    if (!admits_input(*spec, in.kind)) {
      throw Error(ErrorCode::KindIncompatible,
                  name + " does not admit " + std::string(to_string(in.kind)) + " input");
    }
  }
  OperatorContext local = ctx;
  local.registry = this;
  auto out = it->second(params, inputs, local);
  if (out.kind != spec->output_kind) {
    throw Error(ErrorCode::EngineFailure, name + " produced " + std::string(to_string(out.kind)) + ", declared " +
                                              std::string(to_string(spec->output_kind)));
  }
  if (!out.empty() && out.provenance.empty()) {
    throw Error(ErrorCode::EngineFailure, name + " produced content without provenance");
  }
  return out;
}

// ---------------------------------------------------------------- knowledge access

OperatorResult op_search(const std::string& q, OperatorContext& ctx) {
  if (!ctx.retriever) throw Error(ErrorCode::Precondition, "Search: no retrieval index");
  if (ctx.retriever->paper_count() == 0) return make_result(PayloadKind::EntityList, json::array(), {"search"});
  auto ids = ctx.retriever->search(q, ctx.retrieval_cfg, ctx.client());
  json items = json::array();
  std::vector<std::string> prov{"search"};
  for (const auto& id : ids) {
    items.push_back(entity_json(ctx.g().at(id)));
    prov.push_back(id);
  }
  return make_result(PayloadKind::EntityList, items, prov);
}

OperatorResult op_find_node(const std::optional<std::string>& node_id,
                            const std::optional<std::string>& node_description,
                            const std::optional<std::string>& taxonomy, OperatorContext& ctx) {
  if (node_id.has_value() == node_description.has_value()) {
    throw Error(ErrorCode::InvalidArgument, "FindNode: exactly one of node_id and node_description is required");
  }
  const auto& g = ctx.g();
  if (node_id) {
    auto n = g.get(*node_id);
    if (!n) throw Error(ErrorCode::NotFound, "FindNode: unknown node " + *node_id);
    return make_result(PayloadKind::EntityList, json::array({entity_json(*n)}), {*node_id});
  }
  std::vector<kg::GraphNode> pool;
  if (!taxonomy || *taxonomy == "problem") {
    auto v = g.nodes_of_kind(kg::NodeKind::ProblemNode);
    pool.insert(pool.end(), v.begin(), v.end());
  }
  if (!taxonomy || *taxonomy == "method") {
    auto v = g.nodes_of_kind(kg::NodeKind::MethodNode);
    pool.insert(pool.end(), v.begin(), v.end());
  }
  if (pool.empty()) throw Error(ErrorCode::ArtifactMissing, "FindNode: taxonomy is empty");
  auto q = ctx.client().embed(*node_description);
  const kg::GraphNode* best = nullptr;
  double best_sim = -2.0;
  for (const auto& n : pool) {
    if (!n.embedding) continue;
    double s = cosine(q, *n.embedding);
    if (s > best_sim || (s == best_sim && best && n.id < best->id)) {
      best_sim = s;
      best = &n;
    }
  }
  if (!best) throw Error(ErrorCode::ArtifactMissing, "FindNode: no taxonomy node carries an embedding");
  json e = entity_json(*best);
  e["similarity"] = best_sim;
  return make_result(PayloadKind::EntityList, json::array({e}), {best->id});
}

OperatorResult op_traverse(const OperatorResult& start, const kg::TraversalPath& path, OperatorContext& ctx) {
  auto ids = entity_ids(start);
  auto nodes = ctx.g().execute_traversal(ids, path);
  json items = json::array();
  for (const auto& n : nodes) items.push_back(entity_json(n));
  std::vector<std::string> prov = ids;
  prov.push_back("path:" + path.to_json().dump());
  for (const auto& n : nodes) prov.push_back(n.id);
  return make_result(PayloadKind::EntityList, items, prov);
}

OperatorResult op_retrieve(const std::string& document_id, const std::vector<std::string>& section_tags,
                           OperatorContext& ctx) {
  const auto& g = ctx.g();
  auto paper = g.get(document_id);
  if (!paper || paper->kind != kg::NodeKind::Paper) {
    throw Error(ErrorCode::NotFound, "Retrieve: unknown document " + document_id);
  }
  std::set<ingest::SectionLabel> wanted;
  for (const auto& t : section_tags) wanted.insert(ingest::section_label_from_string(t));
  json sections = json::array();
  std::string text;
  std::vector<std::string> prov{document_id};
  for (auto l : ingest::kAllLabels) {
    if (!wanted.count(l)) continue;
    auto n = g.get(ingest::section_node_id(document_id, l));
    std::string label(ingest::to_string(l));
    if (!n) {
      prov.push_back("absent:" + document_id + "/" + label);
      continue;
    }
    auto body = n->attrs.value("text", std::string());
    sections.push_back({{"label", label}, {"text", body}});
    if (!text.empty()) text += "\n\n";
    text += body;
    prov.push_back("section:" + document_id + "/" + label);
  }
  json v{{"text", text},
         {"documents", json::array({{{"document_id", document_id},
                                     {"title", paper->attrs.value("title", std::string())},
                                     {"sections", sections}}})}};
  return make_result(PayloadKind::Text, v, prov);
}

// ---------------------------------------------------------------- semantic processing

OperatorResult op_extract(const std::string& q, const OperatorResult& source, const std::string& instruction,
                          const std::string& detail_level, OperatorContext& ctx) {
  if (detail_level != "short" && detail_level != "detailed" && detail_level != "detailed_with_evidence") {
    throw Error(ErrorCode::InvalidArgument, "Extract: bad detail_level " + detail_level);
  }
  if (source.kind != PayloadKind::Text) throw Error(ErrorCode::KindIncompatible, "Extract: source must be Text");
  std::string text = source.value.value("text", std::string());
  json doc_ids = json::array();
  for (const auto& d : source.value.value("documents", json::array())) doc_ids.push_back(d.value("document_id", ""));
  if (trim(text).empty()) {
    json v{{"document_ids", doc_ids}, {"fields", json::object()}, {"detail_level", detail_level}, {"empty", true}};
    auto prov = source.provenance;
    prov.push_back("absent:extract-source");
    return make_result(PayloadKind::StructuredRecord, v, prov);
  }
  json payload{{"query", q}, {"instruction", instruction}, {"detail_level", detail_level}, {"content", text}};
  auto out = ctx.client().complete_structured(
      "operators.extract", "You extract precise, structured information from scientific text.",
      "Extract what the instruction asks for from the content. Return {\"fields\": {...}, \"evidence\": "
      "[{\"field\", \"quote\"}]} where every quote is copied verbatim from the content.",
      payload, "extraction");
  json v{{"document_ids", doc_ids}, {"fields", out.at("fields")}, {"detail_level", detail_level}};
  if (detail_level == "detailed_with_evidence") {
    json ev = out.value("evidence", json::array());
    for (const auto& e : ev) {
      auto quote = e.at("quote").get<std::string>();
      if (quote.empty() || text.find(quote) == std::string::npos) {
        throw Error(ErrorCode::EvidenceIntegrity, "Extract: evidence quote not found verbatim in source: " + quote);
      }
    }
    v["evidence"] = ev;
  }
  return make_result(PayloadKind::StructuredRecord, v, source.provenance);
}

OperatorResult op_summarize(const std::vector<OperatorResult>& inputs, const std::string& q,
                            const std::string& detail_level, const std::string& focus, OperatorContext& ctx) {
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const auto& r) { return !r.empty(); });
  if (!any) throw Error(ErrorCode::Precondition, "Summarize: empty input");
  auto text = ctx.client().complete_text(
      "operators.summarize", "You write faithful summaries of scholarly material.",
      "Summarize the inputs at the requested detail level, following the focus.",
      json{{"query", q}, {"detail_level", detail_level}, {"focus", focus}, {"inputs", prompt_inputs(inputs)}});
  return make_result(PayloadKind::Text, json{{"text", text}, {"sources", inputs.size()}}, merged_provenance(inputs));
}

std::vector<OperatorResult> op_summarize_instances(const std::vector<OperatorResult>& inputs, const std::string& q,
                                                   const std::string& detail_level, const std::string& focus,
                                                   OperatorContext& ctx) {
  std::vector<OperatorResult> items;
  for (const auto& r : inputs) {
    if (r.kind == PayloadKind::EntityList) {
      for (const auto& e : r.value) {
        items.push_back(make_result(PayloadKind::EntityList, json::array({e}), {e.value("id", "")}));
      }
    } else {
      items.push_back(r);
    }
  }
  if (items.empty()) throw Error(ErrorCode::Precondition, "Summarize: empty input");
  std::vector<OperatorResult> out;
  for (const auto& it : items) out.push_back(op_summarize({it}, q, detail_level, focus, ctx));
  return out;
}

OperatorResult op_check(const std::vector<OperatorResult>& inputs, const std::string& q,
                        const std::string& check_instruction, OperatorContext& ctx) {
  std::vector<OperatorResult> peers;
  for (const auto& r : inputs) {
    if (r.kind == PayloadKind::EntityList && r.value.size() > 1) {
      for (const auto& e : r.value) peers.push_back(make_result(PayloadKind::EntityList, json::array({e}), {e.value("id", "")}));
    } else {
      peers.push_back(r);
    }
  }
  if (peers.size() < 2) throw Error(ErrorCode::Precondition, "Check: needs at least two peer inputs");
  if (trim(check_instruction).empty()) throw Error(ErrorCode::InvalidArgument, "Check: no check_instruction or handler");
  json srcs = json::array();
  for (std::size_t i = 0; i < peers.size(); ++i) {
    json v = prompt_view(peers[i]);
    v["source"] = "S" + std::to_string(i + 1);
    srcs.push_back(v);
  }
  auto out = ctx.client().complete_structured(
      "operators.check", "You compare peer sources and report inconsistencies.",
      "Compare the sources following the instruction. List agreements and disagreements, attributing each "
      "disagreement to the sources involved. Return {\"report\", \"agreements\", \"disagreements\"}.",
      json{{"query", q}, {"instruction", check_instruction}, {"sources", srcs}}, "check_report");
  json v{{"text", out.at("report")}, {"agreements", out.at("agreements")}, {"disagreements", out.at("disagreements")},
         {"sources", peers.size()}};
  return make_result(PayloadKind::Text, v, merged_provenance(peers));
}

OperatorResult op_verify(const std::string& claim, const std::string& evidence, const std::string& q,
                         OperatorContext& ctx, std::vector<std::string> provenance) {
  if (trim(claim).empty()) throw Error(ErrorCode::Precondition, "Verify: empty claim");
  if (trim(evidence).empty()) throw Error(ErrorCode::Precondition, "Verify: empty evidence");
  auto out = ctx.client().complete_structured(
      "operators.verify", "You fact-check claims strictly against the given evidence.",
      "Decide whether the evidence supports or contradicts the claim, or is insufficient. Return "
      "{\"verdict\", \"justification\"}.",
      json{{"query", q}, {"claim", claim}, {"evidence", evidence}}, "verdict");
  auto verdict = out.at("verdict").get<std::string>();
  json v{{"text", verdict + ": " + out.at("justification").get<std::string>()},
         {"verdict", verdict},
         {"justification", out.at("justification")}};
  provenance.push_back("claim");
  return make_result(PayloadKind::Text, v, provenance);
}

OperatorResult op_rank(const std::vector<OperatorResult>& inputs, const std::string& q,
                       const std::string& rank_instruction, const std::string& order, OperatorContext& ctx) {
  if (order != "asc" && order != "desc") throw Error(ErrorCode::InvalidArgument, "Rank: order must be asc or desc");
  if (trim(rank_instruction).empty()) throw Error(ErrorCode::InvalidArgument, "Rank: no rank_instruction or handler");
  json view = prompt_inputs(inputs);
  const std::string haystack = to_lower(view.dump());
  auto out = ctx.client().complete_structured(
      "operators.rank", "You identify entities in scholarly material and rank them by a criterion.",
      "Identify the entities to rank and the criterion from the instruction. Report each entity once with "
      "its numeric criterion value when available (null otherwise), the source and an annotation. Return "
      "{\"ranking\": [{\"entity\", \"value\", \"source\", \"annotation\"}]}.",
      json{{"query", q}, {"instruction", rank_instruction}, {"order", order}, {"inputs", view}}, "ranking");
  std::vector<json> valued, unvalued;
  std::set<std::string> seen;
  for (const auto& r : out.at("ranking")) {
    auto e = trim(r.at("entity").get<std::string>());
    if (e.empty()) throw SchemaViolation("Rank: empty entity", out.dump());
    if (!seen.insert(e).second) throw SchemaViolation("Rank: entity listed twice: " + e, out.dump());
    if (haystack.find(to_lower(e)) == std::string::npos) {
      throw SchemaViolation("Rank: entity not present in the input: " + e, out.dump());
    }
    json item{{"entity", e},
              {"value", r.contains("value") ? r["value"] : json(nullptr)},
              {"source", r.value("source", std::string())},
              {"annotation", r.value("annotation", std::string())}};
    (item["value"].is_number() ? valued : unvalued).push_back(item);
  }
  if (valued.empty() && unvalued.empty()) throw Error(ErrorCode::Precondition, "Rank: no rankable entities");
  const bool desc = order == "desc";
  std::stable_sort(valued.begin(), valued.end(), [desc](const json& a, const json& b) {
    double x = a["value"].get<double>(), y = b["value"].get<double>();
    if (x != y) return desc ? x > y : x < y;
    return a["entity"].get<std::string>() < b["entity"].get<std::string>();
  });
  json ranking = json::array();
  int rank = 1;
  for (auto* part : {&valued, &unvalued}) {
    for (auto& item : *part) {
      item["rank"] = rank++;
      ranking.push_back(item);
    }
  }
  return make_result(PayloadKind::Ranking, json{{"ranking", ranking}, {"order", order}}, merged_provenance(inputs));
}

// ---------------------------------------------------------------- relational

std::optional<json> resolve_path(const json& item, const std::string& path) {
  auto walk = [](const json* cur, const std::string& p) -> const json* {
    std::size_t pos = 0;
    while (cur && pos <= p.size()) {
      auto dot = p.find('.', pos);
      auto key = p.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
      if (!cur->is_object() || !cur->contains(key)) return nullptr;
      cur = &(*cur)[key];
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    return cur;
  };
  if (path.empty()) return std::nullopt;
  if (const json* v = walk(&item, path); v && !v->is_null()) return *v;
  if (item.is_object() && item.contains("attrs")) {
    if (const json* v = walk(&item["attrs"], path); v && !v->is_null()) return *v;
  }
  return std::nullopt;
}

OperatorResult op_group_by(const OperatorResult& input, const std::string& grouping_key) {
  if (trim(grouping_key).empty()) throw Error(ErrorCode::InvalidArgument, "GroupBy: empty grouping key");
  json items = items_of(input);
  std::vector<std::string> order;
  std::map<std::string, json> groups;
  for (const auto& it : items) {
    auto v = resolve_path(it, grouping_key);
    std::string key = !v ? "∅" : v->is_string() ? v->get<std::string>() : v->dump();
    if (!groups.count(key)) {
      order.push_back(key);
      groups[key] = json::array();
    }
    groups[key].push_back(it);
  }
  json out = json::array();
  for (const auto& k : order) out.push_back({{"key", k}, {"items", groups[k]}, {"count", groups[k].size()}});
  auto prov = input.provenance;
  prov.push_back("group_by:" + grouping_key);
  return make_result(PayloadKind::StructuredRecord, json{{"grouping_key", grouping_key}, {"groups", out}}, prov);
}

OperatorResult op_aggregate(const OperatorResult& input, const json& instruction) {
  std::string fn, target;
  if (instruction.is_object()) {
    fn = instruction.value("function", std::string());
    target = instruction.value("target", std::string());
  } else if (instruction.is_string()) {
    static const std::regex re(R"(^\s*([A-Za-z]+)\s*(?:\(\s*([\w.]*)\s*\)|\s+(?:of\s+)?([\w.]+))?\s*$)");
    std::smatch m;
    auto s = instruction.get<std::string>();
    if (!std::regex_match(s, m, re)) throw Error(ErrorCode::InvalidArgument, "Aggregate: cannot parse " + s);
    fn = m[1];
    target = m[2].matched ? m[2].str() : m[3].str();
  }
  for (auto& c : fn) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (fn != "COUNT" && fn != "MAX" && fn != "MIN" && fn != "AVG" && fn != "SUM") {
    throw Error(ErrorCode::InvalidArgument, "Aggregate: unknown function " + fn);
  }
  auto compute = [&](const json& items) -> json {
    if (fn == "COUNT") return items.size();
    if (target.empty()) throw Error(ErrorCode::InvalidArgument, "Aggregate: " + fn + " needs a target");
    if (items.empty() && fn != "SUM") throw Error(ErrorCode::Precondition, "Aggregate: " + fn + " over empty input");
    std::vector<double> xs;
    for (const auto& it : items) {
      auto v = resolve_path(it, target);
      bool ok = false;
      double d = v ? as_number(*v, ok) : 0.0;
      if (!ok) throw Error(ErrorCode::InvalidArgument, "Aggregate: non-numeric target " + target);
      xs.push_back(d);
    }
    double sum = 0.0;
    for (double x : xs) sum += x;
    if (fn == "SUM") return sum;
    if (fn == "AVG") return sum / static_cast<double>(xs.size());
    double best = xs.front();
    for (double x : xs) best = fn == "MAX" ? std::max(best, x) : std::min(best, x);
    return best;
  };
  json v{{"function", fn}, {"target", target}};
  if (input.kind == PayloadKind::StructuredRecord && input.value.contains("groups")) {
    json gs = json::array();
    for (const auto& g : input.value["groups"]) gs.push_back({{"key", g.at("key")}, {"value", compute(g.at("items"))}});
    v["groups"] = gs;
  } else {
    v["value"] = compute(items_of(input));
  }
  auto prov = input.provenance;
  prov.push_back("aggregate:" + fn + (target.empty() ? "" : "(" + target + ")"));
  return make_result(PayloadKind::StructuredRecord, v, prov);
}

std::optional<Comparison> parse_comparison(std::string_view text) {
  std::string s(text);
  for (auto [from, to] : {std::pair{"≥", ">="}, std::pair{"≤", "<="}, std::pair{"≠", "!="}}) {
    for (auto p = s.find(from); p != std::string::npos; p = s.find(from)) s.replace(p, std::strlen(from), to);
  }
  static const std::regex re(R"(^\s*([A-Za-z_][\w.]*)\s*(>=|<=|!=|==|=|<|>|\bcontains\b)\s*(.+?)\s*$)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) return std::nullopt;
  Comparison c;
  c.field = m[1];
  c.op = m[2] == "==" ? "=" : m[2].str();
  std::string lit = m[3];
  if (lit.size() >= 2 && (lit.front() == '"' || lit.front() == '\'') && lit.back() == lit.front()) {
    c.literal = lit.substr(1, lit.size() - 2);
  } else {
    bool ok = false;
    double d = as_number(json(lit), ok);
    if (ok) {
      c.literal = (std::floor(d) == d && std::abs(d) < 1e15) ? json(static_cast<std::int64_t>(d)) : json(d);
    } else {
      // Free text after an operator: only treat short single-token literals as attributes.
      if (lit.find(' ') != std::string::npos && c.op != "contains") return std::nullopt;
      c.literal = lit;
    }
  }
  return c;
}

namespace {

bool eval_comparison(const Comparison& c, const json& item) {
  auto v = resolve_path(item, c.field);
  if (!v) return false;
  if (c.op == "contains") {
    auto needle = to_lower(c.literal.is_string() ? c.literal.get<std::string>() : c.literal.dump());
    if (v->is_array()) {
      for (const auto& x : *v) {
        if (to_lower(x.is_string() ? x.get<std::string>() : x.dump()) == needle) return true;
      }
      return false;
    }
    return to_lower(v->is_string() ? v->get<std::string>() : v->dump()).find(needle) != std::string::npos;
  }
  bool ok1 = false, ok2 = false;
  double a = as_number(*v, ok1), b = as_number(c.literal, ok2);
  int cmp;
  if (ok1 && ok2) {
    cmp = a < b ? -1 : a > b ? 1 : 0;
  } else {
    auto x = v->is_string() ? v->get<std::string>() : v->dump();
    auto y = c.literal.is_string() ? c.literal.get<std::string>() : c.literal.dump();
    cmp = x < y ? -1 : x > y ? 1 : 0;
  }
  if (c.op == "=") return cmp == 0;
  if (c.op == "!=") return cmp != 0;
  if (c.op == "<") return cmp < 0;
  if (c.op == "<=") return cmp <= 0;
  if (c.op == ">") return cmp > 0;
  return cmp >= 0;
}

}  // namespace

OperatorResult op_filter(const OperatorResult& input, const std::string& filter_instruction, OperatorContext& ctx) {
  if (input.kind != PayloadKind::EntityList) throw Error(ErrorCode::KindIncompatible, "Filter: needs an EntityList");
  json kept = json::array();
  std::vector<std::string> prov;
  auto cmp = parse_comparison(filter_instruction);
  for (const auto& item : input.value) {
    bool keep;
    if (cmp) {
      keep = eval_comparison(*cmp, item);
    } else {
      auto out = ctx.client().complete_structured(
          "operators.filter", "You decide whether an item satisfies a condition.",
          "Does the item satisfy the condition? Return {\"keep\": true|false}.",
          json{{"condition", filter_instruction},
               {"item", {{"id", item.value("id", "")}, {"kind", item.value("kind", "")}, {"attrs", item.value("attrs", json::object())}}}},
          "filter_decision");
      keep = out.at("keep").get<bool>();
    }
    if (keep) {
      kept.push_back(item);
      prov.push_back(item.value("id", ""));
    }
  }
  prov.push_back("filter:" + filter_instruction);
  return make_result(PayloadKind::EntityList, kept, prov);
}

OperatorResult op_generate(const std::vector<OperatorResult>& inputs, const std::string& q,
                           const std::string& generation_instruction, const std::string& output_format,
                           OperatorContext& ctx) {
  if (trim(generation_instruction).empty()) throw Error(ErrorCode::Precondition, "Generate: empty instruction");
  auto text = ctx.client().complete_text(
      "operators.generate", "You produce grounded scholarly write-ups from structured evidence.",
      "Follow the generation instruction using only the inputs." +
          std::string(output_format == "table" ? " Render the answer as a markdown table." : ""),
      json{{"query", q}, {"instruction", generation_instruction}, {"inputs", prompt_inputs(inputs)}});
  auto prov = merged_provenance(inputs);
  if (prov.empty()) prov.push_back("generate");
  return make_result(PayloadKind::Text, json{{"text", text}, {"format", output_format}}, prov);
}

OperatorResult op_matrix_construct(const std::vector<OperatorResult>& inputs, OperatorContext& ctx) {
  const auto& g = ctx.g();
  auto children = [&](const std::string& id) {
    std::vector<std::string> out;
    auto kind = g.at(id).kind;
    for (const auto& c : g.neighbors(id, kg::EdgeKind::CHILD_OF, kg::Direction::In, kind)) out.push_back(c.id);
    std::sort(out.begin(), out.end());
    return out;
  };
  auto leaves_under = [&](const std::string& root) {
    std::vector<std::string> out;
    std::vector<std::string> stack{root};
    while (!stack.empty()) {
      auto id = stack.back();
      stack.pop_back();
      auto ch = children(id);
      if (ch.empty()) out.push_back(id);
      for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }
    return out;
  };
  auto roots_of = [&](kg::NodeKind kind) {
    std::vector<std::string> out;
    for (const auto& n : g.nodes_of_kind(kind)) {
      if (g.neighbors(n.id, kg::EdgeKind::CHILD_OF, kg::Direction::Out, kind).empty()) out.push_back(n.id);
    }
    return out;
  };
  std::vector<std::string> problem_roots, method_roots, papers;
  for (const auto& r : inputs) {
    for (const auto& e : r.value) {
      auto id = e.value("id", "");
      auto kind = e.value("kind", "");
      if (kind == "ProblemNode") problem_roots.push_back(id);
      else if (kind == "MethodNode") method_roots.push_back(id);
      else if (kind == "Paper") papers.push_back(id);
    }
  }
  std::vector<std::string> rows, cols;
  if (!papers.empty() && problem_roots.empty() && method_roots.empty()) {
    std::set<std::string> rs, cs;
    for (const auto& p : papers) {
      for (const auto& n : g.neighbors(p, kg::EdgeKind::ADDRESSES, kg::Direction::Out, kg::NodeKind::ProblemNode)) rs.insert(n.id);
      for (const auto& n : g.neighbors(p, kg::EdgeKind::APPLIES, kg::Direction::Out, kg::NodeKind::MethodNode)) cs.insert(n.id);
    }
    rows.assign(rs.begin(), rs.end());
    cols.assign(cs.begin(), cs.end());
  } else {
    if (problem_roots.empty()) problem_roots = roots_of(kg::NodeKind::ProblemNode);
    if (method_roots.empty()) method_roots = roots_of(kg::NodeKind::MethodNode);
    if (problem_roots.empty() || method_roots.empty()) {
      throw Error(ErrorCode::ArtifactMissing, "MatrixConstruct: both taxonomies must be anchored in the graph");
    }
    std::set<std::string> seen;
    for (const auto& r : problem_roots) {
      for (const auto& l : leaves_under(r)) {
        if (seen.insert(l).second) rows.push_back(l);
      }
    }
    for (const auto& r : method_roots) {
      for (const auto& l : leaves_under(r)) {
        if (seen.insert(l).second) cols.push_back(l);
      }
    }
  }
  auto incoming = [&](const std::string& node, kg::EdgeKind ek) {
    std::set<std::string> out;
    for (const auto& p : g.neighbors(node, ek, kg::Direction::In, kg::NodeKind::Paper)) out.insert(p.id);
    return out;
  };
  auto node_ref = [&](const std::string& id) {
    auto n = g.at(id);
    return json{{"id", id}, {"name", n.attrs.value("name", id)}, {"description", n.attrs.value("description", "")}};
  };
  json jr = json::array(), jc = json::array(), cells = json::array();
  std::vector<std::string> prov;
  for (const auto& r : rows) jr.push_back(node_ref(r));
  for (const auto& c : cols) jc.push_back(node_ref(c));
  std::map<std::string, std::set<std::string>> col_papers;
  for (const auto& c : cols) col_papers[c] = incoming(c, kg::EdgeKind::APPLIES);
  for (const auto& r : rows) {
    auto rp = incoming(r, kg::EdgeKind::ADDRESSES);
    prov.push_back(r);
    for (const auto& c : cols) {
      json ps = json::array();
      std::string summary;
      for (const auto& p : rp) {
        if (!col_papers[c].count(p)) continue;
        ps.push_back(p);
        prov.push_back(p);
        if (!summary.empty()) summary += "; ";
        summary += g.at(p).attrs.value("title", p);
      }
      cells.push_back({{"row", r}, {"col", c}, {"papers", ps}, {"count", ps.size()}, {"summary", summary}});
    }
  }
  prov.insert(prov.end(), cols.begin(), cols.end());
  if (prov.empty()) prov.push_back("matrix");
  return make_result(PayloadKind::Matrix, json{{"rows", jr}, {"cols", jc}, {"cells", cells}}, prov);
}

// ---------------------------------------------------------------- dispatch

namespace {

OperatorResult source_for_extract(const json& p, const std::vector<OperatorResult>& inputs, OperatorContext& ctx) {
  auto tags = tags_param(p);
  if (tags.empty()) {
    if (const auto* h = find_handler(str_param(p, "handler"))) tags = h->section_tags;
  }
  std::vector<OperatorResult> texts;
  for (const auto& in : inputs) {
    if (in.kind == PayloadKind::Text) {
      texts.push_back(in);
    } else {
      for (const auto& id : entity_ids(in)) texts.push_back(op_retrieve(id, tags, ctx));
    }
  }
  if (texts.size() == 1 && tags.empty()) return texts.front();
  // Merge, keeping only the requested units when tags are given.
  std::set<std::string> want(tags.begin(), tags.end());
  json docs = json::array();
  std::string text;
  std::vector<std::string> prov;
  for (const auto& t : texts) {
    prov.insert(prov.end(), t.provenance.begin(), t.provenance.end());
    for (auto d : t.value.value("documents", json::array())) {
      json secs = json::array();
      for (const auto& s : d.value("sections", json::array())) {
        if (!want.empty() && !want.count(s.value("label", ""))) continue;
        secs.push_back(s);
        if (!text.empty()) text += "\n\n";
        text += s.value("text", "");
      }
      d["sections"] = secs;
      docs.push_back(d);
    }
    if (!t.value.contains("documents")) {
      if (!text.empty()) text += "\n\n";
      text += t.value.value("text", "");
    }
  }
  return make_result(PayloadKind::Text, json{{"text", text}, {"documents", docs}}, prov);
}

std::string instruction_of(const json& p, const char* key) {
  auto s = str_param(p, key);
  if (!s.empty()) return s;
  if (const auto* h = find_handler(str_param(p, "handler"))) return h->instruction;
  return {};
}

}  // namespace

Registry Registry::with_builtins() {
  Registry r;
  r.add("Search", [](const json& p, const std::vector<OperatorResult>&, OperatorContext& ctx) {
    OperatorContext c = ctx;
    c.retrieval_cfg.candidates_per_query = p.value("candidates_per_query", c.retrieval_cfg.candidates_per_query);
    c.retrieval_cfg.top_k = p.value("top_k", c.retrieval_cfg.top_k);
    return op_search(p.at("query").get<std::string>(), c);
  });
  r.add("FindNode", [](const json& p, const std::vector<OperatorResult>&, OperatorContext& ctx) {
    auto opt = [&](const char* k) -> std::optional<std::string> {
      if (p.contains(k) && p[k].is_string() && !p[k].get<std::string>().empty()) return p[k].get<std::string>();
      return std::nullopt;
    };
    return op_find_node(opt("node_id"), opt("node_description"), opt("taxonomy"), ctx);
  });
  r.add("Traverse", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    return op_traverse(merge_entities(in), kg::TraversalPath::from_json(p.at("traversal_path")), ctx);
  });
  r.add("Retrieve", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    auto tags = tags_param(p);
    std::vector<std::string> docs;
    if (auto d = str_param(p, "document_id"); !d.empty()) docs.push_back(d);
    for (const auto& x : in) {
      for (const auto& id : entity_ids(x)) docs.push_back(id);
    }
    if (docs.empty()) {
      if (in.empty()) throw Error(ErrorCode::InvalidArgument, "Retrieve: no document_id and no input");
      return empty_result(PayloadKind::Text);
    }
    if (docs.size() == 1) return op_retrieve(docs.front(), tags, ctx);
    json all_docs = json::array();
    std::string text;
    std::vector<std::string> prov;
    for (const auto& d : docs) {
      auto one = op_retrieve(d, tags, ctx);
      for (const auto& x : one.value["documents"]) all_docs.push_back(x);
      auto t = one.value.value("text", std::string());
      if (!t.empty()) text += (text.empty() ? "" : "\n\n") + t;
      prov.insert(prov.end(), one.provenance.begin(), one.provenance.end());
    }
    return make_result(PayloadKind::Text, json{{"text", text}, {"documents", all_docs}}, prov);
  });
  r.add("Extract", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    auto instr = instruction_of(p, "extract_instruction");
    if (instr.empty()) throw Error(ErrorCode::InvalidArgument, "Extract: no extract_instruction or handler");
    return op_extract(str_param(p, "query"), source_for_extract(p, in, ctx), instr,
                      str_param(p, "detail_level", "detailed"), ctx);
  });
  r.add("Summarize", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    auto focus = str_param(p, "focus");
    if (focus.empty()) focus = instruction_of(p, "focus");
    return op_summarize(in, str_param(p, "query"), str_param(p, "detail_level", "short"), focus, ctx);
  });
  r.add("Check", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    return op_check(in, str_param(p, "query"), instruction_of(p, "check_instruction"), ctx);
  });
  r.add("Verify", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    std::string evidence = str_param(p, "evidence");
    for (const auto& x : in) {
      if (!evidence.empty()) evidence += "\n\n";
      evidence += x.kind == PayloadKind::Text ? x.value.value("text", std::string()) : x.value.dump();
    }
    return op_verify(str_param(p, "claim"), evidence, str_param(p, "query"), ctx, merged_provenance(in));
  });
  r.add("Rank", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    return op_rank(in, str_param(p, "query"), instruction_of(p, "rank_instruction"), str_param(p, "order", "desc"), ctx);
  });
  r.add("GroupBy", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext&) {
    if (in.size() == 1) return op_group_by(in.front(), p.at("grouping_key").get<std::string>());
    return op_group_by(merge_entities(in), p.at("grouping_key").get<std::string>());
  });
  r.add("Aggregate", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext&) {
    if (in.size() == 1) return op_aggregate(in.front(), p.at("aggregation_instruction"));
    return op_aggregate(merge_entities(in), p.at("aggregation_instruction"));
  });
  r.add("Filter", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    return op_filter(merge_entities(in), p.at("filter_instruction").get<std::string>(), ctx);
  });
  r.add("Generate", [](const json& p, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    return op_generate(in, str_param(p, "query"), p.at("generation_instruction").get<std::string>(),
                       str_param(p, "output_format", "text"), ctx);
  });
  r.add("MatrixConstruct", [](const json&, const std::vector<OperatorResult>& in, OperatorContext& ctx) {
    return op_matrix_construct(in, ctx);
  });
  return r;
}

}  // namespace scholar::ops
