// Named response schemas for every structured provider call.

#include "scholar/llm.hpp"

#include <map>

namespace scholar::llm {

namespace {

json str() { return {{"type", "string"}}; }
json str_list() { return {{"type", "array"}, {"items", str()}}; }
json obj(json props, std::vector<std::string> required) {
  return {{"type", "object"}, {"properties", std::move(props)}, {"required", std::move(required)}};
}
json arr(json items) { return {{"type", "array"}, {"items", std::move(items)}}; }

const std::map<std::string, json, std::less<>>& table() {
  static const std::map<std::string, json, std::less<>> t = [] {
    std::map<std::string, json, std::less<>> m;
    json name_or_span = {{"type", "any"}};

    // ingest
    m["section_label"] = obj(
        {{"label",
          {{"type", "string"},
           {"enum",
            {"Abstract", "Introduction", "RelatedWork", "ProblemFormulation", "Methodology",
             "Experiments", "Other"}}}}},
        {"label"});
    m["context_entities"] = obj({{"datasets", arr(name_or_span)},
                                 {"metrics", arr(name_or_span)},
                                 {"baselines", arr(name_or_span)}},
                                {"datasets", "metrics", "baselines"});
    m["entity_groups"] =
        obj({{"groups", arr(obj({{"canonical", str()}, {"variants", str_list()}}, {"canonical", "variants"}))}},
            {"groups"});

    // taxonomy
    m["problem_template"] =
        obj({{"description", str()}, {"input", str()}, {"output", str()}}, {"description", "input", "output"});
    m["method_template"] = obj({{"description", str()},
                                {"key_techniques", str()},
                                {"strengths", str()},
                                {"weaknesses", str()}},
                               {"description", "key_techniques", "strengths", "weaknesses"});
    m["signatures"] = obj({{"signatures", arr(str_list())}}, {"signatures"});
    m["aspect_classes"] =
        obj({{"classes", arr(obj({{"label", str()}, {"members", str_list()}}, {"label", "members"}))}},
            {"classes"});
    m["topic_label"] = obj({{"topic", str()}}, {"topic"});
    m["reference_taxonomy"] = obj(
        {{"nodes", arr(obj({{"id", str()},
                            {"name", str()},
                            {"description", str()},
                            {"parent", {{"type", "string"}, {"nullable", true}}}},
                           {"id", "name", "parent"}))}},
        {"nodes"});
    m["subsumption"] = obj({{"subsumes", {{"type", "boolean"}}}}, {"subsumes"});
    m["node_name"] = obj({{"name", str()}, {"description", str()}}, {"name", "description"});
    m["class_mapping"] = obj(
        {{"matches", arr(obj({{"aspect", {{"type", "integer"}, {"minimum", 0}}},
                               {"class_id", {{"type", "string"}, {"nullable", true}}},
                               {"label", {{"type", "string"}, {"nullable", true}}}},
                              {"aspect", "class_id"}))}},
        {"matches"});
    m["subtopic_count"] = obj({{"k", {{"type", "integer"}, {"minimum", 0}}}}, {"k"});
    m["clusters"] =
        obj({{"clusters", arr(obj({{"label", str()}, {"description", str()}, {"papers", str_list()}},
                                  {"label", "papers"}))}},
            {"clusters"});

    // retrieval
    m["decomposed_query"] = obj(
        {{"metadata_constraints",
          arr(obj({{"field",
                    {{"type", "string"},
                     {"enum", {"title", "authors", "affiliations", "publication_year", "venue"}}}},
                   {"value", {{"type", "string"}, {"nullable", true}}},
                   {"year_min", {{"type", "integer"}, {"nullable", true}}},
                   {"year_max", {{"type", "integer"}, {"nullable", true}}}},
                  {"field"}))},
         {"aspect_intents",
          arr(obj({{"aspect",
                    {{"type", "string"},
                     {"enum",
                      {"research_topic", "problem_formulation", "proposed_method",
                       "experimental_datasets", "experimental_baselines", "experimental_results"}}}},
                   {"text", str()}},
                  {"aspect", "text"}))}},
        {"metadata_constraints", "aspect_intents"});
    m["rerank"] = obj({{"ranking", str_list()}}, {"ranking"});

    // planner
    m["scope_task"] = obj({{"scope", str()}, {"task", str()}}, {"scope", "task"});
    m["plan_confidence"] = obj(
        {{"scores", arr(obj({{"plan_id", {{"type", "integer"}}},
                              {"confidence", {{"type", "integer"}, {"minimum", 0}, {"maximum", 100}}}},
                             {"plan_id", "confidence"}))}},
        {"scores"});
    m["high_level_plan"] = obj(
        {{"steps", {{"type", "array"},
                    {"minItems", 1},
                    {"items", obj({{"id", str()}, {"description", str()}, {"depends_on", str_list()}},
                                  {"id", "description"})}}}},
        {"steps"});
    m["plan_step"] = obj({{"op_name", str()},
                          {"params", {{"type", "object"}}},
                          {"execution_mode", {{"type", "string"}, {"enum", {"instance", "group", "n/a"}}}}},
                         {"op_name", "params", "execution_mode"});
    m["plan"] = obj({{"steps", arr(obj({{"step_id", str()},
                                         {"op_name", str()},
                                         {"params", {{"type", "object"}}},
                                         {"execution_mode", str()},
                                         {"inputs", str_list()}},
                                        {"step_id", "op_name"}))},
                     {"terminal_ids", str_list()}},
                    {"steps"});
    m["repaired_plan"] = obj({{"plan", m["plan"]}}, {"plan"});

    // operators
    m["extraction"] =
        obj({{"fields", {{"type", "object"}}},
             {"evidence", arr(obj({{"field", str()}, {"quote", str()}}, {"quote"}))}},
            {"fields"});
    m["check_report"] = obj(
        {{"report", str()},
         {"agreements", str_list()},
         {"disagreements", arr(obj({{"issue", str()}, {"sources", str_list()}}, {"issue", "sources"}))}},
        {"report", "agreements", "disagreements"});
    m["verdict"] = obj({{"verdict", {{"type", "string"}, {"enum", {"supported", "contradicted", "insufficient"}}}},
                        {"justification", str()}},
                       {"verdict", "justification"});
    m["ranking"] = obj({{"ranking", arr(obj({{"entity", str()},
                                              {"value", {{"type", "number"}, {"nullable", true}}},
                                              {"source", str()},
                                              {"annotation", str()}},
                                             {"entity"}))}},
                       {"ranking"});
    m["filter_decision"] = obj({{"keep", {{"type", "boolean"}}}}, {"keep"});

    // pipelines
    m["trend_ranking"] =
        obj({{"ranking", arr(obj({{"node_id", str()}, {"narrative", str()}}, {"node_id", "narrative"}))},
             {"summary", str()}},
            {"ranking"});
    m["idea_score"] = obj({{"score", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}}}, {"score"});
    m["idea_proposal"] = obj({{"motivation", str()},
                              {"feasibility", str()},
                              {"novelty", str()},
                              {"contributions", str()}},
                             {"motivation", "feasibility", "novelty", "contributions"});
    m["query_variants"] = obj({{"variants", str_list()}}, {"variants"});
    return m;
  }();
  return t;
}

}  // namespace

const json& schema(std::string_view name) {
  auto it = table().find(name);
  if (it == table().end()) throw Error(ErrorCode::InvalidArgument, "unknown schema: " + std::string(name));
  return it->second;
}

bool has_schema(std::string_view name) { return table().count(name) > 0; }

}  // namespace scholar::llm
