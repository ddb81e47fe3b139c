#pragma once
// Operator library: catalog (signatures + param schemas), the shared
// payload envelope and the built-in implementations.

#include "scholar/kgraph.hpp"
#include "scholar/llm.hpp"
#include "scholar/retrieval.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scholar::ops {

enum class PayloadKind { EntityList, Text, StructuredRecord, TableGrid, Ranking, Matrix };
enum class ExecMode { Instance, Group, NA };

std::string_view to_string(PayloadKind k);
std::string_view to_string(ExecMode m);
PayloadKind payload_kind_from_string(std::string_view s);
ExecMode exec_mode_from_string(std::string_view s);

// Value shapes per kind:
//   EntityList       [{id, kind, attrs}]
//   Text             {text, ...}
//   StructuredRecord object
//   TableGrid        {columns, rows}
//   Ranking          {ranking: [{entity, value, source, annotation}]}
//   Matrix           {rows, cols, cells: [{row, col, papers, count, summary}]}
struct OperatorResult {
  PayloadKind kind = PayloadKind::Text;
  json value;
  std::vector<std::string> provenance;  // sorted, unique

  bool empty() const;
  std::string digest() const;
  json to_json() const;
  static OperatorResult from_json(const json& j);
  bool operator==(const OperatorResult&) const = default;
};

OperatorResult make_result(PayloadKind kind, json value, std::vector<std::string> provenance);
// An empty payload of `kind` (used for group steps over no items).
OperatorResult empty_result(PayloadKind kind);

struct OperatorSpec {
  std::string name;
  std::string description;
  std::vector<PayloadKind> input_kinds;  // admitted
  PayloadKind output_kind = PayloadKind::Text;
  std::vector<ExecMode> modes;           // legal execution modes
  int min_inputs = 0;
  int max_inputs = -1;                   // -1 = unbounded
  bool source_less = false;              // reads storage, takes no inputs
  json param_schema;                     // object schema in the validator subset

  json to_json() const;
};

// Built-in catalog: the fourteen primitives plus the composite Tier-3 ops.
const std::vector<OperatorSpec>& catalog();
const OperatorSpec* find_spec(std::string_view name);
json catalog_json();
bool admits_input(const OperatorSpec& spec, PayloadKind k);

// Predefined instruction templates (the handler names of plan steps).
struct Handler {
  std::string name;
  std::string op_name;
  std::vector<std::string> section_tags;  // units the handler reads
  std::string instruction;
};

const std::vector<Handler>& handlers();
const Handler* find_handler(std::string_view name);

class Registry;

struct OperatorContext {
  const kg::Graph* graph = nullptr;
  const retrieval::Retriever* retriever = nullptr;
  llm::LlmClient* llm = nullptr;
  retrieval::RetrievalConfig retrieval_cfg;
  const Registry* registry = nullptr;

  const kg::Graph& g() const;
  llm::LlmClient& client() const;
};

using OperatorFn =
    std::function<OperatorResult(const json& params, const std::vector<OperatorResult>& inputs, OperatorContext& ctx)>;

class Registry {
 public:
  // The primitives.
  static Registry with_builtins();

  void add(const std::string& name, OperatorFn fn);
  bool has(const std::string& name) const { return fns_.count(name) > 0; }
  // Validates params against the catalog schema and the output kind
  // against the declared signature.
  OperatorResult invoke(const std::string& name, const json& params, const std::vector<OperatorResult>& inputs,
                        OperatorContext& ctx) const;

 private:
  std::map<std::string, OperatorFn> fns_;
};

// ---------------------------------------------------------------- primitives

OperatorResult op_search(const std::string& q, OperatorContext& ctx);
OperatorResult op_find_node(const std::optional<std::string>& node_id,
                            const std::optional<std::string>& node_description,
                            const std::optional<std::string>& taxonomy, OperatorContext& ctx);
OperatorResult op_traverse(const OperatorResult& start, const kg::TraversalPath& path, OperatorContext& ctx);
OperatorResult op_retrieve(const std::string& document_id, const std::vector<std::string>& section_tags,
                           OperatorContext& ctx);
OperatorResult op_extract(const std::string& q, const OperatorResult& source, const std::string& instruction,
                          const std::string& detail_level, OperatorContext& ctx);
OperatorResult op_summarize(const std::vector<OperatorResult>& inputs, const std::string& q,
                            const std::string& detail_level, const std::string& focus, OperatorContext& ctx);
// Instance mode over the items of an EntityList or several inputs.
std::vector<OperatorResult> op_summarize_instances(const std::vector<OperatorResult>& inputs, const std::string& q,
                                                   const std::string& detail_level, const std::string& focus,
                                                   OperatorContext& ctx);
OperatorResult op_check(const std::vector<OperatorResult>& inputs, const std::string& q,
                        const std::string& check_instruction, OperatorContext& ctx);
OperatorResult op_verify(const std::string& claim, const std::string& evidence, const std::string& q,
                         OperatorContext& ctx, std::vector<std::string> provenance = {});
OperatorResult op_rank(const std::vector<OperatorResult>& inputs, const std::string& q,
                       const std::string& rank_instruction, const std::string& order, OperatorContext& ctx);
OperatorResult op_group_by(const OperatorResult& input, const std::string& grouping_key);
OperatorResult op_aggregate(const OperatorResult& input, const json& aggregation_instruction);
OperatorResult op_filter(const OperatorResult& input, const std::string& filter_instruction, OperatorContext& ctx);
OperatorResult op_generate(const std::vector<OperatorResult>& inputs, const std::string& q,
                           const std::string& generation_instruction, const std::string& output_format,
                           OperatorContext& ctx);
OperatorResult op_matrix_construct(const std::vector<OperatorResult>& inputs, OperatorContext& ctx);

// "field op literal" with op in {=, !=, <, <=, >, >=, contains} (also the
// Unicode forms). nullopt when the text is not a comparison.
struct Comparison {
  std::string field;
  std::string op;
  json literal;
};
std::optional<Comparison> parse_comparison(std::string_view text);
// Dotted attribute path on an entity: "publication_year", "attrs.venue", "id".
std::optional<json> resolve_path(const json& item, const std::string& path);

// Entity helpers.
json entity_json(const kg::GraphNode& n);
std::vector<std::string> entity_ids(const OperatorResult& r);

}  // namespace scholar::ops
