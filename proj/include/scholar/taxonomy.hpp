#pragma once
// Reference-enhanced taxonomy construction and progressive maintenance for
// the Problem and Method hierarchies.

#include "scholar/kgraph.hpp"
#include "scholar/llm.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace scholar::taxonomy {

enum class TaxonomyKind { Problem, Method };

std::string_view to_string(TaxonomyKind kind);
TaxonomyKind taxonomy_kind_from_string(std::string_view s);
// Problem: input, output. Method: key_techniques, strengths, weaknesses.
const std::vector<std::string>& aspect_names(TaxonomyKind kind);
// Class-id prefix per aspect index (I/O, T/S/W).
std::string aspect_prefix(TaxonomyKind kind, std::size_t aspect_index);

struct AspectTemplate {
  std::string paper_id;
  std::string description;
  std::vector<std::string> aspects;
  // Per-aspect signature key: extracted noun phrases joined with "; ".
  std::vector<std::string> signatures;

  json to_json() const;
  static AspectTemplate from_json(const json& j);
};

struct AspectClass {
  std::string class_id;
  std::size_t aspect_index = 0;
  std::string canonical_label;
  std::vector<std::string> member_signatures;

  json to_json() const;
  static AspectClass from_json(const json& j);
};

using ClassTuple = std::vector<std::string>;  // one class id per aspect

struct Concept {
  std::string concept_id;
  ClassTuple class_tuple;
  std::vector<std::string> member_papers;

  json to_json() const;
};

struct TaxonomyNode {
  std::string node_id;
  std::string name;
  std::string description;
  std::optional<ClassTuple> signature;
  std::vector<std::string> papers;    // directly assigned
  std::vector<std::string> children;  // stored order
  std::string parent;                 // empty for the root
  std::int64_t new_paper_count = 0;
  std::int64_t base_size = 1;

  bool is_leaf() const noexcept { return children.empty(); }
  json to_json() const;
  static TaxonomyNode from_json(const json& j);
};

struct TaxonomyConfig {
  double alpha = 1.0;
  double tau_match = 0.80;
  int k_max = 6;

  void validate() const;
  json to_json() const;
  static TaxonomyConfig from_json(const json& j);
};

struct ReferenceNode {
  std::string id;
  std::string name;
  std::string description;
  std::string parent;  // empty for the root
};

struct ReferenceTaxonomy {
  std::string topic;
  std::vector<ReferenceNode> nodes;  // root first, then in response order
};

struct Standardization {
  std::vector<std::vector<AspectClass>> classes;  // per aspect index
  std::vector<Concept> concepts;
  std::map<std::string, ClassTuple> paper_tuple;
  std::map<std::string, AspectTemplate> templates;  // with signatures filled
};

struct RefinementRecord {
  std::string node_id;
  std::string refinement_case;  // "leaf", "nonleaf" or "noop"
  std::vector<std::string> new_nodes;
  std::map<std::string, std::string> moved_papers;  // paper -> node

  json to_json() const;
};

struct RoutingRecord {
  std::string paper_id;
  std::string parent_id;  // located parent anchor
  std::string node_id;    // node the paper was assigned to
  bool created_new = false;
  std::optional<RefinementRecord> refinement;

  json to_json() const;
};

// Stage 1: shared units (Abstract, Introduction, RelatedWork) plus the
// targeted unit (ProblemFormulation or Methodology; Introduction fallback).
AspectTemplate extract_template(const kg::Graph& graph, const std::string& paper_id, TaxonomyKind kind,
                                llm::LlmClient& llm);

// Stage 2: signature extraction, per-aspect class formation, concepts.
Standardization standardize(const std::vector<AspectTemplate>& templates, TaxonomyKind kind,
                            llm::LlmClient& llm);

// Stage 3 step 1: topic label then skeletal tree. Throws StructureError on
// a payload that is not a single-rooted tree.
ReferenceTaxonomy generate_reference_taxonomy(const std::vector<AspectTemplate>& templates,
                                              TaxonomyKind kind, llm::LlmClient& llm);

class Taxonomy {
 public:
  Taxonomy(TaxonomyKind kind, TaxonomyConfig cfg);

  TaxonomyKind kind() const noexcept { return kind_; }
  const TaxonomyConfig& config() const noexcept { return cfg_; }
  void set_config(TaxonomyConfig cfg);

  // Stages 1-3 over `paper_ids`.
  void build(const kg::Graph& graph, std::vector<std::string> paper_ids, llm::LlmClient& llm);
  // Stage 3 steps 2-3 from precomputed pieces.
  void align_and_instantiate(const ReferenceTaxonomy& ref, const Standardization& std_result,
                             llm::LlmClient& llm);
  // Stage 4 for one paper.
  RoutingRecord update_with_paper(const kg::Graph& graph, const std::string& paper_id, llm::LlmClient& llm);
  // Same, from an already extracted template.
  RoutingRecord update_with_template(AspectTemplate tmpl, llm::LlmClient& llm);
  RefinementRecord refine_branch(const std::string& node_id, llm::LlmClient& llm);
  void anchor_into_graph(kg::Graph& graph, llm::LlmClient& llm) const;

  bool built() const noexcept { return !root_.empty(); }
  const std::string& root_id() const noexcept { return root_; }
  const TaxonomyNode& node(const std::string& id) const;
  std::optional<std::string> find_by_name(const std::string& name) const;
  std::vector<std::string> node_ids() const;  // pre-order from the root
  std::vector<std::string> leaves() const;
  std::optional<std::string> assignment(const std::string& paper_id) const;
  const std::map<std::string, std::string>& assignments() const noexcept { return paper_node_; }
  std::vector<std::string> subtree_papers(const std::string& node_id) const;
  const std::vector<std::vector<AspectClass>>& classes() const noexcept { return classes_; }
  const std::vector<Concept>& concepts() const noexcept { return concepts_; }
  const std::map<std::string, AspectTemplate>& templates() const noexcept { return templates_; }
  std::optional<ClassTuple> paper_tuple(const std::string& paper_id) const;
  std::string graph_node_kind_prefix() const;

  // Text whose embedding stands for a node in similarity tests.
  std::string node_text(const TaxonomyNode& n) const;
  std::string tuple_text(const ClassTuple& tuple) const;
  std::string class_label(const std::string& class_id) const;

  // Throws StructureError when the tree or the paper partition is broken.
  void check_invariants() const;

  // Nested {node_id, name, description, signature, papers, children}.
  json export_tree() const;
  json to_state_json() const;
  static Taxonomy from_state_json(const json& j);

 private:
  struct State {
    std::string root;
    std::map<std::string, TaxonomyNode> nodes;
    std::vector<std::vector<AspectClass>> classes;
    std::vector<Concept> concepts;
    std::map<std::string, AspectTemplate> templates;
    std::map<std::string, ClassTuple> paper_tuple;
    std::map<std::string, std::string> paper_node;
    std::uint64_t next_id = 0;
  };

  State snapshot() const;
  void restore(State s);

  std::string new_node_id();
  std::string add_child(const std::string& parent, std::string name, std::string description,
                        std::optional<ClassTuple> signature);
  std::string locate_parent(const ClassTuple& tuple, llm::LlmClient& llm);
  std::optional<std::string> find_matching_child(const std::string& parent, const ClassTuple& tuple,
                                                 llm::LlmClient& llm);
  std::pair<std::string, std::string> name_and_describe(const std::string& parent, const ClassTuple& tuple,
                                                        const std::vector<std::string>& papers,
                                                        llm::LlmClient& llm);
  ClassTuple map_to_classes_or_create(const AspectTemplate& tmpl, llm::LlmClient& llm);
  void assign(const std::string& paper_id, const std::string& node_id);
  void reset_counts_after_build();
  json export_node(const std::string& id) const;

  TaxonomyKind kind_;
  TaxonomyConfig cfg_;
  std::string root_;
  std::map<std::string, TaxonomyNode> nodes_;
  std::vector<std::vector<AspectClass>> classes_;
  std::vector<Concept> concepts_;
  std::map<std::string, AspectTemplate> templates_;
  std::map<std::string, ClassTuple> paper_tuple_;
  std::map<std::string, std::string> paper_node_;
  std::uint64_t next_id_ = 0;
};

}  // namespace scholar::taxonomy
