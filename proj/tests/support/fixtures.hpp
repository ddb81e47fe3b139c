#pragma once
// Scripted worlds shared by the unit suites and the acceptance runner.

#include "scholar/engine.hpp"
#include "scholar/ingest.hpp"
#include "scholar/pipelines.hpp"
#include "scholar/planner.hpp"
#include "scholar/service.hpp"
#include "scholar/taxonomy.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace scholar::fixtures {

std::filesystem::path data_dir();
// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

std::shared_ptr<llm::LlmClient> make_client(std::shared_ptr<llm::Provider> provider,
                                            std::shared_ptr<llm::Cassette> cassette = nullptr,
                                            std::size_t dim = 64);

// ---------------------------------------------------------------- vector-search corpus

// Six bundles under tests/data/corpus.
std::vector<ingest::DocumentBundle> corpus_bundles();
std::filesystem::path corpus_dir();

inline constexpr const char* kCompareQuery =
    "Find papers on vector search since 2023 that use graph-based methods and build a table comparing their "
    "indexing speed and memory usage";
inline constexpr const char* kCompareScope = "papers on vector search since 2023 that use graph-based methods";
inline constexpr const char* kCompareTask = "build a table comparing their indexing speed and memory usage";

// Section classifier, entity extraction and normalization.
void script_ingest(llm::ScriptedProvider& p);
// Query decomposition, literature search and the generic operators.
void script_search(llm::ScriptedProvider& p);
void script_operators(llm::ScriptedProvider& p);
// Planner answers for the table-comparison query: no predefined plan fits, the
// dynamic plan is Retrieve(Experiments) -> Extract -> Generate(table).
void script_compare_planner(llm::ScriptedProvider& p);
// Everything above.
std::shared_ptr<llm::ScriptedProvider> vector_search_provider();

kg::Graph ingested_graph(llm::LlmClient& llm);

// ---------------------------------------------------------------- worked taxonomy example

// Papers worked-p1 .. worked-p5 with sections only.
kg::Graph worked_graph(std::size_t dim = 64);
void script_worked(llm::ScriptedProvider& p, std::size_t dim = 64);

struct WorkedRun {
  taxonomy::Taxonomy tax{taxonomy::TaxonomyKind::Problem, {}};
  json after_build;
  std::vector<taxonomy::RoutingRecord> routes;
};

// Build over p1-p3, then Stage-4 updates with p4 and p5 (alpha = 1).
WorkedRun run_worked(llm::LlmClient& llm, const kg::Graph& graph);

// Names of the tree as {name: [child names in stored order]}.
json name_tree(const taxonomy::Taxonomy& tax);

// ---------------------------------------------------------------- synthetic taxonomy corpora

std::vector<taxonomy::AspectTemplate> synthetic_templates(int n, std::uint64_t seed);
// Payload-driven answers for every taxonomy task.
void script_synthetic_taxonomy(llm::ScriptedProvider& p);

// ---------------------------------------------------------------- workloads

struct WorkloadQuery {
  std::string scope;
  std::string task;
  planner::Plan plan;  // composed, closed
};

// 5 scopes x 4 tasks over one shared extraction.
std::vector<WorkloadQuery> cache_workload();

struct PlannerCase {
  std::string query;
  std::string task;
  int plan_id = 0;
};

// 20 Tier-2 queries whose tasks match library entries.
std::vector<PlannerCase> planner_cases();
void script_planner_cases(llm::ScriptedProvider& p, const std::vector<PlannerCase>& cases);

struct RepairCase {
  std::string query;
  int expected_rounds = 0;
  std::vector<planner::Plan> chain;  // flawed first, valid last
};

// 16 flawed dynamic plans mirroring the step-internal, inter-step and
// overall issue classes; repaired over 1-3 rounds.
std::vector<RepairCase> repair_cases();
void script_repair_cases(llm::ScriptedProvider& p, const std::vector<RepairCase>& cases);

// ---------------------------------------------------------------- Tier-3

// Problem and method taxonomies anchored in a small graph with papers,
// citation histories and assignments.
kg::Graph tier3_graph(std::size_t dim = 64);
std::filesystem::path evidence_file();
void script_tier3(llm::ScriptedProvider& p);

}  // namespace scholar::fixtures
