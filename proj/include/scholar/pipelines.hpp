#pragma once
// Tier-3 analyses: research trends over taxonomy leaves, idea exploration
// over sparse problem x method cells, milestone paper selection.

#include "scholar/operators.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace scholar::pipelines {

// ---------------------------------------------------------------- evidence

struct EvidenceRecord {
  std::string key;  // node name or query text
  int year = 0;
  std::int64_t count = 0;
  std::int64_t citations = 0;

  json to_json() const;
  static EvidenceRecord from_json(const json& j);
};

class EvidenceSource {
 public:
  virtual ~EvidenceSource() = default;
  // Records matching `key`; throws ProviderFailure when the source is down.
  virtual std::vector<EvidenceRecord> query(const std::string& key) = 0;
};

// Reads [{node|query, year, count, citations}] from a file. Keys match
// case-insensitively.
class FixtureEvidenceSource : public EvidenceSource {
 public:
  FixtureEvidenceSource() = default;
  explicit FixtureEvidenceSource(std::vector<EvidenceRecord> records) : records_(std::move(records)) {}
  static FixtureEvidenceSource load(const std::filesystem::path& path);

  std::vector<EvidenceRecord> query(const std::string& key) override;
  const std::vector<EvidenceRecord>& records() const noexcept { return records_; }

 private:
  std::vector<EvidenceRecord> records_;
};

// ---------------------------------------------------------------- trends

struct TrendLeaf {
  std::string node_id;
  std::string name;
  std::map<int, std::int64_t> counts;     // year -> publications
  std::map<int, std::int64_t> citations;  // year -> citations
  int rank = 0;                           // 1-based
  std::string narrative;
  bool degraded = false;                  // evidence lookup failed

  json to_json() const;
  static TrendLeaf from_json(const json& j);
};

struct TrendReport {
  std::vector<TrendLeaf> leaves;  // rank order
  std::string summary;

  json to_json() const;
  static TrendReport from_json(const json& j);
};

struct TrendOptions {
  bool expand_variants = false;
  int k = 0;  // 0 = every leaf
};

// Leaves under `node_ids` (taxonomy nodes in the graph), aggregated from
// the evidence source, ranked and narrated by one provider call.
TrendReport trend_analysis(const kg::Graph& graph, const std::vector<std::string>& node_ids,
                           EvidenceSource& evidence, llm::LlmClient& llm, TrendOptions opt = {});

// ---------------------------------------------------------------- ideas

struct IdeaProposal {
  std::string problem_id;
  std::string method_id;
  std::string problem_name;
  std::string method_name;
  double raw_score = 0.0;
  double stage1_score = 0.0;  // normalized over the candidate set
  json proposal = json::object();

  json to_json() const;
};

struct IdeaReport {
  int unexplored = 0;
  std::vector<IdeaProposal> candidates;  // every unexplored cell with its stage-1 score
  std::vector<IdeaProposal> proposals;   // top-k with stage-2 text

  json to_json() const;
};

struct IdeaOptions {
  int k = 3;
  int sparsity_threshold = 1;  // count >= threshold means explored
};

IdeaReport idea_exploration(const ops::OperatorResult& matrix, llm::LlmClient& llm, IdeaOptions opt = {});

// ---------------------------------------------------------------- milestones

struct MilestoneScore {
  std::string paper_id;
  std::string title;
  std::optional<int> year;
  double citations = 0.0;
  double problem_novelty = 0.0;
  double method_novelty = 0.0;
  double impact = 0.0;
  double delayed_boost = 0.0;
  double composite = 0.0;
  int rank = 0;
  std::string summary;

  json to_json() const;
};

inline constexpr double kMilestoneWeight = 0.25;
inline constexpr double kDelayedBoost = 0.1;

// All papers scored and ordered by composite (ties by id). No provider calls.
std::vector<MilestoneScore> milestone_scores(const kg::Graph& graph, const std::vector<std::string>& paper_ids);

// Top-k; summaries via one text call per selected paper when llm is given.
std::vector<MilestoneScore> milestone_selection(const kg::Graph& graph, const std::vector<std::string>& paper_ids,
                                                int k, llm::LlmClient* llm);

json milestone_list_json(const std::vector<MilestoneScore>& ms);

// Papers attached (ADDRESSES/APPLIES) anywhere under the given taxonomy
// nodes, or the Paper entities themselves.
std::vector<std::string> topic_papers(const kg::Graph& graph, const std::vector<std::string>& ids);

// ---------------------------------------------------------------- registry

struct Resources {
  std::shared_ptr<EvidenceSource> evidence;
  int sparsity_threshold = 1;
};

// TrendAnalysis, IdeaExploration, MilestoneSelection.
void register_operators(ops::Registry& registry, Resources res);

}  // namespace scholar::pipelines
