#pragma once
// Hybrid lexical + dense paper search and ranking metrics.

#include "scholar/kgraph.hpp"
#include "scholar/llm.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace scholar::retrieval {

enum class MetadataField { Title, Authors, Affiliations, PublicationYear, Venue };
enum class Aspect {
  ResearchTopic,
  ProblemFormulation,
  ProposedMethod,
  ExperimentalDatasets,
  ExperimentalBaselines,
  ExperimentalResults,
};

std::string_view to_string(MetadataField f);
std::string_view to_string(Aspect a);
MetadataField metadata_field_from_string(std::string_view s);
Aspect aspect_from_string(std::string_view s);

struct YearRange {
  std::optional<int> min;
  std::optional<int> max;

  bool unbounded() const noexcept { return !min && !max; }
  // Missing years are admitted.
  bool admits(std::optional<int> year) const noexcept;
  YearRange intersect(const YearRange& o) const;
  json to_json() const;
};

// "since 2023", "after 2020", "before 2019", "2019-2021", "2022".
std::optional<YearRange> parse_year_expression(std::string_view text);

struct MetadataConstraint {
  MetadataField field = MetadataField::Title;
  std::string value;
  YearRange years;  // only for PublicationYear
};

struct AspectIntent {
  Aspect aspect = Aspect::ResearchTopic;
  std::string text;
};

struct DecomposedQuery {
  std::vector<MetadataConstraint> metadata_constraints;
  std::vector<AspectIntent> aspect_intents;

  void validate() const;
  YearRange year_range() const;
  json to_json() const;
  static DecomposedQuery from_json(const json& j);
};

struct ScoredCandidate {
  std::string paper_id;
  std::map<std::string, double> group_scores;  // "lexical", "semantic"
  double combined = 0.0;

  json to_json() const;
};

struct RetrievalConfig {
  int candidates_per_query = 20;
  int top_k = 10;

  void validate() const;
  json to_json() const;
  static RetrievalConfig from_json(const json& j);
};

using ScoreList = std::vector<std::pair<std::string, double>>;

struct ScoreSource {
  std::string group;  // "lexical" or "semantic"
  std::string label;  // e.g. "bm25:title"
  ScoreList scores;
};

DecomposedQuery decompose_query(const std::string& q, llm::LlmClient& llm);

struct PaperYear {
  std::string paper_id;
  std::optional<int> year;
};

std::vector<std::string> temporal_filter(const std::vector<PaperYear>& papers, const YearRange& range);

// Okapi BM25 over named fields, k1 = 1.2, b = 0.75, idf = ln((N-df+0.5)/(df+0.5) + 1).
class Bm25Index {
 public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  void add(const std::string& doc_id, const std::string& field, std::string_view text);
  bool has_field(const std::string& field) const { return fields_.count(field) > 0; }
  // Docs with a positive score, best first, ties by id; restricted to
  // `allowed` when given.
  ScoreList search(const std::string& field, std::string_view query, std::size_t k,
                   const std::set<std::string>* allowed = nullptr) const;

 private:
  struct Field {
    std::map<std::string, std::map<std::string, int>> tf;  // doc -> term -> count
    std::map<std::string, std::size_t> length;
    std::map<std::string, std::size_t> df;
    double total_length = 0.0;
  };
  std::map<std::string, Field> fields_;
};

class DenseIndex {
 public:
  void add(Aspect aspect, const std::string& doc_id, std::vector<double> vec);
  bool has(Aspect aspect) const;
  std::size_t size(Aspect aspect) const;
  // Exhaustive cosine, best first, ties by id. Throws NotFound for an aspect
  // with nothing indexed.
  ScoreList search(Aspect aspect, const std::vector<double>& query, std::size_t k,
                   const std::set<std::string>* allowed = nullptr) const;

 private:
  std::map<Aspect, std::map<std::string, std::vector<double>>> vecs_;
};

// Min-max per source, mean within group, mean over present groups. Empty
// sources are ignored; a source with equal scores normalizes to 1.0.
std::vector<ScoredCandidate> aggregate_scores(const std::vector<ScoreSource>& sources);

struct RerankCandidate {
  std::string paper_id;
  json summary;  // metadata + aspect excerpts
};

std::vector<std::string> rerank(const std::string& q, const std::vector<RerankCandidate>& candidates,
                                int top_k, llm::LlmClient& llm);

struct SearchTrace {
  DecomposedQuery decomposed;
  std::vector<std::string> filtered;
  std::vector<ScoreSource> sources;
  std::vector<ScoredCandidate> aggregated;
  std::vector<std::string> result;
  std::vector<std::string> warnings;

  json to_json() const;
};

// Lexical and dense indexes over the papers of a graph.
class Retriever {
 public:
  static Retriever build(const kg::Graph& graph);

  std::vector<std::string> search(const std::string& q, const RetrievalConfig& cfg, llm::LlmClient& llm,
                                  SearchTrace* trace = nullptr) const;

  ScoreList bm25_search(MetadataField field, const std::string& value, std::size_t k,
                        const std::set<std::string>* allowed = nullptr) const;
  ScoreList dense_search(Aspect aspect, const std::string& intent, std::size_t k, llm::LlmClient& llm,
                         const std::set<std::string>* allowed = nullptr) const;

  std::vector<PaperYear> paper_years() const;
  std::size_t paper_count() const noexcept { return summaries_.size(); }
  const DenseIndex& dense() const noexcept { return dense_; }
  const Bm25Index& lexical() const noexcept { return bm25_; }

 private:
  Bm25Index bm25_;
  DenseIndex dense_;
  std::map<std::string, std::optional<int>> years_;
  std::map<std::string, json> summaries_;
};

// ---------------------------------------------------------------- metrics

double r_precision(const std::vector<std::string>& ranked, const std::set<std::string>& relevant);
double map_score(const std::vector<std::string>& ranked, const std::set<std::string>& relevant);
// `gains` are graded relevances in ranked order; gain 2^rel - 1, discount log2(rank + 1).
double ndcg_at_k(const std::vector<double>& gains, int k);

struct EvalQuery {
  std::string query;
  std::set<std::string> relevant;
};

std::vector<EvalQuery> load_eval_file(const std::filesystem::path& path);

struct EvalRow {
  std::string query;
  std::vector<std::string> ranked;
  double r_precision = 0.0;
  double map = 0.0;
  double ndcg = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_r_precision = 0.0;
  double mean_map = 0.0;
  double mean_ndcg = 0.0;

  json to_json() const;
};

EvalReport evaluate(const std::vector<EvalQuery>& queries, const Retriever& retriever, const RetrievalConfig& cfg,
                    llm::LlmClient& llm);

}  // namespace scholar::retrieval
