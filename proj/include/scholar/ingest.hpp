#pragma once
// Pre-parsed document bundles -> graph nodes and edges.

#include "scholar/kgraph.hpp"
#include "scholar/llm.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace scholar::ingest {

enum class SectionLabel {
  Abstract,
  Introduction,
  RelatedWork,
  ProblemFormulation,
  Methodology,
  Experiments,
  Other,
};

inline constexpr SectionLabel kAllLabels[] = {
    SectionLabel::Abstract,           SectionLabel::Introduction, SectionLabel::RelatedWork,
    SectionLabel::ProblemFormulation, SectionLabel::Methodology,  SectionLabel::Experiments,
    SectionLabel::Other,
};

std::string_view to_string(SectionLabel label);
SectionLabel section_label_from_string(std::string_view s);

struct CitationPoint {
  int year = 0;
  std::int64_t count = 0;
};

struct Metadata {
  std::string title;
  std::vector<std::string> authors;
  std::vector<std::string> affiliations;
  std::optional<std::string> venue;
  std::optional<int> publication_year;
  std::optional<std::int64_t> citation_count;
  std::vector<CitationPoint> citation_history;
};

struct RawSection {
  std::string raw_title;
  std::string body;
};

struct TableBlock {
  std::string caption;
  std::vector<std::vector<std::string>> cells;
};

struct FigureBlock {
  std::string caption;
  std::string reference_name;
};

struct DocumentBundle {
  std::string paper_id;
  Metadata metadata;
  std::vector<RawSection> sections;
  std::vector<TableBlock> tables;
  std::vector<FigureBlock> figures;

  // Throws InvalidArgument on an empty title/sections or an implausible year.
  void validate() const;
  json to_json() const;
  static DocumentBundle from_json(const json& j);
};

DocumentBundle load_bundle(const std::filesystem::path& path);
// Every *.json file in `dir`, sorted by file name.
std::vector<DocumentBundle> load_corpus(const std::filesystem::path& dir);

struct LabeledUnit {
  SectionLabel label;
  std::string body;
};

// Regex/canonical-name rules. nullopt when the title needs the classifier.
std::optional<SectionLabel> match_section_pattern(std::string_view raw_title);

// One unit per label in canonical label order; bodies of same-label sections
// are joined in document order.
std::vector<LabeledUnit> classify_sections(const DocumentBundle& bundle, llm::LlmClient& llm);

struct EntityMention {
  std::string name;
  SectionLabel label = SectionLabel::Experiments;
  // Character span [start, end) in the unit body; nullopt when the name does
  // not occur verbatim.
  std::optional<std::size_t> start;
  std::optional<std::size_t> end;
};

struct ContextEntities {
  std::vector<EntityMention> datasets;
  std::vector<EntityMention> metrics;
  std::vector<EntityMention> baselines;

  json to_json() const;
};

ContextEntities extract_context_entities(const std::vector<LabeledUnit>& units, llm::LlmClient& llm);

// raw -> canonical; total over `names` and idempotent.
std::map<std::string, std::string> normalize_entities(const std::set<std::string>& names,
                                                      llm::LlmClient& llm,
                                                      const std::string& kind = "entity");

class BiblioClient {
 public:
  virtual ~BiblioClient() = default;
  virtual std::optional<json> lookup(const std::string& title) = 0;
};

// Exact-title map read from a JSON object {title: {venue, publication_year,
// citation_count, citation_history: [{year, count}]}}.
class FixtureBiblioClient : public BiblioClient {
 public:
  FixtureBiblioClient() = default;
  explicit FixtureBiblioClient(json records) : records_(std::move(records)) {}
  static FixtureBiblioClient load(const std::filesystem::path& path);
  std::optional<json> lookup(const std::string& title) override;

 private:
  json records_ = json::object();
};

struct EnrichResult {
  Metadata metadata;
  std::vector<std::string> warnings;
};

EnrichResult enrich_bibliography(const DocumentBundle& bundle, BiblioClient& client);

struct IngestReport {
  std::vector<std::string> papers;
  std::vector<std::string> warnings;
  std::map<std::string, ContextEntities> entities;
  std::map<std::string, std::map<std::string, std::string>> canonical;  // kind -> raw -> canonical

  json to_json() const;
};

std::string section_node_id(const std::string& paper_id, SectionLabel label);

// Full pipeline over a batch: enrich, classify, extract, normalize (corpus
// barrier, merged with names already in the graph), then write nodes/edges.
IngestReport ingest_corpus(const std::vector<DocumentBundle>& bundles, kg::Graph& graph,
                           llm::LlmClient& llm, BiblioClient* biblio);

}  // namespace scholar::ingest
