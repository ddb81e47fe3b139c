#include <doctest.h>

#include "fixtures.hpp"

using namespace scholar;
using namespace scholar::ingest;

TEST_SUITE("ingest") {

TEST_CASE("section title patterns") {
  CHECK(match_section_pattern("Abstract") == SectionLabel::Abstract);
  CHECK(match_section_pattern("1 Introduction") == SectionLabel::Introduction);
  CHECK(match_section_pattern("2. Related Work") == SectionLabel::RelatedWork);
  CHECK(match_section_pattern("II. PROBLEM DEFINITION") == SectionLabel::ProblemFormulation);
  CHECK(match_section_pattern("3 Method") == SectionLabel::Methodology);
  CHECK(match_section_pattern("4.1 Experimental Evaluation") == SectionLabel::Experiments);
  CHECK_FALSE(match_section_pattern("Why Graphs Help").has_value());
}

TEST_CASE("unmatched titles go to the classifier; same labels merge in order") {
  auto p = std::make_shared<llm::ScriptedProvider>();
  p->on("ingest.classify_section", [](const llm::PromptRequest&) { return std::string("{\"label\":\"Methodology\"}"); });
  auto client = fixtures::make_client(p);
  DocumentBundle b;
  b.paper_id = "x";
  b.metadata.title = "T";
  b.sections = {{"Abstract", "abs"}, {"3 Method", "first"}, {"Why Graphs Help", "second"}};
  auto units = classify_sections(b, *client);
  REQUIRE(units.size() == 2);
  CHECK(units[0].label == SectionLabel::Abstract);
  CHECK(units[1].label == SectionLabel::Methodology);
  CHECK(units[1].body.find("first") < units[1].body.find("second"));
  CHECK(p->calls("ingest.classify_section") == 1);
}

TEST_CASE("bundle validation") {
  DocumentBundle b;
  b.paper_id = "x";
  CHECK_THROWS_AS(b.validate(), Error);
  b.metadata.title = "T";
  CHECK_THROWS_AS(b.validate(), Error);
  b.sections = {{"Abstract", "a"}};
  b.validate();
  b.metadata.publication_year = 123;
  CHECK_THROWS_AS(b.validate(), Error);
  auto round = DocumentBundle::from_json(fixtures::corpus_bundles()[0].to_json());
  CHECK(round.to_json() == fixtures::corpus_bundles()[0].to_json());
}

TEST_CASE("normalization is total and idempotent") {
  auto p = std::make_shared<llm::ScriptedProvider>();
  p->on("ingest.normalize_entities", [](const llm::PromptRequest&) {
    return json{{"groups", {{{"canonical", "SIFT1M"}, {"variants", {"SIFT-1M", "sift1m"}}},
                            {{"canonical", "sift1m"}, {"variants", {"SIFT 1M"}}}}}}
        .dump();
  });
  auto client = fixtures::make_client(p);
  std::set<std::string> names{"SIFT1M", "SIFT-1M", "sift1m", "SIFT 1M", "GIST1M"};
  auto m = normalize_entities(names, *client, "dataset");
  CHECK(m.size() == names.size());
  for (const auto& [raw, canon] : m) {
    CHECK(m.count(canon));
    CHECK(m.at(canon) == canon);
  }
  CHECK(m.at("SIFT-1M") == "SIFT1M");
  CHECK(m.at("SIFT 1M") == "SIFT1M");
  CHECK(m.at("GIST1M") == "GIST1M");
  CHECK_THROWS_AS(normalize_entities({}, *client), Error);
  CHECK(normalize_entities({"solo"}, *client).at("solo") == "solo");
}

TEST_CASE("biblio enrichment fills only missing fields") {
  FixtureBiblioClient bc(json{{"T", {{"venue", "VLDB"}, {"publication_year", 2020}, {"citation_count", 9}}}});
  DocumentBundle b;
  b.paper_id = "x";
  b.metadata.title = "T";
  b.metadata.publication_year = 2021;
  b.sections = {{"Abstract", "a"}};
  auto r = enrich_bibliography(b, bc);
  CHECK(r.metadata.venue == "VLDB");
  CHECK(r.metadata.publication_year == 2021);
  CHECK(r.metadata.citation_count == 9);
  b.metadata.title = "Unknown";
  CHECK(enrich_bibliography(b, bc).warnings.size() == 1);
}

TEST_CASE("corpus ingestion writes papers, sections and context entities") {
  auto p = fixtures::vector_search_provider();
  auto client = fixtures::make_client(p);
  auto g = fixtures::ingested_graph(*client);
  CHECK(g.nodes_of_kind(kg::NodeKind::Paper).size() == 6);
  auto sec = g.at(section_node_id("vs1", SectionLabel::Experiments));
  CHECK(sec.attrs["text"].get<std::string>().find("310 s") != std::string::npos);
  CHECK(g.has_edge("vs1", "dataset:SIFT1M", kg::EdgeKind::USES));
  CHECK(g.has_edge("vs2", "dataset:Deep1B", kg::EdgeKind::USES));
  CHECK(g.has_edge("vs1", "metric:QPS", kg::EdgeKind::USES));
  CHECK(g.has_edge("vs1", "venue:VLDB", kg::EdgeKind::PUBLISHED_IN));
  CHECK(p->calls("ingest.classify_section") == 0);
  CHECK(g.at("vs1").attrs["citation_years"].size() == 3);

  auto again = fixtures::corpus_bundles();
  try {
    ingest_corpus({again[0]}, g, *client, nullptr);
    FAIL("expected duplicate");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DuplicateId);
  }
}

}
