#include <doctest.h>

#include "fixtures.hpp"

using namespace scholar;
using namespace scholar::ops;
namespace fx = scholar::fixtures;

namespace {

OperatorResult entities(std::vector<json> attrs) {
  json items = json::array();
  std::vector<std::string> prov;
  int i = 0;
  for (auto& a : attrs) {
    auto id = "e" + std::to_string(i++);
    items.push_back({{"id", id}, {"kind", "Paper"}, {"attrs", a}});
    prov.push_back(id);
  }
  return make_result(PayloadKind::EntityList, items, prov);
}

struct World {
  std::shared_ptr<llm::ScriptedProvider> provider = fx::vector_search_provider();
  std::shared_ptr<llm::LlmClient> client = fx::make_client(provider);
  kg::Graph graph = fx::ingested_graph(*client);
  retrieval::Retriever retriever = retrieval::Retriever::build(graph);
  Registry registry = Registry::with_builtins();
  OperatorContext ctx;

  World() {
    ctx.graph = &graph;
    ctx.retriever = &retriever;
    ctx.llm = client.get();
    ctx.registry = &registry;
  }
};

}  // namespace

TEST_SUITE("operators") {

TEST_CASE("catalog lists the primitives and the composite analyses") {
  const std::vector<std::string> names = {"Search", "FindNode", "Traverse",  "Retrieve",  "Extract", "Summarize",
                                          "Check",  "Verify",   "Rank",      "GroupBy",   "Aggregate", "Filter",
                                          "Generate", "MatrixConstruct", "TrendAnalysis", "IdeaExploration",
                                          "MilestoneSelection"};
  CHECK(catalog().size() == names.size());
  for (const auto& n : names) {
    INFO(n);
    REQUIRE(find_spec(n));
    CHECK(find_spec(n)->param_schema.is_object());
    CHECK_FALSE(find_spec(n)->modes.empty());
  }
  CHECK(find_spec("Teleport") == nullptr);
  CHECK(catalog_json()["operators"].size() == names.size());
  CHECK(catalog_json()["handlers"].size() == handlers().size());
  for (const auto& h : handlers()) {
    INFO(h.name);
    CHECK(find_spec(h.op_name));
    CHECK_FALSE(h.instruction.empty());
    CHECK(find_handler(h.name) == &h);
  }
}

TEST_CASE("payload kinds round trip through strings") {
  for (auto k : {PayloadKind::EntityList, PayloadKind::Text, PayloadKind::StructuredRecord, PayloadKind::TableGrid,
                 PayloadKind::Ranking, PayloadKind::Matrix}) {
    CHECK(payload_kind_from_string(to_string(k)) == k);
    CHECK(empty_result(k).empty());
  }
  CHECK(exec_mode_from_string("n/a") == ExecMode::NA);
  CHECK_THROWS(payload_kind_from_string("Blob"));
}

TEST_CASE("result digests are content addressed and provenance is normalized") {
  auto a = make_result(PayloadKind::Text, {{"text", "x"}}, {"b", "a", "b"});
  auto b = make_result(PayloadKind::Text, {{"text", "x"}}, {"a", "b"});
  CHECK(a.provenance == std::vector<std::string>{"a", "b"});
  CHECK(a.digest() == b.digest());
  CHECK(OperatorResult::from_json(a.to_json()) == a);
  CHECK(make_result(PayloadKind::Text, {{"text", "y"}}, {"a"}).digest() != a.digest());
}

TEST_CASE("invoke enforces parameter schemas and input kinds") {
  World w;
  CHECK_THROWS_AS(w.registry.invoke("Search", json::object(), {}, w.ctx), Error);
  CHECK_THROWS_AS(w.registry.invoke("Generate", {{"generation_instruction", 3}}, {}, w.ctx), Error);
  auto text = make_result(PayloadKind::Text, {{"text", "t"}}, {"x"});
  try {
    w.registry.invoke("Filter", {{"filter_instruction", "year > 1"}}, {text}, w.ctx);
    FAIL("expected a kind error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::KindIncompatible);
  }
  CHECK_THROWS_AS(w.registry.invoke("Nope", json::object(), {}, w.ctx), Error);
}

TEST_CASE("invoke rejects content without provenance and a wrong output kind") {
  World w;
  Registry r = Registry::with_builtins();
  r.add("Generate", [](const json&, const std::vector<OperatorResult>&, OperatorContext&) {
    OperatorResult o;
    o.kind = PayloadKind::Text;
    o.value = {{"text", "no sources"}};
    return o;
  });
  CHECK_THROWS_AS(r.invoke("Generate", {{"generation_instruction", "g"}}, {}, w.ctx), Error);
  r.add("Generate", [](const json&, const std::vector<OperatorResult>&, OperatorContext&) {
    return make_result(PayloadKind::Ranking, {{"ranking", json::array()}}, {"x"});
  });
  CHECK_THROWS_AS(r.invoke("Generate", {{"generation_instruction", "g"}}, {}, w.ctx), Error);
}

TEST_CASE("search returns entities of the scope") {
  World w;
  auto r = w.registry.invoke("Search", {{"query", fx::kCompareScope}}, {}, w.ctx);
  CHECK(r.kind == PayloadKind::EntityList);
  auto ids = entity_ids(r);
  std::sort(ids.begin(), ids.end());
  CHECK(ids == std::vector<std::string>{"vs1", "vs3", "vs5"});
}

TEST_CASE("retrieve returns the requested sections and marks absent ones") {
  World w;
  auto r = op_retrieve("vs1", {"Experiments", "RelatedWork"}, w.ctx);
  CHECK(r.kind == PayloadKind::Text);
  CHECK(r.value.at("text").get<std::string>().find("indexing time") != std::string::npos);
  bool absent = false;
  for (const auto& p : r.provenance) absent = absent || p == "absent:vs1/RelatedWork";
  CHECK(absent);
  CHECK_THROWS_AS(op_retrieve("nope", {"Experiments"}, w.ctx), Error);
}

TEST_CASE("extract returns evidence-backed records") {
  World w;
  auto src = op_retrieve("vs3", {"Experiments"}, w.ctx);
  auto r = op_extract("", src, "Extract the indexing time and the memory usage", "detailed", w.ctx);
  CHECK(r.kind == PayloadKind::StructuredRecord);
  CHECK(r.value.dump().find("820") != std::string::npos);
  CHECK_FALSE(r.provenance.empty());
}

TEST_CASE("find node needs exactly one locator") {
  World w;
  CHECK_THROWS_AS(op_find_node(std::nullopt, std::nullopt, std::nullopt, w.ctx), Error);
  CHECK_THROWS_AS(op_find_node(std::string("a"), std::string("b"), std::nullopt, w.ctx), Error);
  CHECK_THROWS_AS(op_find_node(std::string("missing"), std::nullopt, std::nullopt, w.ctx), Error);
}

TEST_CASE("traverse follows schema edges") {
  World w;
  auto start = make_result(PayloadKind::EntityList, json::array({entity_json(w.graph.at("vs1"))}), {"vs1"});
  kg::TraversalPath path{{kg::Hop{kg::EdgeKind::USES, kg::Direction::Out, kg::NodeKind::Dataset}}};
  auto r = op_traverse(start, path, w.ctx);
  auto ids = entity_ids(r);
  CHECK(std::find(ids.begin(), ids.end(), "dataset:SIFT1M") != ids.end());
  kg::TraversalPath bad{{kg::Hop{kg::EdgeKind::CHILD_OF, kg::Direction::Out, kg::NodeKind::Dataset}}};
  CHECK_THROWS(op_traverse(start, bad, w.ctx));
}

TEST_CASE("comparison parsing covers ascii and unicode operators") {
  auto c = parse_comparison("publication_year ≥ 2023");
  REQUIRE(c);
  CHECK(c->field == "publication_year");
  CHECK(c->op == ">=");
  CHECK(c->literal == 2023);
  auto s = parse_comparison("attrs.venue contains 'VLDB'");
  REQUIRE(s);
  CHECK(s->op == "contains");
  CHECK(s->literal == "VLDB");
  CHECK_FALSE(parse_comparison("papers that look promising"));
}

TEST_CASE("filter, group and aggregate without the provider") {
  World w;
  auto in = entities({{{"year", 2021}, {"venue", "VLDB"}, {"qps", 100}},
                      {{"year", 2023}, {"venue", "SIGMOD"}, {"qps", 300}},
                      {{"year", 2024}, {"venue", "VLDB"}, {"qps", 200}}});
  auto before = w.client->accounting_summary();
  auto f = op_filter(in, "attrs.year >= 2023", w.ctx);
  CHECK(entity_ids(f) == std::vector<std::string>{"e1", "e2"});
  auto g = op_group_by(in, "attrs.venue");
  REQUIRE(g.value["groups"].size() == 2);
  CHECK(g.value["groups"][0]["key"] == "VLDB");
  CHECK(g.value["groups"][0]["count"] == 2);
  auto avg = op_aggregate(in, "AVG(attrs.qps)");
  CHECK(avg.value["value"].get<double>() == doctest::Approx(200.0));
  auto per = op_aggregate(g, json{{"function", "max"}, {"target", "attrs.qps"}});
  CHECK(per.value["groups"][0]["value"].get<double>() == doctest::Approx(200.0));
  CHECK(op_aggregate(in, "count").value["value"] == 3);
  CHECK_THROWS(op_aggregate(in, "MEDIAN(attrs.qps)"));
  CHECK_THROWS(op_aggregate(in, "SUM(attrs.venue)"));
  CHECK((w.client->accounting_summary() - before).call_count == 0);
}

TEST_CASE("generate builds the comparison table from extracted records") {
  World w;
  std::vector<OperatorResult> recs;
  for (auto id : {"vs1", "vs3", "vs5"}) {
    auto src = op_retrieve(id, {"Experiments"}, w.ctx);
    recs.push_back(op_extract("", src, "Extract the indexing time and the memory usage", "detailed", w.ctx));
  }
  auto t = op_generate(recs, "", "Build a table", "table", w.ctx);
  auto text = t.value.at("text").get<std::string>();
  for (auto s : {"vs1", "vs3", "vs5", "310 s", "0.6 GB"}) CHECK(text.find(s) != std::string::npos);
}

TEST_CASE("matrix construct over the taxonomy leaves") {
  auto g = fx::tier3_graph();
  auto p = std::make_shared<llm::ScriptedProvider>();
  fx::script_tier3(*p);
  auto client = fx::make_client(p);
  OperatorContext ctx;
  ctx.graph = &g;
  ctx.llm = client.get();
  auto m = op_matrix_construct({}, ctx);
  CHECK(m.kind == PayloadKind::Matrix);
  CHECK(m.value["rows"].size() == 4);
  CHECK(m.value["cols"].size() == 3);
  REQUIRE(m.value["cells"].size() == 12);
  std::int64_t total = 0;
  for (const auto& c : m.value["cells"]) {
    total += c["count"].get<std::int64_t>();
    CHECK(c["papers"].size() == c["count"].get<std::size_t>());
    if (c["row"] == "problem:1" && c["col"] == "method:1") CHECK(c["count"] == 2);
  }
  CHECK(total == 8);
  CHECK_FALSE(m.provenance.empty());
}

}  // TEST_SUITE
