#include <doctest.h>

#include "fixtures.hpp"

#include <fstream>
#include "scholar/kgraph.hpp"

#include <random>

using namespace scholar;
using namespace scholar::kg;

namespace {

Graph small_graph() {
  Graph g(4);
  g.add_node({"p1", NodeKind::Paper, {{"title", "One"}, {"publication_year", 2023}}, std::nullopt});
  g.add_node({"p2", NodeKind::Paper, {{"title", "Two"}}, std::nullopt});
  g.add_node({"d1", NodeKind::Dataset, {{"name", "SIFT1M"}}, std::nullopt});
  g.add_node({"s1", NodeKind::Section, {{"label", "Experiments"}, {"text", "x"}}, std::nullopt});
  g.add_node({"a1", NodeKind::Author, {{"name", "A"}}, std::nullopt});
  g.add_edge("p1", "d1", EdgeKind::USES);
  g.add_edge("p2", "d1", EdgeKind::USES);
  g.add_edge("p1", "s1", EdgeKind::HAS);
  g.add_edge("p1", "a1", EdgeKind::WRITTEN_BY);
  return g;
}

}  // namespace

TEST_SUITE("kgraph") {

TEST_CASE("schema admits only declared edge kinds") {
  CHECK(admits(EdgeKind::USES, NodeKind::Paper, NodeKind::Dataset));
  CHECK_FALSE(admits(EdgeKind::USES, NodeKind::Dataset, NodeKind::Paper));
  CHECK(admits(EdgeKind::CHILD_OF, NodeKind::ProblemNode, NodeKind::ProblemNode));
  CHECK_FALSE(admits(EdgeKind::CHILD_OF, NodeKind::ProblemNode, NodeKind::MethodNode));
  auto g = small_graph();
  CHECK_THROWS_AS(g.add_edge("d1", "p1", EdgeKind::USES), Error);
  try {
    g.add_edge("p1", "missing", EdgeKind::USES);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingEndpoint);
  }
}

TEST_CASE("node validation") {
  Graph g(4);
  try {
    g.add_node({"p", NodeKind::Paper, json::object(), std::nullopt});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingAttribute);
  }
  try {
    g.add_node({"d", NodeKind::Dataset, json::object(), std::vector<double>{1, 2}});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
  g.add_node({"d", NodeKind::Dataset, json::object(), std::nullopt});
  try {
    g.add_node({"d", NodeKind::Dataset, json::object(), std::nullopt});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DuplicateId);
  }
  CHECK_THROWS_AS(g.upsert_node({"d", NodeKind::Metric, json::object(), std::nullopt}), Error);
}

TEST_CASE("neighbors and traversal") {
  auto g = small_graph();
  auto ds = g.neighbors("p1", EdgeKind::USES, Direction::Out, NodeKind::Dataset);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].id == "d1");
  auto users = g.neighbors("d1", EdgeKind::USES, Direction::In, NodeKind::Paper);
  CHECK(users.size() == 2);

  TraversalPath path{{{EdgeKind::USES, Direction::Out, NodeKind::Dataset},
                      {EdgeKind::USES, Direction::In, NodeKind::Paper}}};
  check_path(path);
  auto out = g.execute_traversal({"p1"}, path);
  std::set<std::string> ids;
  for (const auto& n : out) ids.insert(n.id);
  CHECK(ids == std::set<std::string>{"p1", "p2"});

  TraversalPath bad{{{EdgeKind::USES, Direction::Out, NodeKind::Dataset},
                     {EdgeKind::HAS, Direction::Out, NodeKind::Section}}};
  CHECK_THROWS_AS(check_path(bad), Error);
}

TEST_CASE("corpus version is insertion-order independent") {
  Graph a(4), b(4);
  a.add_node({"x", NodeKind::Dataset, {{"name", "X"}}, std::nullopt});
  a.add_node({"y", NodeKind::Metric, {{"name", "Y"}}, std::nullopt});
  b.add_node({"y", NodeKind::Metric, {{"name", "Y"}}, std::nullopt});
  b.add_node({"x", NodeKind::Dataset, {{"name", "X"}}, std::nullopt});
  CHECK(a.corpus_version() == b.corpus_version());
  b.upsert_node({"x", NodeKind::Dataset, {{"name", "X2"}}, std::nullopt});
  CHECK(a.corpus_version() != b.corpus_version());
}

TEST_CASE("snapshot round trip") {
  auto g = small_graph();
  auto dir = fixtures::temp_dir("kg");
  g.snapshot_save(dir / "g.json");
  auto h = Graph::snapshot_load(dir / "g.json");
  CHECK(h.corpus_version() == g.corpus_version());
  CHECK(h.node_count() == g.node_count());
  CHECK(h.edge_count() == g.edge_count());
  CHECK(Graph::deserialize(g.serialize()).corpus_version() == g.corpus_version());
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS_AS(Graph::snapshot_load(dir / "bad.json"), Error);
}

TEST_CASE("random edge insert/remove keeps adjacency consistent") {
  std::mt19937 rng(11);
  Graph g(4);
  for (int i = 0; i < 10; ++i) {
    g.add_node({"p" + std::to_string(i), NodeKind::Paper, {{"title", "t"}}, std::nullopt});
    g.add_node({"d" + std::to_string(i), NodeKind::Dataset, json::object(), std::nullopt});
  }
  std::set<std::pair<int, int>> model;
  for (int step = 0; step < 500; ++step) {
    int p = static_cast<int>(rng() % 10), d = static_cast<int>(rng() % 10);
    auto ps = "p" + std::to_string(p), dss = "d" + std::to_string(d);
    if (rng() % 3 == 0) {
      CHECK(g.remove_edge(ps, dss, EdgeKind::USES) == (model.erase({p, d}) > 0));
    } else {
      g.add_edge(ps, dss, EdgeKind::USES);
      model.insert({p, d});
    }
  }
  CHECK(g.edge_count() == model.size());
  for (int p = 0; p < 10; ++p) {
    auto out = g.neighbors("p" + std::to_string(p), EdgeKind::USES, Direction::Out, NodeKind::Dataset);
    std::size_t expected = 0;
    for (const auto& [a, b] : model) expected += a == p;
    CHECK(out.size() == expected);
  }
}

}
