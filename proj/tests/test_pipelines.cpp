#include <doctest.h>

#include "fixtures.hpp"
#include "scenarios.hpp"

using namespace scholar;
using namespace scholar::pipelines;
namespace fx = scholar::fixtures;

namespace {

struct DownSource : EvidenceSource {
  std::vector<EvidenceRecord> query(const std::string& key) override {
    if (key == "range search" || key == "Range Search") throw Error(ErrorCode::ProviderFailure, "down");
    return inner.query(key);
  }
  FixtureEvidenceSource inner = FixtureEvidenceSource::load(fx::evidence_file());
};

struct Tier3 {
  std::shared_ptr<llm::ScriptedProvider> p = std::make_shared<llm::ScriptedProvider>();
  std::shared_ptr<llm::LlmClient> client;
  kg::Graph graph = fx::tier3_graph();
  Tier3() {
    fx::script_tier3(*p);
    client = fx::make_client(p);
  }
};

}  // namespace

TEST_SUITE("pipelines") {

TEST_CASE("call counts, milestone scale invariance and trend recounts") {
  auto v = scenarios::tier3_properties();
  INFO(v.detail);
  CHECK(v.ok);
}

TEST_CASE("evidence fixture matches keys case-insensitively") {
  auto ev = FixtureEvidenceSource::load(fx::evidence_file());
  CHECK_FALSE(ev.records().empty());
  auto a = ev.query("KNN Retrieval");
  auto b = ev.query("knn retrieval");
  CHECK(a.size() == b.size());
  CHECK_FALSE(a.empty());
  CHECK(ev.query("no such topic").empty());
}

TEST_CASE("trend ranks leaves once and marks failed lookups as degraded") {
  Tier3 w;
  DownSource ev;
  auto rep = trend_analysis(w.graph, {"problem:0"}, ev, *w.client);
  REQUIRE(rep.leaves.size() == 4);
  for (std::size_t i = 0; i < rep.leaves.size(); ++i) CHECK(rep.leaves[i].rank == static_cast<int>(i + 1));
  bool degraded = false;
  for (const auto& l : rep.leaves) {
    if (l.name == "Range Search") {
      degraded = l.degraded;
      CHECK(l.counts.empty());
    }
  }
  CHECK(degraded);
  CHECK(w.p->calls("pipelines.trend") == 1);
  CHECK(TrendReport::from_json(rep.to_json()).to_json() == rep.to_json());

  auto top2 = trend_analysis(w.graph, {"problem:0"}, ev, *w.client, {false, 2});
  CHECK(top2.leaves.size() == 2);
}

TEST_CASE("idea stage-1 scores are normalized over the candidates") {
  Tier3 w;
  ops::OperatorContext ctx;
  ctx.graph = &w.graph;
  ctx.llm = w.client.get();
  auto m = ops::op_matrix_construct({}, ctx);
  auto rep = idea_exploration(m, *w.client, {2, 1});
  CHECK(rep.unexplored == 5);
  CHECK(rep.candidates.size() == 5);
  double sum = 0;
  for (const auto& c : rep.candidates) sum += c.stage1_score;
  CHECK(sum == doctest::Approx(1.0));
  REQUIRE(rep.proposals.size() == 2);
  CHECK(rep.proposals[0].stage1_score >= rep.proposals[1].stage1_score);
  for (const auto& pr : rep.proposals) {
    CHECK(pr.proposal.contains("motivation"));
    CHECK(pr.proposal.contains("contributions"));
  }
  // Raising the threshold to 2 makes every single-paper cell unexplored.
  auto wider = idea_exploration(m, *w.client, {1, 2});
  CHECK(wider.unexplored == 11);
}

TEST_CASE("milestones: every paper scored, no provider calls, top-k summaries") {
  Tier3 w;
  auto papers = topic_papers(w.graph, {"problem:0"});
  CHECK(papers.size() == 8);
  auto before = w.client->accounting_summary();
  auto all = milestone_scores(w.graph, papers);
  CHECK((w.client->accounting_summary() - before).call_count == 0);
  REQUIRE(all.size() == 8);
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].composite >= all[i].composite);
  auto top = milestone_selection(w.graph, papers, 3, w.client.get());
  REQUIRE(top.size() == 3);
  CHECK(top[0].paper_id == all[0].paper_id);
  CHECK(w.p->calls("pipelines.milestone") == 3);
  for (const auto& m : top) CHECK_FALSE(m.summary.empty());
  CHECK(milestone_list_json(top)["milestones"].size() == 3);
}

TEST_CASE("topic papers: subtree of a taxonomy node") {
  Tier3 w;
  auto filtered = topic_papers(w.graph, {"problem:2"});
  std::sort(filtered.begin(), filtered.end());
  CHECK(filtered == std::vector<std::string>{"t3", "t4", "t7"});
  auto graph_idx = topic_papers(w.graph, {"method:1"});
  CHECK(graph_idx.size() == 4);
}

TEST_CASE("registered composite operators run through the registry") {
  Tier3 w;
  auto reg = ops::Registry::with_builtins();
  auto ev = std::make_shared<FixtureEvidenceSource>(FixtureEvidenceSource::load(fx::evidence_file()));
  register_operators(reg, Resources{ev, 1});
  ops::OperatorContext ctx;
  ctx.graph = &w.graph;
  ctx.llm = w.client.get();
  ctx.registry = &reg;
  auto root = ops::op_find_node(std::string("problem:0"), std::nullopt, std::nullopt, ctx);
  auto trend = reg.invoke("TrendAnalysis", json::object(), {root}, ctx);
  CHECK(trend.kind == ops::PayloadKind::StructuredRecord);
  CHECK(trend.value["leaves"].size() == 4);
  auto ms = reg.invoke("MilestoneSelection", {{"k", 2}}, {root}, ctx);
  CHECK(ms.kind == ops::PayloadKind::Ranking);
  CHECK(ms.value["ranking"].size() == 2);
  auto m = reg.invoke("MatrixConstruct", json::object(), {root}, ctx);
  auto ideas = reg.invoke("IdeaExploration", {{"k", 1}}, {m}, ctx);
  CHECK(ideas.value["proposals"].size() == 1);
}

}  // TEST_SUITE
