#include <doctest.h>

#include "fixtures.hpp"
#include "scenarios.hpp"

#include <atomic>
#include <fstream>

using namespace scholar;
using namespace scholar::engine;
namespace fx = scholar::fixtures;
using ops::ExecMode;
using ops::OperatorResult;
using ops::PayloadKind;
using planner::Plan;
using planner::PlanStep;

namespace {

OperatorResult three_papers() {
  json items = json::array();
  for (auto id : {"p1", "p2", "p3"}) items.push_back({{"id", id}, {"kind", "Paper"}, {"attrs", json::object()}});
  return ops::make_result(PayloadKind::EntityList, items, {"p1", "p2", "p3"});
}

Plan fan_plan() {
  return Plan{{PlanStep{"scope", "Search", {{"query", "x"}}, ExecMode::NA, {}},
               PlanStep{"r", "Retrieve", {{"section_tags", {"Experiments"}}}, ExecMode::Instance, {"scope"}},
               PlanStep{"e", "Extract", {{"extract_instruction", "x"}}, ExecMode::Instance, {"r"}},
               PlanStep{"g", "Generate", {{"generation_instruction", "t"}, {"output_format", "table"}},
                        ExecMode::Group, {"e"}}},
              {}};
}

// Registry whose operators are pure functions of their params and inputs.
ops::Registry echo_registry(std::atomic<int>* calls = nullptr, std::string fail_on = "") {
  auto r = ops::Registry::with_builtins();
  auto echo = [calls, fail_on](PayloadKind kind) {
    return [calls, fail_on, kind](const json& p, const std::vector<OperatorResult>& in, ops::OperatorContext&) {
      if (calls) ++*calls;
      json acc = p;
      for (const auto& x : in) acc["in"].push_back(x.digest());
      if (!fail_on.empty() && p.dump().find(fail_on) != std::string::npos) {
        throw Error(ErrorCode::ProviderFailure, "scripted failure");
      }
      json v = kind == PayloadKind::Text ? json{{"text", json_digest(acc)}} : json{{"d", json_digest(acc)}};
      return ops::make_result(kind, v, {"echo"});
    };
  };
  r.add("Retrieve", echo(PayloadKind::Text));
  r.add("Extract", echo(PayloadKind::StructuredRecord));
  r.add("Generate", echo(PayloadKind::Text));
  r.add("Search", [](const json&, const std::vector<OperatorResult>&, ops::OperatorContext&) { return three_papers(); });
  return r;
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("random DAGs: dependency order and worker-count independence") {
  auto v = scenarios::engine_random_dags(150, 30, 99);
  INFO(v.detail);
  CHECK(v.ok);
}

TEST_CASE("cache soundness and savings on the workload") {
  auto v = scenarios::cache_workload();
  INFO(v.detail);
  CHECK(v.ok);
}

TEST_CASE("scope steps and per-item unfolding") {
  auto plan = fan_plan();
  CHECK(scope_steps(plan) == std::vector<std::string>{"scope"});
  auto g = unfold(plan, {{"scope", three_papers()}});
  // scope is resolved before unfolding; 3 retrieves, 3 extracts, 1 generate.
  CHECK(g.nodes.size() == 7);
  const auto* e1 = g.find("e#1");
  REQUIRE(e1);
  CHECK(e1->inputs == std::vector<InputRef>{{"r#1", std::nullopt}});
  const auto* r2 = g.find("r#2");
  REQUIRE(r2);
  CHECK(r2->inputs == std::vector<InputRef>{{"scope", 2}});
  const auto* gen = g.find("g");
  REQUIRE(gen);
  CHECK(gen->inputs.size() == 3);
  CHECK(g.terminals == std::vector<std::string>{"g"});
}

TEST_CASE("an empty scope yields an empty group result without calls") {
  std::atomic<int> calls{0};
  auto reg = echo_registry(&calls);
  reg.add("Search", [](const json&, const std::vector<OperatorResult>&, ops::OperatorContext&) {
    return ops::empty_result(PayloadKind::EntityList);
  });
  Engine eng(reg, nullptr, EngineConfig{2, false, true, "1"});
  ops::OperatorContext ctx;
  auto res = eng.execute(fan_plan(), ctx, "empty");
  REQUIRE(res.ok);
  REQUIRE(res.terminals.size() == 1);
  REQUIRE(res.terminals[0].results.size() == 1);
  CHECK(res.terminals[0].results[0].empty());
  CHECK(calls == 0);
}

TEST_CASE("a failing node fails its dependents and the execution") {
  auto reg = echo_registry(nullptr, "boom");
  auto plan = fan_plan();
  plan.find("e")->params["extract_instruction"] = "boom";
  Engine eng(reg, nullptr, EngineConfig{2, false, true, "1"});
  ops::OperatorContext ctx;
  auto res = eng.execute(plan, ctx, "fail");
  CHECK_FALSE(res.ok);
  CHECK_FALSE(res.failures.empty());
  const auto* gen = res.trace.find("g");
  REQUIRE(gen);
  CHECK(gen->status == NodeStatus::Failed);
  for (const auto& r : res.trace.records) {
    if (r.origin_step_id == "r") CHECK(r.status == NodeStatus::Done);
  }
  CHECK(res.trace.status == "failed");
}

TEST_CASE("invalid plans are rejected before execution") {
  auto reg = echo_registry();
  Engine eng(reg, nullptr);
  ops::OperatorContext ctx;
  Plan open{{PlanStep{"r", "Retrieve", {{"section_tags", {"Experiments"}}}, ExecMode::Instance, {}}}, {}};
  CHECK_THROWS(eng.execute(open, ctx, "bad"));
}

TEST_CASE("cache hits skip the operator and reuse the stored output") {
  std::atomic<int> calls{0};
  auto reg = echo_registry(&calls);
  auto cache = std::make_shared<PersistentCache>();
  Engine eng(reg, cache, EngineConfig{3, true, true, "1"});
  ops::OperatorContext ctx;
  auto a = eng.execute(fan_plan(), ctx, "a");
  int first = calls;
  auto b = eng.execute(fan_plan(), ctx, "b");
  CHECK(calls == first);
  CHECK(a.result_json()["terminals"] == b.result_json()["terminals"]);
  for (const auto& r : b.trace.records) {
    CHECK(r.status == NodeStatus::CacheHit);
    for (const auto& t : r.transitions) CHECK(t.status != NodeStatus::Running);
  }
  // A different op version is a different key.
  Engine eng2(reg, cache, EngineConfig{3, true, true, "2"});
  eng2.execute(fan_plan(), ctx, "c");
  CHECK(calls > first);
}

TEST_CASE("cache keys depend on every component") {
  auto base = cache_key("Extract", {{"a", 1}}, {"d1"}, "v1", "1");
  CHECK(base == cache_key("Extract", {{"a", 1}}, {"d1"}, "v1", "1"));
  CHECK(base != cache_key("Summarize", {{"a", 1}}, {"d1"}, "v1", "1"));
  CHECK(base != cache_key("Extract", {{"a", 2}}, {"d1"}, "v1", "1"));
  CHECK(base != cache_key("Extract", {{"a", 1}}, {"d2"}, "v1", "1"));
  CHECK(base != cache_key("Extract", {{"a", 1}}, {"d1"}, "v2", "1"));
  CHECK(base != cache_key("Extract", {{"a", 1}}, {"d1"}, "v1", "2"));
}

TEST_CASE("persistent cache survives a reload and first writer wins") {
  auto dir = fx::temp_dir("cache");
  auto path = dir / "cache.jsonl";
  auto v1 = ops::make_result(PayloadKind::Text, {{"text", "one"}}, {"x"});
  auto v2 = ops::make_result(PayloadKind::Text, {{"text", "two"}}, {"x"});
  {
    PersistentCache c(path);
    bool inserted = false;
    CHECK(c.get_or_insert("k", v1, &inserted) == v1);
    CHECK(inserted);
    CHECK(c.get_or_insert("k", v2, &inserted) == v1);
    CHECK_FALSE(inserted);
  }
  {
    std::ofstream(path, std::ios::app) << "{not json\n";
  }
  PersistentCache again(path);
  REQUIRE(again.get("k"));
  CHECK(*again.get("k") == v1);
  CHECK(again.size() == 1);
  CHECK_FALSE(again.warnings().empty());
}

TEST_CASE("traces round trip through the store") {
  auto reg = echo_registry();
  Engine eng(reg, nullptr, EngineConfig{2, false, true, "1"});
  auto store = std::make_shared<TraceStore>(fx::temp_dir("traces"));
  eng.set_trace_store(store);
  ops::OperatorContext ctx;
  auto res = eng.execute(fan_plan(), ctx, "t1", "q");
  REQUIRE(store->exists("t1"));
  auto back = store->load("t1");
  CHECK(back.to_json() == res.trace.to_json());
  CHECK(back.edges() == res.trace.edges());
  CHECK(back.summary["nodes"] == 8);
  CHECK_THROWS_AS(store->load("missing"), Error);
}

TEST_CASE("deterministic mode gives identical traces across runs and widths") {
  auto reg = echo_registry();
  ops::OperatorContext ctx;
  Engine one(reg, nullptr, EngineConfig{1, false, true, "1"});
  Engine four(reg, nullptr, EngineConfig{4, false, true, "1"});
  auto a = one.execute(fan_plan(), ctx, "d", "q");
  auto b = four.execute(fan_plan(), ctx, "d", "q");
  CHECK(a.trace.to_json().dump() == b.trace.to_json().dump());
}

TEST_CASE("execution graph check rejects cycles and unknown inputs") {
  ExecutionGraph g;
  ExecutionNode a, b;
  a.exec_id = "a";
  a.op_name = b.op_name = "Generate";
  b.exec_id = "b";
  a.inputs = {{"b", std::nullopt}};
  b.inputs = {{"a", std::nullopt}};
  g.nodes = {a, b};
  CHECK_THROWS(g.check());
  g.nodes = {a};
  CHECK_THROWS(g.check());
}

}  // TEST_SUITE
