#include <doctest.h>

#include "fixtures.hpp"
#include "scenarios.hpp"

#include <set>

using namespace scholar;
using namespace scholar::planner;
namespace fx = scholar::fixtures;
using ops::ExecMode;

TEST_SUITE("planner") {

TEST_CASE("library: 25 entries, unique ids, every template valid once instantiated") {
  const auto& lib = builtin_library();
  CHECK(lib.size() == 25);
  std::set<int> ids;
  for (const auto& p : lib) {
    INFO(p.plan_id << ": " << p.description);
    ids.insert(p.plan_id);
    auto plan = instantiate(p, "compare the indexing time");
    CHECK(validate(plan).ok());
    CHECK(plan.to_json().dump().find("{task}") == std::string::npos);
  }
  CHECK(ids.size() == lib.size());
  CHECK(library_json(lib)["plans"].size() == lib.size());
}

TEST_CASE("plan json round trip and topological order") {
  auto plan = instantiate(builtin_library().front(), "t");
  CHECK(Plan::from_json(plan.to_json()) == plan);
  auto order = plan.topo_order();
  CHECK(order.size() == plan.steps.size());
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  for (const auto& s : plan.steps) {
    for (const auto& in : s.inputs) CHECK(pos[in] < pos[s.step_id]);
  }
}

TEST_CASE("validator catches every flaw of the adversarial set") {
  std::set<Category> seen;
  for (const auto& c : fx::repair_cases()) {
    INFO(c.query);
    auto rep = validate(c.chain.front());
    CHECK_FALSE(rep.ok());
    for (const auto& i : rep.issues) seen.insert(i.category);
    CHECK(validate(c.chain.back()).ok());
  }
  CHECK(seen.count(Category::StepInternal));
  CHECK(seen.count(Category::InterStep));
  CHECK(seen.count(Category::Overall));
}

TEST_CASE("closed validation requires inputs for input-consuming steps") {
  Plan p{{PlanStep{"s1", "Retrieve", {{"section_tags", {"Experiments"}}}, ExecMode::Instance, {}}}, {}};
  CHECK(validate(p).ok());
  CHECK_FALSE(validate(p, {true}).ok());
  Plan scope = scope_plan(ScopeTask{"papers on vector search", "t"}, p);
  auto composed = compose(scope, p);
  CHECK(validate(composed, {true}).ok());
  CHECK(composed.steps.front().op_name == "Search");
  CHECK(composed.find("s1")->inputs == std::vector<std::string>{composed.steps.front().step_id});
}

TEST_CASE("decompose splits scope and task") {
  auto p = std::make_shared<llm::ScriptedProvider>();
  fx::script_compare_planner(*p);
  auto client = fx::make_client(p);
  auto st = decompose(fx::kCompareQuery, *client);
  CHECK(st.scope == fx::kCompareScope);
  CHECK(st.task == fx::kCompareTask);
}

TEST_CASE("selection accepts only above the threshold") {
  auto cases = fx::planner_cases();
  auto p = std::make_shared<llm::ScriptedProvider>();
  fx::script_planner_cases(*p, cases);
  auto client = fx::make_client(p);
  auto hit = select_predefined(cases[0].task, builtin_library(), *client);
  REQUIRE(hit);
  CHECK(hit->plan.plan_id == cases[0].plan_id);
  CHECK(hit->candidates.size() <= 5);
  CHECK(p->calls("planner.select") == 1);
  CHECK_FALSE(select_predefined("write a poem about the sea", builtin_library(), *client));
}

TEST_CASE("selection frugality: fewer tokens and less time than dynamic generation") {
  auto v = scenarios::planner_frugality();
  INFO(v.detail);
  CHECK(v.ok);
}

TEST_CASE("self-correction converges within three rounds") {
  auto v = scenarios::self_correction();
  INFO(v.detail);
  CHECK(v.ok);
}

TEST_CASE("self-correction gives up after the round budget") {
  auto p = std::make_shared<llm::ScriptedProvider>();
  auto cases = fx::repair_cases();
  const auto broken = cases.front().chain.front();
  p->on("planner.repair", [broken](const llm::PromptRequest&) { return json{{"plan", broken.to_json()}}.dump(); });
  auto client = fx::make_client(p);
  try {
    self_correct(broken, validate(broken), *client, 2);
    FAIL("expected PlanningError");
  } catch (const PlanningError& e) {
    CHECK(e.code() == ErrorCode::PlanningFailed);
    CHECK_FALSE(e.report().ok());
  }
  CHECK(p->calls("planner.repair") == 2);
}

TEST_CASE("compare query gets the dynamic retrieve-extract-generate plan") {
  auto p = std::make_shared<llm::ScriptedProvider>();
  fx::script_compare_planner(*p);
  auto client = fx::make_client(p);
  auto o = Planner::with_builtins().plan(fx::kCompareQuery, *client);
  CHECK_FALSE(o.predefined_id);
  std::vector<std::string> ops;
  for (const auto& s : o.plan.steps) ops.push_back(s.op_name);
  CHECK(ops == std::vector<std::string>{"Search", "Retrieve", "Extract", "Generate"});
  CHECK(validate(o.plan, {true}).ok());
  CHECK(o.usage.call_count > 0);
}

TEST_CASE("planner config json round trip") {
  PlannerConfig c;
  c.threshold = 0.75;
  c.use_predefined = false;
  auto back = PlannerConfig::from_json(c.to_json());
  CHECK(back.threshold == doctest::Approx(0.75));
  CHECK_FALSE(back.use_predefined);
}

}  // TEST_SUITE
