#include <doctest.h>

#include "fixtures.hpp"
#include "scenarios.hpp"

#include <httplib.h>

#include <chrono>
#include <thread>

using namespace scholar;
using namespace scholar::service;
namespace fx = scholar::fixtures;

namespace {

ServiceConfig config(const std::string& tag) {
  ServiceConfig cfg;
  cfg.data_dir = fx::temp_dir(tag);
  cfg.engine.deterministic = true;
  return cfg;
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("strict replays are byte-identical and reproduce the comparison table") {
  auto v = scenarios::end_to_end_determinism();
  INFO(v.detail);
  CHECK(v.ok);
}

TEST_CASE("submit, status, result, trace and sessions") {
  Service svc(config("svc"), fx::make_client(fx::vector_search_provider()));
  auto rep = svc.ingest(fx::corpus_dir(), std::nullopt);
  CHECK(rep.to_json().dump().find("vs6") != std::string::npos);
  SubmitOptions opt;
  opt.wait = true;
  auto sub = svc.submit(fx::kCompareQuery, opt);
  auto st = svc.status(sub.execution_id);
  CHECK(st.state == QueryState::Done);
  CHECK(st.done_nodes == st.total_nodes);
  auto result = svc.result(sub.execution_id);
  CHECK(result["ok"] == true);
  auto trace = svc.trace(sub.execution_id);
  CHECK(trace["status"] == "done");
  CHECK(trace["summary"]["failed"] == 0);

  opt.session_id = sub.session_id;
  auto again = svc.submit(fx::kCompareQuery, opt);
  CHECK(again.session_id == sub.session_id);
  auto sess = svc.session(sub.session_id);
  CHECK(sess.turns.size() == 2);
  CHECK(sess.turns[0].result_digest == sess.turns[1].result_digest);

  CHECK_THROWS_AS(svc.status("q-unknown"), Error);
  CHECK_THROWS_AS(svc.result("q-unknown"), Error);
}

TEST_CASE("a query on an empty corpus finishes with an empty result") {
  Service svc(config("empty"), fx::make_client(fx::vector_search_provider()));
  SubmitOptions opt;
  opt.wait = true;
  auto sub = svc.submit(fx::kCompareQuery, opt);
  auto st = svc.status(sub.execution_id);
  CHECK(st.state == QueryState::Done);
  auto result = svc.result(sub.execution_id);
  REQUIRE(result["terminals"].size() == 1);
  for (const auto& r : result["terminals"][0]["results"]) {
    CHECK(ops::OperatorResult::from_json(r).empty());
  }
}

TEST_CASE("state survives a service restart") {
  auto cfg = config("restart");
  std::string id;
  json result;
  {
    Service svc(cfg, fx::make_client(fx::vector_search_provider()));
    svc.ingest(fx::corpus_dir(), std::nullopt);
    SubmitOptions opt;
    opt.wait = true;
    id = svc.submit(fx::kCompareQuery, opt).execution_id;
    result = svc.result(id);
  }
  Service svc(cfg, fx::make_client(fx::vector_search_provider()));
  CHECK(svc.result(id) == result);
  CHECK(svc.status(id).state == QueryState::Done);
  REQUIRE(svc.graph());
  CHECK(svc.graph()->nodes_of_kind(kg::NodeKind::Paper).size() == 6);
}

TEST_CASE("a supplied plan skips planning") {
  Service svc(config("plan"), fx::make_client(fx::vector_search_provider()));
  svc.ingest(fx::corpus_dir(), std::nullopt);
  auto o = svc.plan_query(fx::kCompareQuery);
  auto before = svc.client().accounting_summary();
  SubmitOptions opt;
  opt.wait = true;
  opt.plan = o.plan;
  auto sub = svc.submit(fx::kCompareQuery, opt);
  CHECK(svc.status(sub.execution_id).state == QueryState::Done);
  auto plan = svc.plan_of(sub.execution_id);
  CHECK(planner::Plan::from_json(plan.at("plan")) == o.plan);
  (void)before;
}

TEST_CASE("config json round trip") {
  ServiceConfig c;
  c.data_dir = "/tmp/x";
  c.engine.max_parallel = 3;
  c.cassette = "/tmp/c.jsonl";
  c.cassette_mode = llm::CassetteMode::ReplayStrict;
  auto back = ServiceConfig::from_json(c.to_json());
  CHECK(back.data_dir == c.data_dir);
  CHECK(back.engine.max_parallel == 3);
  CHECK(back.cassette_mode == llm::CassetteMode::ReplayStrict);
}

TEST_CASE("http api") {
  Service svc(config("http"), fx::make_client(fx::vector_search_provider()));
  HttpServer http(svc);
  int port = http.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  http.start();
  httplib::Client cli("127.0.0.1", port);

  auto ing = cli.Post("/ingest", json{{"corpus", fx::corpus_dir().string()}}.dump(), "application/json");
  REQUIRE(ing);
  CHECK(ing->status == 200);

  auto post = cli.Post("/queries", json{{"query", fx::kCompareQuery}}.dump(), "application/json");
  REQUIRE(post);
  CHECK(post->status == 202);
  auto id = json::parse(post->body).at("execution_id").get<std::string>();

  std::string state;
  for (int i = 0; i < 500; ++i) {
    auto st = cli.Get("/queries/" + id);
    REQUIRE(st);
    REQUIRE(st->status == 200);
    state = json::parse(st->body).at("state").get<std::string>();
    if (state == "done" || state == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  CHECK(state == "done");
  auto res = cli.Get("/queries/" + id + "/result");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["ok"] == true);
  auto tr = cli.Get("/queries/" + id + "/trace");
  REQUIRE(tr);
  CHECK(json::parse(tr->body).contains("records"));

  auto missing = cli.Get("/queries/q-nope");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body)["error"] == "not-found");
  auto bad = cli.Post("/queries", "{oops", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto tax = cli.Get("/taxonomy/problem");
  REQUIRE(tax);
  CHECK(tax->status == 404);
  http.stop();
}

}  // TEST_SUITE
