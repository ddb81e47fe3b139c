// Runs every acceptance criterion and prints one PASS/FAIL line each.
//   acceptance [--only name] [--json out.json]

#include "scenarios.hpp"

#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>

using namespace scholar;

int main(int argc, char** argv) {
  std::string only, json_out;
  for (int i = 1; i + 1 < argc; ++i) {
    if (!std::strcmp(argv[i], "--only")) only = argv[++i];
    else if (!std::strcmp(argv[i], "--json")) json_out = argv[++i];
  }

  const std::vector<std::pair<std::string, std::function<scenarios::Verdict()>>> criteria = {
      {"engine-random-dags", [] { return scenarios::engine_random_dags(); }},
      {"cache-soundness", [] { return scenarios::cache_workload(); }},
      {"planner-frugality", [] { return scenarios::planner_frugality(); }},
      {"self-correction", [] { return scenarios::self_correction(); }},
      {"taxonomy-worked-example", [] { return scenarios::worked_taxonomy(); }},
      {"taxonomy-invariants", [] { return scenarios::taxonomy_invariants(); }},
      {"retrieval-oracles", [] { return scenarios::retrieval_oracles(); }},
      {"end-to-end-determinism", [] { return scenarios::end_to_end_determinism(); }},
      {"tier3-properties", [] { return scenarios::tier3_properties(); }},
  };

  int failed = 0;
  json all = json::array();
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && only != name) continue;
    auto v = run();
    failed += !v.ok;
    std::cout << (v.ok ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
    all.push_back({{"name", name}, {"ok", v.ok}, {"detail", v.detail}, {"metrics", v.metrics}});
  }
  if (!json_out.empty()) std::ofstream(json_out) << all.dump(2) << "\n";
  std::cout << (failed ? std::to_string(failed) + " failed" : std::string("all passed")) << std::endl;
  return failed ? 1 : 0;
}
