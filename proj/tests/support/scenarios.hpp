#pragma once
// One function per acceptance criterion. Each returns a verdict plus the
// measured numbers; the unit suites assert on `ok`, the acceptance runner
// prints them.

#include "scholar/common.hpp"

#include <string>

namespace scholar::scenarios {

struct Verdict {
  std::string name;
  bool ok = false;
  std::string detail;
  json metrics = json::object();
};

Verdict engine_random_dags(int dags = 1000, int max_nodes = 50, std::uint64_t seed = 2024);
Verdict cache_workload();
Verdict planner_frugality();
Verdict self_correction();
Verdict worked_taxonomy();
Verdict taxonomy_invariants(int papers = 50, int cycles = 100, std::uint64_t seed = 7);
Verdict retrieval_oracles();
Verdict end_to_end_determinism();
Verdict tier3_properties();

}  // namespace scholar::scenarios
