#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <regex>
#include <set>

#include <unistd.h>

#ifndef SCHOLAR_TEST_DATA
#define SCHOLAR_TEST_DATA "tests/data"
#endif

namespace scholar::fixtures {

namespace fs = std::filesystem;
using llm::PromptRequest;
using llm::ScriptedProvider;
using planner::Plan;
using planner::PlanStep;
using ops::ExecMode;

namespace {

std::string reply(const json& j) { return j.dump(); }

std::uint64_t h64(std::string_view s) {
  auto hex = sha256_hex(s).substr(0, 15);
  return std::stoull(hex, nullptr, 16);
}

std::string short_digest(const json& j) { return json_digest(j).substr(0, 10); }

PlanStep step(std::string id, std::string op, json params, ExecMode mode, std::vector<std::string> inputs = {}) {
  return PlanStep{std::move(id), std::move(op), std::move(params), mode, std::move(inputs)};
}

std::vector<double> basis(std::size_t i, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  v[i] = 1.0;
  return v;
}

std::string first_word(const std::string& s) {
  auto toks = tokenize(s);
  return toks.empty() ? std::string("misc") : toks.front();
}

}  // namespace

fs::path data_dir() { return fs::path(SCHOLAR_TEST_DATA); }

fs::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto p = fs::temp_directory_path() /
           ("scholar-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::shared_ptr<llm::LlmClient> make_client(std::shared_ptr<llm::Provider> provider,
                                            std::shared_ptr<llm::Cassette> cassette, std::size_t dim) {
  if (!cassette) cassette = std::make_shared<llm::Cassette>();
  llm::ClientConfig cfg;
  cfg.embedding_dim = dim;
  return std::make_shared<llm::LlmClient>(std::move(provider), std::move(cassette), cfg);
}

// ---------------------------------------------------------------- vector-search corpus

fs::path corpus_dir() { return data_dir() / "corpus"; }

std::vector<ingest::DocumentBundle> corpus_bundles() { return ingest::load_corpus(corpus_dir()); }

void script_ingest(ScriptedProvider& p) {
  p.on("ingest.classify_section", [](const PromptRequest&) { return reply({{"label", "Other"}}); });
  p.on("ingest.extract_entities", [](const PromptRequest& r) {
    auto text = r.payload.value("section", std::string());
    json ds = json::array(), ms = json::array();
    for (const char* d : {"SIFT1M", "Deep1B", "GIST1M"}) {
      if (text.find(d) != std::string::npos) ds.push_back(d);
    }
    for (const char* m : {"QPS", "recall@10"}) {
      if (text.find(m) != std::string::npos) ms.push_back(m);
    }
    return reply({{"datasets", ds}, {"metrics", ms}, {"baselines", json::array()}});
  });
  p.on("ingest.normalize_entities", [](const PromptRequest&) { return reply({{"groups", json::array()}}); });
}

void script_search(ScriptedProvider& p) {
  p.on("retrieval.decompose", [](const PromptRequest& r) {
    auto q = r.payload.value("query", std::string());
    json meta = json::array();
    static const std::regex since(R"(since (\d{4}))"), before(R"(before (\d{4}))");
    std::smatch m;
    std::string topic = q;
    if (std::regex_search(q, m, since)) {
      meta.push_back({{"field", "publication_year"}, {"value", m.str(0)}, {"year_min", std::stoi(m.str(1))},
                      {"year_max", nullptr}});
      topic = std::regex_replace(topic, since, "");
    } else if (std::regex_search(q, m, before)) {
      meta.push_back({{"field", "publication_year"}, {"value", m.str(0)}, {"year_min", nullptr},
                      {"year_max", std::stoi(m.str(1)) - 1}});
      topic = std::regex_replace(topic, before, "");
    }
    json intents = json::array({{{"aspect", "research_topic"}, {"text", trim(topic)}}});
    if (q.find("graph") != std::string::npos) {
      intents.push_back({{"aspect", "proposed_method"}, {"text", "graph-based index"}});
    }
    return reply({{"metadata_constraints", meta}, {"aspect_intents", intents}});
  });
  p.on("retrieval.rerank", [](const PromptRequest& r) {
    auto q = r.payload.value("query", std::string());
    bool graph_only = q.find("graph") != std::string::npos;
    std::vector<std::string> keep;
    for (const auto& c : r.payload.at("candidates")) {
      auto method = c.at("summary").value("aspects", json::object()).value("proposed_method", std::string());
      if (graph_only && method.find("graph") == std::string::npos) continue;
      keep.push_back(c.at("paper_id").get<std::string>());
    }
    std::sort(keep.begin(), keep.end());
    return reply({{"ranking", keep}});
  });
}

void script_operators(ScriptedProvider& p) {
  p.on("operators.extract", [](const PromptRequest& r) {
    auto text = r.payload.value("content", std::string());
    json fields = json::object(), evidence = json::array();
    static const std::regex idx(R"(indexing time of ([0-9.]+ s))"), mem(R"(memory usage of ([0-9.]+ GB))"),
        ds(R"(On ([A-Za-z0-9]+))");
    std::smatch m;
    if (std::regex_search(text, m, ds)) fields["dataset"] = m.str(1);
    if (std::regex_search(text, m, idx)) {
      fields["indexing_time"] = m.str(1);
      evidence.push_back({{"field", "indexing_time"}, {"quote", m.str(0)}});
    }
    if (std::regex_search(text, m, mem)) {
      fields["memory"] = m.str(1);
      evidence.push_back({{"field", "memory"}, {"quote", m.str(0)}});
    }
    return reply({{"fields", fields}, {"evidence", evidence}});
  });
  p.on("operators.generate", [](const PromptRequest& r) {
    std::string out = "| paper | dataset | indexing time | memory |\n|---|---|---|---|\n";
    int rows = 0;
    for (const auto& in : r.payload.value("inputs", json::array())) {
      const auto& v = in.value("value", json::object());
      if (!v.is_object() || !v.contains("fields")) continue;
      std::string ids;
      for (const auto& d : v.value("document_ids", json::array())) ids += (ids.empty() ? "" : ",") + d.get<std::string>();
      const auto& f = v["fields"];
      out += "| " + ids + " | " + f.value("dataset", "-") + " | " + f.value("indexing_time", "-") + " | " +
             f.value("memory", "-") + " |\n";
      ++rows;
    }
    if (rows == 0) out = "Generated from " + std::to_string(r.payload.value("inputs", json::array()).size()) + " inputs.";
    return out;
  });
  p.on("operators.summarize", [](const PromptRequest& r) {
    return "Summary (" + r.payload.value("detail_level", std::string("short")) + ") over " +
           std::to_string(r.payload.value("inputs", json::array()).size()) + " inputs, ref " +
           short_digest(r.payload.value("inputs", json::array()));
  });
  p.on("operators.rank", [](const PromptRequest& r) {
    json ranking = json::array();
    for (const auto& in : r.payload.value("inputs", json::array())) {
      const auto& v = in.value("value", json::object());
      auto items = v.is_array() ? v : json::array({v});
      for (const auto& it : items) {
        if (!it.is_object() || !it.contains("fields")) continue;
        std::string ids;
        for (const auto& d : it.value("document_ids", json::array())) ids += d.get<std::string>();
        auto t = it["fields"].value("indexing_time", std::string());
        json value = t.empty() ? json(nullptr) : json(std::stod(t));
        ranking.push_back({{"entity", ids}, {"value", value}, {"source", ids}, {"annotation", "indexing time (s)"}});
      }
    }
    return reply({{"ranking", ranking}});
  });
  p.on("operators.check", [](const PromptRequest& r) {
    return reply({{"report", "Sources agree, ref " + short_digest(r.payload)},
                  {"agreements", json::array({"reported units"})},
                  {"disagreements", json::array()}});
  });
  p.on("operators.verify", [](const PromptRequest&) {
    return reply({{"verdict", "supported"}, {"justification", "The evidence states it."}});
  });
  p.on("operators.filter", [](const PromptRequest&) { return reply({{"keep", true}}); });
}

void script_compare_planner(ScriptedProvider& p) {
  p.on("planner.decompose", [](const PromptRequest& r) {
    auto q = r.payload.value("query", std::string());
    if (q == kCompareQuery) return reply({{"scope", kCompareScope}, {"task", kCompareTask}});
    auto cut = q.find(" and ");
    if (cut == std::string::npos) return reply({{"scope", "the corpus"}, {"task", q}});
    return reply({{"scope", q.substr(0, cut)}, {"task", q.substr(cut + 5)}});
  });
  p.on("planner.select", [](const PromptRequest& r) {
    json scores = json::array();
    for (const auto& c : r.payload.at("candidates")) scores.push_back({{"plan_id", c.at("plan_id")}, {"confidence", 20}});
    return reply({{"scores", scores}});
  });
  p.on("planner.high_level", [](const PromptRequest&) {
    return reply({{"steps",
                   {{{"id", "step_1"}, {"description", "Retrieve the experiments sections of each paper"}},
                    {{"id", "step_2"}, {"description", "Extract indexing speed and memory usage from each paper"}},
                    {{"id", "step_3"}, {"description", "Build a table comparing the extracted values"}}}}});
  });
  p.on("planner.instantiate", [](const PromptRequest& r) {
    auto id = r.payload.at("step").value("id", std::string());
    if (id == "step_1") {
      return reply({{"op_name", "Retrieve"}, {"params", {{"section_tags", {"Experiments"}}}}, {"execution_mode", "instance"}});
    }
    if (id == "step_2") {
      return reply({{"op_name", "Extract"},
                    {"params",
                     {{"extract_instruction", "Extract the indexing time and the memory usage"},
                      {"section_tags", {"Experiments"}},
                      {"detail_level", "detailed"}}},
                    {"execution_mode", "instance"}});
    }
    return reply({{"op_name", "Generate"},
                  {"params",
                   {{"generation_instruction", "Build a table comparing indexing speed and memory usage"},
                    {"output_format", "table"}}},
                  {"execution_mode", "group"}});
  });
}

std::shared_ptr<ScriptedProvider> vector_search_provider() {
  auto p = std::make_shared<ScriptedProvider>();
  script_ingest(*p);
  script_search(*p);
  script_operators(*p);
  script_compare_planner(*p);
  return p;
}

kg::Graph ingested_graph(llm::LlmClient& llm) {
  kg::Graph g(llm.embedding_dim());
  ingest::ingest_corpus(corpus_bundles(), g, llm, nullptr);
  return g;
}

// ---------------------------------------------------------------- worked taxonomy example

namespace {

struct WorkedPaper {
  std::string id;
  std::string title;
  std::string description;
  std::string input;
  std::string output;
  std::vector<std::string> input_sig;
  std::vector<std::string> output_sig;
};

const std::vector<WorkedPaper>& worked_papers() {
  static const std::vector<WorkedPaper> v = {
      {"worked-p1", "Attribute-Filtered Nearest Neighbor Search",
       "Nearest-neighbor search where results must satisfy an attribute filter.",
       "a query vector and an attribute filter", "top-k candidates", {"query vector", "attribute filter"},
       {"top-k candidates"}},
      {"worked-p2", "Radius Queries over Vector Collections", "Find every vector within a distance radius of a query.",
       "a query vector and a distance radius", "all vectors within the radius", {"query vector", "distance radius"},
       {"vectors within radius"}},
      {"worked-p3", "Exact and Approximate KNN Retrieval", "Retrieve the k nearest vectors to a query.", "a query vector",
       "top-k nearest neighbors", {"query vector"}, {"top-k neighbors"}},
      {"worked-p4", "Multi-Attribute Filtering for Vector Search",
       "Nearest-neighbor search under conjunctions of several attribute filters.",
       "a query vector and multiple attribute filters", "top-k candidates satisfying all filters",
       {"query vector", "multiple attribute filters"}, {"top-k candidates"}},
      {"worked-p5", "Batched KNN Queries on Accelerators", "Answer many KNN queries together in one batch.",
       "a batch of query vectors", "top-k neighbors for each query", {"query vector batch"}, {"top-k neighbors"}},
  };
  return v;
}

const WorkedPaper& worked_paper(const std::string& id) {
  for (const auto& p : worked_papers()) {
    if (p.id == id) return p;
  }
  throw Error(ErrorCode::NotFound, "worked paper " + id);
}

}  // namespace

kg::Graph worked_graph(std::size_t dim) {
  kg::Graph g(dim);
  for (const auto& p : worked_papers()) {
    g.add_node({p.id, kg::NodeKind::Paper, {{"title", p.title}, {"authors", json::array()}}, std::nullopt});
    for (auto [label, text] : {std::pair{ingest::SectionLabel::Abstract, p.description},
                               std::pair{ingest::SectionLabel::ProblemFormulation,
                                         "Input: " + p.input + ". Output: " + p.output + "."}}) {
      kg::GraphNode s;
      s.id = ingest::section_node_id(p.id, label);
      s.kind = kg::NodeKind::Section;
      s.attrs = {{"label", ingest::to_string(label)}, {"text", text}, {"paper_id", p.id}};
      g.add_node(s);
      g.add_edge(p.id, s.id, kg::EdgeKind::HAS);
    }
  }
  return g;
}

void script_worked(ScriptedProvider& p, std::size_t dim) {
  p.on("taxonomy.problem_template", [](const PromptRequest& r) {
    const auto& fp = worked_paper(r.payload.at("paper_id").get<std::string>());
    return reply({{"description", fp.description}, {"input", fp.input}, {"output", fp.output}});
  });
  p.on("taxonomy.signatures", [](const PromptRequest& r) {
    const auto& fp = worked_paper(r.payload.at("paper_id").get<std::string>());
    return reply({{"signatures", {fp.input_sig, fp.output_sig}}});
  });
  p.on("taxonomy.classes", [](const PromptRequest& r) {
    if (r.payload.at("aspect") == "input") {
      return reply({{"classes",
                     {{{"label", "query vector + attribute filter"}, {"members", {"query vector; attribute filter"}}},
                      {{"label", "query vector"}, {"members", {"query vector"}}},
                      {{"label", "query vector + radius"}, {"members", {"query vector; distance radius"}}}}}});
    }
    return reply({{"classes",
                   {{{"label", "top-k results"}, {"members", {"top-k candidates", "top-k neighbors"}}},
                    {{"label", "vectors within radius"}, {"members", {"vectors within radius"}}}}}});
  });
  p.on("taxonomy.topic", [](const PromptRequest&) { return reply({{"topic", "Vector Search"}}); });
  p.on("taxonomy.reference", [](const PromptRequest&) {
    return reply({{"nodes",
                   {{{"id", "r"}, {"name", "Vector Retrieval"}, {"description", "Similarity search over embeddings"},
                     {"parent", nullptr}},
                    {{"id", "knn"}, {"name", "KNN Retrieval"},
                     {"description", "Find the k nearest vectors to a query vector"}, {"parent", "r"}},
                    {{"id", "fvs"}, {"name", "Filtered Vector Search"},
                     {"description", "Nearest-neighbor search restricted by attribute filters"}, {"parent", "r"}}}}});
  });
  p.on("taxonomy.subsumes", [](const PromptRequest&) { return reply({{"subsumes", false}}); });
  p.on("taxonomy.name_node", [](const PromptRequest& r) {
    auto in = r.payload.at("concept").value("input", std::string());
    if (in.find("radius") != std::string::npos) {
      return reply({{"name", "Range Search"}, {"description", "Return every vector within a distance radius"}});
    }
    if (in.find("batch") != std::string::npos) {
      return reply({{"name", "Batch KNN"}, {"description", "Answer many KNN queries in one batch"}});
    }
    return reply({{"name", "Other Vector Queries"}, {"description", ""}});
  });
  p.on("taxonomy.map_classes", [](const PromptRequest& r) {
    auto id = r.payload.at("paper_id").get<std::string>();
    json in = id == "worked-p4" ? json{{"aspect", 0}, {"class_id", nullptr}, {"label", "query vector + multiple attribute filters"}}
                              : json{{"aspect", 0}, {"class_id", nullptr}, {"label", "batch of query vectors"}};
    return reply({{"matches", {in, {{"aspect", 1}, {"class_id", "O1"}, {"label", "top-k results"}}}}});
  });
  p.on("taxonomy.estimate_subtopics", [](const PromptRequest&) { return reply({{"k", 2}}); });
  p.on("taxonomy.cluster", [](const PromptRequest& r) {
    if (r.payload.at("node").value("name", "") == "Filtered Vector Search") {
      return reply({{"clusters",
                     {{{"label", "Single Attribute Filter"}, {"description", "One attribute predicate per query"},
                       {"papers", {"worked-p1"}}},
                      {{"label", "Multi-attribute Filter"}, {"description", "Conjunctions of attribute predicates"},
                       {"papers", {"worked-p4"}}}}}});
    }
    json all = json::array();
    for (const auto& x : r.payload.at("papers")) all.push_back(x.at("paper_id"));
    return reply({{"clusters", {{{"label", r.payload.at("node").value("name", "")}, {"papers", all}}}}});
  });
  // Orthogonal directions: one per subtopic so that only intended pairs match.
  const std::vector<std::pair<std::string, std::size_t>> pins = {
      {"query vector | top-k results", 0},
      {"KNN Retrieval: Find the k nearest vectors to a query vector", 0},
      {"query vector + attribute filter | top-k results", 1},
      {"query vector + multiple attribute filters | top-k results", 1},
      {"Filtered Vector Search: Nearest-neighbor search restricted by attribute filters", 1},
      {"query vector + radius | vectors within radius", 2},
      {"batch of query vectors | top-k results", 3},
  };
  for (const auto& [text, axis] : pins) p.pin_embedding(text, basis(axis, dim));
}

WorkedRun run_worked(llm::LlmClient& llm, const kg::Graph& graph) {
  WorkedRun run;
  taxonomy::TaxonomyConfig cfg;
  cfg.alpha = 1.0;
  run.tax = taxonomy::Taxonomy(taxonomy::TaxonomyKind::Problem, cfg);
  run.tax.build(graph, {"worked-p1", "worked-p2", "worked-p3"}, llm);
  run.after_build = name_tree(run.tax);
  for (const char* id : {"worked-p4", "worked-p5"}) run.routes.push_back(run.tax.update_with_paper(graph, id, llm));
  return run;
}

json name_tree(const taxonomy::Taxonomy& tax) {
  std::function<json(const std::string&)> rec = [&](const std::string& id) {
    const auto& n = tax.node(id);
    json kids = json::array();
    for (const auto& c : n.children) kids.push_back(rec(c));
    return json{{"name", n.name}, {"children", kids}};
  };
  return rec(tax.root_id());
}

// ---------------------------------------------------------------- synthetic taxonomy

std::vector<taxonomy::AspectTemplate> synthetic_templates(int n, std::uint64_t seed) {
  static const std::vector<std::string> inputs = {
      "query vector",         "query vector and attribute filter", "batch of query vectors",
      "graph and source node", "text corpus",                       "time series window",
      "relational table pair"};
  static const std::vector<std::string> outputs = {"top-k neighbors", "filtered candidates", "shortest path",
                                                   "topic clusters",  "anomaly scores",      "entity matches"};
  std::mt19937_64 rng(seed);
  std::vector<taxonomy::AspectTemplate> out;
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "syn-%03d", i);
    const auto& in = inputs[rng() % inputs.size()];
    const auto& o = outputs[rng() % outputs.size()];
    taxonomy::AspectTemplate t;
    t.paper_id = id;
    t.description = "Paper " + std::to_string(i) + " maps " + in + " to " + o + ".";
    t.aspects = {in, o};
    out.push_back(std::move(t));
  }
  return out;
}

void script_synthetic_taxonomy(ScriptedProvider& p) {
  p.on("taxonomy.signatures", [](const PromptRequest& r) {
    json sigs = json::array();
    for (const auto& a : r.payload.at("aspects")) {
      auto text = a.at("text").get<std::string>();
      json phrases = json::array();
      std::size_t pos = 0;
      for (;;) {
        auto cut = text.find(" and ", pos);
        phrases.push_back(text.substr(pos, cut == std::string::npos ? std::string::npos : cut - pos));
        if (cut == std::string::npos) break;
        pos = cut + 5;
      }
      sigs.push_back(phrases);
    }
    return reply({{"signatures", sigs}});
  });
  p.on("taxonomy.classes", [](const PromptRequest& r) {
    auto aspect = r.payload.at("aspect").get<std::string>();
    std::map<std::string, json> groups;
    for (const auto& k : r.payload.at("signatures")) {
      auto key = k.get<std::string>();
      groups[first_word(key)].push_back(key);
    }
    json classes = json::array();
    for (auto& [w, members] : groups) classes.push_back({{"label", w + " " + aspect}, {"members", members}});
    return reply({{"classes", classes}});
  });
  p.on("taxonomy.topic", [](const PromptRequest&) { return reply({{"topic", "Data Retrieval Problems"}}); });
  p.on("taxonomy.reference", [](const PromptRequest&) {
    return reply({{"nodes",
                   {{{"id", "root"}, {"name", "root"}, {"description", "All problems"}, {"parent", nullptr}},
                    {{"id", "a"}, {"name", "Similarity Search"}, {"description", "Nearest neighbours"}, {"parent", "root"}},
                    {{"id", "b"}, {"name", "Graph Analytics"}, {"description", "Paths and reachability"}, {"parent", "root"}},
                    {{"id", "c"}, {"name", "Data Integration"}, {"description", "Matching records"}, {"parent", "root"}}}}});
  });
  p.on("taxonomy.subsumes", [](const PromptRequest& r) {
    auto key = r.payload.at("node").dump() + r.payload.at("concept").dump();
    return reply({{"subsumes", h64(key) % 4 == 0}});
  });
  p.on("taxonomy.name_node", [](const PromptRequest& r) {
    const auto& c = r.payload.at("concept");
    return reply({{"name", c.value("input", "?") + " to " + c.value("output", "?")},
                  {"description", "Papers mapping " + c.value("input", "?") + " to " + c.value("output", "?")}});
  });
  p.on("taxonomy.map_classes", [](const PromptRequest& r) {
    json matches = json::array();
    for (const auto& a : r.payload.at("aspects")) {
      auto label = first_word(a.at("signature").get<std::string>()) + " " + a.at("name").get<std::string>();
      json m{{"aspect", a.at("aspect")}, {"class_id", nullptr}, {"label", label}};
      for (const auto& c : a.at("classes")) {
        if (c.at("label") == label) m["class_id"] = c.at("class_id");
      }
      matches.push_back(m);
    }
    return reply({{"matches", matches}});
  });
  p.on("taxonomy.estimate_subtopics", [](const PromptRequest& r) {
    return reply({{"k", std::min<std::size_t>(3, r.payload.at("papers").size())}});
  });
  p.on("taxonomy.cluster", [](const PromptRequest& r) {
    int k = r.payload.at("k").get<int>();
    auto base = r.payload.at("node").value("name", std::string("node"));
    std::vector<json> buckets(static_cast<std::size_t>(k), json::array());
    for (const auto& x : r.payload.at("papers")) {
      auto id = x.at("paper_id").get<std::string>();
      buckets[h64(base + id) % static_cast<std::uint64_t>(k)].push_back(id);
    }
    json clusters = json::array();
    for (int i = 0; i < k; ++i) {
      if (buckets[i].empty()) continue;
      clusters.push_back({{"label", base + " part " + std::to_string(i + 1)},
                          {"description", "Subtopic " + std::to_string(i + 1) + " of " + base},
                          {"papers", buckets[i]}});
    }
    return reply({{"clusters", clusters}});
  });
}

// ---------------------------------------------------------------- workloads

std::vector<WorkloadQuery> cache_workload() {
  const std::vector<std::string> scopes = {
      "papers on vector search",          "papers on graph-based vector search since 2023",
      "papers on vector search since 2024", "papers on vector search before 2024",
      "papers on approximate nearest neighbor indexes"};
  struct TaskDef {
    std::string text;
    PlanStep last;
  };
  auto tasks = [](const std::string& t) {
    return std::vector<TaskDef>{
        {"rank the methods by indexing time",
         step("rank", "Rank", {{"handler", "rank_results"}, {"query", t}}, ExecMode::Group, {"extract"})},
        {"check whether the reported results are consistent",
         step("check", "Check", {{"handler", "check_results"}, {"query", t}}, ExecMode::Group, {"extract"})},
        {"summarize the common experimental settings",
         step("summarize", "Summarize",
              {{"handler", "summarize_common_settings"}, {"detail_level", "detailed"}, {"query", t}},
              ExecMode::Group, {"extract"})},
        {"build a table of indexing time and memory usage",
         step("generate", "Generate",
              {{"generation_instruction", "Build a table of indexing time and memory usage"},
               {"output_format", "table"},
               {"query", t}},
              ExecMode::Group, {"extract"})},
    };
  };
  std::vector<WorkloadQuery> out;
  for (const auto& s : scopes) {
    for (int ti = 0; ti < 4; ++ti) {
      auto defs = tasks("");
      WorkloadQuery q;
      q.scope = s;
      q.task = defs[ti].text;
      auto last = tasks(q.task)[ti].last;
      q.plan.steps = {
          step("search", "Search", {{"query", s}}, ExecMode::NA),
          step("retrieve", "Retrieve", {{"section_tags", {"Experiments"}}}, ExecMode::Instance, {"search"}),
          step("extract", "Extract",
               {{"handler", "extract_baseline_results"},
                {"section_tags", {"Experiments"}},
                {"query", s},
                {"detail_level", "detailed"}},
               ExecMode::Instance, {"retrieve"}),
          last,
      };
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::vector<PlannerCase> planner_cases() {
  const std::vector<std::pair<int, std::string>> picks = {
      {1, "graph-based vector search"},  {2, "learned indexes"},          {3, "entity resolution"},
      {4, "vector quantization"},        {5, "filtered vector search"},   {6, "SSD-resident indexes"},
      {7, "graph-based vector search"},  {8, "range search"},             {9, "batch KNN"},
      {10, "multi-attribute filtering"}, {11, "vector search"},           {12, "proximity graphs"},
      {13, "product quantization"},      {14, "graph-based vector search"}, {15, "vector databases"},
      {16, "approximate nearest neighbor search"}, {17, "learned indexes"}, {19, "graph-based vector search"},
      {20, "filtered vector search"},    {21, "vector search since 2023"},
  };
  std::vector<PlannerCase> out;
  const auto& lib = planner::builtin_library();
  for (const auto& [id, topic] : picks) {
    auto it = std::find_if(lib.begin(), lib.end(), [&](const auto& p) { return p.plan_id == id; });
    PlannerCase c;
    c.plan_id = id;
    c.task = it->description;
    c.query = "For the papers on " + topic + ": " + to_lower(it->description);
    out.push_back(std::move(c));
  }
  return out;
}

void script_planner_cases(ScriptedProvider& p, const std::vector<PlannerCase>& cases) {
  auto table = std::make_shared<std::map<std::string, PlannerCase>>();
  for (const auto& c : cases) (*table)[c.query] = c;
  p.on("planner.decompose", [table](const PromptRequest& r) {
    auto q = r.payload.at("query").get<std::string>();
    auto it = table->find(q);
    if (it == table->end()) throw Error(ErrorCode::ProviderFailure, "unscripted query " + q);
    auto colon = q.find(": ");
    return reply({{"scope", q.substr(4, colon - 4)}, {"task", it->second.task}});
  });
  p.on("planner.select", [](const PromptRequest& r) {
    auto task = r.payload.at("task").get<std::string>();
    json scores = json::array();
    for (const auto& c : r.payload.at("candidates")) {
      scores.push_back({{"plan_id", c.at("plan_id")}, {"confidence", c.at("description") == task ? 95 : 15}});
    }
    return reply({{"scores", scores}});
  });
  p.on("planner.high_level", [](const PromptRequest& r) {
    auto task = r.payload.at("task").get<std::string>();
    return reply({{"steps",
                   {{{"id", "step_1"}, {"description", "Retrieve the relevant sections of each paper"}},
                    {{"id", "step_2"}, {"description", "Extract what the task asks for: " + task}},
                    {{"id", "step_3"}, {"description", "Summarize the extracted information"}}}}});
  });
  p.on("planner.instantiate", [](const PromptRequest& r) {
    auto id = r.payload.at("step").value("id", std::string());
    auto task = r.payload.value("task", std::string());
    if (id == "step_1") {
      return reply({{"op_name", "Retrieve"}, {"params", {{"section_tags", {"Experiments"}}}}, {"execution_mode", "instance"}});
    }
    if (id == "step_2") {
      return reply({{"op_name", "Extract"},
                    {"params", {{"extract_instruction", task}, {"section_tags", {"Experiments"}}, {"detail_level", "detailed"}}},
                    {"execution_mode", "instance"}});
    }
    return reply({{"op_name", "Summarize"},
                  {"params", {{"focus", task}, {"detail_level", "short"}}},
                  {"execution_mode", "group"}});
  });
}

namespace {

Plan valid_repair_plan(std::size_t tag) {
  return Plan{{step("step_1", "Retrieve", {{"section_tags", {"Experiments"}}}, ExecMode::Instance),
               step("step_2", "Extract",
                    {{"extract_instruction", "Extract the indexing time and the memory usage"},
                     {"section_tags", {"Experiments"}},
                     {"detail_level", "detailed"}},
                    ExecMode::Instance, {"step_1"}),
               step("step_3", "Generate",
                    {{"generation_instruction",
                      "Build a table comparing indexing speed and memory usage (" + std::to_string(tag) + ")"},
                     {"output_format", "table"}},
                    ExecMode::Group, {"step_2"})},
              {}};
}

using Flaw = std::function<void(Plan&)>;

// Each flaw breaks one validator rule of the three issue classes.
const std::vector<std::pair<std::string, Flaw>>& flaws() {
  static const std::vector<std::pair<std::string, Flaw>> v = {
      {"extract reads sections its retrieve never fetched",
       [](Plan& p) { p.steps[1].params["section_tags"] = {"Methodology"}; }},
      {"table generated from free text",
       [](Plan& p) {
         p.steps[1] = step("step_2", "Summarize", {{"focus", "indexing speed"}, {"detail_level", "short"}},
                           ExecMode::Instance, {"step_1"});
       }},
      {"unknown handler", [](Plan& p) { p.steps[1].params["handler"] = "extract_speed"; }},
      {"handler of another operator", [](Plan& p) { p.steps[1].params["handler"] = "rank_results"; }},
      {"illegal execution mode", [](Plan& p) { p.steps[1].execution_mode = ExecMode::NA; }},
      {"dangling input", [](Plan& p) { p.steps[2].inputs = {"step_9"}; }},
      {"cycle", [](Plan& p) { p.steps[0].inputs = {"step_3"}; }},
      {"extract without instruction", [](Plan& p) { p.steps[1].params.erase("extract_instruction"); }},
      {"bad detail level", [](Plan& p) { p.steps[1].params["detail_level"] = "verbose"; }},
      {"handler section mismatch",
       [](Plan& p) {
         p.steps[1].params.erase("extract_instruction");
         p.steps[1].params["handler"] = "extract_problem_definition";
       }},
      {"self loop", [](Plan& p) { p.steps[1].inputs = {"step_1", "step_2"}; }},
      {"bad output format", [](Plan& p) { p.steps[2].params["output_format"] = "chart"; }},
      {"rank without instruction",
       [](Plan& p) { p.steps.push_back(step("step_4", "Rank", json::object(), ExecMode::Group, {"step_2"})); }},
      {"check over a single peer",
       [](Plan& p) {
         p.steps.push_back(step("step_4", "Check", {{"check_instruction", "Check the numbers"}}, ExecMode::Instance,
                                {"step_2"}));
       }},
      {"missing generation instruction", [](Plan& p) { p.steps[2].params.erase("generation_instruction"); }},
      {"input listed twice", [](Plan& p) { p.steps[2].inputs = {"step_2", "step_2"}; }},
  };
  return v;
}

Plan flawed(std::size_t tag, std::size_t i) {
  auto p = valid_repair_plan(tag);
  flaws().at(i % flaws().size()).second(p);
  return p;
}

}  // namespace

std::vector<RepairCase> repair_cases() {
  std::vector<RepairCase> out;
  const std::size_t n = flaws().size();
  for (std::size_t i = 0; i < 16; ++i) {
    RepairCase c;
    c.query = "Adversarial query " + std::to_string(i + 1) + " (" + flaws()[i].first + ") and build a comparison table";
    c.expected_rounds = i < 10 ? 1 : i < 14 ? 2 : 3;
    for (int r = 0; r < c.expected_rounds; ++r) c.chain.push_back(flawed(i, (i + static_cast<std::size_t>(r) * 5) % n));
    c.chain.push_back(valid_repair_plan(i));
    out.push_back(std::move(c));
  }
  return out;
}

void script_repair_cases(ScriptedProvider& p, const std::vector<RepairCase>& cases) {
  auto table = std::make_shared<std::vector<RepairCase>>(cases);
  auto find_case = [table](const std::string& task) -> const RepairCase& {
    for (const auto& c : *table) {
      if (c.query.find(task) != std::string::npos) return c;
    }
    throw Error(ErrorCode::ProviderFailure, "unscripted repair task " + task);
  };
  p.on("planner.decompose", [](const PromptRequest& r) {
    auto q = r.payload.at("query").get<std::string>();
    auto cut = q.find(" and ");
    return reply({{"scope", "papers on vector search"}, {"task", q.substr(0, cut)}});
  });
  p.on("planner.high_level", [find_case](const PromptRequest& r) {
    const auto& c = find_case(r.payload.at("task").get<std::string>());
    json steps = json::array();
    for (const auto& s : c.chain.front().steps) {
      steps.push_back({{"id", s.step_id}, {"description", "Apply " + s.op_name}, {"depends_on", s.inputs}});
    }
    return reply({{"steps", steps}});
  });
  p.on("planner.instantiate", [find_case](const PromptRequest& r) {
    const auto& c = find_case(r.payload.at("task").get<std::string>());
    auto id = r.payload.at("step").at("id").get<std::string>();
    for (const auto& s : c.chain.front().steps) {
      if (s.step_id == id) {
        return reply({{"op_name", s.op_name}, {"params", s.params}, {"execution_mode", ops::to_string(s.execution_mode)}});
      }
    }
    throw Error(ErrorCode::ProviderFailure, "unscripted step " + id);
  });
  p.on("planner.repair", [table](const PromptRequest& r) {
    auto current = Plan::from_json(r.payload.at("plan"));
    for (const auto& c : *table) {
      for (std::size_t i = 0; i + 1 < c.chain.size(); ++i) {
        if (c.chain[i] == current) return reply({{"plan", c.chain[i + 1].to_json()}});
      }
    }
    throw Error(ErrorCode::ProviderFailure, "unscripted repair");
  });
}

// ---------------------------------------------------------------- Tier-3

kg::Graph tier3_graph(std::size_t dim) {
  kg::Graph g(dim);
  auto tax_node = [&](const std::string& id, kg::NodeKind k, const std::string& name, const std::string& parent) {
    g.add_node({id, k, {{"name", name}, {"description", name + " papers"}}, std::nullopt});
    if (!parent.empty()) g.add_edge(id, parent, kg::EdgeKind::CHILD_OF);
  };
  const auto P = kg::NodeKind::ProblemNode, M = kg::NodeKind::MethodNode;
  tax_node("problem:0", P, "Vector Search", "");
  tax_node("problem:1", P, "KNN Retrieval", "problem:0");
  tax_node("problem:2", P, "Filtered Vector Search", "problem:0");
  tax_node("problem:3", P, "Range Search", "problem:0");
  tax_node("problem:4", P, "Single Attribute Filter", "problem:2");
  tax_node("problem:5", P, "Multi-attribute Filter", "problem:2");
  tax_node("method:0", M, "Index Structures", "");
  tax_node("method:1", M, "Graph Index", "method:0");
  tax_node("method:2", M, "Quantization", "method:0");
  tax_node("method:3", M, "Tree Partitioning", "method:0");
  struct P3 {
    std::string id;
    int year;
    std::vector<std::pair<int, int>> hist;
    std::string problem, method;
  };
  const std::vector<P3> papers = {
      {"t1", 2016, {{2016, 5}, {2017, 8}, {2018, 10}, {2019, 30}, {2020, 60}, {2021, 90}, {2022, 120}}, "problem:1", "method:1"},
      {"t2", 2018, {{2018, 10}, {2019, 25}, {2020, 30}, {2021, 35}}, "problem:1", "method:2"},
      {"t3", 2019, {{2019, 3}, {2020, 9}, {2021, 12}, {2022, 14}}, "problem:4", "method:1"},
      {"t4", 2020, {{2020, 4}, {2021, 4}, {2022, 5}}, "problem:5", "method:1"},
      {"t5", 2021, {{2021, 2}, {2022, 7}, {2023, 20}}, "problem:3", "method:3"},
      {"t6", 2022, {{2022, 1}, {2023, 3}}, "problem:1", "method:1"},
      {"t7", 2023, {{2023, 6}, {2024, 9}}, "problem:4", "method:2"},
      {"t8", 2017, {{2017, 40}, {2018, 35}, {2019, 30}, {2020, 20}}, "problem:3", "method:2"},
  };
  for (const auto& p : papers) {
    std::vector<int> years, counts;
    std::int64_t total = 0;
    for (auto [y, c] : p.hist) {
      years.push_back(y);
      counts.push_back(c);
      total += c;
    }
    g.add_node({p.id, kg::NodeKind::Paper,
                {{"title", "Paper " + p.id}, {"authors", json::array()}, {"publication_year", p.year},
                 {"citation_count", total}, {"citation_years", years}, {"citation_counts", counts}},
                std::nullopt});
    g.add_edge(p.id, p.problem, kg::EdgeKind::ADDRESSES);
    g.add_edge(p.id, p.method, kg::EdgeKind::APPLIES);
  }
  return g;
}

fs::path evidence_file() { return data_dir() / "evidence.json"; }

void script_tier3(ScriptedProvider& p) {
  p.on("pipelines.query_variants", [](const PromptRequest& r) {
    auto name = r.payload.at("name").get<std::string>();
    json v = json::array({to_lower(name)});
    if (name == "KNN Retrieval") v.push_back("k-nearest neighbor search");
    if (name == "Range Search") v.push_back("radius search");
    return reply({{"variants", v}});
  });
  p.on("pipelines.trend", [](const PromptRequest& r) {
    std::vector<std::pair<std::int64_t, std::string>> totals;
    for (const auto& l : r.payload.at("leaves")) {
      std::int64_t t = 0;
      for (const auto& [y, c] : l.at("counts").items()) t += c.get<std::int64_t>();
      totals.push_back({-t, l.at("node_id").get<std::string>()});
    }
    std::sort(totals.begin(), totals.end());
    json ranking = json::array();
    for (const auto& [t, id] : totals) {
      ranking.push_back({{"node_id", id}, {"narrative", std::to_string(-t) + " publications in the window"}});
    }
    return reply({{"ranking", ranking}, {"summary", "Ranked by publication volume."}});
  });
  p.on("pipelines.idea_score", [](const PromptRequest& r) {
    auto key = r.payload.at("problem").value("id", "") + "|" + r.payload.at("method").value("id", "");
    return reply({{"score", static_cast<double>(h64(key) % 101) / 100.0}});
  });
  p.on("pipelines.idea_proposal", [](const PromptRequest& r) {
    auto pn = r.payload.at("problem").value("name", "?"), mn = r.payload.at("method").value("name", "?");
    return reply({{"motivation", pn + " lacks " + mn + " solutions."},
                  {"feasibility", "Existing " + mn + " code bases apply."},
                  {"novelty", "No paper in the corpus combines them."},
                  {"contributions", "A " + mn + " design for " + pn + "."}});
  });
  p.on("pipelines.milestone", [](const PromptRequest& r) {
    return "Milestone: " + r.payload.dump().substr(0, 40);
  });
}

}  // namespace scholar::fixtures
