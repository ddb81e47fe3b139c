#include "scholar/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace scholar::pipelines {

using ops::OperatorResult;
using ops::PayloadKind;

namespace {

json series_json(const std::map<int, std::int64_t>& m) {
  json j = json::object();
  for (const auto& [y, v] : m) j[std::to_string(y)] = v;
  return j;
}

std::map<int, std::int64_t> series_from_json(const json& j) {
  std::map<int, std::int64_t> m;
  for (auto it = j.begin(); it != j.end(); ++it) m[std::stoi(it.key())] = it.value().get<std::int64_t>();
  return m;
}

std::vector<std::string> sorted_children(const kg::Graph& g, const std::string& id) {
  std::vector<std::string> out;
  auto kind = g.at(id).kind;
  for (const auto& c : g.neighbors(id, kg::EdgeKind::CHILD_OF, kg::Direction::In, kind)) out.push_back(c.id);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> subtree(const kg::Graph& g, const std::string& root) {
  std::vector<std::string> out, stack{root};
  while (!stack.empty()) {
    auto id = stack.back();
    stack.pop_back();
    out.push_back(id);
    auto ch = sorted_children(g, id);
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

bool is_taxonomy_node(kg::NodeKind k) { return k == kg::NodeKind::ProblemNode || k == kg::NodeKind::MethodNode; }

std::vector<std::string> leaves_under(const kg::Graph& g, const std::vector<std::string>& ids) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& id : ids) {
    auto n = g.get(id);
    if (!n || !is_taxonomy_node(n->kind)) continue;
    for (const auto& s : subtree(g, id)) {
      if (sorted_children(g, s).empty() && seen.insert(s).second) out.push_back(s);
    }
  }
  return out;
}

// Least-squares slope of (x, y) pairs; 0 for fewer than two points.
double slope(const std::vector<std::pair<double, double>>& pts) {
  if (pts.size() < 2) return 0.0;
  double mx = 0, my = 0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double num = 0, den = 0;
  for (const auto& [x, y] : pts) {
    num += (x - mx) * (y - my);
    den += (x - mx) * (x - mx);
  }
  return den == 0 ? 0.0 : num / den;
}

void min_max(std::vector<double>& v) {
  if (v.empty()) return;
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  double a = *lo, b = *hi;
  for (auto& x : v) x = b > a ? (x - a) / (b - a) : 0.0;
}

std::vector<std::pair<int, std::int64_t>> citation_series(const json& attrs) {
  std::vector<std::pair<int, std::int64_t>> s;
  auto ys = attrs.value("citation_years", json::array());
  auto cs = attrs.value("citation_counts", json::array());
  for (std::size_t i = 0; i < std::min(ys.size(), cs.size()); ++i) {
    s.push_back({ys[i].get<int>(), cs[i].get<std::int64_t>()});
  }
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

// ---------------------------------------------------------------- evidence

json EvidenceRecord::to_json() const {
  return json{{"node", key}, {"year", year}, {"count", count}, {"citations", citations}};
}

EvidenceRecord EvidenceRecord::from_json(const json& j) {
  EvidenceRecord r;
  if (j.contains("node")) r.key = j["node"].get<std::string>();
  else if (j.contains("query")) r.key = j["query"].get<std::string>();
  else throw Error(ErrorCode::InvalidArgument, "evidence record needs node or query");
  r.year = j.at("year").get<int>();
  r.count = j.value("count", std::int64_t{0});
  r.citations = j.value("citations", std::int64_t{0});
  if (r.count < 0 || r.citations < 0) throw Error(ErrorCode::InvalidArgument, "evidence counts must be >= 0");
  return r;
}

FixtureEvidenceSource FixtureEvidenceSource::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read evidence file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "evidence file " + path.string() + ": " + e.what());
  }
  if (j.is_object()) j = j.value("records", json::array());
  std::vector<EvidenceRecord> rs;
  for (const auto& r : j) rs.push_back(EvidenceRecord::from_json(r));
  return FixtureEvidenceSource(std::move(rs));
}

std::vector<EvidenceRecord> FixtureEvidenceSource::query(const std::string& key) {
  auto k = to_lower(trim(key));
  std::vector<EvidenceRecord> out;
  for (const auto& r : records_) {
    if (to_lower(trim(r.key)) == k) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------- trends

json TrendLeaf::to_json() const {
  std::int64_t total = 0;
  for (const auto& [y, c] : counts) total += c;
  return json{{"node_id", node_id},       {"name", name},           {"counts", series_json(counts)},
              {"citations", series_json(citations)}, {"total", total}, {"rank", rank},
              {"narrative", narrative},   {"degraded", degraded}};
}

TrendLeaf TrendLeaf::from_json(const json& j) {
  TrendLeaf l;
  l.node_id = j.at("node_id").get<std::string>();
  l.name = j.value("name", "");
  l.counts = series_from_json(j.value("counts", json::object()));
  l.citations = series_from_json(j.value("citations", json::object()));
  l.rank = j.value("rank", 0);
  l.narrative = j.value("narrative", "");
  l.degraded = j.value("degraded", false);
  return l;
}

json TrendReport::to_json() const {
  json ls = json::array();
  for (const auto& l : leaves) ls.push_back(l.to_json());
  return json{{"leaves", ls}, {"summary", summary}};
}

TrendReport TrendReport::from_json(const json& j) {
  TrendReport r;
  for (const auto& l : j.value("leaves", json::array())) r.leaves.push_back(TrendLeaf::from_json(l));
  r.summary = j.value("summary", "");
  return r;
}

TrendReport trend_analysis(const kg::Graph& graph, const std::vector<std::string>& node_ids,
                           EvidenceSource& evidence, llm::LlmClient& llm, TrendOptions opt) {
  auto leaf_ids = leaves_under(graph, node_ids);
  if (leaf_ids.empty()) throw Error(ErrorCode::ArtifactMissing, "trend analysis: no taxonomy leaves under the input");
  std::vector<TrendLeaf> leaves;
  json payload = json::array();
  for (const auto& id : leaf_ids) {
    TrendLeaf l;
    l.node_id = id;
    l.name = graph.at(id).attrs.value("name", id);
    std::vector<std::string> keys{l.name};
    if (opt.expand_variants) {
      auto v = llm.complete_structured("pipelines.query_variants",
                                       "You expand research topic names into equivalent search phrasings.",
                                       "List alternative phrasings of this topic.",
                                       json{{"name", l.name}, {"description", graph.at(id).attrs.value("description", "")}},
                                       "query_variants");
      for (const auto& s : v["variants"]) {
        auto t = s.get<std::string>();
        if (std::none_of(keys.begin(), keys.end(), [&](const auto& k) { return to_lower(k) == to_lower(t); })) {
          keys.push_back(t);
        }
      }
    }
    try {
      for (const auto& k : keys) {
        for (const auto& r : evidence.query(k)) {
          l.counts[r.year] += r.count;
          l.citations[r.year] += r.citations;
        }
      }
    } catch (const std::exception&) {
      l.counts.clear();
      l.citations.clear();
      l.degraded = true;
    }
    payload.push_back({{"node_id", id}, {"name", l.name}, {"counts", series_json(l.counts)},
                       {"citations", series_json(l.citations)}});
    leaves.push_back(std::move(l));
  }
  auto resp = llm.complete_structured(
      "pipelines.trend", "You analyse research trends from publication and citation series.",
      "Rank the subtopics by research momentum (publication growth, citation velocity) and give a short "
      "narrative for each.",
      json{{"leaves", payload}}, "trend_ranking");
  std::vector<std::string> order;
  std::map<std::string, std::string> narrative;
  std::set<std::string> known(leaf_ids.begin(), leaf_ids.end());
  for (const auto& r : resp["ranking"]) {
    auto id = r["node_id"].get<std::string>();
    if (!known.count(id) || narrative.count(id)) continue;
    narrative[id] = r["narrative"].get<std::string>();
    order.push_back(id);
  }
  for (const auto& id : leaf_ids) {
    if (!narrative.count(id)) order.push_back(id);
  }
  TrendReport rep;
  rep.summary = resp.value("summary", "");
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto it = std::find_if(leaves.begin(), leaves.end(), [&](const auto& l) { return l.node_id == order[i]; });
    it->rank = static_cast<int>(i) + 1;
    it->narrative = narrative.count(order[i]) ? narrative[order[i]] : "";
    rep.leaves.push_back(*it);
  }
  if (opt.k > 0 && static_cast<int>(rep.leaves.size()) > opt.k) rep.leaves.resize(static_cast<std::size_t>(opt.k));
  return rep;
}

// ---------------------------------------------------------------- ideas

json IdeaProposal::to_json() const {
  return json{{"problem_id", problem_id},     {"method_id", method_id},       {"problem_name", problem_name},
              {"method_name", method_name},   {"raw_score", raw_score},       {"stage1_score", stage1_score},
              {"proposal", proposal}};
}

json IdeaReport::to_json() const {
  json cs = json::array(), ps = json::array();
  for (const auto& c : candidates) cs.push_back(c.to_json());
  for (const auto& p : proposals) ps.push_back(p.to_json());
  return json{{"unexplored", unexplored}, {"candidates", cs}, {"proposals", ps}};
}

IdeaReport idea_exploration(const OperatorResult& matrix, llm::LlmClient& llm, IdeaOptions opt) {
  if (matrix.kind != PayloadKind::Matrix) throw Error(ErrorCode::KindIncompatible, "idea exploration needs a Matrix");
  if (opt.k < 1) throw Error(ErrorCode::InvalidArgument, "idea exploration: k must be >= 1");
  std::map<std::string, json> refs;
  for (const auto& r : matrix.value.value("rows", json::array())) refs[r.value("id", "")] = r;
  for (const auto& c : matrix.value.value("cols", json::array())) refs[c.value("id", "")] = c;
  auto ref = [&](const std::string& id) { return refs.count(id) ? refs[id] : json{{"id", id}}; };

  IdeaReport rep;
  for (const auto& cell : matrix.value.value("cells", json::array())) {
    if (cell.value("count", 0) >= opt.sparsity_threshold) continue;
    IdeaProposal p;
    p.problem_id = cell.value("row", "");
    p.method_id = cell.value("col", "");
    auto pr = ref(p.problem_id), mr = ref(p.method_id);
    p.problem_name = pr.value("name", p.problem_id);
    p.method_name = mr.value("name", p.method_id);
    auto s = llm.complete_structured(
        "pipelines.idea_score", "You judge whether a method family could address a research problem.",
        "Score from 0 to 1 how promising it is to apply this method to this problem.",
        json{{"problem", pr}, {"method", mr}}, "idea_score");
    p.raw_score = s["score"].get<double>();
    rep.candidates.push_back(std::move(p));
  }
  rep.unexplored = static_cast<int>(rep.candidates.size());
  double total = 0.0;
  for (const auto& c : rep.candidates) total += c.raw_score;
  for (auto& c : rep.candidates) {
    c.stage1_score = total > 0 ? c.raw_score / total : 1.0 / static_cast<double>(rep.candidates.size());
  }
  std::vector<IdeaProposal> ranked = rep.candidates;
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.stage1_score != b.stage1_score) return a.stage1_score > b.stage1_score;
    return std::tie(a.problem_id, a.method_id) < std::tie(b.problem_id, b.method_id);
  });
  if (static_cast<int>(ranked.size()) > opt.k) ranked.resize(static_cast<std::size_t>(opt.k));
  for (auto& p : ranked) {
    p.proposal = llm.complete_structured(
        "pipelines.idea_proposal", "You write structured research proposals.",
        "Write a research proposal applying the method to the problem.",
        json{{"problem", ref(p.problem_id)}, {"method", ref(p.method_id)}, {"score", p.stage1_score}},
        "idea_proposal");
    rep.proposals.push_back(p);
  }
  return rep;
}

// ---------------------------------------------------------------- milestones

json MilestoneScore::to_json() const {
  return json{{"paper_id", paper_id},
              {"title", title},
              {"year", year ? json(*year) : json(nullptr)},
              {"dimensions",
               {{"citations", citations},
                {"problem_novelty", problem_novelty},
                {"method_novelty", method_novelty},
                {"impact", impact}}},
              {"delayed_boost", delayed_boost},
              {"composite", composite},
              {"rank", rank},
              {"summary", summary}};
}

json milestone_list_json(const std::vector<MilestoneScore>& ms) {
  json a = json::array();
  for (const auto& m : ms) a.push_back(m.to_json());
  return json{{"milestones", a}};
}

std::vector<std::string> topic_papers(const kg::Graph& graph, const std::vector<std::string>& ids) {
  std::set<std::string> out;
  for (const auto& id : ids) {
    auto n = graph.get(id);
    if (!n) continue;
    if (n->kind == kg::NodeKind::Paper) {
      out.insert(id);
    } else if (is_taxonomy_node(n->kind)) {
      auto ek = n->kind == kg::NodeKind::ProblemNode ? kg::EdgeKind::ADDRESSES : kg::EdgeKind::APPLIES;
      for (const auto& s : subtree(graph, id)) {
        for (const auto& p : graph.neighbors(s, ek, kg::Direction::In, kg::NodeKind::Paper)) out.insert(p.id);
      }
    }
  }
  return {out.begin(), out.end()};
}

std::vector<MilestoneScore> milestone_scores(const kg::Graph& graph, const std::vector<std::string>& paper_ids) {
  if (paper_ids.empty()) throw Error(ErrorCode::Precondition, "milestone selection: topic has no papers");
  std::vector<MilestoneScore> out;
  std::vector<double> cit, pn, mn, imp;
  auto novelty = [&](const std::string& pid, std::optional<int> year, kg::EdgeKind ek, kg::NodeKind nk) {
    double best = 0.0;
    for (const auto& node : graph.neighbors(pid, ek, kg::Direction::Out, nk)) {
      auto peers = graph.neighbors(node.id, ek, kg::Direction::In, kg::NodeKind::Paper);
      std::size_t others = 0, earlier = 0;
      for (const auto& q : peers) {
        if (q.id == pid) continue;
        ++others;
        auto qy = q.attrs.contains("publication_year") && q.attrs["publication_year"].is_number_integer()
                      ? std::optional<int>(q.attrs["publication_year"].get<int>())
                      : std::nullopt;
        if (year && qy && *qy < *year) ++earlier;
      }
      double v = others == 0 ? 1.0 : 1.0 - static_cast<double>(earlier) / static_cast<double>(others);
      best = std::max(best, v);
    }
    return best;
  };
  for (const auto& pid : paper_ids) {
    auto n = graph.get(pid);
    if (!n || n->kind != kg::NodeKind::Paper) throw Error(ErrorCode::NotFound, "milestone: not a paper: " + pid);
    MilestoneScore m;
    m.paper_id = pid;
    m.title = n->attrs.value("title", pid);
    if (n->attrs.contains("publication_year") && n->attrs["publication_year"].is_number_integer()) {
      m.year = n->attrs["publication_year"].get<int>();
    }
    auto series = citation_series(n->attrs);
    double c = 0.0;
    if (n->attrs.contains("citation_count") && n->attrs["citation_count"].is_number()) {
      c = n->attrs["citation_count"].get<double>();
    } else {
      for (const auto& [y, v] : series) c += static_cast<double>(v);
    }
    cit.push_back(c);
    pn.push_back(novelty(pid, m.year, kg::EdgeKind::ADDRESSES, kg::NodeKind::ProblemNode));
    mn.push_back(novelty(pid, m.year, kg::EdgeKind::APPLIES, kg::NodeKind::MethodNode));
    // Early influence + sustained momentum.
    std::vector<std::pair<double, double>> first, last;
    for (std::size_t i = 0; i < series.size(); ++i) {
      std::pair<double, double> pt{static_cast<double>(series[i].first), static_cast<double>(series[i].second)};
      if (i < 3) first.push_back(pt);
      if (i + 3 >= series.size()) last.push_back(pt);
    }
    imp.push_back(slope(first) + slope(last));
    if (m.year && !series.empty()) {
      auto peak = *std::max_element(series.begin(), series.end(),
                                    [](const auto& a, const auto& b) { return a.second < b.second; });
      double mean3 = 0.0;
      std::size_t n3 = std::min<std::size_t>(3, series.size());
      for (std::size_t i = 0; i < n3; ++i) mean3 += static_cast<double>(series[i].second);
      mean3 /= static_cast<double>(n3);
      if (peak.first - *m.year >= 5 && static_cast<double>(peak.second) >= 2.0 * mean3) m.delayed_boost = kDelayedBoost;
    }
    out.push_back(std::move(m));
  }
  min_max(cit);
  min_max(pn);
  min_max(mn);
  min_max(imp);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& m = out[i];
    m.citations = cit[i];
    m.problem_novelty = pn[i];
    m.method_novelty = mn[i];
    m.impact = imp[i];
    m.composite = kMilestoneWeight * (m.citations + m.problem_novelty + m.method_novelty + m.impact) + m.delayed_boost;
  }
  // Quantized so that scale-equivalent inputs tie exactly.
  auto q = [](double x) { return std::llround(x * 1e9); };
  std::sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
    if (q(a.composite) != q(b.composite)) return q(a.composite) > q(b.composite);
    return a.paper_id < b.paper_id;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i) + 1;
  return out;
}

std::vector<MilestoneScore> milestone_selection(const kg::Graph& graph, const std::vector<std::string>& paper_ids,
                                                int k, llm::LlmClient* llm) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "milestone selection: k must be >= 1");
  auto all = milestone_scores(graph, paper_ids);
  if (static_cast<int>(all.size()) > k) all.resize(static_cast<std::size_t>(k));
  if (llm) {
    for (auto& m : all) {
      auto n = graph.at(m.paper_id);
      m.summary = llm->complete_text(
          "pipelines.milestone", "You write concise summaries of landmark research papers.",
          "Summarize why this paper is a milestone in two sentences.",
          json{{"paper_id", m.paper_id}, {"title", m.title}, {"year", m.year ? json(*m.year) : json(nullptr)},
               {"score", m.to_json()}});
    }
  }
  return all;
}

// ---------------------------------------------------------------- registry

namespace {

int k_param(const json& p, int def) { return p.contains("k") && p["k"].is_number_integer() ? p["k"].get<int>() : def; }

std::vector<std::string> ids_of(const std::vector<OperatorResult>& inputs) {
  std::vector<std::string> ids;
  for (const auto& r : inputs) {
    for (const auto& id : ops::entity_ids(r)) {
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
  }
  return ids;
}

}  // namespace

void register_operators(ops::Registry& registry, Resources res) {
  auto evidence = res.evidence;
  registry.add("TrendAnalysis", [evidence](const json& p, const std::vector<OperatorResult>& inputs,
                                           ops::OperatorContext& ctx) {
    if (!evidence) throw Error(ErrorCode::ArtifactMissing, "TrendAnalysis: no evidence source configured");
    auto ids = ids_of(inputs);
    if (ids.empty()) return ops::empty_result(PayloadKind::StructuredRecord);
    TrendOptions opt;
    opt.k = k_param(p, 0);
    opt.expand_variants = p.value("expand_variants", false);
    auto rep = trend_analysis(ctx.g(), ids, *evidence, ctx.client(), opt);
    std::vector<std::string> prov;
    for (const auto& l : rep.leaves) prov.push_back(l.node_id);
    return ops::make_result(PayloadKind::StructuredRecord, rep.to_json(), prov);
  });
  const int threshold = res.sparsity_threshold;
  registry.add("IdeaExploration", [threshold](const json& p, const std::vector<OperatorResult>& inputs,
                                              ops::OperatorContext& ctx) {
    if (inputs.size() != 1) throw Error(ErrorCode::InvalidArgument, "IdeaExploration takes one Matrix");
    IdeaOptions opt;
    opt.k = k_param(p, 3);
    opt.sparsity_threshold = threshold;
    auto rep = idea_exploration(inputs[0], ctx.client(), opt);
    std::vector<std::string> prov;
    for (const auto& c : rep.proposals) {
      prov.push_back(c.problem_id);
      prov.push_back(c.method_id);
    }
    if (prov.empty()) prov = inputs[0].provenance;
    if (prov.empty()) prov.push_back("matrix");
    return ops::make_result(PayloadKind::StructuredRecord, rep.to_json(), prov);
  });
  registry.add("MilestoneSelection", [](const json& p, const std::vector<OperatorResult>& inputs,
                                        ops::OperatorContext& ctx) {
    auto papers = topic_papers(ctx.g(), ids_of(inputs));
    if (papers.empty()) return ops::empty_result(PayloadKind::Ranking);
    auto ms = milestone_selection(ctx.g(), papers, k_param(p, 5), ctx.llm);
    json ranking = json::array();
    std::vector<std::string> prov;
    for (const auto& m : ms) {
      ranking.push_back({{"entity", m.paper_id},
                         {"value", m.composite},
                         {"source", m.paper_id},
                         {"annotation", m.summary},
                         {"rank", m.rank},
                         {"milestone", m.to_json()}});
      prov.push_back(m.paper_id);
    }
    return ops::make_result(PayloadKind::Ranking, json{{"ranking", ranking}}, prov);
  });
}

}  // namespace scholar::pipelines
