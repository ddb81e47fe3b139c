#include "scholar/retrieval.hpp"

#include "scholar/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>

namespace scholar::retrieval {

namespace {

constexpr std::pair<MetadataField, std::string_view> kFieldNames[] = {
    {MetadataField::Title, "title"},
    {MetadataField::Authors, "authors"},
    {MetadataField::Affiliations, "affiliations"},
    {MetadataField::PublicationYear, "publication_year"},
    {MetadataField::Venue, "venue"},
};

constexpr std::pair<Aspect, std::string_view> kAspectNames[] = {
    {Aspect::ResearchTopic, "research_topic"},
    {Aspect::ProblemFormulation, "problem_formulation"},
    {Aspect::ProposedMethod, "proposed_method"},
    {Aspect::ExperimentalDatasets, "experimental_datasets"},
    {Aspect::ExperimentalBaselines, "experimental_baselines"},
    {Aspect::ExperimentalResults, "experimental_results"},
};

bool better(const std::pair<std::string, double>& a, const std::pair<std::string, double>& b) {
  if (a.second != b.second) return a.second > b.second;
  return a.first < b.first;
}

ScoreList top_k(ScoreList all, std::size_t k) {
  std::sort(all.begin(), all.end(), better);
  if (all.size() > k) all.resize(k);
  return all;
}

std::string join_list(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  std::string out;
  if (v.is_array()) {
    for (const auto& x : v) {
      if (!out.empty()) out += " ";
      out += x.is_string() ? x.get<std::string>() : x.dump();
    }
  }
  return out;
}

std::vector<double> mean_unit(const std::vector<std::vector<double>>& vs) {
  std::vector<double> out(vs.front().size(), 0.0);
  for (const auto& v : vs) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  }
  double n = 0.0;
  for (double x : out) n += x * x;
  n = std::sqrt(n);
  if (n > 0) {
    for (double& x : out) x /= n;
  }
  return out;
}

std::string excerpt(const std::string& s, std::size_t n = 400) { return s.size() <= n ? s : s.substr(0, n) + "..."; }

}  // namespace

std::string_view to_string(MetadataField f) {
  for (const auto& [k, v] : kFieldNames) {
    if (k == f) return v;
  }
  return "?";
}

std::string_view to_string(Aspect a) {
  for (const auto& [k, v] : kAspectNames) {
    if (k == a) return v;
  }
  return "?";
}

MetadataField metadata_field_from_string(std::string_view s) {
  for (const auto& [k, v] : kFieldNames) {
    if (v == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown metadata field: " + std::string(s));
}

Aspect aspect_from_string(std::string_view s) {
  for (const auto& [k, v] : kAspectNames) {
    if (v == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown research aspect: " + std::string(s));
}

// ---------------------------------------------------------------- years

bool YearRange::admits(std::optional<int> year) const noexcept {
  if (!year) return true;
  if (min && *year < *min) return false;
  if (max && *year > *max) return false;
  return true;
}

YearRange YearRange::intersect(const YearRange& o) const {
  YearRange r = *this;
  if (o.min) r.min = r.min ? std::max(*r.min, *o.min) : *o.min;
  if (o.max) r.max = r.max ? std::min(*r.max, *o.max) : *o.max;
  return r;
}

json YearRange::to_json() const {
  return json{{"min", min ? json(*min) : json(nullptr)}, {"max", max ? json(*max) : json(nullptr)}};
}

std::optional<YearRange> parse_year_expression(std::string_view text) {
  std::string s = to_lower(trim(text));
  std::smatch m;
  static const std::regex since(R"(^(since|from|after|>=|>)\s*(\d{4})$)");
  static const std::regex until(R"(^(before|until|up to|<=|<)\s*(\d{4})$)");
  static const std::regex range(R"(^(\d{4})\s*(-|to|\.\.)\s*(\d{4})$)");
  static const std::regex single(R"(^(in\s+)?(\d{4})$)");
  if (std::regex_match(s, m, since)) {
    int y = std::stoi(m[2]);
    if (m[1] == "after" || m[1] == ">") ++y;
    return YearRange{y, std::nullopt};
  }
  if (std::regex_match(s, m, until)) {
    int y = std::stoi(m[2]);
    if (m[1] == "before" || m[1] == "<") --y;
    return YearRange{std::nullopt, y};
  }
  if (std::regex_match(s, m, range)) return YearRange{std::stoi(m[1]), std::stoi(m[3])};
  if (std::regex_match(s, m, single)) {
    int y = std::stoi(m[2]);
    return YearRange{y, y};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- query

void DecomposedQuery::validate() const {
  if (metadata_constraints.empty() && aspect_intents.empty()) {
    throw Error(ErrorCode::InvalidArgument, "decomposed query has neither constraints nor intents");
  }
  for (const auto& c : metadata_constraints) {
    if (c.field == MetadataField::PublicationYear) {
      if (c.years.min && c.years.max && *c.years.min > *c.years.max) {
        throw Error(ErrorCode::InvalidArgument, "empty year range");
      }
    } else if (trim(c.value).empty()) {
      throw Error(ErrorCode::InvalidArgument, "empty value for " + std::string(to_string(c.field)));
    }
  }
}

YearRange DecomposedQuery::year_range() const {
  YearRange r;
  for (const auto& c : metadata_constraints) {
    if (c.field == MetadataField::PublicationYear) r = r.intersect(c.years);
  }
  return r;
}

json DecomposedQuery::to_json() const {
  json cs = json::array();
  for (const auto& c : metadata_constraints) {
    json j{{"field", to_string(c.field)}};
    if (c.field == MetadataField::PublicationYear) {
      j["year_min"] = c.years.min ? json(*c.years.min) : json(nullptr);
      j["year_max"] = c.years.max ? json(*c.years.max) : json(nullptr);
    } else {
      j["value"] = c.value;
    }
    cs.push_back(j);
  }
  json is = json::array();
  for (const auto& i : aspect_intents) is.push_back({{"aspect", to_string(i.aspect)}, {"text", i.text}});
  return json{{"metadata_constraints", cs}, {"aspect_intents", is}};
}

DecomposedQuery DecomposedQuery::from_json(const json& j) {
  DecomposedQuery q;
  for (const auto& c : j.at("metadata_constraints")) {
    MetadataConstraint mc;
    mc.field = metadata_field_from_string(c.at("field").get<std::string>());
    std::string value = c.contains("value") && c["value"].is_string() ? c["value"].get<std::string>() : "";
    if (mc.field == MetadataField::PublicationYear) {
      if (c.contains("year_min") && c["year_min"].is_number_integer()) mc.years.min = c["year_min"].get<int>();
      if (c.contains("year_max") && c["year_max"].is_number_integer()) mc.years.max = c["year_max"].get<int>();
      if (mc.years.unbounded() && !value.empty()) {
        auto parsed = parse_year_expression(value);
        if (!parsed) throw Error(ErrorCode::InvalidArgument, "unparseable year expression: " + value);
        mc.years = *parsed;
      }
      mc.value = value;
    } else {
      mc.value = value;
    }
    q.metadata_constraints.push_back(std::move(mc));
  }
  for (const auto& i : j.at("aspect_intents")) {
    q.aspect_intents.push_back({aspect_from_string(i.at("aspect").get<std::string>()), i.at("text").get<std::string>()});
  }
  return q;
}

json ScoredCandidate::to_json() const {
  return json{{"paper_id", paper_id}, {"group_scores", group_scores}, {"combined", combined}};
}

void RetrievalConfig::validate() const {
  if (candidates_per_query <= 0) throw Error(ErrorCode::InvalidArgument, "candidates_per_query must be positive");
  if (top_k <= 0) throw Error(ErrorCode::InvalidArgument, "top_k must be positive");
}

json RetrievalConfig::to_json() const { return json{{"candidates_per_query", candidates_per_query}, {"top_k", top_k}}; }

RetrievalConfig RetrievalConfig::from_json(const json& j) {
  RetrievalConfig c;
  c.candidates_per_query = j.value("candidates_per_query", c.candidates_per_query);
  c.top_k = j.value("top_k", c.top_k);
  c.validate();
  return c;
}

DecomposedQuery decompose_query(const std::string& q, llm::LlmClient& llm) {
  if (trim(q).empty()) throw Error(ErrorCode::InvalidArgument, "empty query");
  auto out = llm.complete_structured(
      "retrieval.decompose", "You parse literature search queries into structured constraints.",
      "Split the query into metadata constraints over {title, authors, affiliations, publication_year, "
      "venue} and semantic intents over {research_topic, problem_formulation, proposed_method, "
      "experimental_datasets, experimental_baselines, experimental_results}. Express year conditions "
      "as closed ranges with year_min/year_max (null for an open end).",
      json{{"query", q}}, "decomposed_query");
  DecomposedQuery d;
  try {
    d = DecomposedQuery::from_json(out);
    d.validate();
  } catch (const SchemaViolation&) {
    throw;
  } catch (const Error& e) {
    throw SchemaViolation(std::string("decomposed query: ") + e.what(), out.dump());
  }
  return d;
}

std::vector<std::string> temporal_filter(const std::vector<PaperYear>& papers, const YearRange& range) {
  std::vector<std::string> out;
  for (const auto& p : papers) {
    if (range.admits(p.year)) out.push_back(p.paper_id);
  }
  return out;
}

// ---------------------------------------------------------------- bm25

void Bm25Index::add(const std::string& doc_id, const std::string& field, std::string_view text) {
  auto& f = fields_[field];
  if (f.length.count(doc_id)) throw Error(ErrorCode::DuplicateId, "bm25: document indexed twice: " + doc_id);
  auto toks = tokenize(text);
  auto& tf = f.tf[doc_id];
  for (const auto& t : toks) ++tf[t];
  for (const auto& [t, c] : tf) ++f.df[t];
  f.length[doc_id] = toks.size();
  f.total_length += static_cast<double>(toks.size());
}

ScoreList Bm25Index::search(const std::string& field, std::string_view query, std::size_t k,
                            const std::set<std::string>* allowed) const {
  auto it = fields_.find(field);
  if (it == fields_.end()) throw Error(ErrorCode::InvalidArgument, "bm25: unknown field " + field);
  const auto& f = it->second;
  if (k == 0 || f.length.empty()) return {};
  const double n = static_cast<double>(f.length.size());
  const double avgdl = f.total_length / n;
  auto qtoks = tokenize(query);
  ScoreList all;
  for (const auto& [doc, tf] : f.tf) {
    if (allowed && !allowed->count(doc)) continue;
    double score = 0.0;
    bool hit = false;
    const double dl = static_cast<double>(f.length.at(doc));
    for (const auto& t : qtoks) {
      auto ti = tf.find(t);
      if (ti == tf.end()) continue;
      hit = true;
      const double df = static_cast<double>(f.df.at(t));
      const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
      const double c = ti->second;
      score += idf * c * (kK1 + 1.0) / (c + kK1 * (1.0 - kB + kB * dl / (avgdl > 0 ? avgdl : 1.0)));
    }
    if (hit) all.emplace_back(doc, score);
  }
  return top_k(std::move(all), k);
}

// ---------------------------------------------------------------- dense

void DenseIndex::add(Aspect aspect, const std::string& doc_id, std::vector<double> vec) {
  vecs_[aspect][doc_id] = std::move(vec);
}

bool DenseIndex::has(Aspect aspect) const {
  auto it = vecs_.find(aspect);
  return it != vecs_.end() && !it->second.empty();
}

std::size_t DenseIndex::size(Aspect aspect) const {
  auto it = vecs_.find(aspect);
  return it == vecs_.end() ? 0 : it->second.size();
}

ScoreList DenseIndex::search(Aspect aspect, const std::vector<double>& query, std::size_t k,
                             const std::set<std::string>* allowed) const {
  if (!has(aspect)) {
    throw Error(ErrorCode::NotFound, "dense: no embeddings indexed for aspect " + std::string(to_string(aspect)));
  }
  if (k == 0) return {};
  ScoreList all;
  for (const auto& [doc, v] : vecs_.at(aspect)) {
    if (allowed && !allowed->count(doc)) continue;
    all.emplace_back(doc, cosine(query, v));
  }
  return top_k(std::move(all), k);
}

// ---------------------------------------------------------------- aggregation

std::vector<ScoredCandidate> aggregate_scores(const std::vector<ScoreSource>& sources) {
  std::map<std::string, std::vector<std::map<std::string, double>>> groups;
  std::set<std::string> ids;
  for (const auto& s : sources) {
    if (s.scores.empty()) continue;
    if (s.group != "lexical" && s.group != "semantic") {
      throw Error(ErrorCode::InvalidArgument, "unknown score group: " + s.group);
    }
    double lo = s.scores.front().second, hi = lo;
    for (const auto& [id, v] : s.scores) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite score for " + id);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    std::map<std::string, double> norm;
    for (const auto& [id, v] : s.scores) {
      norm[id] = hi > lo ? (v - lo) / (hi - lo) : 1.0;
      ids.insert(id);
    }
    groups[s.group].push_back(std::move(norm));
  }
  if (groups.empty()) throw Error(ErrorCode::InvalidArgument, "aggregate_scores: no non-empty source");
  std::vector<ScoredCandidate> out;
  for (const auto& id : ids) {
    ScoredCandidate c;
    c.paper_id = id;
    double sum = 0.0;
    for (const auto& [g, normed] : groups) {
      double gs = 0.0;
      for (const auto& m : normed) {
        auto it = m.find(id);
        if (it != m.end()) gs += it->second;
      }
      gs /= static_cast<double>(normed.size());
      c.group_scores[g] = gs;
      sum += gs;
    }
    c.combined = sum / static_cast<double>(groups.size());
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.combined != b.combined) return a.combined > b.combined;
    return a.paper_id < b.paper_id;
  });
  return out;
}

// ---------------------------------------------------------------- rerank

std::vector<std::string> rerank(const std::string& q, const std::vector<RerankCandidate>& candidates, int top_k,
                                llm::LlmClient& llm) {
  if (candidates.empty()) throw Error(ErrorCode::Precondition, "rerank: no candidates");
  if (top_k <= 0) throw Error(ErrorCode::InvalidArgument, "rerank: top_k must be positive");
  json cj = json::array();
  std::set<std::string> ids;
  for (const auto& c : candidates) {
    cj.push_back({{"paper_id", c.paper_id}, {"summary", c.summary}});
    ids.insert(c.paper_id);
  }
  auto out = llm.complete_structured(
      "retrieval.rerank", "You rerank candidate papers for a literature search query.",
      "Order the candidates by relevance to the query, dropping candidates that are plausible but not "
      "actually relevant. Use only the given paper ids. Return {\"ranking\": [paper_id, ...]}.",
      json{{"query", q}, {"top_k", top_k}, {"candidates", cj}}, "rerank");
  std::vector<std::string> ranked;
  std::set<std::string> seen;
  for (const auto& v : out.at("ranking")) {
    auto id = v.get<std::string>();
    if (!ids.count(id)) throw SchemaViolation("rerank returned unknown id " + id, out.dump());
    if (!seen.insert(id).second) throw SchemaViolation("rerank returned id twice: " + id, out.dump());
    ranked.push_back(id);
  }
  if (ranked.size() > static_cast<std::size_t>(top_k)) ranked.resize(top_k);
  return ranked;
}

// ---------------------------------------------------------------- retriever

json SearchTrace::to_json() const {
  json srcs = json::array();
  for (const auto& s : sources) {
    json sc = json::array();
    for (const auto& [id, v] : s.scores) sc.push_back({id, v});
    srcs.push_back({{"group", s.group}, {"label", s.label}, {"scores", sc}});
  }
  json agg = json::array();
  for (const auto& c : aggregated) agg.push_back(c.to_json());
  return json{{"decomposed", decomposed.to_json()}, {"filtered", filtered}, {"sources", srcs},
              {"aggregated", agg},                  {"result", result},     {"warnings", warnings}};
}

Retriever Retriever::build(const kg::Graph& graph) {
  using ingest::SectionLabel;
  Retriever r;
  auto section_vec = [&](const std::string& pid, SectionLabel l) -> std::optional<std::vector<double>> {
    auto n = graph.get(ingest::section_node_id(pid, l));
    if (n && n->embedding) return n->embedding;
    return std::nullopt;
  };
  for (const auto& p : graph.nodes_of_kind(kg::NodeKind::Paper)) {
    const auto& a = p.attrs;
    r.bm25_.add(p.id, "title", a.value("title", std::string()));
    r.bm25_.add(p.id, "authors", join_list(a.value("authors", json::array())));
    r.bm25_.add(p.id, "affiliations", join_list(a.value("affiliations", json::array())));
    r.bm25_.add(p.id, "venue", a.contains("venue") ? join_list(a["venue"]) : std::string());
    std::optional<int> year;
    if (a.contains("publication_year") && a["publication_year"].is_number_integer()) {
      year = a["publication_year"].get<int>();
    }
    r.years_[p.id] = year;

    if (p.embedding) r.dense_.add(Aspect::ResearchTopic, p.id, *p.embedding);
    auto pf = section_vec(p.id, SectionLabel::ProblemFormulation);
    if (!pf) pf = section_vec(p.id, SectionLabel::Introduction);
    if (pf) r.dense_.add(Aspect::ProblemFormulation, p.id, *pf);
    if (auto m = section_vec(p.id, SectionLabel::Methodology)) r.dense_.add(Aspect::ProposedMethod, p.id, *m);
    if (auto e = section_vec(p.id, SectionLabel::Experiments)) r.dense_.add(Aspect::ExperimentalResults, p.id, *e);
    for (auto [kind, aspect] : {std::pair{kg::NodeKind::Dataset, Aspect::ExperimentalDatasets},
                                std::pair{kg::NodeKind::Baseline, Aspect::ExperimentalBaselines}}) {
      std::vector<std::vector<double>> vs;
      json names = json::array();
      for (const auto& n : graph.neighbors(p.id, kg::EdgeKind::USES, kg::Direction::Out, kind)) {
        names.push_back(n.attrs.value("name", n.id));
        if (n.embedding) vs.push_back(*n.embedding);
      }
      if (!vs.empty()) r.dense_.add(aspect, p.id, mean_unit(vs));
    }

    json summary{{"title", a.value("title", std::string())},
                 {"authors", a.value("authors", json::array())},
                 {"venue", a.value("venue", json(nullptr))},
                 {"publication_year", year ? json(*year) : json(nullptr)}};
    json aspects = json::object();
    for (auto [l, key] : {std::pair{SectionLabel::Abstract, "abstract"},
                          std::pair{SectionLabel::ProblemFormulation, "problem_formulation"},
                          std::pair{SectionLabel::Methodology, "proposed_method"},
                          std::pair{SectionLabel::Experiments, "experimental_results"}}) {
      auto n = graph.get(ingest::section_node_id(p.id, l));
      if (n) aspects[key] = excerpt(n->attrs.value("text", std::string()));
    }
    summary["aspects"] = aspects;
    r.summaries_[p.id] = summary;
  }
  return r;
}

std::vector<PaperYear> Retriever::paper_years() const {
  std::vector<PaperYear> out;
  for (const auto& [id, y] : years_) out.push_back({id, y});
  return out;
}

ScoreList Retriever::bm25_search(MetadataField field, const std::string& value, std::size_t k,
                                 const std::set<std::string>* allowed) const {
  if (field == MetadataField::PublicationYear) {
    throw Error(ErrorCode::InvalidArgument, "publication_year is a filter, not a lexical field");
  }
  return bm25_.search(std::string(to_string(field)), value, k, allowed);
}

ScoreList Retriever::dense_search(Aspect aspect, const std::string& intent, std::size_t k, llm::LlmClient& llm,
                                  const std::set<std::string>* allowed) const {
  if (!dense_.has(aspect)) {
    throw Error(ErrorCode::NotFound, "dense: no embeddings indexed for aspect " + std::string(to_string(aspect)));
  }
  if (k == 0) return {};
  return dense_.search(aspect, llm.embed(intent), k, allowed);
}

std::vector<std::string> Retriever::search(const std::string& q, const RetrievalConfig& cfg, llm::LlmClient& llm,
                                           SearchTrace* trace) const {
  cfg.validate();
  SearchTrace local;
  SearchTrace& t = trace ? *trace : local;
  t = SearchTrace{};
  t.decomposed = decompose_query(q, llm);
  t.filtered = temporal_filter(paper_years(), t.decomposed.year_range());
  if (t.filtered.empty()) return {};
  std::set<std::string> allowed(t.filtered.begin(), t.filtered.end());
  const auto k = static_cast<std::size_t>(cfg.candidates_per_query);

  std::vector<AspectIntent> intents = t.decomposed.aspect_intents;
  bool lexical = false;
  for (const auto& c : t.decomposed.metadata_constraints) {
    if (c.field == MetadataField::PublicationYear) continue;
    lexical = true;
    t.sources.push_back({"lexical", "bm25:" + std::string(to_string(c.field)), bm25_search(c.field, c.value, k, &allowed)});
  }
  // A year-only query has nothing to score against; fall back to the topic.
  if (intents.empty() && !lexical) intents.push_back({Aspect::ResearchTopic, q});
  for (const auto& i : intents) {
    if (!dense_.has(i.aspect)) {
      t.warnings.push_back("no embeddings for aspect " + std::string(to_string(i.aspect)));
      continue;
    }
    t.sources.push_back({"semantic", "dense:" + std::string(to_string(i.aspect)),
                         dense_search(i.aspect, i.text, k, llm, &allowed)});
  }
  bool any = std::any_of(t.sources.begin(), t.sources.end(), [](const auto& s) { return !s.scores.empty(); });
  if (!any) return {};
  t.aggregated = aggregate_scores(t.sources);
  std::vector<RerankCandidate> cands;
  for (const auto& c : t.aggregated) {
    if (cands.size() >= k) break;
    cands.push_back({c.paper_id, summaries_.at(c.paper_id)});
  }
  t.result = rerank(q, cands, cfg.top_k, llm);
  return t.result;
}

// ---------------------------------------------------------------- metrics

double r_precision(const std::vector<std::string>& ranked, const std::set<std::string>& relevant) {
  if (relevant.empty()) throw Error(ErrorCode::InvalidArgument, "r_precision: empty relevant set");
  const std::size_t r = relevant.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size() && i < r; ++i) hits += relevant.count(ranked[i]);
  return static_cast<double>(hits) / static_cast<double>(r);
}

double map_score(const std::vector<std::string>& ranked, const std::set<std::string>& relevant) {
  if (relevant.empty()) throw Error(ErrorCode::InvalidArgument, "map_score: empty relevant set");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (relevant.count(ranked[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

double ndcg_at_k(const std::vector<double>& gains, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "ndcg_at_k: k must be at least 1");
  auto dcg = [k](const std::vector<double>& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size() && i < static_cast<std::size_t>(k); ++i) {
      s += (std::pow(2.0, g[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    return s;
  };
  auto ideal = gains;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = dcg(ideal);
  return idcg > 0.0 ? dcg(gains) / idcg : 0.0;
}

std::vector<EvalQuery> load_eval_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open eval file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("eval file: ") + e.what());
  }
  if (j.is_object() && j.contains("queries")) j = j["queries"];
  std::vector<EvalQuery> out;
  for (const auto& q : j) {
    EvalQuery e{q.at("query").get<std::string>(), {}};
    for (const auto& r : q.at("relevant")) e.relevant.insert(r.get<std::string>());
    if (e.relevant.empty()) throw Error(ErrorCode::InvalidArgument, "eval query without relevant ids: " + e.query);
    out.push_back(std::move(e));
  }
  return out;
}

json EvalReport::to_json() const {
  json rs = json::array();
  for (const auto& r : rows) {
    rs.push_back({{"query", r.query}, {"ranked", r.ranked}, {"r_precision", r.r_precision}, {"map", r.map},
                  {"ndcg", r.ndcg}});
  }
  return json{{"queries", rs},
              {"mean", {{"r_precision", mean_r_precision}, {"map", mean_map}, {"ndcg", mean_ndcg}}}};
}

EvalReport evaluate(const std::vector<EvalQuery>& queries, const Retriever& retriever, const RetrievalConfig& cfg,
                    llm::LlmClient& llm) {
  EvalReport rep;
  for (const auto& q : queries) {
    EvalRow row;
    row.query = q.query;
    row.ranked = retriever.search(q.query, cfg, llm);
    row.r_precision = r_precision(row.ranked, q.relevant);
    row.map = map_score(row.ranked, q.relevant);
    // Binary gains; the ideal ordering counts every relevant paper, ranked or not.
    const auto k = static_cast<std::size_t>(cfg.top_k);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < row.ranked.size() && i < k; ++i) {
      if (q.relevant.count(row.ranked[i])) num += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
    for (std::size_t i = 0; i < q.relevant.size() && i < k; ++i) den += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    row.ndcg = den > 0 ? num / den : 0.0;
    rep.mean_r_precision += row.r_precision;
    rep.mean_map += row.map;
    rep.mean_ndcg += row.ndcg;
    rep.rows.push_back(std::move(row));
  }
  if (!rep.rows.empty()) {
    const double n = static_cast<double>(rep.rows.size());
    rep.mean_r_precision /= n;
    rep.mean_map /= n;
    rep.mean_ndcg /= n;
  }
  return rep;
}

}  // namespace scholar::retrieval
