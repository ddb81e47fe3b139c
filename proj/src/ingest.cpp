#include "scholar/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <regex>

namespace scholar::ingest {

std::string_view to_string(SectionLabel label) {
  switch (label) {
    case SectionLabel::Abstract: return "Abstract";
    case SectionLabel::Introduction: return "Introduction";
    case SectionLabel::RelatedWork: return "RelatedWork";
    case SectionLabel::ProblemFormulation: return "ProblemFormulation";
    case SectionLabel::Methodology: return "Methodology";
    case SectionLabel::Experiments: return "Experiments";
    case SectionLabel::Other: return "Other";
  }
  return "Other";
}

SectionLabel section_label_from_string(std::string_view s) {
  for (auto l : kAllLabels) {
    if (to_string(l) == s) return l;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown section label: " + std::string(s));
}

// ---------------------------------------------------------------- bundle io

void DocumentBundle::validate() const {
  if (paper_id.empty()) throw Error(ErrorCode::InvalidArgument, "bundle: paper_id must be non-empty");
  if (trim(metadata.title).empty()) {
    throw Error(ErrorCode::InvalidArgument, "bundle " + paper_id + ": title must be non-empty");
  }
  if (metadata.publication_year &&
      (*metadata.publication_year < 1000 || *metadata.publication_year > 9999)) {
    throw Error(ErrorCode::InvalidArgument, "bundle " + paper_id + ": implausible publication_year");
  }
  if (sections.empty()) throw Error(ErrorCode::InvalidArgument, "bundle " + paper_id + ": no sections");
}

json DocumentBundle::to_json() const {
  json meta{{"title", metadata.title}, {"authors", metadata.authors}};
  if (!metadata.affiliations.empty()) meta["affiliations"] = metadata.affiliations;
  if (metadata.venue) meta["venue"] = *metadata.venue;
  if (metadata.publication_year) meta["publication_year"] = *metadata.publication_year;
  if (metadata.citation_count) meta["citation_count"] = *metadata.citation_count;
  if (!metadata.citation_history.empty()) {
    json h = json::array();
    for (const auto& c : metadata.citation_history) h.push_back({{"year", c.year}, {"count", c.count}});
    meta["citation_history"] = h;
  }
  json secs = json::array();
  for (const auto& s : sections) secs.push_back({{"raw_title", s.raw_title}, {"body", s.body}});
  json tabs = json::array();
  for (const auto& t : tables) tabs.push_back({{"caption", t.caption}, {"cells", t.cells}});
  json figs = json::array();
  for (const auto& f : figures) figs.push_back({{"caption", f.caption}, {"reference_name", f.reference_name}});
  return json{{"paper_id", paper_id}, {"metadata", meta}, {"sections", secs}, {"tables", tabs}, {"figures", figs}};
}

DocumentBundle DocumentBundle::from_json(const json& j) {
  DocumentBundle b;
  try {
    b.paper_id = j.at("paper_id").get<std::string>();
    const json& m = j.at("metadata");
    b.metadata.title = m.at("title").get<std::string>();
    b.metadata.authors = m.value("authors", std::vector<std::string>{});
    b.metadata.affiliations = m.value("affiliations", std::vector<std::string>{});
    if (m.contains("venue") && m["venue"].is_string()) b.metadata.venue = m["venue"].get<std::string>();
    if (m.contains("publication_year") && m["publication_year"].is_number_integer()) {
      b.metadata.publication_year = m["publication_year"].get<int>();
    }
    if (m.contains("citation_count") && m["citation_count"].is_number_integer()) {
      b.metadata.citation_count = m["citation_count"].get<std::int64_t>();
    }
    if (m.contains("citation_history")) {
      for (const auto& c : m["citation_history"]) {
        if (c.is_array()) {
          b.metadata.citation_history.push_back({c.at(0).get<int>(), c.at(1).get<std::int64_t>()});
        } else {
          b.metadata.citation_history.push_back({c.at("year").get<int>(), c.at("count").get<std::int64_t>()});
        }
      }
    }
    for (const auto& s : j.at("sections")) {
      b.sections.push_back({s.at("raw_title").get<std::string>(), s.at("body").get<std::string>()});
    }
    for (const auto& t : j.value("tables", json::array())) {
      b.tables.push_back({t.value("caption", std::string()),
                          t.value("cells", std::vector<std::vector<std::string>>{})});
    }
    for (const auto& f : j.value("figures", json::array())) {
      b.figures.push_back({f.value("caption", std::string()), f.value("reference_name", std::string())});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed bundle: ") + e.what());
  }
  b.validate();
  return b;
}

DocumentBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read bundle: " + path.string());
  try {
    return DocumentBundle::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

std::vector<DocumentBundle> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::Io, "corpus directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<DocumentBundle> out;
  for (const auto& f : files) out.push_back(load_bundle(f));
  return out;
}

// ---------------------------------------------------------------- sections

std::optional<SectionLabel> match_section_pattern(std::string_view raw_title) {
  // Strip heading numbering: "1.", "2.3", "IV.", "A.", "(a)", "Section 3:".
  static const std::regex kPrefix(
      R"(^\s*(section\s+)?(\(?([0-9]+(\.[0-9]+)*|[ivxlcdm]+|[a-z])[\.\):]|[0-9]+(\.[0-9]+)*)\s+)",
      std::regex::icase);
  std::string title = std::regex_replace(std::string(raw_title), kPrefix, "");
  std::string key;
  for (const auto& tok : tokenize(title)) {
    if (!key.empty()) key += ' ';
    key += tok;
  }
  static const std::map<std::string, SectionLabel> kCanonical = {
      {"abstract", SectionLabel::Abstract},
      {"introduction", SectionLabel::Introduction},
      {"intro", SectionLabel::Introduction},
      {"related work", SectionLabel::RelatedWork},
      {"related works", SectionLabel::RelatedWork},
      {"background and related work", SectionLabel::RelatedWork},
      {"literature review", SectionLabel::RelatedWork},
      {"prior work", SectionLabel::RelatedWork},
      {"problem formulation", SectionLabel::ProblemFormulation},
      {"problem definition", SectionLabel::ProblemFormulation},
      {"problem statement", SectionLabel::ProblemFormulation},
      {"problem setup", SectionLabel::ProblemFormulation},
      {"preliminaries", SectionLabel::ProblemFormulation},
      {"method", SectionLabel::Methodology},
      {"methods", SectionLabel::Methodology},
      {"methodology", SectionLabel::Methodology},
      {"approach", SectionLabel::Methodology},
      {"our approach", SectionLabel::Methodology},
      {"proposed method", SectionLabel::Methodology},
      {"experiments", SectionLabel::Experiments},
      {"experiment", SectionLabel::Experiments},
      {"experimental evaluation", SectionLabel::Experiments},
      {"experimental results", SectionLabel::Experiments},
      {"experimental study", SectionLabel::Experiments},
      {"evaluation", SectionLabel::Experiments},
      {"conclusion", SectionLabel::Other},
      {"conclusions", SectionLabel::Other},
      {"references", SectionLabel::Other},
      {"acknowledgments", SectionLabel::Other},
      {"acknowledgements", SectionLabel::Other},
      {"appendix", SectionLabel::Other},
      {"discussion", SectionLabel::Other},
      {"future work", SectionLabel::Other},
      {"limitations", SectionLabel::Other},
  };
  auto it = kCanonical.find(key);
  if (it == kCanonical.end()) return std::nullopt;
  return it->second;
}

std::vector<LabeledUnit> classify_sections(const DocumentBundle& bundle, llm::LlmClient& llm) {
  std::map<SectionLabel, std::string> merged;
  for (const auto& sec : bundle.sections) {
    auto label = match_section_pattern(sec.raw_title);
    if (!label) {
      json payload{{"raw_title", sec.raw_title}, {"excerpt", sec.body.substr(0, 400)}};
      try {
        auto out = llm.complete_structured(
            "ingest.classify_section",
            "You label sections of scientific papers.",
            "Map the section heading to exactly one standardized label: Abstract, Introduction, "
            "RelatedWork, ProblemFormulation, Methodology, Experiments or Other. Return {\"label\": ...}.",
            payload, "section_label");
        label = section_label_from_string(out.at("label").get<std::string>());
      } catch (const Error& e) {
        throw Error(e.code(), "classifying section '" + sec.raw_title + "' of " + bundle.paper_id + ": " +
                                  e.what());
      }
    }
    auto& body = merged[*label];
    if (!body.empty()) body += "\n\n";
    body += sec.body;
  }
  std::vector<LabeledUnit> out;
  for (auto l : kAllLabels) {
    auto it = merged.find(l);
    if (it != merged.end()) out.push_back({l, it->second});
  }
  return out;
}

// ---------------------------------------------------------------- entities

json ContextEntities::to_json() const {
  auto list = [](const std::vector<EntityMention>& v) {
    json a = json::array();
    for (const auto& m : v) {
      json e{{"name", m.name}, {"label", to_string(m.label)}};
      e["start"] = m.start ? json(*m.start) : json(nullptr);
      e["end"] = m.end ? json(*m.end) : json(nullptr);
      a.push_back(e);
    }
    return a;
  };
  return json{{"datasets", list(datasets)}, {"metrics", list(metrics)}, {"baselines", list(baselines)}};
}

ContextEntities extract_context_entities(const std::vector<LabeledUnit>& units, llm::LlmClient& llm) {
  const LabeledUnit* exp = nullptr;
  for (const auto& u : units) {
    if (u.label == SectionLabel::Experiments) exp = &u;
  }
  ContextEntities out;
  if (!exp) return out;
  auto parsed = llm.complete_structured(
      "ingest.extract_entities", "You extract experimental context from scientific papers.",
      "List the datasets, evaluation metrics and compared baselines named in this experiments "
      "section. Return {\"datasets\": [...], \"metrics\": [...], \"baselines\": [...]}; entries are "
      "names or {name, start, end} spans.",
      json{{"section", exp->body}}, "context_entities");
  auto convert = [&](const json& arr, std::vector<EntityMention>& dst) {
    for (const auto& item : arr) {
      EntityMention m;
      m.label = exp->label;
      if (item.is_string()) {
        m.name = item.get<std::string>();
      } else if (item.is_object() && item.contains("name") && item["name"].is_string()) {
        m.name = item["name"].get<std::string>();
        if (item.contains("start") && item["start"].is_number_unsigned() && item.contains("end") &&
            item["end"].is_number_unsigned()) {
          m.start = item["start"].get<std::size_t>();
          m.end = item["end"].get<std::size_t>();
        }
      } else {
        throw SchemaViolation("entity entry must be a name or {name, start, end}", item.dump());
      }
      if (trim(m.name).empty()) continue;
      if (!m.start) {
        auto pos = exp->body.find(m.name);
        if (pos != std::string::npos) {
          m.start = pos;
          m.end = pos + m.name.size();
        }
      }
      dst.push_back(std::move(m));
    }
  };
  convert(parsed.at("datasets"), out.datasets);
  convert(parsed.at("metrics"), out.metrics);
  convert(parsed.at("baselines"), out.baselines);
  return out;
}

std::map<std::string, std::string> normalize_entities(const std::set<std::string>& names,
                                                      llm::LlmClient& llm, const std::string& kind) {
  if (names.empty()) throw Error(ErrorCode::InvalidArgument, "normalize_entities: empty name set");
  std::map<std::string, std::string> map;
  for (const auto& n : names) map[n] = n;
  if (names.size() == 1) return map;
  auto parsed = llm.complete_structured(
      "ingest.normalize_entities", "You unify variant spellings of named research artifacts.",
      "Group the " + kind +
          " names that denote the same artifact. Return {\"groups\": [{\"canonical\": ..., "
          "\"variants\": [...]}]}.",
      json{{"kind", kind}, {"names", json(names)}}, "entity_groups");
  // Union-find over the groups; a name already claimed by an earlier group
  // pulls the later group into it.
  auto root = [&map](std::string s) {
    std::set<std::string> seen;
    while (map.count(s) && map[s] != s && seen.insert(s).second) s = map[s];
    return s;
  };
  for (const auto& g : parsed.at("groups")) {
    auto canonical = trim(g.at("canonical").get<std::string>());
    if (canonical.empty()) continue;
    if (!map.count(canonical)) map[canonical] = canonical;
    auto target = root(canonical);
    for (const auto& v : g.at("variants")) {
      auto name = v.get<std::string>();
      if (!map.count(name)) continue;
      auto r = root(name);
      if (r != target) map[r] = target;
    }
  }
  for (auto& [raw, canon] : map) canon = root(raw);
  return map;
}

// ---------------------------------------------------------------- biblio

FixtureBiblioClient FixtureBiblioClient::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read biblio fixture: " + path.string());
  try {
    return FixtureBiblioClient(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

std::optional<json> FixtureBiblioClient::lookup(const std::string& title) {
  auto it = records_.find(title);
  if (it == records_.end()) return std::nullopt;
  return *it;
}

EnrichResult enrich_bibliography(const DocumentBundle& bundle, BiblioClient& client) {
  if (trim(bundle.metadata.title).empty()) {
    throw Error(ErrorCode::InvalidArgument, "enrich_bibliography: title must be non-empty");
  }
  EnrichResult out{bundle.metadata, {}};
  auto rec = client.lookup(bundle.metadata.title);
  if (!rec) {
    out.warnings.push_back("biblio: no record for '" + bundle.metadata.title + "' (" + bundle.paper_id + ")");
    return out;
  }
  Metadata& m = out.metadata;
  if (!m.venue && rec->contains("venue") && (*rec)["venue"].is_string()) {
    m.venue = (*rec)["venue"].get<std::string>();
  }
  if (!m.publication_year && rec->contains("publication_year") && (*rec)["publication_year"].is_number_integer()) {
    m.publication_year = (*rec)["publication_year"].get<int>();
  }
  if (!m.citation_count && rec->contains("citation_count") && (*rec)["citation_count"].is_number_integer()) {
    m.citation_count = (*rec)["citation_count"].get<std::int64_t>();
  }
  if (m.citation_history.empty() && rec->contains("citation_history")) {
    for (const auto& c : (*rec)["citation_history"]) {
      m.citation_history.push_back({c.at("year").get<int>(), c.at("count").get<std::int64_t>()});
    }
  }
  if (m.authors.empty() && rec->contains("authors")) {
    m.authors = (*rec)["authors"].get<std::vector<std::string>>();
  }
  if (m.affiliations.empty() && rec->contains("affiliations")) {
    m.affiliations = (*rec)["affiliations"].get<std::vector<std::string>>();
  }
  return out;
}

// ---------------------------------------------------------------- corpus

json IngestReport::to_json() const {
  json ents = json::object();
  for (const auto& [pid, e] : entities) ents[pid] = e.to_json();
  return json{{"papers", papers}, {"warnings", warnings}, {"entities", ents}, {"canonical", canonical}};
}

std::string section_node_id(const std::string& paper_id, SectionLabel label) {
  return paper_id + "/sec/" + std::string(to_string(label));
}

namespace {

struct Prepared {
  DocumentBundle bundle;
  std::vector<LabeledUnit> units;
  ContextEntities entities;
};

const char* kind_prefix(kg::NodeKind k) {
  switch (k) {
    case kg::NodeKind::Dataset: return "dataset:";
    case kg::NodeKind::Metric: return "metric:";
    default: return "baseline:";
  }
}

}  // namespace

IngestReport ingest_corpus(const std::vector<DocumentBundle>& bundles, kg::Graph& graph,
                           llm::LlmClient& llm, BiblioClient* biblio) {
  IngestReport report;
  std::vector<Prepared> prepared;
  std::set<std::string> seen_ids;
  for (const auto& b : bundles) {
    b.validate();
    if (!seen_ids.insert(b.paper_id).second || graph.contains(b.paper_id)) {
      throw Error(ErrorCode::DuplicateId, "paper already ingested: " + b.paper_id);
    }
    Prepared p{b, {}, {}};
    if (biblio) {
      auto enriched = enrich_bibliography(b, *biblio);
      p.bundle.metadata = std::move(enriched.metadata);
      for (auto& w : enriched.warnings) report.warnings.push_back(std::move(w));
    }
    p.units = classify_sections(p.bundle, llm);
    p.entities = extract_context_entities(p.units, llm);
    prepared.push_back(std::move(p));
  }

  // Corpus-level normalization barrier; existing canonical names take part so
  // that new variants can merge into them.
  const std::pair<kg::NodeKind, std::string> kinds[] = {
      {kg::NodeKind::Dataset, "dataset"}, {kg::NodeKind::Metric, "metric"}, {kg::NodeKind::Baseline, "baseline"}};
  std::map<std::string, std::map<std::string, std::string>> canon;
  for (const auto& [nk, kname] : kinds) {
    std::set<std::string> names;
    for (const auto& p : prepared) {
      const auto& list = nk == kg::NodeKind::Dataset  ? p.entities.datasets
                         : nk == kg::NodeKind::Metric ? p.entities.metrics
                                                      : p.entities.baselines;
      for (const auto& m : list) names.insert(m.name);
    }
    if (names.empty()) continue;
    for (const auto& n : graph.nodes_of_kind(nk)) names.insert(n.attrs.value("name", n.id));
    canon[kname] = normalize_entities(names, llm, kname);
  }

  for (auto& p : prepared) {
    const auto& b = p.bundle;
    const auto& m = b.metadata;
    kg::GraphNode paper;
    paper.id = b.paper_id;
    paper.kind = kg::NodeKind::Paper;
    paper.attrs["title"] = m.title;
    paper.attrs["authors"] = m.authors;
    if (!m.affiliations.empty()) paper.attrs["affiliations"] = m.affiliations;
    if (m.venue) paper.attrs["venue"] = *m.venue;
    if (m.publication_year) paper.attrs["publication_year"] = *m.publication_year;
    if (m.citation_count) paper.attrs["citation_count"] = *m.citation_count;
    if (!m.citation_history.empty()) {
      std::vector<int> years;
      std::vector<std::int64_t> counts;
      for (const auto& c : m.citation_history) {
        years.push_back(c.year);
        counts.push_back(c.count);
      }
      paper.attrs["citation_years"] = years;
      paper.attrs["citation_counts"] = counts;
    }
    std::string topic = m.title;
    for (const auto& u : p.units) {
      if (u.label == SectionLabel::Abstract) topic += ". " + u.body;
    }
    paper.embedding = llm.embed(topic);
    graph.add_node(paper);

    for (const auto& u : p.units) {
      kg::GraphNode sec;
      sec.id = section_node_id(b.paper_id, u.label);
      sec.kind = kg::NodeKind::Section;
      sec.attrs = {{"label", to_string(u.label)}, {"text", u.body}, {"paper_id", b.paper_id}};
      if (!trim(u.body).empty()) sec.embedding = llm.embed(u.body);
      graph.add_node(sec);
      graph.add_edge(b.paper_id, sec.id, kg::EdgeKind::HAS);
    }
    for (std::size_t i = 0; i < b.figures.size(); ++i) {
      kg::GraphNode fig;
      fig.id = b.paper_id + "/fig/" + std::to_string(i + 1);
      fig.kind = kg::NodeKind::Figure;
      fig.attrs = {{"caption", b.figures[i].caption}, {"reference_name", b.figures[i].reference_name},
                   {"paper_id", b.paper_id}};
      graph.add_node(fig);
      graph.add_edge(b.paper_id, fig.id, kg::EdgeKind::HAS);
    }
    for (std::size_t i = 0; i < b.tables.size(); ++i) {
      kg::GraphNode tab;
      tab.id = b.paper_id + "/tab/" + std::to_string(i + 1);
      tab.kind = kg::NodeKind::Table;
      std::vector<std::string> rows;
      for (const auto& row : b.tables[i].cells) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) line += (c ? " | " : "") + row[c];
        rows.push_back(line);
      }
      tab.attrs = {{"caption", b.tables[i].caption}, {"rows", rows}, {"paper_id", b.paper_id}};
      graph.add_node(tab);
      graph.add_edge(b.paper_id, tab.id, kg::EdgeKind::HAS);
    }
    for (const auto& a : m.authors) {
      std::string id = "author:" + a;
      if (!graph.contains(id)) graph.add_node({id, kg::NodeKind::Author, {{"name", a}}, std::nullopt});
      graph.add_edge(b.paper_id, id, kg::EdgeKind::WRITTEN_BY);
    }
    if (m.venue) {
      std::string id = "venue:" + *m.venue;
      if (!graph.contains(id)) graph.add_node({id, kg::NodeKind::Venue, {{"name", *m.venue}}, std::nullopt});
      graph.add_edge(b.paper_id, id, kg::EdgeKind::PUBLISHED_IN);
    }
    for (const auto& [nk, kname] : kinds) {
      const auto& list = nk == kg::NodeKind::Dataset  ? p.entities.datasets
                         : nk == kg::NodeKind::Metric ? p.entities.metrics
                                                      : p.entities.baselines;
      for (const auto& mention : list) {
        const std::string& name = canon[kname].at(mention.name);
        std::string id = kind_prefix(nk) + name;
        if (!graph.contains(id)) graph.add_node({id, nk, {{"name", name}}, llm.embed(name)});
        graph.add_edge(b.paper_id, id, kg::EdgeKind::USES);
      }
    }
    report.papers.push_back(b.paper_id);
    report.entities[b.paper_id] = p.entities;
  }
  report.canonical = std::move(canon);
  return report;
}

}  // namespace scholar::ingest
