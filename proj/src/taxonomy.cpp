#include "scholar/taxonomy.hpp"

#include "scholar/ingest.hpp"

#include <algorithm>
#include <functional>

namespace scholar::taxonomy {

std::string_view to_string(TaxonomyKind kind) { return kind == TaxonomyKind::Problem ? "problem" : "method"; }

TaxonomyKind taxonomy_kind_from_string(std::string_view s) {
  if (s == "problem") return TaxonomyKind::Problem;
  if (s == "method") return TaxonomyKind::Method;
  throw Error(ErrorCode::InvalidArgument, "unknown taxonomy kind: " + std::string(s));
}

const std::vector<std::string>& aspect_names(TaxonomyKind kind) {
  static const std::vector<std::string> problem{"input", "output"};
  static const std::vector<std::string> method{"key_techniques", "strengths", "weaknesses"};
  return kind == TaxonomyKind::Problem ? problem : method;
}

std::string aspect_prefix(TaxonomyKind kind, std::size_t i) {
  static const char* problem[] = {"I", "O"};
  static const char* method[] = {"T", "S", "W"};
  return kind == TaxonomyKind::Problem ? problem[i] : method[i];
}

// ---------------------------------------------------------------- json

json AspectTemplate::to_json() const {
  return json{{"paper_id", paper_id}, {"description", description}, {"aspects", aspects}, {"signatures", signatures}};
}

AspectTemplate AspectTemplate::from_json(const json& j) {
  return AspectTemplate{j.at("paper_id").get<std::string>(), j.value("description", std::string()),
                        j.at("aspects").get<std::vector<std::string>>(),
                        j.value("signatures", std::vector<std::string>{})};
}

json AspectClass::to_json() const {
  return json{{"class_id", class_id},
              {"aspect_index", aspect_index},
              {"canonical_label", canonical_label},
              {"member_signatures", member_signatures}};
}

AspectClass AspectClass::from_json(const json& j) {
  return AspectClass{j.at("class_id").get<std::string>(), j.at("aspect_index").get<std::size_t>(),
                     j.at("canonical_label").get<std::string>(),
                     j.at("member_signatures").get<std::vector<std::string>>()};
}

json Concept::to_json() const {
  return json{{"concept_id", concept_id}, {"class_tuple", class_tuple}, {"member_papers", member_papers}};
}

json TaxonomyNode::to_json() const {
  return json{{"node_id", node_id},
              {"name", name},
              {"description", description},
              {"signature", signature ? json(*signature) : json(nullptr)},
              {"papers", papers},
              {"children", children},
              {"parent", parent},
              {"new_paper_count", new_paper_count},
              {"base_size", base_size}};
}

TaxonomyNode TaxonomyNode::from_json(const json& j) {
  TaxonomyNode n;
  n.node_id = j.at("node_id").get<std::string>();
  n.name = j.at("name").get<std::string>();
  n.description = j.value("description", std::string());
  if (j.contains("signature") && !j["signature"].is_null()) n.signature = j["signature"].get<ClassTuple>();
  n.papers = j.value("papers", std::vector<std::string>{});
  n.children = j.value("children", std::vector<std::string>{});
  n.parent = j.value("parent", std::string());
  n.new_paper_count = j.value("new_paper_count", std::int64_t{0});
  n.base_size = j.value("base_size", std::int64_t{1});
  return n;
}

void TaxonomyConfig::validate() const {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be positive");
  if (!(tau_match >= 0.0 && tau_match <= 1.0)) throw Error(ErrorCode::InvalidArgument, "tau_match must lie in [0,1]");
  if (k_max < 2) throw Error(ErrorCode::InvalidArgument, "k_max must be at least 2");
}

json TaxonomyConfig::to_json() const { return json{{"alpha", alpha}, {"tau_match", tau_match}, {"k_max", k_max}}; }

TaxonomyConfig TaxonomyConfig::from_json(const json& j) {
  TaxonomyConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.tau_match = j.value("tau_match", c.tau_match);
  c.k_max = j.value("k_max", c.k_max);
  c.validate();
  return c;
}

json RefinementRecord::to_json() const {
  return json{{"node_id", node_id}, {"case", refinement_case}, {"new_nodes", new_nodes}, {"moved_papers", moved_papers}};
}

json RoutingRecord::to_json() const {
  json j{{"paper_id", paper_id}, {"parent_id", parent_id}, {"node_id", node_id}, {"created_new", created_new}};
  j["refinement"] = refinement ? refinement->to_json() : json(nullptr);
  return j;
}

// ---------------------------------------------------------------- stage 1

namespace {

constexpr std::size_t kContextBudget = 12000;

std::string section_text(const kg::Graph& graph, const std::string& paper_id, ingest::SectionLabel label) {
  auto n = graph.get(ingest::section_node_id(paper_id, label));
  if (!n) return {};
  return n->attrs.value("text", std::string());
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> extract_signatures(const AspectTemplate& tmpl, TaxonomyKind kind, llm::LlmClient& llm) {
  const auto& names = aspect_names(kind);
  json aspects = json::array();
  for (std::size_t i = 0; i < names.size(); ++i) aspects.push_back({{"name", names[i]}, {"text", tmpl.aspects[i]}});
  auto out = llm.complete_structured(
      "taxonomy.signatures", "You extract key noun phrases from research problem and method descriptions.",
      "For each aspect, list the key noun phrases that capture its essential semantics. Return "
      "{\"signatures\": [[...], ...]} with one list per aspect, in the given order.",
      json{{"kind", to_string(kind)}, {"paper_id", tmpl.paper_id}, {"aspects", aspects}}, "signatures");
  const auto& sigs = out.at("signatures");
  if (sigs.size() != names.size()) {
    throw SchemaViolation("signatures: expected " + std::to_string(names.size()) + " lists", out.dump());
  }
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::vector<std::string> phrases;
    for (const auto& p : sigs[i]) {
      auto t = trim(p.get<std::string>());
      if (!t.empty()) phrases.push_back(t);
    }
    keys.push_back(phrases.empty() ? trim(tmpl.aspects[i]) : join(phrases, "; "));
  }
  return keys;
}

// One class-formation call over `keys`. Returns (label, members) groups and
// leaves unassigned keys out.
std::vector<std::pair<std::string, std::vector<std::string>>> form_classes(const std::vector<std::string>& keys,
                                                                           const std::string& aspect,
                                                                           TaxonomyKind kind,
                                                                           llm::LlmClient& llm) {
  auto out = llm.complete_structured(
      "taxonomy.classes", "You align equivalent phrasings across research papers.",
      "Group semantically equivalent signatures under a canonical class label. Every signature "
      "belongs to at most one class. Return {\"classes\": [{\"label\": ..., \"members\": [...]}]}.",
      json{{"kind", to_string(kind)}, {"aspect", aspect}, {"signatures", keys}}, "aspect_classes");
  std::set<std::string> allowed(keys.begin(), keys.end());
  std::set<std::string> used;
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  for (const auto& c : out.at("classes")) {
    std::vector<std::string> members;
    for (const auto& m : c.at("members")) {
      auto s = m.get<std::string>();
      if (!allowed.count(s)) throw SchemaViolation("class member is not an input signature: " + s, out.dump());
      if (!used.insert(s).second) throw SchemaViolation("signature assigned to two classes: " + s, out.dump());
      members.push_back(s);
    }
    if (members.empty()) continue;
    auto label = trim(c.at("label").get<std::string>());
    groups.emplace_back(label.empty() ? members.front() : label, std::move(members));
  }
  return groups;
}

}  // namespace

AspectTemplate extract_template(const kg::Graph& graph, const std::string& paper_id, TaxonomyKind kind,
                                llm::LlmClient& llm) {
  auto paper = graph.get(paper_id);
  if (!paper || paper->kind != kg::NodeKind::Paper) {
    throw Error(ErrorCode::NotFound, "extract_template: unknown paper " + paper_id);
  }
  using ingest::SectionLabel;
  const SectionLabel targeted_label =
      kind == TaxonomyKind::Problem ? SectionLabel::ProblemFormulation : SectionLabel::Methodology;
  json shared = json::object();
  for (auto l : {SectionLabel::Abstract, SectionLabel::Introduction, SectionLabel::RelatedWork}) {
    auto t = section_text(graph, paper_id, l);
    if (!t.empty()) shared[std::string(ingest::to_string(l))] = t;
  }
  std::string targeted = section_text(graph, paper_id, targeted_label);
  std::string targeted_name(ingest::to_string(targeted_label));
  if (targeted.empty()) {
    targeted = section_text(graph, paper_id, SectionLabel::Introduction);
    targeted_name = "Introduction";
  }
  if (shared.empty() && targeted.empty()) {
    throw Error(ErrorCode::Precondition, "extract_template: paper " + paper_id + " has no context units");
  }
  std::size_t budget = kContextBudget;
  if (targeted.size() > budget / 2) targeted.resize(budget / 2);
  budget -= targeted.size();
  for (auto& [k, v] : shared.items()) {
    auto s = v.get<std::string>();
    std::size_t share = budget / 3;
    if (s.size() > share) v = s.substr(0, share);
  }
  json payload{{"paper_id", paper_id},
               {"title", paper->attrs.value("title", std::string())},
               {"shared", shared},
               {"targeted", {{"label", targeted_name}, {"text", targeted}}}};
  const auto& names = aspect_names(kind);
  const bool problem = kind == TaxonomyKind::Problem;
  auto out = llm.complete_structured(
      problem ? "taxonomy.problem_template" : "taxonomy.method_template",
      "You read scientific papers and extract structured templates.",
      problem ? "Describe the research problem concisely and give formal specifications of its input and "
                "its output. Return {\"description\", \"input\", \"output\"}."
              : "Describe the proposed method concisely and give its key techniques, strengths and "
                "weaknesses. Return {\"description\", \"key_techniques\", \"strengths\", \"weaknesses\"}.",
      payload, problem ? "problem_template" : "method_template");
  AspectTemplate t;
  t.paper_id = paper_id;
  t.description = trim(out.at("description").get<std::string>());
  for (const auto& n : names) {
    auto v = trim(out.at(n).get<std::string>());
    if (v.empty()) throw SchemaViolation("template aspect '" + n + "' is empty", out.dump());
    t.aspects.push_back(v);
  }
  return t;
}

// ---------------------------------------------------------------- stage 2

Standardization standardize(const std::vector<AspectTemplate>& input, TaxonomyKind kind, llm::LlmClient& llm) {
  if (input.empty()) throw Error(ErrorCode::InvalidArgument, "standardize: no templates");
  const auto& names = aspect_names(kind);
  const std::size_t m = names.size();
  Standardization out;
  for (const auto& t : input) {
    if (t.aspects.size() != m) throw Error(ErrorCode::InvalidArgument, "template " + t.paper_id + " has wrong arity");
    if (out.templates.count(t.paper_id)) throw Error(ErrorCode::DuplicateId, "duplicate template " + t.paper_id);
    out.templates[t.paper_id] = t;
  }
  // Step 1, in paper-id order.
  for (auto& [pid, t] : out.templates) {
    if (t.signatures.size() != m) t.signatures = extract_signatures(t, kind, llm);
  }
  // Step 2, per aspect over the sorted distinct keys.
  out.classes.resize(m);
  std::vector<std::map<std::string, std::string>> key_to_class(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::set<std::string> keyset;
    for (const auto& [pid, t] : out.templates) keyset.insert(t.signatures[i]);
    std::vector<std::string> pending(keyset.begin(), keyset.end());
    auto add_class = [&](std::string label, std::vector<std::string> members) {
      AspectClass c;
      c.class_id = aspect_prefix(kind, i) + std::to_string(out.classes[i].size() + 1);
      c.aspect_index = i;
      c.canonical_label = std::move(label);
      for (const auto& s : members) key_to_class[i][s] = c.class_id;
      c.member_signatures = std::move(members);
      out.classes[i].push_back(std::move(c));
    };
    // Unassigned signatures are re-processed once more, then become singletons.
    for (int round = 0; round < 2 && !pending.empty(); ++round) {
      for (auto& [label, members] : form_classes(pending, names[i], kind, llm)) add_class(label, members);
      std::vector<std::string> rest;
      for (const auto& k : pending) {
        if (!key_to_class[i].count(k)) rest.push_back(k);
      }
      pending = std::move(rest);
    }
    for (const auto& k : pending) add_class(k, {k});
  }
  // Step 3: concepts are the distinct class tuples.
  std::map<ClassTuple, std::size_t> concept_index;
  for (const auto& [pid, t] : out.templates) {
    ClassTuple tuple;
    for (std::size_t i = 0; i < m; ++i) tuple.push_back(key_to_class[i].at(t.signatures[i]));
    out.paper_tuple[pid] = tuple;
    auto it = concept_index.find(tuple);
    if (it == concept_index.end()) {
      concept_index[tuple] = out.concepts.size();
      out.concepts.push_back({"C" + std::to_string(out.concepts.size() + 1), tuple, {pid}});
    } else {
      out.concepts[it->second].member_papers.push_back(pid);
    }
  }
  return out;
}

// ---------------------------------------------------------------- stage 3

ReferenceTaxonomy generate_reference_taxonomy(const std::vector<AspectTemplate>& templates, TaxonomyKind kind,
                                              llm::LlmClient& llm) {
  if (templates.empty()) throw Error(ErrorCode::InvalidArgument, "reference taxonomy: empty corpus");
  std::vector<AspectTemplate> sorted = templates;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.paper_id < b.paper_id; });
  json papers = json::array();
  for (const auto& t : sorted) papers.push_back({{"paper_id", t.paper_id}, {"description", t.description}});
  auto topic_out = llm.complete_structured("taxonomy.topic", "You name research areas.",
                                           "Infer a short topic label covering this corpus. Return {\"topic\": ...}.",
                                           json{{"kind", to_string(kind)}, {"papers", papers}}, "topic_label");
  ReferenceTaxonomy ref;
  ref.topic = trim(topic_out.at("topic").get<std::string>());
  if (ref.topic.empty()) throw SchemaViolation("empty topic label", topic_out.dump());
  auto tree = llm.complete_structured(
      "taxonomy.reference", "You draft skeletal research taxonomies from general domain knowledge.",
      "Draft a skeletal " + std::string(to_string(kind)) +
          " taxonomy for the topic as a flat node list. Exactly one root (parent null). Return "
          "{\"nodes\": [{\"id\", \"name\", \"description\", \"parent\"}]}.",
      json{{"kind", to_string(kind)}, {"topic", ref.topic}}, "reference_taxonomy");
  std::map<std::string, ReferenceNode> by_id;
  std::vector<std::string> order;
  std::string root;
  for (const auto& n : tree.at("nodes")) {
    ReferenceNode r{n.at("id").get<std::string>(), trim(n.at("name").get<std::string>()),
                    n.value("description", std::string()),
                    n.at("parent").is_null() ? std::string() : n.at("parent").get<std::string>()};
    if (r.id.empty() || r.name.empty()) throw Error(ErrorCode::StructureError, "reference node without id/name");
    if (by_id.count(r.id)) throw Error(ErrorCode::StructureError, "duplicate reference node id " + r.id);
    if (r.parent.empty()) {
      if (!root.empty()) throw Error(ErrorCode::StructureError, "reference taxonomy has several roots");
      root = r.id;
    }
    order.push_back(r.id);
    by_id[r.id] = std::move(r);
  }
  if (root.empty()) throw Error(ErrorCode::StructureError, "reference taxonomy has no root (cycle?)");
  for (const auto& id : order) {
    std::set<std::string> seen{id};
    std::string cur = by_id[id].parent;
    while (!cur.empty()) {
      auto it = by_id.find(cur);
      if (it == by_id.end()) throw Error(ErrorCode::StructureError, "reference parent missing: " + cur);
      if (!seen.insert(cur).second) throw Error(ErrorCode::StructureError, "reference taxonomy has a cycle");
      cur = it->second.parent;
    }
  }
  by_id[root].name = ref.topic;
  // Root first, then parents before children in response order.
  std::set<std::string> placed{root};
  ref.nodes.push_back(by_id[root]);
  while (ref.nodes.size() < order.size()) {
    for (const auto& id : order) {
      if (!placed.count(id) && placed.count(by_id[id].parent)) {
        placed.insert(id);
        ref.nodes.push_back(by_id[id]);
      }
    }
  }
  return ref;
}

// ---------------------------------------------------------------- taxonomy

Taxonomy::Taxonomy(TaxonomyKind kind, TaxonomyConfig cfg) : kind_(kind), cfg_(cfg) { cfg_.validate(); }

void Taxonomy::set_config(TaxonomyConfig cfg) {
  cfg.validate();
  cfg_ = cfg;
}

Taxonomy::State Taxonomy::snapshot() const {
  return State{root_, nodes_, classes_, concepts_, templates_, paper_tuple_, paper_node_, next_id_};
}

void Taxonomy::restore(State s) {
  root_ = std::move(s.root);
  nodes_ = std::move(s.nodes);
  classes_ = std::move(s.classes);
  concepts_ = std::move(s.concepts);
  templates_ = std::move(s.templates);
  paper_tuple_ = std::move(s.paper_tuple);
  paper_node_ = std::move(s.paper_node);
  next_id_ = s.next_id;
}

std::string Taxonomy::graph_node_kind_prefix() const { return std::string(to_string(kind_)) + ":"; }

std::string Taxonomy::new_node_id() { return graph_node_kind_prefix() + std::to_string(next_id_++); }

const TaxonomyNode& Taxonomy::node(const std::string& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::NotFound, "unknown taxonomy node: " + id);
  return it->second;
}

std::optional<std::string> Taxonomy::find_by_name(const std::string& name) const {
  for (const auto& id : node_ids()) {
    if (nodes_.at(id).name == name) return id;
  }
  return std::nullopt;
}

std::vector<std::string> Taxonomy::node_ids() const {
  std::vector<std::string> out;
  if (root_.empty()) return out;
  std::vector<std::string> stack{root_};
  while (!stack.empty()) {
    auto id = stack.back();
    stack.pop_back();
    out.push_back(id);
    const auto& ch = nodes_.at(id).children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

std::vector<std::string> Taxonomy::leaves() const {
  std::vector<std::string> out;
  for (const auto& id : node_ids()) {
    if (nodes_.at(id).is_leaf()) out.push_back(id);
  }
  return out;
}

std::optional<std::string> Taxonomy::assignment(const std::string& paper_id) const {
  auto it = paper_node_.find(paper_id);
  if (it == paper_node_.end()) return std::nullopt;
  return it->second;
}

std::optional<ClassTuple> Taxonomy::paper_tuple(const std::string& paper_id) const {
  auto it = paper_tuple_.find(paper_id);
  if (it == paper_tuple_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Taxonomy::subtree_papers(const std::string& node_id) const {
  std::vector<std::string> out;
  std::vector<std::string> stack{node_id};
  while (!stack.empty()) {
    const auto& n = node(stack.back());
    stack.pop_back();
    out.insert(out.end(), n.papers.begin(), n.papers.end());
    stack.insert(stack.end(), n.children.begin(), n.children.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string Taxonomy::class_label(const std::string& class_id) const {
  for (const auto& per_aspect : classes_) {
    for (const auto& c : per_aspect) {
      if (c.class_id == class_id) return c.canonical_label;
    }
  }
  return class_id;
}

std::string Taxonomy::tuple_text(const ClassTuple& tuple) const {
  std::vector<std::string> labels;
  for (const auto& c : tuple) labels.push_back(class_label(c));
  return join(labels, " | ");
}

std::string Taxonomy::node_text(const TaxonomyNode& n) const {
  if (n.signature) return tuple_text(*n.signature);
  return n.description.empty() ? n.name : n.name + ": " + n.description;
}

std::string Taxonomy::add_child(const std::string& parent, std::string name, std::string description,
                                std::optional<ClassTuple> signature) {
  TaxonomyNode n;
  n.node_id = new_node_id();
  n.name = std::move(name);
  n.description = std::move(description);
  n.signature = std::move(signature);
  n.parent = parent;
  nodes_.at(parent).children.push_back(n.node_id);
  std::string id = n.node_id;
  nodes_.emplace(id, std::move(n));
  return id;
}

void Taxonomy::assign(const std::string& paper_id, const std::string& node_id) {
  auto prev = paper_node_.find(paper_id);
  if (prev != paper_node_.end()) {
    auto& ps = nodes_.at(prev->second).papers;
    ps.erase(std::remove(ps.begin(), ps.end(), paper_id), ps.end());
  }
  nodes_.at(node_id).papers.push_back(paper_id);
  paper_node_[paper_id] = node_id;
}

std::string Taxonomy::locate_parent(const ClassTuple& tuple, llm::LlmClient& llm) {
  const auto& names = aspect_names(kind_);
  json concept_json = json::object();
  for (std::size_t i = 0; i < tuple.size(); ++i) concept_json[names[i]] = class_label(tuple[i]);
  std::string u = root_;
  for (;;) {
    std::optional<std::string> next;
    for (const auto& c : nodes_.at(u).children) {
      const auto& child = nodes_.at(c);
      auto out = llm.complete_structured(
          "taxonomy.subsumes", "You judge whether a taxonomy node is a strict generalization of a concept.",
          "Does the taxonomy node strictly subsume the concept, so that the concept belongs somewhere "
          "below it? Return {\"subsumes\": true|false}.",
          json{{"kind", to_string(kind_)},
               {"node", {{"name", child.name}, {"description", child.description}}},
               {"concept", concept_json}},
          "subsumption");
      if (out.at("subsumes").get<bool>()) {
        next = c;
        break;
      }
    }
    if (!next) return u;
    u = *next;
  }
}

std::optional<std::string> Taxonomy::find_matching_child(const std::string& parent, const ClassTuple& tuple,
                                                         llm::LlmClient& llm) {
  const auto& children = nodes_.at(parent).children;
  if (children.empty()) return std::nullopt;
  auto target = llm.embed(tuple_text(tuple));
  std::optional<std::string> best;
  double best_sim = -2.0;
  for (const auto& c : children) {
    auto v = llm.embed(node_text(nodes_.at(c)));
    double s = cosine(target, v);
    if (s > best_sim) {
      best_sim = s;
      best = c;
    }
  }
  // Small slack so that identical texts always match despite rounding.
  if (best && best_sim + 1e-12 >= cfg_.tau_match) return best;
  return std::nullopt;
}

std::pair<std::string, std::string> Taxonomy::name_and_describe(const std::string& parent, const ClassTuple& tuple,
                                                                const std::vector<std::string>& papers,
                                                                llm::LlmClient& llm) {
  const auto& names = aspect_names(kind_);
  json concept_json = json::object();
  for (std::size_t i = 0; i < tuple.size(); ++i) concept_json[names[i]] = class_label(tuple[i]);
  json descs = json::array();
  for (const auto& p : papers) {
    auto it = templates_.find(p);
    if (it != templates_.end()) descs.push_back(it->second.description);
  }
  auto out = llm.complete_structured(
      "taxonomy.name_node", "You name nodes of research taxonomies.",
      "Give a canonical short name and a one-sentence description for a new taxonomy node holding this "
      "concept. Return {\"name\", \"description\"}.",
      json{{"kind", to_string(kind_)}, {"parent", nodes_.at(parent).name}, {"concept", concept_json},
           {"papers", descs}},
      "node_name");
  auto name = trim(out.at("name").get<std::string>());
  if (name.empty()) throw SchemaViolation("empty node name", out.dump());
  return {name, trim(out.at("description").get<std::string>())};
}

void Taxonomy::reset_counts_after_build() {
  for (auto& [id, n] : nodes_) {
    n.new_paper_count = 0;
    n.base_size = std::max<std::int64_t>(1, static_cast<std::int64_t>(subtree_papers(id).size()));
  }
}

void Taxonomy::build(const kg::Graph& graph, std::vector<std::string> paper_ids, llm::LlmClient& llm) {
  if (paper_ids.empty()) throw Error(ErrorCode::InvalidArgument, "build: empty corpus");
  std::sort(paper_ids.begin(), paper_ids.end());
  paper_ids.erase(std::unique(paper_ids.begin(), paper_ids.end()), paper_ids.end());
  std::vector<AspectTemplate> templates;
  for (const auto& pid : paper_ids) templates.push_back(extract_template(graph, pid, kind_, llm));
  auto std_result = standardize(templates, kind_, llm);
  auto ref = generate_reference_taxonomy(templates, kind_, llm);
  align_and_instantiate(ref, std_result, llm);
}

void Taxonomy::align_and_instantiate(const ReferenceTaxonomy& ref, const Standardization& std_result,
                                     llm::LlmClient& llm) {
  State saved = snapshot();
  try {
    root_.clear();
    nodes_.clear();
    paper_node_.clear();
    next_id_ = 0;
    classes_ = std_result.classes;
    concepts_ = std_result.concepts;
    templates_ = std_result.templates;
    paper_tuple_ = std_result.paper_tuple;
    // CopyTree.
    std::map<std::string, std::string> ref_to_node;
    for (const auto& r : ref.nodes) {
      if (r.parent.empty()) {
        TaxonomyNode n;
        n.node_id = new_node_id();
        n.name = r.name;
        n.description = r.description;
        root_ = n.node_id;
        ref_to_node[r.id] = n.node_id;
        nodes_.emplace(n.node_id, std::move(n));
      } else {
        ref_to_node[r.id] = add_child(ref_to_node.at(r.parent), r.name, r.description, std::nullopt);
      }
    }
    for (const auto& c : concepts_) {
      std::string u = locate_parent(c.class_tuple, llm);
      auto v = find_matching_child(u, c.class_tuple, llm);
      std::string target;
      if (v) {
        target = *v;
      } else {
        auto [name, desc] = name_and_describe(u, c.class_tuple, c.member_papers, llm);
        target = add_child(u, name, desc, c.class_tuple);
      }
      for (const auto& p : c.member_papers) assign(p, target);
    }
    reset_counts_after_build();
  } catch (...) {
    restore(std::move(saved));
    throw;
  }
}

ClassTuple Taxonomy::map_to_classes_or_create(const AspectTemplate& tmpl, llm::LlmClient& llm) {
  const auto& names = aspect_names(kind_);
  json aspects = json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    json cls = json::array();
    for (const auto& c : classes_[i]) cls.push_back({{"class_id", c.class_id}, {"label", c.canonical_label}});
    aspects.push_back({{"aspect", i}, {"name", names[i]}, {"signature", tmpl.signatures[i]}, {"classes", cls}});
  }
  auto out = llm.complete_structured(
      "taxonomy.map_classes", "You map new research papers onto canonical aspect classes.",
      "For each aspect, pick the existing class equivalent to the signature, or null with a new "
      "canonical label. Return {\"matches\": [{\"aspect\", \"class_id\", \"label\"}]}.",
      json{{"kind", to_string(kind_)}, {"paper_id", tmpl.paper_id}, {"aspects", aspects}}, "class_mapping");
  ClassTuple tuple(names.size());
  std::vector<bool> seen(names.size(), false);
  for (const auto& mt : out.at("matches")) {
    auto i = mt.at("aspect").get<std::size_t>();
    if (i >= names.size() || seen[i]) throw SchemaViolation("bad aspect index in class mapping", out.dump());
    seen[i] = true;
    if (!mt.at("class_id").is_null()) {
      auto id = mt["class_id"].get<std::string>();
      auto it = std::find_if(classes_[i].begin(), classes_[i].end(), [&](const auto& c) { return c.class_id == id; });
      if (it == classes_[i].end()) throw SchemaViolation("unknown class id " + id, out.dump());
      if (std::find(it->member_signatures.begin(), it->member_signatures.end(), tmpl.signatures[i]) ==
          it->member_signatures.end()) {
        it->member_signatures.push_back(tmpl.signatures[i]);
      }
      tuple[i] = id;
    } else {
      std::string label = mt.contains("label") && mt["label"].is_string() ? trim(mt["label"].get<std::string>()) : "";
      AspectClass c;
      c.class_id = aspect_prefix(kind_, i) + std::to_string(classes_[i].size() + 1);
      c.aspect_index = i;
      c.canonical_label = label.empty() ? tmpl.signatures[i] : label;
      c.member_signatures = {tmpl.signatures[i]};
      tuple[i] = c.class_id;
      classes_[i].push_back(std::move(c));
    }
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!seen[i]) throw SchemaViolation("class mapping misses aspect " + names[i], out.dump());
  }
  auto it = std::find_if(concepts_.begin(), concepts_.end(), [&](const auto& c) { return c.class_tuple == tuple; });
  if (it == concepts_.end()) {
    concepts_.push_back({"C" + std::to_string(concepts_.size() + 1), tuple, {tmpl.paper_id}});
  } else {
    it->member_papers.push_back(tmpl.paper_id);
  }
  return tuple;
}

RoutingRecord Taxonomy::update_with_paper(const kg::Graph& graph, const std::string& paper_id,
                                          llm::LlmClient& llm) {
  return update_with_template(extract_template(graph, paper_id, kind_, llm), llm);
}

RoutingRecord Taxonomy::update_with_template(AspectTemplate tmpl, llm::LlmClient& llm) {
  if (!built()) throw Error(ErrorCode::Precondition, "update: taxonomy not built");
  if (paper_node_.count(tmpl.paper_id)) {
    throw Error(ErrorCode::DuplicateId, "paper already in taxonomy: " + tmpl.paper_id);
  }
  if (tmpl.aspects.size() != aspect_names(kind_).size()) {
    throw Error(ErrorCode::InvalidArgument, "template has wrong arity");
  }
  State saved = snapshot();
  try {
    if (tmpl.signatures.size() != tmpl.aspects.size()) tmpl.signatures = extract_signatures(tmpl, kind_, llm);
    templates_[tmpl.paper_id] = tmpl;
    ClassTuple tuple = map_to_classes_or_create(tmpl, llm);
    paper_tuple_[tmpl.paper_id] = tuple;
    RoutingRecord rec;
    rec.paper_id = tmpl.paper_id;
    rec.parent_id = locate_parent(tuple, llm);
    auto v = find_matching_child(rec.parent_id, tuple, llm);
    if (v) {
      rec.node_id = *v;
    } else {
      auto [name, desc] = name_and_describe(rec.parent_id, tuple, {tmpl.paper_id}, llm);
      rec.node_id = add_child(rec.parent_id, name, desc, tuple);
      rec.created_new = true;
    }
    assign(tmpl.paper_id, rec.node_id);
    auto& target = nodes_.at(rec.node_id);
    ++target.new_paper_count;
    if (static_cast<double>(target.new_paper_count) >= cfg_.alpha * static_cast<double>(target.base_size)) {
      rec.refinement = refine_branch(rec.node_id, llm);
    }
    return rec;
  } catch (...) {
    restore(std::move(saved));
    throw;
  }
}

RefinementRecord Taxonomy::refine_branch(const std::string& node_id, llm::LlmClient& llm) {
  node(node_id);
  State saved = snapshot();
  RefinementRecord rec;
  rec.node_id = node_id;
  rec.refinement_case = "noop";
  auto finish = [&] {
    auto& u = nodes_.at(node_id);
    u.new_paper_count = 0;
    u.base_size = std::max<std::int64_t>(1, static_cast<std::int64_t>(subtree_papers(node_id).size()));
  };
  try {
    std::vector<std::string> P = nodes_.at(node_id).papers;
    std::sort(P.begin(), P.end());
    if (P.size() <= 1) {
      finish();
      return rec;
    }
    json papers = json::array();
    const auto& names = aspect_names(kind_);
    for (const auto& p : P) {
      json aspects = json::object();
      const auto& t = templates_.at(p);
      for (std::size_t i = 0; i < names.size(); ++i) aspects[names[i]] = t.aspects[i];
      papers.push_back({{"paper_id", p}, {"description", t.description}, {"aspects", aspects}});
    }
    const auto& u0 = nodes_.at(node_id);
    json node_json{{"name", u0.name}, {"description", u0.description}};
    auto est = llm.complete_structured(
        "taxonomy.estimate_subtopics", "You estimate how many distinct subtopics a set of papers covers.",
        "How many distinct subtopics do these papers form? Return {\"k\": integer}.",
        json{{"kind", to_string(kind_)}, {"node", node_json}, {"papers", papers}}, "subtopic_count");
    int K = std::min(est.at("k").get<int>(), cfg_.k_max);
    if (K <= 1) {
      finish();
      return rec;
    }
    auto cl = llm.complete_structured(
        "taxonomy.cluster", "You cluster research papers into labeled subtopics.",
        "Partition the papers into at most " + std::to_string(K) +
            " clusters; every paper in exactly one cluster. Return {\"clusters\": [{\"label\", "
            "\"description\", \"papers\"}]}.",
        json{{"kind", to_string(kind_)}, {"node", node_json}, {"k", K}, {"papers", papers}}, "clusters");
    const auto& clusters = cl.at("clusters");
    if (clusters.empty() || clusters.size() > static_cast<std::size_t>(K)) {
      throw SchemaViolation("cluster count outside [1, K]", cl.dump());
    }
    std::set<std::string> pset(P.begin(), P.end());
    std::set<std::string> covered;
    for (const auto& c : clusters) {
      for (const auto& p : c.at("papers")) {
        auto id = p.get<std::string>();
        if (!pset.count(id)) throw SchemaViolation("cluster names unknown paper " + id, cl.dump());
        if (!covered.insert(id).second) throw SchemaViolation("paper in two clusters: " + id, cl.dump());
      }
    }
    if (covered.size() != pset.size()) throw SchemaViolation("clusters do not cover all papers", cl.dump());

    const bool leaf = nodes_.at(node_id).is_leaf();
    rec.refinement_case = leaf ? "leaf" : "nonleaf";
    for (const auto& c : clusters) {
      std::vector<std::string> members = c.at("papers").get<std::vector<std::string>>();
      if (members.empty()) continue;
      ClassTuple dominant;
      for (std::size_t i = 0; i < names.size(); ++i) {
        std::map<std::string, int> freq;
        for (const auto& p : members) ++freq[paper_tuple_.at(p)[i]];
        auto best = std::max_element(freq.begin(), freq.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
        dominant.push_back(best->first);
      }
      auto label = trim(c.at("label").get<std::string>());
      if (label.empty()) throw SchemaViolation("empty cluster label", cl.dump());
      std::string desc = c.contains("description") && c["description"].is_string()
                             ? c["description"].get<std::string>()
                             : std::string();
      std::string v;
      if (leaf) {
        v = add_child(node_id, label, desc, dominant);
        rec.new_nodes.push_back(v);
      } else {
        auto match = find_matching_child(node_id, dominant, llm);
        if (match) {
          v = *match;
        } else {
          v = add_child(node_id, label, desc, dominant);
          rec.new_nodes.push_back(v);
        }
      }
      for (const auto& p : members) {
        assign(p, v);
        rec.moved_papers[p] = v;
      }
    }
    for (const auto& v : rec.new_nodes) {
      auto& n = nodes_.at(v);
      n.base_size = std::max<std::int64_t>(1, static_cast<std::int64_t>(n.papers.size()));
    }
    finish();
    return rec;
  } catch (...) {
    restore(std::move(saved));
    throw;
  }
}

void Taxonomy::anchor_into_graph(kg::Graph& graph, llm::LlmClient& llm) const {
  if (!built()) throw Error(ErrorCode::Precondition, "anchor: taxonomy not built");
  const kg::NodeKind nk = kind_ == TaxonomyKind::Problem ? kg::NodeKind::ProblemNode : kg::NodeKind::MethodNode;
  const kg::EdgeKind assign_edge = kind_ == TaxonomyKind::Problem ? kg::EdgeKind::ADDRESSES : kg::EdgeKind::APPLIES;
  const auto& names = aspect_names(kind_);
  int depth_of_root = 0;
  std::map<std::string, int> depth{{root_, depth_of_root}};
  for (const auto& id : node_ids()) {
    const auto& n = nodes_.at(id);
    if (!n.parent.empty()) depth[id] = depth.at(n.parent) + 1;
    kg::GraphNode g;
    g.id = id;
    g.kind = nk;
    g.attrs = {{"name", n.name},
               {"description", n.description},
               {"taxonomy", to_string(kind_)},
               {"depth", depth[id]},
               {"is_leaf", n.is_leaf()}};
    if (n.signature) {
      std::vector<std::string> labels;
      for (std::size_t i = 0; i < n.signature->size(); ++i) labels.push_back(names[i] + ": " + class_label((*n.signature)[i]));
      g.attrs["signature"] = labels;
    }
    g.embedding = llm.embed(n.description.empty() ? n.name : n.description);
    graph.upsert_node(std::move(g));
  }
  for (const auto& id : node_ids()) {
    const auto& n = nodes_.at(id);
    if (!n.parent.empty()) graph.add_edge(id, n.parent, kg::EdgeKind::CHILD_OF);
  }
  for (const auto& [paper, nid] : paper_node_) {
    if (!graph.contains(paper)) continue;
    for (const auto& old : graph.neighbors(paper, assign_edge, kg::Direction::Out, nk)) {
      if (old.id != nid) graph.remove_edge(paper, old.id, assign_edge);
    }
    graph.add_edge(paper, nid, assign_edge);
  }
}

void Taxonomy::check_invariants() const {
  if (root_.empty()) return;
  auto fail = [](const std::string& m) { throw Error(ErrorCode::StructureError, m); };
  if (!nodes_.count(root_) || !nodes_.at(root_).parent.empty()) fail("root missing or has a parent");
  if (nodes_.at(root_).signature) fail("root carries a signature");
  auto ids = node_ids();
  if (ids.size() != nodes_.size()) fail("unreachable nodes or cycle");
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) fail("node reached twice: " + id);
    const auto& n = nodes_.at(id);
    for (const auto& c : n.children) {
      if (nodes_.at(c).parent != id) fail("child/parent mismatch at " + c);
    }
    if (n.new_paper_count < 0 || n.base_size < 1) fail("bad counters at " + id);
  }
  std::map<std::string, int> count;
  for (const auto& [id, n] : nodes_) {
    for (const auto& p : n.papers) {
      if (++count[p] > 1) fail("paper assigned twice: " + p);
      auto it = paper_node_.find(p);
      if (it == paper_node_.end() || it->second != id) fail("assignment index mismatch for " + p);
    }
  }
  if (count.size() != paper_node_.size()) fail("assignment index has stale entries");
}

json Taxonomy::export_node(const std::string& id) const {
  const auto& n = nodes_.at(id);
  json sig = nullptr;
  if (n.signature) {
    sig = json::array();
    for (const auto& c : *n.signature) sig.push_back(class_label(c));
  }
  json children = json::array();
  for (const auto& c : n.children) children.push_back(export_node(c));
  auto papers = n.papers;
  std::sort(papers.begin(), papers.end());
  return json{{"node_id", n.node_id}, {"name", n.name},     {"description", n.description},
              {"signature", sig},     {"papers", papers}, {"children", children}};
}

json Taxonomy::export_tree() const {
  if (root_.empty()) throw Error(ErrorCode::ArtifactMissing, "taxonomy not built");
  json j = export_node(root_);
  j["kind"] = to_string(kind_);
  return j;
}

json Taxonomy::to_state_json() const {
  json nodes = json::array();
  for (const auto& [id, n] : nodes_) nodes.push_back(n.to_json());
  json classes = json::array();
  for (const auto& per : classes_) {
    json a = json::array();
    for (const auto& c : per) a.push_back(c.to_json());
    classes.push_back(a);
  }
  json concepts = json::array();
  for (const auto& c : concepts_) concepts.push_back(c.to_json());
  json templates = json::object();
  for (const auto& [p, t] : templates_) templates[p] = t.to_json();
  return json{{"kind", to_string(kind_)}, {"config", cfg_.to_json()},   {"root", root_},
              {"next_id", next_id_},      {"nodes", nodes},             {"classes", classes},
              {"concepts", concepts},     {"templates", templates},     {"paper_tuple", paper_tuple_},
              {"paper_node", paper_node_}};
}

Taxonomy Taxonomy::from_state_json(const json& j) {
  try {
    Taxonomy t(taxonomy_kind_from_string(j.at("kind").get<std::string>()),
               TaxonomyConfig::from_json(j.value("config", json::object())));
    t.root_ = j.at("root").get<std::string>();
    t.next_id_ = j.at("next_id").get<std::uint64_t>();
    for (const auto& n : j.at("nodes")) {
      auto node = TaxonomyNode::from_json(n);
      t.nodes_.emplace(node.node_id, std::move(node));
    }
    for (const auto& per : j.at("classes")) {
      std::vector<AspectClass> a;
      for (const auto& c : per) a.push_back(AspectClass::from_json(c));
      t.classes_.push_back(std::move(a));
    }
    for (const auto& c : j.at("concepts")) {
      t.concepts_.push_back({c.at("concept_id").get<std::string>(), c.at("class_tuple").get<ClassTuple>(),
                             c.at("member_papers").get<std::vector<std::string>>()});
    }
    for (const auto& [p, tj] : j.at("templates").items()) t.templates_[p] = AspectTemplate::from_json(tj);
    t.paper_tuple_ = j.at("paper_tuple").get<std::map<std::string, ClassTuple>>();
    t.paper_node_ = j.at("paper_node").get<std::map<std::string, std::string>>();
    t.check_invariants();
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptSnapshot, std::string("taxonomy state: ") + e.what());
  }
}

}  // namespace scholar::taxonomy
