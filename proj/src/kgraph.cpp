#include "scholar/kgraph.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <mutex>
#include <sstream>

namespace scholar::kg {
namespace {

constexpr std::array kNodeKinds = {
    std::pair{NodeKind::Paper, "Paper"},         std::pair{NodeKind::Section, "Section"},
    std::pair{NodeKind::Figure, "Figure"},       std::pair{NodeKind::Table, "Table"},
    std::pair{NodeKind::Dataset, "Dataset"},     std::pair{NodeKind::Metric, "Metric"},
    std::pair{NodeKind::Baseline, "Baseline"},   std::pair{NodeKind::Author, "Author"},
    std::pair{NodeKind::Venue, "Venue"},         std::pair{NodeKind::ProblemNode, "ProblemNode"},
    std::pair{NodeKind::MethodNode, "MethodNode"},
};

constexpr std::array kEdgeKinds = {
    std::pair{EdgeKind::ADDRESSES, "ADDRESSES"},   std::pair{EdgeKind::APPLIES, "APPLIES"},
    std::pair{EdgeKind::USES, "USES"},             std::pair{EdgeKind::HAS, "HAS"},
    std::pair{EdgeKind::WRITTEN_BY, "WRITTEN_BY"}, std::pair{EdgeKind::PUBLISHED_IN, "PUBLISHED_IN"},
    std::pair{EdgeKind::CHILD_OF, "CHILD_OF"},
};

bool is_scalar_or_list(const json& v) {
  if (v.is_primitive()) return true;
  if (!v.is_array()) return false;
  return std::all_of(v.begin(), v.end(), [](const json& e) {
    return e.is_primitive() || (e.is_array() && std::all_of(e.begin(), e.end(),
                                                            [](const json& x) { return x.is_primitive(); }));
  });
}

}  // namespace

std::string_view to_string(NodeKind kind) {
  for (auto [k, name] : kNodeKinds) {
    if (k == kind) return name;
  }
  return "?";
}

std::string_view to_string(EdgeKind kind) {
  for (auto [k, name] : kEdgeKinds) {
    if (k == kind) return name;
  }
  return "?";
}

std::string_view to_string(Direction dir) { return dir == Direction::Out ? "out" : "in"; }

NodeKind node_kind_from_string(std::string_view s) {
  for (auto [k, name] : kNodeKinds) {
    if (s == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown node kind: " + std::string(s));
}

EdgeKind edge_kind_from_string(std::string_view s) {
  for (auto [k, name] : kEdgeKinds) {
    if (s == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown edge kind: " + std::string(s));
}

Direction direction_from_string(std::string_view s) {
  if (s == "out") return Direction::Out;
  if (s == "in") return Direction::In;
  throw Error(ErrorCode::InvalidArgument, "unknown direction: " + std::string(s));
}

bool admits(EdgeKind kind, NodeKind src, NodeKind dst) {
  switch (kind) {
    case EdgeKind::ADDRESSES: return src == NodeKind::Paper && dst == NodeKind::ProblemNode;
    case EdgeKind::APPLIES: return src == NodeKind::Paper && dst == NodeKind::MethodNode;
    case EdgeKind::USES:
      return src == NodeKind::Paper &&
             (dst == NodeKind::Dataset || dst == NodeKind::Metric || dst == NodeKind::Baseline);
    case EdgeKind::HAS:
      return src == NodeKind::Paper &&
             (dst == NodeKind::Section || dst == NodeKind::Figure || dst == NodeKind::Table);
    case EdgeKind::WRITTEN_BY: return src == NodeKind::Paper && dst == NodeKind::Author;
    case EdgeKind::PUBLISHED_IN: return src == NodeKind::Paper && dst == NodeKind::Venue;
    case EdgeKind::CHILD_OF:
      return (src == NodeKind::ProblemNode && dst == NodeKind::ProblemNode) ||
             (src == NodeKind::MethodNode && dst == NodeKind::MethodNode);
  }
  return false;
}

json GraphNode::to_json() const {
  json j{{"id", id}, {"kind", to_string(kind)}, {"attrs", attrs}};
  if (embedding) j["embedding"] = *embedding;
  return j;
}

GraphNode GraphNode::from_json(const json& j) {
  GraphNode n;
  n.id = j.at("id").get<std::string>();
  n.kind = node_kind_from_string(j.at("kind").get<std::string>());
  n.attrs = j.value("attrs", json::object());
  if (j.contains("embedding") && !j["embedding"].is_null()) {
    n.embedding = j["embedding"].get<std::vector<double>>();
  }
  return n;
}

json Hop::to_json() const {
  return json{{"edge_kind", to_string(edge_kind)},
              {"direction", to_string(direction)},
              {"target_kind", to_string(target_kind)}};
}

Hop Hop::from_json(const json& j) {
  return Hop{edge_kind_from_string(j.at("edge_kind").get<std::string>()),
             direction_from_string(j.at("direction").get<std::string>()),
             node_kind_from_string(j.at("target_kind").get<std::string>())};
}

json TraversalPath::to_json() const {
  json arr = json::array();
  for (const auto& h : hops) arr.push_back(h.to_json());
  return arr;
}

TraversalPath TraversalPath::from_json(const json& j) {
  TraversalPath p;
  for (const auto& h : j) p.hops.push_back(Hop::from_json(h));
  return p;
}

namespace {

// Kinds that may sit at the near end of a hop (where the walker stands).
std::vector<NodeKind> near_kinds(const Hop& hop) {
  std::vector<NodeKind> out;
  for (auto [near, _] : kNodeKinds) {
    bool ok = hop.direction == Direction::Out ? admits(hop.edge_kind, near, hop.target_kind)
                                              : admits(hop.edge_kind, hop.target_kind, near);
    if (ok) out.push_back(near);
  }
  return out;
}

}  // namespace

void check_path(const TraversalPath& path) {
  for (std::size_t i = 0; i < path.hops.size(); ++i) {
    const Hop& hop = path.hops[i];
    auto nears = near_kinds(hop);
    if (nears.empty()) {
      throw Error(ErrorCode::InvalidPath,
                  "hop " + std::to_string(i) + ": " + std::string(to_string(hop.edge_kind)) + "/" +
                      std::string(to_string(hop.direction)) + " cannot reach " +
                      std::string(to_string(hop.target_kind)));
    }
    if (i > 0) {
      NodeKind prev = path.hops[i - 1].target_kind;
      if (std::find(nears.begin(), nears.end(), prev) == nears.end()) {
        throw Error(ErrorCode::InvalidPath, "hop " + std::to_string(i) + " cannot start from " +
                                                std::string(to_string(prev)));
      }
    }
  }
}

Graph::Graph(std::size_t embedding_dim) : embedding_dim_(embedding_dim) {}

Graph::Graph(const Graph& other) {
  std::shared_lock lock(other.mutex_);
  embedding_dim_ = other.embedding_dim_;
  nodes_ = other.nodes_;
  edges_ = other.edges_;
  out_ = other.out_;
  in_ = other.in_;
  version_ = other.version_;
}

Graph& Graph::operator=(const Graph& other) {
  if (this == &other) return *this;
  Graph copy(other);
  std::unique_lock lock(mutex_);
  embedding_dim_ = copy.embedding_dim_;
  nodes_ = std::move(copy.nodes_);
  edges_ = std::move(copy.edges_);
  out_ = std::move(copy.out_);
  in_ = std::move(copy.in_);
  version_ = copy.version_;
  return *this;
}

void Graph::validate_node(const GraphNode& node) const {
  if (node.id.empty()) throw Error(ErrorCode::InvalidArgument, "node id must be non-empty");
  if (node.kind == NodeKind::Paper) {
    auto it = node.attrs.find("title");
    if (it == node.attrs.end() || !it->is_string() || it->get<std::string>().empty()) {
      throw Error(ErrorCode::MissingAttribute, "Paper node '" + node.id + "' requires a title");
    }
  }
  if (!node.attrs.is_object()) {
    throw Error(ErrorCode::InvalidArgument, "attrs must be an object");
  }
  for (const auto& [k, v] : node.attrs.items()) {
    if (!is_scalar_or_list(v)) {
      throw Error(ErrorCode::InvalidArgument, "attribute '" + k + "' must be scalar or list");
    }
  }
  if (node.embedding && node.embedding->size() != embedding_dim_) {
    throw Error(ErrorCode::DimensionMismatch,
                "node '" + node.id + "' embedding has dimension " +
                    std::to_string(node.embedding->size()) + ", graph declares " +
                    std::to_string(embedding_dim_));
  }
}

std::string Graph::add_node(GraphNode node) {
  validate_node(node);
  std::unique_lock lock(mutex_);
  if (nodes_.count(node.id)) {
    throw Error(ErrorCode::DuplicateId, "duplicate node id: " + node.id);
  }
  std::string id = node.id;
  nodes_.emplace(id, std::move(node));
  ++version_;
  return id;
}

void Graph::upsert_node(GraphNode node) {
  validate_node(node);
  std::unique_lock lock(mutex_);
  auto it = nodes_.find(node.id);
  if (it == nodes_.end()) {
    std::string id = node.id;
    nodes_.emplace(id, std::move(node));
    ++version_;
    return;
  }
  if (it->second.kind != node.kind) {
    throw Error(ErrorCode::KindIncompatible, "upsert cannot change kind of '" + node.id + "'");
  }
  if (it->second == node) return;
  it->second = std::move(node);
  ++version_;
}

void Graph::add_edge(const std::string& src, const std::string& dst, EdgeKind kind) {
  std::unique_lock lock(mutex_);
  auto s = nodes_.find(src);
  auto d = nodes_.find(dst);
  if (s == nodes_.end() || d == nodes_.end()) {
    throw Error(ErrorCode::MissingEndpoint,
                "edge endpoint missing: " + (s == nodes_.end() ? src : dst));
  }
  if (!admits(kind, s->second.kind, d->second.kind)) {
    throw Error(ErrorCode::KindIncompatible,
                std::string(to_string(kind)) + " does not admit " +
                    std::string(to_string(s->second.kind)) + " -> " +
                    std::string(to_string(d->second.kind)));
  }
  if (!edges_.insert(GraphEdge{src, dst, kind}).second) return;
  out_[src].insert({dst, kind});
  in_[dst].insert({src, kind});
  ++version_;
}

bool Graph::remove_edge(const std::string& src, const std::string& dst, EdgeKind kind) {
  std::unique_lock lock(mutex_);
  if (edges_.erase(GraphEdge{src, dst, kind}) == 0) return false;
  out_[src].erase({dst, kind});
  in_[dst].erase({src, kind});
  ++version_;
  return true;
}

std::optional<GraphNode> Graph::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = nodes_.find(id);
  if (it == nodes_.end()) return std::nullopt;
  return it->second;
}

GraphNode Graph::at(const std::string& id) const {
  auto n = get(id);
  if (!n) throw Error(ErrorCode::NotFound, "no such node: " + id);
  return *n;
}

bool Graph::contains(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return nodes_.count(id) > 0;
}

bool Graph::has_edge(const std::string& src, const std::string& dst, EdgeKind kind) const {
  std::shared_lock lock(mutex_);
  return edges_.count(GraphEdge{src, dst, kind}) > 0;
}

std::vector<GraphNode> Graph::nodes_of_kind(NodeKind kind) const {
  std::shared_lock lock(mutex_);
  std::vector<GraphNode> out;
  for (const auto& [_, n] : nodes_) {
    if (n.kind == kind) out.push_back(n);
  }
  return out;
}

std::vector<GraphEdge> Graph::edges() const {
  std::shared_lock lock(mutex_);
  return {edges_.begin(), edges_.end()};
}

std::size_t Graph::node_count() const {
  std::shared_lock lock(mutex_);
  return nodes_.size();
}

std::size_t Graph::edge_count() const {
  std::shared_lock lock(mutex_);
  return edges_.size();
}

std::vector<GraphNode> Graph::neighbors_locked(const std::string& start, EdgeKind edge_kind,
                                               Direction direction, NodeKind target_kind) const {
  if (!nodes_.count(start)) throw Error(ErrorCode::NotFound, "no such node: " + start);
  const auto& adj = direction == Direction::Out ? out_ : in_;
  std::vector<GraphNode> out;
  auto it = adj.find(start);
  if (it == adj.end()) return out;
  for (const auto& [other, kind] : it->second) {
    if (kind != edge_kind) continue;
    const GraphNode& n = nodes_.at(other);
    if (n.kind == target_kind) out.push_back(n);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::vector<GraphNode> Graph::neighbors(const std::string& start, EdgeKind edge_kind,
                                        Direction direction, NodeKind target_kind) const {
  std::shared_lock lock(mutex_);
  return neighbors_locked(start, edge_kind, direction, target_kind);
}

std::vector<GraphNode> Graph::execute_traversal(const std::vector<std::string>& start_nodes,
                                                const TraversalPath& path) const {
  check_path(path);
  std::shared_lock lock(mutex_);
  std::map<std::string, const GraphNode*> frontier;
  for (const auto& id : start_nodes) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(ErrorCode::NotFound, "no such start node: " + id);
    frontier.emplace(id, &it->second);
  }
  for (const auto& hop : path.hops) {
    std::map<std::string, const GraphNode*> next;
    for (const auto& [id, _] : frontier) {
      const auto& adj = hop.direction == Direction::Out ? out_ : in_;
      auto it = adj.find(id);
      if (it == adj.end()) continue;
      for (const auto& [other, kind] : it->second) {
        if (kind != hop.edge_kind) continue;
        const GraphNode& n = nodes_.at(other);
        if (n.kind == hop.target_kind) next.emplace(other, &n);
      }
    }
    frontier = std::move(next);
  }
  std::vector<GraphNode> out;
  out.reserve(frontier.size());
  for (const auto& [_, n] : frontier) out.push_back(*n);
  return out;
}

std::string Graph::corpus_version_locked() const {
  std::string buf = "dim:" + std::to_string(embedding_dim_) + "\n";
  for (const auto& [_, n] : nodes_) {
    buf += n.to_json().dump();
    buf.push_back('\n');
  }
  for (const auto& e : edges_) {
    buf += json::array({e.src, e.dst, to_string(e.kind)}).dump();
    buf.push_back('\n');
  }
  return sha256_hex(buf);
}

std::string Graph::corpus_version() const {
  std::shared_lock lock(mutex_);
  return corpus_version_locked();
}

std::uint64_t Graph::version_counter() const {
  std::shared_lock lock(mutex_);
  return version_;
}

std::string Graph::serialize() const {
  std::shared_lock lock(mutex_);
  std::string out;
  json header{{"schema_version", kSchemaVersion},
              {"embedding_dim", embedding_dim_},
              {"corpus_version", corpus_version_locked()},
              {"nodes", nodes_.size()},
              {"edges", edges_.size()}};
  out += header.dump() + "\n";
  for (const auto& [_, n] : nodes_) {
    json rec = n.to_json();
    rec["type"] = "node";
    out += rec.dump() + "\n";
  }
  for (const auto& e : edges_) {
    json rec{{"type", "edge"}, {"src", e.src}, {"dst", e.dst}, {"kind", to_string(e.kind)}};
    out += rec.dump() + "\n";
  }
  return out;
}

Graph Graph::deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::CorruptSnapshot, "snapshot: missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptSnapshot, std::string("snapshot header: ") + e.what());
  }
  if (!header.is_object() || header.value("schema_version", -1) != kSchemaVersion) {
    throw Error(ErrorCode::CorruptSnapshot, "snapshot: incompatible schema version");
  }
  Graph g(header.at("embedding_dim").get<std::size_t>());
  std::size_t want_nodes = header.value("nodes", std::size_t{0});
  std::size_t want_edges = header.value("edges", std::size_t{0});
  std::size_t n_nodes = 0;
  std::size_t n_edges = 0;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      auto type = rec.at("type").get<std::string>();
      if (type == "node") {
        g.add_node(GraphNode::from_json(rec));
        ++n_nodes;
      } else if (type == "edge") {
        g.add_edge(rec.at("src").get<std::string>(), rec.at("dst").get<std::string>(),
                   edge_kind_from_string(rec.at("kind").get<std::string>()));
        ++n_edges;
      } else {
        throw Error(ErrorCode::CorruptSnapshot, "snapshot: unknown record type " + type);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptSnapshot, std::string("snapshot record: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptSnapshot) throw;
    throw Error(ErrorCode::CorruptSnapshot, std::string("snapshot record: ") + e.what());
  }
  if (n_nodes != want_nodes || n_edges != want_edges) {
    throw Error(ErrorCode::CorruptSnapshot, "snapshot: record count mismatch (truncated?)");
  }
  if (g.corpus_version() != header.value("corpus_version", std::string())) {
    throw Error(ErrorCode::CorruptSnapshot, "snapshot: corpus_version mismatch");
  }
  return g;
}

void Graph::snapshot_save(const std::filesystem::path& path) const {
  std::string text = serialize();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write snapshot: " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot move snapshot into place: " + ec.message());
}

Graph Graph::snapshot_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read snapshot: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace scholar::kg
