#pragma once
// In-process property graph for papers, their components, experimental
// context, bibliographic nodes and the two taxonomies.

#include "scholar/common.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

namespace scholar::kg {

enum class NodeKind {
  Paper,
  Section,
  Figure,
  Table,
  Dataset,
  Metric,
  Baseline,
  Author,
  Venue,
  ProblemNode,
  MethodNode,
};

enum class EdgeKind {
  ADDRESSES,
  APPLIES,
  USES,
  HAS,
  WRITTEN_BY,
  PUBLISHED_IN,
  CHILD_OF,
};

enum class Direction { Out, In };

std::string_view to_string(NodeKind kind);
std::string_view to_string(EdgeKind kind);
std::string_view to_string(Direction dir);
NodeKind node_kind_from_string(std::string_view s);
EdgeKind edge_kind_from_string(std::string_view s);
Direction direction_from_string(std::string_view s);

// Whether the schema admits (src_kind) -[kind]-> (dst_kind).
bool admits(EdgeKind kind, NodeKind src_kind, NodeKind dst_kind);

struct GraphNode {
  std::string id;
  NodeKind kind = NodeKind::Paper;
  // attribute name -> scalar or list of scalars
  json attrs = json::object();
  std::optional<std::vector<double>> embedding;

  json to_json() const;
  static GraphNode from_json(const json& j);

  bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
  std::string src;
  std::string dst;
  EdgeKind kind = EdgeKind::HAS;

  auto operator<=>(const GraphEdge& o) const {
    return std::tie(src, dst, kind) <=> std::tie(o.src, o.dst, o.kind);
  }
  bool operator==(const GraphEdge&) const = default;
};

struct Hop {
  EdgeKind edge_kind;
  Direction direction;
  NodeKind target_kind;

  json to_json() const;
  static Hop from_json(const json& j);
  bool operator==(const Hop&) const = default;
};

struct TraversalPath {
  std::vector<Hop> hops;

  json to_json() const;
  static TraversalPath from_json(const json& j);
};

// Throws InvalidPath when a hop is not admitted by the schema or when
// consecutive hops are not kind-compatible.
void check_path(const TraversalPath& path);

class Graph {
 public:
  static constexpr int kSchemaVersion = 1;

  explicit Graph(std::size_t embedding_dim = 64);
  Graph(const Graph& other);
  Graph& operator=(const Graph& other);

  std::size_t embedding_dim() const noexcept { return embedding_dim_; }

  std::string add_node(GraphNode node);
  // Insert or replace attributes/embedding of an existing node of the same kind.
  void upsert_node(GraphNode node);
  void add_edge(const std::string& src, const std::string& dst, EdgeKind kind);
  bool remove_edge(const std::string& src, const std::string& dst, EdgeKind kind);

  std::optional<GraphNode> get(const std::string& id) const;
  GraphNode at(const std::string& id) const;
  bool contains(const std::string& id) const;
  bool has_edge(const std::string& src, const std::string& dst, EdgeKind kind) const;

  std::vector<GraphNode> nodes_of_kind(NodeKind kind) const;
  std::vector<GraphEdge> edges() const;
  std::size_t node_count() const;
  std::size_t edge_count() const;

  std::vector<GraphNode> neighbors(const std::string& start, EdgeKind edge_kind,
                                   Direction direction, NodeKind target_kind) const;
  std::vector<GraphNode> execute_traversal(const std::vector<std::string>& start_nodes,
                                           const TraversalPath& path) const;

  // Deterministic digest over node and edge content, independent of
  // insertion order.
  std::string corpus_version() const;
  // Monotone mutation counter (not part of the content digest).
  std::uint64_t version_counter() const;

  void snapshot_save(const std::filesystem::path& path) const;
  static Graph snapshot_load(const std::filesystem::path& path);
  std::string serialize() const;
  static Graph deserialize(const std::string& text);

 private:
  using EdgeKey = std::tuple<std::string, EdgeKind>;

  std::vector<GraphNode> neighbors_locked(const std::string& start, EdgeKind edge_kind,
                                          Direction direction, NodeKind target_kind) const;
  std::string corpus_version_locked() const;
  void validate_node(const GraphNode& node) const;

  std::size_t embedding_dim_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, GraphNode> nodes_;
  std::set<GraphEdge> edges_;
  // node id -> set of (other end, kind)
  std::map<std::string, std::set<EdgeKey>> out_;
  std::map<std::string, std::set<EdgeKey>> in_;
  std::uint64_t version_ = 0;
};

}  // namespace scholar::kg
