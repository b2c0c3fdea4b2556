#pragma once

#include "pts/jsonl.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pts {

enum class NodeKind : std::uint8_t { File, Library, Test };

std::string_view to_string(NodeKind kind) noexcept;
NodeKind parse_node_kind(std::string_view text);

using NodeIndex = std::uint32_t;

struct NodeSpec {
  std::string id;
  NodeKind kind;
};

/// `to` directly depends on `from`; a change to `from` impacts `to`.
struct EdgeSpec {
  std::string from;
  std::string to;
};

/// Hop count used when no modified file reaches a target. Graphs deeper than
/// kMaxDistance are not supported; the value is part of every feature schema
/// so models stay portable across graph snapshots.
inline constexpr int kMaxDistance = 1023;
inline constexpr int kUnreachableDistance = kMaxDistance + 1;

/// Immutable build dependency DAG over files, libraries, and tests.
class BuildGraph {
 public:
  BuildGraph() = default;

  /// Validates and freezes the graph. Throws DuplicateNode, UnknownEndpoint,
  /// InvalidEdge (edge into a file or out of a test) or CycleDetected.
  static BuildGraph build(std::vector<NodeSpec> nodes, std::vector<EdgeSpec> edges);

  std::size_t node_count() const noexcept { return ids_.size(); }
  std::size_t edge_count() const noexcept { return targets_.size(); }

  std::optional<NodeIndex> find(std::string_view id) const;
  /// Throws UnknownNode.
  NodeIndex index_of(std::string_view id) const;

  const std::string& id(NodeIndex node) const { return ids_[node]; }
  NodeKind kind(NodeIndex node) const { return kinds_[node]; }
  std::span<const NodeIndex> dependents(NodeIndex node) const;
  /// Test nodes in insertion order.
  std::span<const NodeIndex> tests() const noexcept { return tests_; }
  /// Nodes in a topological order (dependencies before dependents).
  std::span<const NodeIndex> topological_order() const noexcept { return topo_; }

  /// Resolves file identifiers; throws UnknownNode or NotAFile.
  std::vector<NodeIndex> resolve_files(std::span<const std::string> modified) const;

  /// Multi-source BFS along dependency direction. Entry i is the hop count
  /// from the nearest source to node i, or kUnreachableDistance.
  std::vector<int> distances_from(std::span<const NodeIndex> sources) const;

  /// Test nodes transitively depending on any modified file, sorted by id.
  std::vector<std::string> dependent_tests(std::span<const std::string> modified) const;

  /// Minimum hop count from any modified file to `target`, or
  /// kUnreachableDistance. Throws UnknownNode / NotATest.
  int min_distance(std::span<const std::string> modified, std::string_view target) const;

  /// Nodes and edges in insertion order, suitable for rebuilding.
  std::vector<NodeSpec> node_specs() const;
  std::vector<EdgeSpec> edge_specs() const;

 private:
  std::vector<std::string> ids_;
  std::vector<NodeKind> kinds_;
  std::unordered_map<std::string, NodeIndex> index_;
  // CSR adjacency in edge insertion order per source.
  std::vector<std::uint32_t> offsets_;
  std::vector<NodeIndex> targets_;
  std::vector<NodeIndex> tests_;
  std::vector<NodeIndex> topo_;
  std::vector<EdgeSpec> edges_;
};

/// Graph file: one object per line, {"node": id, "kind": ...} or {"edge": [from, to]}.
BuildGraph load_graph_jsonl(std::istream& in, const std::string& source = "<graph>");
BuildGraph load_graph_file(const std::filesystem::path& path);
void write_graph_jsonl(std::ostream& out, const BuildGraph& graph);

/// Graph snapshots keyed by revision.
class GraphStore {
 public:
  void add(std::string revision, BuildGraph graph);
  /// Throws MissingGraphSnapshot.
  const BuildGraph& at(std::string_view revision) const;
  bool contains(std::string_view revision) const;
  std::size_t size() const noexcept { return graphs_.size(); }

 private:
  std::map<std::string, BuildGraph, std::less<>> graphs_;
};

}  // namespace pts
