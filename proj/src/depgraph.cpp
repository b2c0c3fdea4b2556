#include "pts/depgraph.hpp"

#include "pts/error.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <ostream>

namespace pts {

std::string_view to_string(NodeKind kind) noexcept {
  switch (kind) {
    case NodeKind::File: return "file";
    case NodeKind::Library: return "library";
    case NodeKind::Test: return "test";
  }
  return "?";
}

NodeKind parse_node_kind(std::string_view text) {
  if (text == "file") return NodeKind::File;
  if (text == "library") return NodeKind::Library;
  if (text == "test") return NodeKind::Test;
  throw Error(Errc::ParseError, "unknown node kind '" + std::string(text) + "'");
}

BuildGraph BuildGraph::build(std::vector<NodeSpec> nodes, std::vector<EdgeSpec> edges) {
  BuildGraph g;
  g.ids_.reserve(nodes.size());
  g.kinds_.reserve(nodes.size());
  g.index_.reserve(nodes.size());
  for (auto& node : nodes) {
    const auto index = static_cast<NodeIndex>(g.ids_.size());
    if (!g.index_.emplace(node.id, index).second) {
      throw Error(Errc::DuplicateNode, node.id);
    }
    g.ids_.push_back(std::move(node.id));
    g.kinds_.push_back(node.kind);
    if (node.kind == NodeKind::Test) g.tests_.push_back(index);
  }

  const std::size_t n = g.ids_.size();
  std::vector<std::pair<NodeIndex, NodeIndex>> resolved;
  resolved.reserve(edges.size());
  for (const auto& edge : edges) {
    const auto from = g.find(edge.from);
    const auto to = g.find(edge.to);
    if (!from) throw Error(Errc::UnknownEndpoint, edge.from);
    if (!to) throw Error(Errc::UnknownEndpoint, edge.to);
    if (g.kinds_[*to] == NodeKind::File) {
      throw Error(Errc::InvalidEdge, edge.from + " -> " + edge.to + ": files cannot have dependencies");
    }
    if (g.kinds_[*from] == NodeKind::Test) {
      throw Error(Errc::InvalidEdge, edge.from + " -> " + edge.to + ": tests must be sinks");
    }
    resolved.emplace_back(*from, *to);
  }

  g.offsets_.assign(n + 1, 0);
  for (const auto& [from, to] : resolved) ++g.offsets_[from + 1];
  for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] += g.offsets_[i];
  g.targets_.resize(resolved.size());
  std::vector<std::uint32_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
  for (const auto& [from, to] : resolved) g.targets_[cursor[from]++] = to;

  // Kahn's algorithm; anything left over sits on or behind a cycle.
  std::vector<std::uint32_t> indegree(n, 0);
  for (NodeIndex t : g.targets_) ++indegree[t];
  std::deque<NodeIndex> ready;
  for (NodeIndex i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push_back(i);
  }
  g.topo_.reserve(n);
  while (!ready.empty()) {
    const NodeIndex node = ready.front();
    ready.pop_front();
    g.topo_.push_back(node);
    for (NodeIndex next : g.dependents(node)) {
      if (--indegree[next] == 0) ready.push_back(next);
    }
  }
  if (g.topo_.size() != n) {
    // Walk leftover successors until a node repeats; that node is on a cycle.
    NodeIndex walker = 0;
    while (indegree[walker] == 0) ++walker;
    std::vector<bool> seen(n, false);
    while (!seen[walker]) {
      seen[walker] = true;
      for (NodeIndex next : g.dependents(walker)) {
        if (indegree[next] != 0) {
          walker = next;
          break;
        }
      }
    }
    throw Error(Errc::CycleDetected, "cycle through " + g.ids_[walker]);
  }

  g.edges_ = std::move(edges);
  return g;
}

std::optional<NodeIndex> BuildGraph::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

NodeIndex BuildGraph::index_of(std::string_view id) const {
  const auto found = find(id);
  if (!found) throw Error(Errc::UnknownNode, std::string(id));
  return *found;
}

std::span<const NodeIndex> BuildGraph::dependents(NodeIndex node) const {
  return {targets_.data() + offsets_[node], targets_.data() + offsets_[node + 1]};
}

std::vector<NodeIndex> BuildGraph::resolve_files(std::span<const std::string> modified) const {
  std::vector<NodeIndex> sources;
  sources.reserve(modified.size());
  for (const auto& file : modified) {
    const NodeIndex node = index_of(file);
    if (kinds_[node] != NodeKind::File) throw Error(Errc::NotAFile, file);
    sources.push_back(node);
  }
  return sources;
}

std::vector<int> BuildGraph::distances_from(std::span<const NodeIndex> sources) const {
  std::vector<int> dist(ids_.size(), kUnreachableDistance);
  std::deque<NodeIndex> frontier;
  for (NodeIndex s : sources) {
    if (dist[s] != 0) {
      dist[s] = 0;
      frontier.push_back(s);
    }
  }
  while (!frontier.empty()) {
    const NodeIndex node = frontier.front();
    frontier.pop_front();
    const int next_dist = std::min(dist[node] + 1, kMaxDistance);
    for (NodeIndex next : dependents(node)) {
      if (dist[next] == kUnreachableDistance) {
        dist[next] = next_dist;
        frontier.push_back(next);
      }
    }
  }
  return dist;
}

std::vector<std::string> BuildGraph::dependent_tests(std::span<const std::string> modified) const {
  const auto dist = distances_from(resolve_files(modified));
  std::vector<std::string> out;
  for (NodeIndex t : tests_) {
    if (dist[t] != kUnreachableDistance) out.push_back(ids_[t]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

int BuildGraph::min_distance(std::span<const std::string> modified, std::string_view target) const {
  const NodeIndex t = index_of(target);
  if (kinds_[t] != NodeKind::Test) throw Error(Errc::NotATest, std::string(target));
  return distances_from(resolve_files(modified))[t];
}

std::vector<NodeSpec> BuildGraph::node_specs() const {
  std::vector<NodeSpec> out;
  out.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) out.push_back({ids_[i], kinds_[i]});
  return out;
}

std::vector<EdgeSpec> BuildGraph::edge_specs() const { return edges_; }

BuildGraph load_graph_jsonl(std::istream& in, const std::string& source) {
  std::vector<NodeSpec> nodes;
  std::vector<EdgeSpec> edges;
  read_jsonl(in, source, [&](const Json& obj, std::size_t) {
    if (obj.contains("node")) {
      if (obj.size() != 2 || !obj.contains("kind") || !obj["node"].is_string() ||
          !obj["kind"].is_string()) {
        throw Error(Errc::ParseError, "node lines need exactly string fields 'node' and 'kind'");
      }
      nodes.push_back({obj["node"].get<std::string>(), parse_node_kind(obj["kind"].get<std::string>())});
    } else if (obj.contains("edge")) {
      const auto& e = obj["edge"];
      if (obj.size() != 1 || !e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string()) {
        throw Error(Errc::ParseError, "edge lines need 'edge': [from, to]");
      }
      edges.push_back({e[0].get<std::string>(), e[1].get<std::string>()});
    } else {
      throw Error(Errc::ParseError, "expected a 'node' or 'edge' line");
    }
  });
  return BuildGraph::build(std::move(nodes), std::move(edges));
}

BuildGraph load_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return load_graph_jsonl(in, path.string());
}

void write_graph_jsonl(std::ostream& out, const BuildGraph& graph) {
  for (const auto& node : graph.node_specs()) {
    out << Json{{"node", node.id}, {"kind", to_string(node.kind)}}.dump() << '\n';
  }
  for (const auto& edge : graph.edge_specs()) {
    out << Json{{"edge", {edge.from, edge.to}}}.dump() << '\n';
  }
}

void GraphStore::add(std::string revision, BuildGraph graph) {
  graphs_.insert_or_assign(std::move(revision), std::move(graph));
}

const BuildGraph& GraphStore::at(std::string_view revision) const {
  const auto it = graphs_.find(revision);
  if (it == graphs_.end()) throw Error(Errc::MissingGraphSnapshot, std::string(revision));
  return it->second;
}

bool GraphStore::contains(std::string_view revision) const { return graphs_.find(revision) != graphs_.end(); }

}  // namespace pts
