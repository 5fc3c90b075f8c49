#pragma once

// And-Or graph grammar, parse graphs as subgraphs of it, and the small graph
// algebra (size, intersection, signed partition) the trust metrics use.

#include <algorithm>
#include <array>
#include <cmath>
#include <iterator>
#include <tuple>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xtom/error.hpp"
#include "xtom/rng.hpp"

namespace xtom {

enum class NodeKind { And, Or, Terminal };
enum class EdgeRelation { Decomposition, Context };

/// Inference process that produced a detection; doubles as the explanation act.
enum class Process { Alpha, Beta, Gamma };

inline constexpr Process kProcesses[] = {Process::Alpha, Process::Beta, Process::Gamma};

constexpr std::string_view process_name(Process p) {
  switch (p) {
    case Process::Alpha: return "ALPHA";
    case Process::Beta: return "BETA";
    case Process::Gamma: return "GAMMA";
  }
  return "?";
}

inline Process parse_process(std::string_view s) {
  if (s == "ALPHA") return Process::Alpha;
  if (s == "BETA") return Process::Beta;
  if (s == "GAMMA") return Process::Gamma;
  fail(ErrorCode::SchemaError, "unknown process '" + std::string(s) + "'");
}

/// Index of a node within its grammar.
struct NodeId {
  std::uint32_t value = 0;
  auto operator<=>(const NodeId&) const = default;
};

/// Index of an edge within its grammar.
struct EdgeId {
  std::uint32_t value = 0;
  auto operator<=>(const EdgeId&) const = default;
};

/// Circle in normalized image coordinates.
struct Region {
  double cx = 0.5;
  double cy = 0.5;
  double r = 0.1;

  bool valid() const {
    return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && r > 0.0 && r <= 0.5;
  }
  bool operator==(const Region&) const = default;
};

/// True when `inner` lies entirely inside `outer`.
inline bool region_contains(const Region& outer, const Region& inner, double tol = 1e-12) {
  double dx = inner.cx - outer.cx;
  double dy = inner.cy - outer.cy;
  return std::sqrt(dx * dx + dy * dy) + inner.r <= outer.r + tol;
}

struct AttributeSlot {
  std::string name;
  std::vector<std::string> values;
};

struct AogNode {
  std::string name;  // identifier used in files
  NodeKind kind = NodeKind::Terminal;
  std::string label;
  std::vector<AttributeSlot> slots;
};

struct AogEdge {
  NodeId parent;
  NodeId child;
  EdgeRelation relation = EdgeRelation::Decomposition;
};

/// Immutable, validated And-Or graph.
class AogGrammar {
 public:
  AogGrammar(std::vector<AogNode> nodes, std::vector<AogEdge> edges);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const AogNode& node(NodeId id) const { return nodes_.at(id.value); }
  const AogEdge& edge(EdgeId id) const { return edges_.at(id.value); }
  const std::vector<AogNode>& nodes() const { return nodes_; }
  const std::vector<AogEdge>& edges() const { return edges_; }
  NodeId root() const { return root_; }
  std::uint64_t hash() const { return hash_; }

  std::optional<NodeId> find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }
  NodeId id_of(std::string_view name) const {
    auto id = find(name);
    if (!id) fail(ErrorCode::DanglingRef, "unknown node '" + std::string(name) + "'");
    return *id;
  }
  const std::string& name_of(NodeId id) const { return node(id).name; }

  bool is_terminal(NodeId id) const { return node(id).kind == NodeKind::Terminal; }

  /// Decomposition children / parents, in file order.
  const std::vector<NodeId>& children(NodeId id) const { return children_[id.value]; }
  const std::vector<NodeId>& parents(NodeId id) const { return parents_[id.value]; }

  /// Distance from the root along decomposition edges (shortest).
  int depth(NodeId id) const { return depth_[id.value]; }

  /// Edges (of any relation) touching a node.
  const std::vector<EdgeId>& incident(NodeId id) const { return incident_[id.value]; }

  std::optional<EdgeId> find_edge(NodeId a, NodeId b) const {
    for (EdgeId e : incident_[a.value]) {
      const auto& ed = edges_[e.value];
      if ((ed.parent == a && ed.child == b) || (ed.parent == b && ed.child == a)) return e;
    }
    return std::nullopt;
  }

  /// Values of a named attribute slot on a node; empty when absent.
  std::vector<std::string> slot_values(NodeId id, std::string_view slot) const {
    for (const auto& s : node(id).slots)
      if (s.name == slot) return s.values;
    return {};
  }

  /// Nodes in pre-order from the root (decomposition edges, file order).
  std::vector<NodeId> preorder() const;

 private:
  std::vector<AogNode> nodes_;
  std::vector<AogEdge> edges_;
  std::unordered_map<std::string, NodeId> by_name_;
  std::vector<std::vector<NodeId>> children_;
  std::vector<std::vector<NodeId>> parents_;
  std::vector<std::vector<EdgeId>> incident_;
  std::vector<int> depth_;
  NodeId root_;
  std::uint64_t hash_ = 0;
};

inline AogGrammar::AogGrammar(std::vector<AogNode> nodes, std::vector<AogEdge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  if (nodes_.empty()) fail(ErrorCode::SchemaError, "grammar has no nodes");
  const std::size_t n = nodes_.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nd = nodes_[i];
    if (nd.name.empty()) fail(ErrorCode::SchemaError, "empty node id");
    if (nd.label.empty()) fail(ErrorCode::SchemaError, "node '" + nd.name + "' has empty label");
    if (!by_name_.emplace(nd.name, NodeId{static_cast<std::uint32_t>(i)}).second)
      fail(ErrorCode::SchemaError, "duplicate node id '" + nd.name + "'");
  }
  children_.resize(n);
  parents_.resize(n);
  incident_.resize(n);
  std::set<std::tuple<std::uint32_t, std::uint32_t, int>> seen;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto& ed = edges_[e];
    if (ed.parent.value >= n || ed.child.value >= n)
      fail(ErrorCode::DanglingRef, "edge references an unknown node");
    if (ed.parent == ed.child)
      fail(ErrorCode::CycleError, "self edge on '" + nodes_[ed.parent.value].name + "'");
    if (!seen.emplace(ed.parent.value, ed.child.value, static_cast<int>(ed.relation)).second)
      fail(ErrorCode::SchemaError, "duplicate edge " + nodes_[ed.parent.value].name + " -> " +
                                       nodes_[ed.child.value].name);
    EdgeId id{static_cast<std::uint32_t>(e)};
    incident_[ed.parent.value].push_back(id);
    incident_[ed.child.value].push_back(id);
    if (ed.relation == EdgeRelation::Decomposition) {
      children_[ed.parent.value].push_back(ed.child);
      parents_[ed.child.value].push_back(ed.parent);
    }
  }

  // Kahn's algorithm over decomposition edges detects cycles.
  std::vector<int> indeg(n, 0);
  for (std::size_t i = 0; i < n; ++i) indeg[i] = static_cast<int>(parents_[i].size());
  std::vector<std::uint32_t> queue;
  for (std::size_t i = 0; i < n; ++i)
    if (indeg[i] == 0) queue.push_back(static_cast<std::uint32_t>(i));
  std::size_t roots = queue.size();
  std::size_t visited = 0;
  for (std::size_t q = 0; q < queue.size(); ++q, ++visited)
    for (NodeId c : children_[queue[q]])
      if (--indeg[c.value] == 0) queue.push_back(c.value);
  if (visited != n) fail(ErrorCode::CycleError, "decomposition edges form a cycle");
  if (roots != 1) fail(ErrorCode::SchemaError, "grammar must have exactly one root, found " + std::to_string(roots));
  for (std::size_t i = 0; i < n; ++i)
    if (parents_[i].empty()) root_ = NodeId{static_cast<std::uint32_t>(i)};

  for (std::size_t i = 0; i < n; ++i) {
    const auto& nd = nodes_[i];
    std::size_t k = children_[i].size();
    if (nd.kind == NodeKind::Terminal && k != 0)
      fail(ErrorCode::SchemaError, "terminal '" + nd.name + "' has children");
    if (nd.kind == NodeKind::And && k < 1)
      fail(ErrorCode::SchemaError, "AND node '" + nd.name + "' needs at least one child");
    if (nd.kind == NodeKind::Or && k < 2)
      fail(ErrorCode::SchemaError, "OR node '" + nd.name + "' needs at least two children");
  }

  depth_.assign(n, -1);
  depth_[root_.value] = 0;
  std::vector<std::uint32_t> bfs{root_.value};
  for (std::size_t q = 0; q < bfs.size(); ++q)
    for (NodeId c : children_[bfs[q]])
      if (depth_[c.value] < 0) {
        depth_[c.value] = depth_[bfs[q]] + 1;
        bfs.push_back(c.value);
      }

  std::uint64_t h = fnv1a("aog");
  for (const auto& nd : nodes_) {
    h = fnv1a(nd.name, h);
    h = fnv1a(std::to_string(static_cast<int>(nd.kind)), h);
    h = fnv1a(nd.label, h);
    for (const auto& s : nd.slots) {
      h = fnv1a(s.name, h);
      for (const auto& v : s.values) h = fnv1a(v, h);
    }
  }
  for (const auto& ed : edges_) {
    h = fnv1a(std::to_string(ed.parent.value) + ">" + std::to_string(ed.child.value) + ":" +
                  std::to_string(static_cast<int>(ed.relation)),
              h);
  }
  hash_ = h;
}

inline std::vector<NodeId> AogGrammar::preorder() const {
  std::vector<NodeId> out;
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<NodeId> stack{root_};
  while (!stack.empty()) {
    NodeId v = stack.back();
    stack.pop_back();
    if (seen[v.value]) continue;
    seen[v.value] = true;
    out.push_back(v);
    const auto& ch = children_[v.value];
    for (auto it = ch.rbegin(); it != ch.rend(); ++it)
      if (!seen[it->value]) stack.push_back(*it);
  }
  return out;
}

namespace detail {

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string strip_comment(std::string_view line) {
  auto pos = line.find('#');
  return std::string(line.substr(0, pos));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Parses the line-oriented grammar format:
///   node <id> <AND|OR|TERM> <label> [slot=v1|v2 ...]
///   edge <parent> <child> <decomp|context>
inline AogGrammar load_grammar(std::string_view document) {
  std::vector<AogNode> nodes;
  std::vector<std::array<std::string, 3>> raw_edges;
  std::istringstream in{std::string(document)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = detail::split_ws(detail::strip_comment(line));
    if (toks.empty()) continue;
    auto where = " (line " + std::to_string(lineno) + ")";
    if (toks[0] == "node") {
      if (toks.size() < 4) fail(ErrorCode::SchemaError, "node needs id, kind and label" + where);
      AogNode nd;
      nd.name = toks[1];
      if (toks[2] == "AND") nd.kind = NodeKind::And;
      else if (toks[2] == "OR") nd.kind = NodeKind::Or;
      else if (toks[2] == "TERM") nd.kind = NodeKind::Terminal;
      else fail(ErrorCode::SchemaError, "bad node kind '" + toks[2] + "'" + where);
      nd.label = toks[3];
      for (std::size_t i = 4; i < toks.size(); ++i) {
        auto eq = toks[i].find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == toks[i].size())
          fail(ErrorCode::SchemaError, "bad slot '" + toks[i] + "'" + where);
        AttributeSlot slot{toks[i].substr(0, eq), detail::split_on(toks[i].substr(eq + 1), '|')};
        for (const auto& v : slot.values)
          if (v.empty()) fail(ErrorCode::SchemaError, "empty slot value" + where);
        nd.slots.push_back(std::move(slot));
      }
      nodes.push_back(std::move(nd));
    } else if (toks[0] == "edge") {
      if (toks.size() != 4) fail(ErrorCode::SchemaError, "edge needs parent, child, relation" + where);
      if (toks[3] != "decomp" && toks[3] != "context")
        fail(ErrorCode::SchemaError, "bad edge relation '" + toks[3] + "'" + where);
      raw_edges.push_back({toks[1], toks[2], toks[3]});
    } else {
      fail(ErrorCode::SchemaError, "unknown record '" + toks[0] + "'" + where);
    }
  }
  std::unordered_map<std::string, std::uint32_t> ids;
  for (std::size_t i = 0; i < nodes.size(); ++i) ids.emplace(nodes[i].name, static_cast<std::uint32_t>(i));
  std::vector<AogEdge> edges;
  for (const auto& re : raw_edges) {
    auto p = ids.find(re[0]);
    auto c = ids.find(re[1]);
    if (p == ids.end()) fail(ErrorCode::DanglingRef, "edge parent '" + re[0] + "' is not declared");
    if (c == ids.end()) fail(ErrorCode::DanglingRef, "edge child '" + re[1] + "' is not declared");
    edges.push_back({NodeId{p->second}, NodeId{c->second},
                     re[2] == "decomp" ? EdgeRelation::Decomposition : EdgeRelation::Context});
  }
  return AogGrammar(std::move(nodes), std::move(edges));
}

inline AogGrammar load_grammar_file(const std::string& path) { return load_grammar(detail::read_file(path)); }

struct DetectionRecord {
  Process process = Process::Alpha;
  double confidence = 1.0;
  Region region;
  bool correct = true;  // ground truth; never shown to users

  bool operator==(const DetectionRecord&) const = default;
};

/// A subgraph of a grammar. The same type holds the machine's parse, the
/// machine's estimate of the user's parse, and the user's model of the
/// machine.
struct ParseGraph {
  std::uint64_t grammar_hash = 0;
  std::set<NodeId> nodes;
  std::set<EdgeId> edges;
  std::map<NodeId, std::map<std::string, std::string>> attributes;
  std::map<NodeId, DetectionRecord> detections;

  bool empty() const { return nodes.empty() && edges.empty(); }
  bool contains(NodeId v) const { return nodes.count(v) != 0; }
  const DetectionRecord* detection(NodeId v) const {
    auto it = detections.find(v);
    return it == detections.end() ? nullptr : &it->second;
  }
};

/// Empty parse graph bound to a grammar.
inline ParseGraph empty_pg(const AogGrammar& g) { return ParseGraph{g.hash(), {}, {}, {}, {}}; }

/// Node set plus every grammar edge whose endpoints are both in the set.
inline ParseGraph induced_pg(const AogGrammar& g, const std::set<NodeId>& nodes) {
  ParseGraph pg = empty_pg(g);
  pg.nodes = nodes;
  for (std::uint32_t e = 0; e < g.edge_count(); ++e) {
    const auto& ed = g.edge(EdgeId{e});
    if (nodes.count(ed.parent) && nodes.count(ed.child)) pg.edges.insert(EdgeId{e});
  }
  return pg;
}

/// Every node and edge of the grammar.
inline ParseGraph full_pg(const AogGrammar& g) {
  std::set<NodeId> all;
  for (std::uint32_t i = 0; i < g.node_count(); ++i) all.insert(NodeId{i});
  return induced_pg(g, all);
}

inline std::size_t pg_size(const ParseGraph& pg) { return pg.nodes.size() + pg.edges.size(); }

/// Node and edge sets intersected; edges whose endpoints did not both survive
/// are dropped. Detections and attributes come from `a`.
inline ParseGraph pg_intersect(const ParseGraph& a, const ParseGraph& b, const AogGrammar& g) {
  if (a.grammar_hash != b.grammar_hash || a.grammar_hash != g.hash())
    fail(ErrorCode::GrammarMismatch, "intersecting parse graphs of different grammars");
  ParseGraph out = empty_pg(g);
  std::set_intersection(a.nodes.begin(), a.nodes.end(), b.nodes.begin(), b.nodes.end(),
                        std::inserter(out.nodes, out.nodes.end()));
  for (EdgeId e : a.edges) {
    if (!b.edges.count(e)) continue;
    const auto& ed = g.edge(e);
    if (out.nodes.count(ed.parent) && out.nodes.count(ed.child)) out.edges.insert(e);
  }
  for (NodeId v : out.nodes) {
    if (auto it = a.detections.find(v); it != a.detections.end()) out.detections.emplace(v, it->second);
    if (auto it = a.attributes.find(v); it != a.attributes.end()) out.attributes.emplace(v, it->second);
  }
  return out;
}

/// Splits by detection correctness. Each side keeps the edges whose
/// endpoints both landed on that side.
inline std::pair<ParseGraph, ParseGraph> signed_partition(const ParseGraph& pg, const AogGrammar& g) {
  if (pg.grammar_hash != g.hash()) fail(ErrorCode::GrammarMismatch, "parse graph is from another grammar");
  std::set<NodeId> pos, neg;
  for (NodeId v : pg.nodes) {
    const auto* det = pg.detection(v);
    if (!det) fail(ErrorCode::MissingDetection, "node '" + g.name_of(v) + "' has no detection record");
    (det->correct ? pos : neg).insert(v);
  }
  auto restrict = [&](const std::set<NodeId>& keep) {
    ParseGraph out = empty_pg(g);
    out.nodes = keep;
    for (EdgeId e : pg.edges) {
      const auto& ed = g.edge(e);
      if (keep.count(ed.parent) && keep.count(ed.child)) out.edges.insert(e);
    }
    for (NodeId v : keep) {
      out.detections.emplace(v, pg.detections.at(v));
      if (auto it = pg.attributes.find(v); it != pg.attributes.end()) out.attributes.emplace(v, it->second);
    }
    return out;
  };
  return {restrict(pos), restrict(neg)};
}

/// Containment in the grammar with every edge endpoint present.
inline bool is_subgraph(const ParseGraph& pg, const AogGrammar& g) {
  if (pg.grammar_hash != g.hash()) return false;
  for (NodeId v : pg.nodes)
    if (v.value >= g.node_count()) return false;
  for (EdgeId e : pg.edges) {
    if (e.value >= g.edge_count()) return false;
    const auto& ed = g.edge(e);
    if (!pg.contains(ed.parent) || !pg.contains(ed.child)) return false;
  }
  return true;
}

/// Whether the nodes are connected through the graph's own decomposition edges.
inline bool is_connected(const ParseGraph& pg, const AogGrammar& g) {
  if (pg.nodes.empty()) return true;
  std::map<NodeId, std::vector<NodeId>> adj;
  for (EdgeId e : pg.edges) {
    const auto& ed = g.edge(e);
    if (ed.relation != EdgeRelation::Decomposition) continue;
    adj[ed.parent].push_back(ed.child);
    adj[ed.child].push_back(ed.parent);
  }
  std::set<NodeId> seen{*pg.nodes.begin()};
  std::vector<NodeId> stack{*pg.nodes.begin()};
  while (!stack.empty()) {
    NodeId v = stack.back();
    stack.pop_back();
    for (NodeId w : adj[v])
      if (seen.insert(w).second) stack.push_back(w);
  }
  return seen.size() == pg.nodes.size();
}

}  // namespace xtom
