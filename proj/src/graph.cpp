#include "sager/graph.hpp"

#include <algorithm>
#include <functional>
#include <queue>

namespace sager {

namespace {

std::vector<std::vector<std::size_t>> out_edges(const DepGraph& g) {
  std::vector<std::vector<std::size_t>> adj(g.n_nodes);
  for (std::size_t k = 0; k < g.edges.size(); ++k) adj[g.edges[k].head].push_back(k);
  for (auto& list : adj) {
    std::sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) {
      const auto& ea = g.edges[a];
      const auto& eb = g.edges[b];
      if (ea.dep != eb.dep) return ea.dep < eb.dep;
      if (ea.label != eb.label) return ea.label < eb.label;
      return a < b;
    });
  }
  return adj;
}

std::vector<Edge> sorted_edges(std::vector<Edge> edges) {
  std::sort(edges.begin(), edges.end());
  return edges;
}

}  // namespace

bool DepGraph::operator==(const DepGraph& other) const {
  return n_nodes == other.n_nodes && sorted_edges(edges) == sorted_edges(other.edges);
}

void DepGraph::validate() const {
  for (const auto& e : edges) {
    if (e.head >= n_nodes || e.dep >= n_nodes) {
      throw GraphError("edge " + std::to_string(e.head) + "->" + std::to_string(e.dep) +
                       " outside node range " + std::to_string(n_nodes));
    }
    if (e.head == e.dep) throw GraphError("self-loop on node " + std::to_string(e.dep));
  }
}

std::size_t Hierarchy::n_nodes() const {
  std::size_t n = 0;
  for (const auto& c : components) n += c.nodes.size();
  return n;
}

std::vector<std::size_t> Hierarchy::levels() const {
  std::vector<std::size_t> level(n_nodes(), 0);
  for (std::size_t t = 0; t < components.size(); ++t) {
    for (auto v : components[t].nodes) level.at(v) = t;
  }
  return level;
}

DepGraph to_graph(const ParsedSentence& sentence) {
  DepGraph g;
  g.n_nodes = sentence.tokens.size() + 1;
  g.edges.reserve(sentence.gold.size());
  for (const auto& e : sentence.gold) {
    auto head = sentence.index_of(e.head);
    auto dep = sentence.index_of(e.dep);
    if (!head || !dep) throw GraphError("edge endpoint missing from sentence");
    g.edges.push_back(Edge{*head, *dep, e.label});
  }
  return g;
}

void assign_edges(ParsedSentence& sentence, const DepGraph& graph) {
  sentence.gold.clear();
  for (const auto& e : graph.edges) {
    sentence.gold.push_back(DepEdge{sentence.id_at(e.head), sentence.id_at(e.dep), e.label});
  }
  normalize_edges(sentence.gold);
}

CycleBreak break_cycles(const DepGraph& graph) {
  graph.validate();
  const auto adj = out_edges(graph);
  enum class Mark { kWhite, kGray, kBlack };
  std::vector<Mark> mark(graph.n_nodes, Mark::kWhite);
  std::vector<bool> is_back(graph.edges.size(), false);
  CycleBreak result;

  // Iterative DFS: (node, position in its child list).
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  stack.emplace_back(0, 0);
  mark[0] = Mark::kGray;
  while (!stack.empty()) {
    auto& [node, pos] = stack.back();
    if (pos == adj[node].size()) {
      mark[node] = Mark::kBlack;
      stack.pop_back();
      continue;
    }
    auto k = adj[node][pos++];
    auto child = graph.edges[k].dep;
    if (mark[child] == Mark::kGray) {
      is_back[k] = true;
      result.removed.push_back(graph.edges[k]);
    } else if (mark[child] == Mark::kWhite) {
      mark[child] = Mark::kGray;
      stack.emplace_back(child, 0);
    }
  }
  for (std::size_t v = 0; v < graph.n_nodes; ++v) {
    if (mark[v] == Mark::kWhite) {
      throw GraphError("node " + std::to_string(v) + " is unreachable from the root");
    }
  }
  result.dag.n_nodes = graph.n_nodes;
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    if (!is_back[k]) result.dag.edges.push_back(graph.edges[k]);
  }
  return result;
}

DepGraph restore_edges(const DepGraph& dag, const std::vector<Edge>& removed) {
  DepGraph out = dag;
  out.edges.insert(out.edges.end(), removed.begin(), removed.end());
  out.validate();
  return out;
}

std::vector<std::size_t> topological_order(const DepGraph& graph) {
  std::vector<std::size_t> indegree(graph.n_nodes, 0);
  std::vector<std::vector<std::size_t>> children(graph.n_nodes);
  for (const auto& e : graph.edges) {
    ++indegree[e.dep];
    children[e.head].push_back(e.dep);
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t v = 0; v < graph.n_nodes; ++v) {
    if (indegree[v] == 0) ready.push(v);
  }
  std::vector<std::size_t> order;
  order.reserve(graph.n_nodes);
  while (!ready.empty()) {
    auto v = ready.top();
    ready.pop();
    order.push_back(v);
    for (auto c : children[v]) {
      if (--indegree[c] == 0) ready.push(c);
    }
  }
  if (order.size() != graph.n_nodes) return {};
  return order;
}

bool is_acyclic(const DepGraph& graph) {
  return !topological_order(graph).empty() || graph.n_nodes == 0;
}

Hierarchy build_hierarchy(const DepGraph& dag) {
  dag.validate();
  auto order = topological_order(dag);
  if (order.empty()) throw GraphError("graph has a cycle; break cycles first");

  std::vector<std::vector<std::size_t>> parents(dag.n_nodes);
  for (const auto& e : dag.edges) parents[e.dep].push_back(e.head);

  constexpr long kUnreached = -1;
  std::vector<long> level(dag.n_nodes, kUnreached);
  level[0] = 0;
  for (auto v : order) {
    if (v == 0) continue;
    for (auto p : parents[v]) {
      if (level[p] != kUnreached) level[v] = std::max(level[v], level[p] + 1);
    }
  }
  Hierarchy h;
  for (std::size_t v = 0; v < dag.n_nodes; ++v) {
    if (level[v] == kUnreached || (v != 0 && parents[v].empty())) {
      throw GraphError("node " + std::to_string(v) + " is unreachable from the root");
    }
    if (v != 0 && std::any_of(parents[v].begin(), parents[v].end(),
                              [&](std::size_t p) { return level[p] == kUnreached; })) {
      throw GraphError("node " + std::to_string(v) + " has a head unreachable from the root");
    }
    auto t = static_cast<std::size_t>(level[v]);
    if (h.components.size() <= t) h.components.resize(t + 1);
    h.components[t].nodes.push_back(v);
  }
  for (const auto& e : dag.edges) h.components[static_cast<std::size_t>(level[e.dep])].edges.push_back(e);
  return h;
}

std::size_t longest_path_oracle(const DepGraph& dag, std::size_t node) {
  std::vector<std::vector<std::size_t>> children(dag.n_nodes);
  for (const auto& e : dag.edges) children[e.head].push_back(e.dep);
  std::size_t best = 0;
  std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t v, std::size_t depth) {
    if (v == node) best = std::max(best, depth);
    for (auto c : children[v]) walk(c, depth + 1);
  };
  walk(0, 0);
  return best;
}

void validate_hierarchy(const Hierarchy& h) {
  if (h.components.empty()) throw GraphError("hierarchy has no components");
  const auto& first = h.components.front();
  if (first.nodes != std::vector<std::size_t>{0} || !first.edges.empty()) {
    throw GraphError("component 0 must hold exactly the root and no edges");
  }
  const auto n = h.n_nodes();
  std::vector<long> level(n, -1);
  for (std::size_t t = 0; t < h.components.size(); ++t) {
    for (auto v : h.components[t].nodes) {
      if (v >= n || level[v] != -1) {
        throw GraphError("node " + std::to_string(v) + " is not partitioned exactly once");
      }
      level[v] = static_cast<long>(t);
    }
  }
  for (std::size_t t = 0; t < h.components.size(); ++t) {
    for (const auto& e : h.components[t].edges) {
      if (e.dep >= n || e.head >= n || level[e.dep] != static_cast<long>(t) ||
          level[e.head] >= static_cast<long>(t)) {
        throw GraphError("edge " + std::to_string(e.head) + "->" + std::to_string(e.dep) +
                         " does not point into component " + std::to_string(t) +
                         " from an earlier one");
      }
    }
  }
}

DepGraph components_to_graph(const Hierarchy& h) {
  validate_hierarchy(h);
  DepGraph g;
  g.n_nodes = h.n_nodes();
  for (const auto& c : h.components) g.edges.insert(g.edges.end(), c.edges.begin(), c.edges.end());
  return g;
}

std::vector<long> reachable_levels(const DepGraph& graph) {
  graph.validate();
  std::vector<std::vector<std::size_t>> children(graph.n_nodes);
  for (const auto& e : graph.edges) children[e.head].push_back(e.dep);
  std::vector<std::size_t> remap(graph.n_nodes, graph.n_nodes);
  std::vector<std::size_t> members{0};
  remap[0] = 0;
  for (std::size_t k = 0; k < members.size(); ++k) {
    for (auto c : children[members[k]]) {
      if (remap[c] == graph.n_nodes) {
        remap[c] = members.size();
        members.push_back(c);
      }
    }
  }
  // Keep ascending id order inside the subgraph so the DFS tie-break is unchanged.
  std::sort(members.begin(), members.end());
  for (std::size_t k = 0; k < members.size(); ++k) remap[members[k]] = k;

  DepGraph sub;
  sub.n_nodes = members.size();
  for (const auto& e : graph.edges) {
    if (remap[e.head] < sub.n_nodes && remap[e.dep] < sub.n_nodes) {
      sub.edges.push_back(Edge{remap[e.head], remap[e.dep], e.label});
    }
  }
  auto levels = build_hierarchy(break_cycles(sub).dag).levels();
  std::vector<long> out(graph.n_nodes, -1);
  for (std::size_t k = 0; k < members.size(); ++k) out[members[k]] = static_cast<long>(levels[k]);
  return out;
}

}  // namespace sager
