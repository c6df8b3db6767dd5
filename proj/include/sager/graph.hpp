// Rooted dependency graphs, cycle breaking and topological hierarchies.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sager/conllu.hpp"

namespace sager {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Edge {
  std::size_t head = 0;
  std::size_t dep = 0;
  std::string label;

  auto operator<=>(const Edge&) const = default;
};

// Node 0 is the virtual root; tokens occupy 1..n_nodes-1 in document order.
struct DepGraph {
  std::size_t n_nodes = 1;
  std::vector<Edge> edges;

  // Order-insensitive comparison of the edge multiset.
  bool operator==(const DepGraph& other) const;
  void validate() const;  // endpoints in range, no self-loops
};

struct Component {
  std::vector<std::size_t> nodes;  // ascending
  std::vector<Edge> edges;         // incoming edges of `nodes`
};

struct Hierarchy {
  std::vector<Component> components;

  std::size_t n_nodes() const;
  // level[i] = index of the component holding node i.
  std::vector<std::size_t> levels() const;
};

DepGraph to_graph(const ParsedSentence& sentence);
// Replaces the sentence's edges with those of `graph`, mapped back to CoNLL-U ids.
void assign_edges(ParsedSentence& sentence, const DepGraph& graph);

struct CycleBreak {
  DepGraph dag;
  std::vector<Edge> removed;  // in DFS discovery order
};

// Removes DFS back edges. The traversal starts at the root and visits children in
// ascending node-id order (ties on a node pair by label). Throws GraphError when a
// node is unreachable from the root.
CycleBreak break_cycles(const DepGraph& graph);
DepGraph restore_edges(const DepGraph& dag, const std::vector<Edge>& removed);

// Kahn order, smallest ready node first. Empty result when the graph has a cycle.
std::vector<std::size_t> topological_order(const DepGraph& graph);
bool is_acyclic(const DepGraph& graph);

// Node i goes to component t = length of the longest root->i path.
// Throws GraphError on a cycle or an unreachable node.
Hierarchy build_hierarchy(const DepGraph& dag);

// Exhaustive enumeration of root->node paths; for small graphs only.
std::size_t longest_path_oracle(const DepGraph& dag, std::size_t node);

// Throws GraphError if `h` breaks a hierarchy invariant.
void validate_hierarchy(const Hierarchy& h);
DepGraph components_to_graph(const Hierarchy& h);

// Levels over the nodes reachable from the root after cycle breaking; unreachable
// nodes get -1. Used for scoring system graphs that may leave words unattached.
std::vector<long> reachable_levels(const DepGraph& graph);

}  // namespace sager
