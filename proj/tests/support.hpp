// Shared helpers for the test binaries: fixture paths and random graph generators.
#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sager/conllu.hpp"
#include "sager/graph.hpp"
#include "sager/rng.hpp"

#ifndef SAGER_TEST_DATA
#error "SAGER_TEST_DATA must point at tests/data"
#endif

namespace sager::test {

inline std::string data_path(const std::string& name) { return std::string(SAGER_TEST_DATA) + "/" + name; }

inline const std::vector<std::string>& fixture_files() {
  static const std::vector<std::string> files = {
      "fixture.conllu", "chain.conllu", "overfit.conllu", "ablation_train.conllu",
      "ablation_dev.conllu", "ablation_test.conllu"};
  return files;
}

// Random DAG over n nodes: edges only go from lower to higher position in a random
// permutation, and every non-root node gets at least one head.
inline DepGraph random_dag(CounterRng& rng, std::size_t max_nodes) {
  const std::size_t n = 2 + rng.below(max_nodes - 1);
  std::vector<std::size_t> order(n - 1);
  for (std::size_t i = 0; i < n - 1; ++i) order[i] = i + 1;
  rng.shuffle(order);
  order.insert(order.begin(), 0);
  DepGraph g;
  g.n_nodes = n;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t k = 1; k < n; ++k) {
    const std::size_t head = order[rng.below(k)];
    seen.insert({head, order[k]});
    for (std::size_t j = 0; j < k; ++j) {
      if (rng.uniform() < 0.2) seen.insert({order[j], order[k]});
    }
  }
  for (auto [h, d] : seen) g.edges.push_back({h, d, "l" + std::to_string(rng.below(3))});
  return g;
}

// Random rooted digraph (cycles allowed) with every node reachable from the root.
inline DepGraph random_digraph(CounterRng& rng, std::size_t max_nodes) {
  DepGraph g = random_dag(rng, max_nodes);
  const std::size_t extra = rng.below(4);
  for (std::size_t e = 0; e < extra; ++e) {
    const std::size_t h = 1 + rng.below(g.n_nodes - 1);
    const std::size_t d = 1 + rng.below(g.n_nodes - 1);
    if (h != d) g.edges.push_back({h, d, "back"});
  }
  return g;
}

}  // namespace sager::test
