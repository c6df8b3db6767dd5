#include "sager/metrics.hpp"

#include <algorithm>
#include <iterator>
#include <string>

#include "sager/graph.hpp"

namespace sager {

namespace {

void check_aligned(const std::vector<ParsedSentence>& gold,
                   const std::vector<ParsedSentence>& system) {
  if (gold.size() != system.size()) {
    throw AlignmentError("gold has " + std::to_string(gold.size()) + " sentences, system has " +
                         std::to_string(system.size()));
  }
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const auto& g = gold[s].tokens;
    const auto& y = system[s].tokens;
    bool same = g.size() == y.size();
    for (std::size_t i = 0; same && i < g.size(); ++i) same = g[i].id == y[i].id;
    if (!same) {
      throw AlignmentError("sentence " + std::to_string(s + 1) + " has different token ids");
    }
  }
}

std::vector<DepEdge> sorted_edges(const ParsedSentence& s) {
  auto edges = s.gold;
  std::sort(edges.begin(), edges.end());
  return edges;
}

std::size_t count_matches(const std::vector<DepEdge>& a, const std::vector<DepEdge>& b) {
  std::vector<DepEdge> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return common.size();
}

}  // namespace

CorpusScore make_score(std::size_t matched, std::size_t gold, std::size_t system) {
  CorpusScore s;
  s.matched = matched;
  s.gold = gold;
  s.system = system;
  s.precision = system ? static_cast<double>(matched) / static_cast<double>(system) : 0.0;
  s.recall = gold ? static_cast<double>(matched) / static_cast<double>(gold) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

CorpusScore elas(const std::vector<ParsedSentence>& gold,
                 const std::vector<ParsedSentence>& system) {
  check_aligned(gold, system);
  std::size_t matched = 0, n_gold = 0, n_system = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    auto g = sorted_edges(gold[s]);
    auto y = sorted_edges(system[s]);
    matched += count_matches(g, y);
    n_gold += g.size();
    n_system += y.size();
  }
  return make_score(matched, n_gold, n_system);
}

CorpusScore gms(const std::vector<ParsedSentence>& gold,
                const std::vector<ParsedSentence>& system) {
  check_aligned(gold, system);
  std::size_t matched = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (sorted_edges(gold[s]) == sorted_edges(system[s])) ++matched;
  }
  return make_score(matched, gold.size(), system.size());
}

double hierarchy_accuracy(const std::vector<ParsedSentence>& gold,
                          const std::vector<ParsedSentence>& system) {
  check_aligned(gold, system);
  std::size_t attached = 0, correct = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    auto g = reachable_levels(to_graph(gold[s]));
    auto y = reachable_levels(to_graph(system[s]));
    for (std::size_t i = 1; i < y.size(); ++i) {
      if (y[i] < 0) continue;
      ++attached;
      if (g[i] == y[i]) ++correct;
    }
  }
  return attached ? static_cast<double>(correct) / static_cast<double>(attached) : 1.0;
}

}  // namespace sager
