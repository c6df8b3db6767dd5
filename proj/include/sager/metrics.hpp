// Corpus-level graph scores. Inputs are parallel corpora with identical token inventories.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "sager/conllu.hpp"

namespace sager {

class AlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CorpusScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t matched = 0;
  std::size_t gold = 0;
  std::size_t system = 0;
};

// Precision/recall/F1 from counts. Empty denominators give 0.
CorpusScore make_score(std::size_t matched, std::size_t gold, std::size_t system);

// Micro-averaged labeled F1 over enhanced edges (head, dependent, label).
CorpusScore elas(const std::vector<ParsedSentence>& gold, const std::vector<ParsedSentence>& system);

// F1 over sentences whose labeled edge set equals the gold one exactly.
CorpusScore gms(const std::vector<ParsedSentence>& gold, const std::vector<ParsedSentence>& system);

// Fraction of attached system nodes whose hierarchy index equals the gold one. Both
// sides go through cycle breaking; system nodes unreachable from the root are not
// attached. Returns 1 when no system node is attached and 0 gold nodes exist.
double hierarchy_accuracy(const std::vector<ParsedSentence>& gold,
                          const std::vector<ParsedSentence>& system);

}  // namespace sager
