// CoNLL-U reader/writer for Enhanced Universal Dependencies.
#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sager {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Word id `k`, or empty-node id `k.m` (minor >= 1). The virtual root is 0.
struct NodeId {
  int major = 0;
  int minor = 0;

  auto operator<=>(const NodeId&) const = default;
  bool is_root() const { return major == 0 && minor == 0; }
  bool is_empty_node() const { return minor > 0; }
  std::string str() const;
  static std::optional<NodeId> parse(std::string_view text);
};

struct Token {
  NodeId id;
  std::string form;
  std::string lemma;
  // UPOS, XPOS, FEATS, HEAD, DEPREL, MISC keyed by column name.
  std::map<std::string, std::string> columns;
};

struct DepEdge {
  NodeId head;
  NodeId dep;
  std::string label;

  auto operator<=>(const DepEdge&) const = default;
};

// Multiword token range line `first-last`, written before the token with id `first`.
struct MultiwordRange {
  int first = 0;
  int last = 0;
  std::string line;  // the raw line, columns 2..10 included

  bool operator==(const MultiwordRange&) const = default;
};

struct ParsedSentence {
  std::vector<std::string> comments;  // without trailing newline, '#' included
  std::vector<Token> tokens;          // words and empty nodes in document order
  std::vector<MultiwordRange> ranges;
  std::vector<DepEdge> gold;          // sorted by (dep, head, label)

  // Position of `id` in `tokens` plus one (root maps to 0). Returns nullopt if absent.
  std::optional<std::size_t> index_of(NodeId id) const;
  NodeId id_at(std::size_t index) const;  // inverse of index_of
  std::string sent_id() const;            // value of "# sent_id = ...", empty if absent
  std::vector<DepEdge> incoming(NodeId dep) const;

  bool operator==(const ParsedSentence& other) const;
};

inline bool operator==(const Token& a, const Token& b) {
  return a.id == b.id && a.form == b.form && a.lemma == b.lemma && a.columns == b.columns;
}

// Sorts by dependent, then head id, then label (DEPS column order).
void normalize_edges(std::vector<DepEdge>& edges);

std::vector<ParsedSentence> parse_conllu(std::string_view text);
std::string write_conllu(const std::vector<ParsedSentence>& sentences);

std::vector<ParsedSentence> read_conllu_file(const std::string& path);
void write_conllu_file(const std::string& path, const std::vector<ParsedSentence>& sentences);

// Checks EUD connectivity: every token has at least one incoming edge.
// Throws ParseError (line 0) naming the sentence and node on failure.
void require_connected(const ParsedSentence& sentence);

inline constexpr std::string_view kLexPlaceholder = "[X]";

struct DelexLabel {
  std::string label;
  std::optional<std::size_t> slot;  // index into sentence.tokens

  bool operator==(const DelexLabel&) const = default;
};

// Replaces a lexical subtype (text after the last ':') matching the lemma of some
// token with a placeholder. Among matching tokens the one nearest the edge's head
// wins; ties go to the lower index.
DelexLabel delexicalize_label(const std::string& label, const ParsedSentence& sentence,
                              const DepEdge& edge);

// Throws std::invalid_argument if the label carries a placeholder but no slot.
std::string relexicalize_label(const std::string& delex_label,
                               std::optional<std::size_t> slot,
                               const ParsedSentence& sentence);

}  // namespace sager
