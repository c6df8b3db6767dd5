#include "sager/conllu.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace sager {

namespace {

constexpr std::array<const char*, 6> kExtraColumns = {"UPOS", "XPOS", "FEATS",
                                                       "HEAD", "DEPREL", "MISC"};
constexpr std::array<int, 6> kExtraColumnIndex = {3, 4, 5, 6, 7, 9};

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(text.substr(start));
      return out;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::optional<int> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool edge_order(const DepEdge& a, const DepEdge& b) {
  if (a.dep != b.dep) return a.dep < b.dep;
  if (a.head != b.head) return a.head < b.head;
  return a.label < b.label;
}

struct PendingEdge {
  DepEdge edge;
  std::size_t line;
};

struct SentenceBuilder {
  ParsedSentence sentence;
  std::vector<PendingEdge> edges;
  bool empty() const { return sentence.comments.empty() && sentence.tokens.empty(); }

  ParsedSentence finish() {
    for (const auto& pending : edges) {
      const auto& e = pending.edge;
      if (e.head == e.dep) {
        throw ParseError(pending.line, "self-loop on node " + e.dep.str());
      }
      if (!sentence.index_of(e.head)) {
        throw ParseError(pending.line, "DEPS head " + e.head.str() + " is not a token");
      }
      sentence.gold.push_back(e);
    }
    normalize_edges(sentence.gold);
    ParsedSentence out = std::move(sentence);
    *this = SentenceBuilder{};
    return out;
  }
};

}  // namespace

std::string NodeId::str() const {
  if (minor == 0) return std::to_string(major);
  return std::to_string(major) + "." + std::to_string(minor);
}

std::optional<NodeId> NodeId::parse(std::string_view text) {
  auto dot = text.find('.');
  if (dot == std::string_view::npos) {
    auto major = parse_int(text);
    if (!major || *major < 0) return std::nullopt;
    return NodeId{*major, 0};
  }
  auto major = parse_int(text.substr(0, dot));
  auto minor = parse_int(text.substr(dot + 1));
  if (!major || !minor || *major < 0 || *minor < 1) return std::nullopt;
  return NodeId{*major, *minor};
}

std::optional<std::size_t> ParsedSentence::index_of(NodeId id) const {
  if (id.is_root()) return 0;
  auto it = std::lower_bound(tokens.begin(), tokens.end(), id,
                             [](const Token& t, NodeId v) { return t.id < v; });
  if (it == tokens.end() || it->id != id) return std::nullopt;
  return static_cast<std::size_t>(it - tokens.begin()) + 1;
}

NodeId ParsedSentence::id_at(std::size_t index) const {
  if (index == 0) return NodeId{};
  return tokens.at(index - 1).id;
}

std::string ParsedSentence::sent_id() const {
  constexpr std::string_view prefix = "# sent_id = ";
  for (const auto& c : comments) {
    if (c.rfind(prefix, 0) == 0) return c.substr(prefix.size());
  }
  return {};
}

std::vector<DepEdge> ParsedSentence::incoming(NodeId dep) const {
  std::vector<DepEdge> out;
  for (const auto& e : gold) {
    if (e.dep == dep) out.push_back(e);
  }
  return out;
}

bool ParsedSentence::operator==(const ParsedSentence& other) const {
  return comments == other.comments && tokens == other.tokens && ranges == other.ranges &&
         gold == other.gold;
}

void normalize_edges(std::vector<DepEdge>& edges) {
  std::sort(edges.begin(), edges.end(), edge_order);
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

std::vector<ParsedSentence> parse_conllu(std::string_view text) {
  std::vector<ParsedSentence> out;
  SentenceBuilder current;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (raw.empty()) {
      if (!current.empty()) out.push_back(current.finish());
      continue;
    }
    if (raw.front() == '#') {
      current.sentence.comments.emplace_back(raw);
      continue;
    }
    auto fields = split(raw, '\t');
    if (fields.size() != 10) {
      throw ParseError(line_no, "expected 10 tab-separated columns, got " +
                                    std::to_string(fields.size()));
    }
    auto id_text = fields[0];
    if (auto dash = id_text.find('-'); dash != std::string_view::npos) {
      auto first = parse_int(id_text.substr(0, dash));
      auto last = parse_int(id_text.substr(dash + 1));
      if (!first || !last || *first < 1 || *last < *first) {
        throw ParseError(line_no, "malformed multiword range '" + std::string(id_text) + "'");
      }
      current.sentence.ranges.push_back(MultiwordRange{*first, *last, std::string(raw)});
      continue;
    }
    auto id = NodeId::parse(id_text);
    if (!id || id->is_root()) {
      throw ParseError(line_no, "malformed token id '" + std::string(id_text) + "'");
    }
    auto& tokens = current.sentence.tokens;
    if (!tokens.empty() && !(tokens.back().id < *id)) {
      throw ParseError(line_no, "token ids must be strictly increasing");
    }
    Token token;
    token.id = *id;
    token.form = std::string(fields[1]);
    token.lemma = std::string(fields[2]);
    for (std::size_t c = 0; c < kExtraColumns.size(); ++c) {
      token.columns[kExtraColumns[c]] = std::string(fields[kExtraColumnIndex[c]]);
    }
    tokens.push_back(std::move(token));

    auto deps = fields[8];
    if (deps == "_") continue;
    for (auto entry : split(deps, '|')) {
      auto colon = entry.find(':');
      auto head = colon == std::string_view::npos ? std::nullopt
                                                  : NodeId::parse(entry.substr(0, colon));
      if (!head || colon + 1 >= entry.size()) {
        throw ParseError(line_no, "DEPS entry '" + std::string(entry) +
                                      "' does not match head:label");
      }
      current.edges.push_back(
          PendingEdge{DepEdge{*head, *id, std::string(entry.substr(colon + 1))}, line_no});
    }
  }
  if (!current.empty()) out.push_back(current.finish());
  return out;
}

std::string write_conllu(const std::vector<ParsedSentence>& sentences) {
  std::ostringstream os;
  for (const auto& s : sentences) {
    for (const auto& c : s.comments) os << c << '\n';
    std::size_t next_range = 0;
    std::size_t next_edge = 0;
    for (const auto& t : s.tokens) {
      while (next_range < s.ranges.size() && t.id.minor == 0 &&
             s.ranges[next_range].first <= t.id.major) {
        os << s.ranges[next_range++].line << '\n';
      }
      auto col = [&](const char* name) -> const std::string& {
        static const std::string underscore = "_";
        auto it = t.columns.find(name);
        return it == t.columns.end() ? underscore : it->second;
      };
      std::string deps;
      while (next_edge < s.gold.size() && s.gold[next_edge].dep < t.id) ++next_edge;
      while (next_edge < s.gold.size() && s.gold[next_edge].dep == t.id) {
        const auto& e = s.gold[next_edge++];
        if (!deps.empty()) deps += '|';
        deps += e.head.str() + ":" + e.label;
      }
      if (deps.empty()) deps = "_";
      os << t.id.str() << '\t' << t.form << '\t' << t.lemma << '\t' << col("UPOS") << '\t'
         << col("XPOS") << '\t' << col("FEATS") << '\t' << col("HEAD") << '\t'
         << col("DEPREL") << '\t' << deps << '\t' << col("MISC") << '\n';
    }
    while (next_range < s.ranges.size()) os << s.ranges[next_range++].line << '\n';
    os << '\n';
  }
  return os.str();
}

std::vector<ParsedSentence> read_conllu_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_conllu(buffer.str());
}

void write_conllu_file(const std::string& path, const std::vector<ParsedSentence>& sentences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << write_conllu(sentences);
  if (!out) throw std::runtime_error("write failed: " + path);
}

void require_connected(const ParsedSentence& sentence) {
  std::vector<bool> has_head(sentence.tokens.size() + 1, false);
  for (const auto& e : sentence.gold) has_head[*sentence.index_of(e.dep)] = true;
  for (std::size_t i = 1; i < has_head.size(); ++i) {
    if (!has_head[i]) {
      auto id = sentence.sent_id();
      throw ParseError(0, "sentence '" + id + "': node " + sentence.id_at(i).str() +
                              " has no incoming enhanced edge");
    }
  }
}

DelexLabel delexicalize_label(const std::string& label, const ParsedSentence& sentence,
                              const DepEdge& edge) {
  auto colon = label.rfind(':');
  if (colon == std::string::npos || colon + 1 >= label.size()) return {label, std::nullopt};
  auto subtype = std::string_view(label).substr(colon + 1);
  auto head_pos = sentence.index_of(edge.head).value_or(0);

  std::optional<std::size_t> best;
  std::size_t best_distance = 0;
  for (std::size_t k = 0; k < sentence.tokens.size(); ++k) {
    if (lower(sentence.tokens[k].lemma) != subtype) continue;
    std::size_t pos = k + 1;
    std::size_t distance = pos > head_pos ? pos - head_pos : head_pos - pos;
    if (!best || distance < best_distance) {
      best = k;
      best_distance = distance;
    }
  }
  if (!best) return {label, std::nullopt};
  return {label.substr(0, colon + 1) + std::string(kLexPlaceholder), best};
}

std::string relexicalize_label(const std::string& delex_label, std::optional<std::size_t> slot,
                               const ParsedSentence& sentence) {
  auto pos = delex_label.find(kLexPlaceholder);
  if (pos == std::string::npos) return delex_label;
  if (!slot) {
    throw std::invalid_argument("label '" + delex_label + "' has a placeholder but no slot");
  }
  if (*slot >= sentence.tokens.size()) {
    throw std::invalid_argument("slot " + std::to_string(*slot) + " is outside the sentence");
  }
  std::string out = delex_label;
  out.replace(pos, kLexPlaceholder.size(), lower(sentence.tokens[*slot].lemma));
  return out;
}

}  // namespace sager
