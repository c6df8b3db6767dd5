// Learned components: sentence encoder, graph-transformer decoder, node selector and
// deep biaffine arc/label scorer.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sager/autodiff.hpp"
#include "sager/config.hpp"

namespace sager {

class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> items);

  std::size_t add(const std::string& item);
  std::optional<std::size_t> find(const std::string& item) const;
  const std::string& at(std::size_t i) const { return items_.at(i); }
  std::size_t size() const { return items_.size(); }
  const std::vector<std::string>& items() const { return items_; }
  bool operator==(const Vocab& other) const { return items_ == other.items_; }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr const char* kUnknownWord = "<unk>";

// An explicit edge between decoder nodes (0 = root, i = token i-1).
struct NodeArc {
  std::size_t head = 0;
  std::size_t dep = 0;
  std::size_t label = 0;
};

// One attention source row: the state of `node` at the current layer. `prior` rows may
// serve queries in later hierarchies, `same_level` rows queries in the same hierarchy.
struct SourceRow {
  std::size_t node = 0;
  std::size_t level = 0;
  bool prior = true;
  bool same_level = true;
};

struct QueryRow {
  std::size_t node = 0;
  std::size_t level = 0;
};

struct ExplicitMessage {
  std::size_t source = 0;  // row in the source matrix holding the head state
  std::size_t query = 0;
  std::size_t label = 0;
};

struct AttentionPlan {
  std::size_t n_queries = 0;
  std::size_t n_sources = 0;
  std::vector<std::uint8_t> implicit;  // [n_queries x n_sources]
  std::vector<ExplicitMessage> explicit_messages;

  bool allows_implicit(std::size_t q, std::size_t s) const {
    return implicit[q * n_sources + s] != 0;
  }
};

// Neighborhoods for one message-passing layer. Query i sees source j implicitly when j is
// in D_i (earlier hierarchies and the same hierarchy; narrowed by the variant) and j is
// not an explicit head of i. Explicit edges need a `prior` source row for the head, and
// that head must lie in an earlier hierarchy; otherwise GraphError is thrown.
AttentionPlan build_plan(const std::vector<QueryRow>& queries,
                         const std::vector<SourceRow>& sources,
                         const std::vector<NodeArc>& explicit_edges, Variant variant);

// Sinusoidal encoding of an integer position, [1 x d].
template <typename T>
Tensor<T> sinusoid(std::size_t position, std::size_t d);

template <typename T>
class Model {
 public:
  struct Block {
    const Param<T>* wq;
    const Param<T>* wk;
    const Param<T>* wv;
    const Param<T>* wo;
    const Param<T>* w1;
    const Param<T>* b1;
    const Param<T>* w2;
    const Param<T>* b2;
    const Param<T>* gate_attn;
    const Param<T>* gate_ffn;
  };

  struct Projection {
    const Param<T>* w;
    const Param<T>* b;
  };

  Model(ModelConfig config, Vocab words, Vocab labels, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocab& words() const { return words_; }
  const Vocab& labels() const { return labels_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  std::size_t word_id(const std::string& form) const;  // UNK when unseen

  // S: [N x d]. Trainable embeddings (scaled by sqrt(d)) plus sinusoidal word positions,
  // then `encoder_layers` self-attention blocks.
  Var<T> encode(Tape<T>& tape, const std::vector<std::size_t>& word_ids, bool train,
                CounterRng& rng) const;

  // x^(0) rows for `nodes`: S[n-1] + P[level] for words, root vector + P[0] for the root.
  // Variant no_hier_pos drops the P term.
  Var<T> initial_states(Tape<T>& tape, Var<T> sentence, const std::vector<QueryRow>& nodes) const;

  // Message m_ji: x_j + relu(x_j U_z) for an explicit edge; implicit messages are x_j.
  Var<T> explicit_messages(Tape<T>& tape, Var<T> sources,
                           const std::vector<ExplicitMessage>& messages) const;

  // One decoder layer: multi-head attention over the plan's neighborhoods followed by a
  // feed-forward sublayer, both ReZero residuals.
  Var<T> mp_layer(Tape<T>& tape, std::size_t layer, Var<T> queries, Var<T> sources,
                  const AttentionPlan& plan, bool train, CounterRng& rng,
                  Tensor<T>* attention = nullptr) const;

  // Node selection logits [rows(H) x N]; sigmoid of the column-wise max over a hierarchy's
  // rows is the per-word selection probability.
  Var<T> selection_logits(Tape<T>& tape, Var<T> heads, Var<T> sentence, bool train,
                          CounterRng& rng) const;

  struct ScorerViews {
    Var<T> arc;
    Var<T> label;
  };
  ScorerViews head_views(Tape<T>& tape, Var<T> heads, bool train, CounterRng& rng) const;
  ScorerViews dependent_views(Tape<T>& tape, Var<T> deps, bool train, CounterRng& rng) const;

  Var<T> arc_logits(Tape<T>& tape, Var<T> head_arc, Var<T> dep_arc) const;  // [nh x nd]
  Var<T> label_logits(Tape<T>& tape, Var<T> head_label, Var<T> dep_label,
                      const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const;
  // Logits over sentence tokens for the lexical slot of placeholder labels.
  Var<T> slot_logits(Tape<T>& tape, Var<T> head_label, Var<T> dep_label, Var<T> sentence,
                     const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const;

  Var<T> root_vector(Tape<T>& tape) const { return tape.param(*root_); }
  const Block& decoder_block(std::size_t layer) const { return decoder_.at(layer); }
  const Block& encoder_block(std::size_t layer) const { return encoder_.at(layer); }
  const Param<T>& edge_matrix(std::size_t label) const { return *edge_u_.at(label); }

  Var<T> run_block(Tape<T>& tape, const Block& block, Var<T> queries, Var<T> keys_values,
                   const std::vector<std::uint8_t>& mask, bool train, CounterRng& rng,
                   Tensor<T>* attention) const;

 private:
  const Param<T>* add_matrix(const std::string& name, std::size_t rows, std::size_t cols,
                             CounterRng& rng);
  const Param<T>* add_zeros(const std::string& name, std::size_t rows, std::size_t cols);
  Block add_block(const std::string& prefix, CounterRng& rng);
  Projection add_projection(const std::string& prefix, CounterRng& rng);
  Var<T> project(Tape<T>& tape, const Projection& p, Var<T> x, bool train, CounterRng& rng) const;

  ModelConfig config_;
  Vocab words_;
  Vocab labels_;
  ParamStore<T> params_;

  const Param<T>* word_emb_ = nullptr;
  const Param<T>* root_ = nullptr;
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;
  std::vector<const Param<T>*> edge_u_;
  const Param<T>* sel_w1_ = nullptr;
  const Param<T>* sel_w2_ = nullptr;
  Projection arc_head_, arc_dep_, label_head_, label_dep_;
  const Param<T>* arc_biaffine_ = nullptr;
  const Param<T>* label_biaffine_ = nullptr;
  const Param<T>* slot_head_ = nullptr;
  const Param<T>* slot_dep_ = nullptr;
};

}  // namespace sager
