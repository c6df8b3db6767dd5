// Teacher-forced training over oracle hierarchies and greedy semi-autoregressive decoding.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sager/conllu.hpp"
#include "sager/graph.hpp"
#include "sager/model.hpp"
#include "sager/optim.hpp"

namespace sager {

struct Vocabularies {
  Vocab words;
  Vocab labels;  // de-lexicalized
};

// Word forms and de-lexicalized labels of a training corpus, in first-seen order.
Vocabularies build_vocabularies(const std::vector<ParsedSentence>& corpus);

struct LabeledArc {
  NodeArc arc;
  std::optional<std::size_t> slot;  // token index filling the label placeholder
};

// A training sentence in decoder node numbering (0 = root, i = token i-1).
struct PreparedSentence {
  std::size_t index = 0;  // position in the corpus
  std::vector<std::size_t> words;
  std::vector<LabeledArc> arcs;      // cycle-broken gold DAG
  std::vector<LabeledArc> all_arcs;  // full gold graph
  std::vector<std::size_t> levels;   // gold hierarchy index per node
};

// Returns nullopt (and sets `reason`) when the sentence cannot be used for training:
// truncation would drop words its gold edges reference, or it has a node
// unreachable from the root.
template <typename T>
std::optional<PreparedSentence> prepare_sentence(const Model<T>& model, const ParsedSentence& s,
                                                 std::size_t index, std::size_t truncate,
                                                 std::string* reason = nullptr);

// Levels used for teacher forcing under `variant`. Autoregressive variants list the
// nodes one per hierarchy, ordered by gold level and then by a per-epoch shuffle
// (auto_random), word position (auto_word), or either depending on the epoch
// (auto_mixed switches at epochs/2).
std::vector<std::size_t> training_levels(const PreparedSentence& s, Variant variant,
                                         std::size_t epoch, std::size_t epochs,
                                         std::uint64_t seed);

template <typename T>
struct LossTerms {
  Var<T> node;
  Var<T> arc;
  Var<T> label;
  Var<T> slot;
  Var<T> total;
};

// -log J for one sentence with all components computed at once from oracle prefixes.
template <typename T>
LossTerms<T> teacher_force_loss(Tape<T>& tape, const Model<T>& model, const PreparedSentence& s,
                                const std::vector<std::size_t>& levels, bool train,
                                CounterRng& rng);

// Incremental decoder state: one component at a time, caching per-layer head states.
template <typename T>
class Generator {
 public:
  Generator(const Model<T>& model, Tape<T>& tape, const std::vector<std::size_t>& words);

  Var<T> sentence() const { return sentence_; }
  std::size_t n_words() const { return n_words_; }
  std::size_t n_components() const { return components_.size(); }
  const std::vector<std::vector<std::size_t>>& components() const { return components_; }
  // Committed nodes in head-state row order.
  const std::vector<QueryRow>& committed() const { return committed_; }
  const std::vector<std::size_t>& pending() const { return pending_; }

  // Row-wise max of the last component's selection logits, [1 x n_words].
  Var<T> selection_logits();
  // Computes dependent states for `nodes` as the next component.
  void begin_component(const std::vector<std::size_t>& nodes);
  // [committed x pending] arc logits.
  Var<T> arc_logits();
  // Pairs are (committed row, pending row).
  Var<T> label_logits(const std::vector<std::pair<std::size_t, std::size_t>>& pairs);
  Var<T> slot_logits(const std::vector<std::pair<std::size_t, std::size_t>>& pairs);
  // Fixes the pending component's incoming edges (node ids) and computes its head states.
  void commit(const std::vector<NodeArc>& arcs);

  Var<T> head_states() const { return heads_.back(); }  // [committed x d], last layer
  Var<T> dependent_states() const { return deps_; }     // [pending x d], last layer

 private:
  const Model<T>& model_;
  Tape<T>& tape_;
  CounterRng rng_;
  Var<T> sentence_;
  std::size_t n_words_;
  std::vector<std::vector<std::size_t>> components_;
  std::vector<QueryRow> committed_;
  std::vector<Var<T>> heads_;  // per layer 0..L
  std::vector<std::size_t> pending_;
  Var<T> deps_;
  std::optional<typename Model<T>::ScorerViews> head_views_;
  std::optional<typename Model<T>::ScorerViews> dep_views_;
};

struct DecodeStep {
  std::vector<std::size_t> selected;  // node ids
  std::vector<double> selection_probs;
  Tensor<double> arc_probs;  // [committed x selected]
};

struct DecodeResult {
  DepGraph graph;                  // relexicalized labels
  std::vector<std::size_t> levels;  // per node; unattached nodes get kUnattached
  std::vector<DecodeStep> steps;
  std::vector<std::size_t> unattached;  // node ids never selected

  static constexpr std::size_t kUnattached = static_cast<std::size_t>(-1);
};

// Greedy generation until no word is selected; words beyond `truncate` stay unattached.
template <typename T>
DecodeResult decode(const Model<T>& model, const ParsedSentence& sentence,
                    std::size_t truncate = 100);

// Replaces each sentence's edges with the decoded graph. Parallel over sentences.
template <typename T>
std::vector<ParsedSentence> parse_corpus(const Model<T>& model,
                                         const std::vector<ParsedSentence>& input,
                                         std::size_t truncate = 100);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double dev_elas = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_dev_elas = -1;
  std::size_t skipped = 0;
};

std::string format_epoch_log(const EpochLog& e);

// Mini-batch Adam with per-epoch decay; restores the parameters with the best dev
// ELAS (the last epoch when `dev` is empty). Log lines go to `log` when set.
template <typename T>
TrainResult train(Model<T>& model, const std::vector<ParsedSentence>& train_set,
                  const std::vector<ParsedSentence>& dev_set, const TrainConfig& config,
                  std::ostream* log = nullptr);

}  // namespace sager
