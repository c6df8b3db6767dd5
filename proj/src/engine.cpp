#include "sager/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <numeric>
#include <tuple>

#include "sager/metrics.hpp"

namespace sager {

namespace {

bool has_placeholder(const std::string& label) {
  return label.find(kLexPlaceholder) != std::string::npos;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Word forms limited to the first `truncate` tokens.
template <typename T>
std::vector<std::size_t> word_ids(const Model<T>& model, const ParsedSentence& s,
                                  std::size_t truncate) {
  std::vector<std::size_t> ids;
  const std::size_t n = std::min(s.tokens.size(), truncate);
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(model.word_id(s.tokens[i].form));
  return ids;
}

template <typename T>
Var<T> zero_loss(Tape<T>& tape) {
  return tape.constant(Tensor<T>(1, 1));
}

void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

Vocabularies build_vocabularies(const std::vector<ParsedSentence>& corpus) {
  Vocabularies v;
  v.words.add(kUnknownWord);
  for (const auto& s : corpus) {
    for (const auto& t : s.tokens) v.words.add(t.form);
    for (const auto& e : s.gold) v.labels.add(delexicalize_label(e.label, s, e).label);
  }
  return v;
}

template <typename T>
std::optional<PreparedSentence> prepare_sentence(const Model<T>& model, const ParsedSentence& s,
                                                 std::size_t index, std::size_t truncate,
                                                 std::string* reason) {
  auto fail = [&](const std::string& why) -> std::optional<PreparedSentence> {
    if (reason) *reason = why;
    return std::nullopt;
  };
  if (s.tokens.empty()) return fail("empty sentence");
  if (s.tokens.size() > truncate) {
    return fail("longer than " + std::to_string(truncate) +
                " words and its gold edges reference truncated words");
  }
  PreparedSentence p;
  p.index = index;
  p.words = word_ids(model, s, truncate);

  DepGraph graph = to_graph(s);
  CycleBreak cb;
  try {
    cb = break_cycles(graph);
  } catch (const GraphError& e) {
    return fail(e.what());
  }
  auto label_arc = [&](const Edge& e) -> std::optional<LabeledArc> {
    DepEdge edge{s.id_at(e.head), s.id_at(e.dep), e.label};
    auto delex = delexicalize_label(e.label, s, edge);
    auto id = model.labels().find(delex.label);
    if (!id) return std::nullopt;
    return LabeledArc{NodeArc{e.head, e.dep, *id}, delex.slot};
  };
  for (const auto& e : cb.dag.edges) {
    auto a = label_arc(e);
    if (!a) return fail("label '" + e.label + "' is not in the label vocabulary");
    p.arcs.push_back(*a);
  }
  for (const auto& e : graph.edges) {
    auto a = label_arc(e);
    if (!a) return fail("label '" + e.label + "' is not in the label vocabulary");
    p.all_arcs.push_back(*a);
  }
  p.levels = build_hierarchy(cb.dag).levels();
  return p;
}

std::vector<std::size_t> training_levels(const PreparedSentence& s, Variant variant,
                                         std::size_t epoch, std::size_t epochs,
                                         std::uint64_t seed) {
  if (!is_autoregressive(variant)) return s.levels;
  bool shuffled = variant == Variant::kAutoRandom ||
                  (variant == Variant::kAutoMixed && epoch < epochs / 2);
  const std::size_t n = s.levels.size();
  std::vector<std::uint64_t> key(n);
  CounterRng rng(derive_key(derive_key(seed, 0xA0 + epoch), s.index));
  for (std::size_t i = 0; i < n; ++i) key[i] = shuffled ? rng.next() : i;
  std::vector<std::size_t> order(n - 1);
  std::iota(order.begin(), order.end(), std::size_t{1});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s.levels[a] != s.levels[b]) return s.levels[a] < s.levels[b];
    if (key[a] != key[b]) return key[a] < key[b];
    return a < b;
  });
  std::vector<std::size_t> levels(n, 0);
  for (std::size_t k = 0; k < order.size(); ++k) levels[order[k]] = k + 1;
  return levels;
}

template <typename T>
LossTerms<T> teacher_force_loss(Tape<T>& tape, const Model<T>& model, const PreparedSentence& s,
                                const std::vector<std::size_t>& levels, bool train,
                                CounterRng& rng) {
  const std::size_t N = s.words.size(), n = N + 1;
  const Variant variant = model.config().variant;
  LossTerms<T> out;
  auto S = model.encode(tape, s.words, train, rng);

  const auto& arcs = variant == Variant::kNonAutoBaseline ? s.all_arcs : s.arcs;
  std::vector<std::uint8_t> is_gold(n * N, 0);
  for (const auto& a : arcs) is_gold[a.arc.head * N + a.arc.dep - 1] = 1;

  Var<T> head_rows, dep_rows;
  std::vector<std::uint8_t> arc_mask(n * N, 0);
  if (variant == Variant::kNonAutoBaseline) {
    head_rows = ad::concat_rows<T>({model.root_vector(tape), S});
    dep_rows = S;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 1; i < n; ++i) arc_mask[j * N + i - 1] = j != i;
    }
    out.node = zero_loss(tape);
  } else {
    std::vector<QueryRow> all(n);
    std::vector<SourceRow> h_sources(n), d_sources;
    std::vector<QueryRow> word_rows;
    for (std::size_t i = 0; i < n; ++i) {
      all[i] = {i, levels[i]};
      h_sources[i] = {i, levels[i], true, true};
      d_sources.push_back({i, levels[i], true, false});
    }
    for (std::size_t i = 1; i < n; ++i) {
      word_rows.push_back({i, levels[i]});
      d_sources.push_back({i, levels[i], false, true});
    }
    std::vector<NodeArc> explicit_edges;
    for (const auto& a : arcs) explicit_edges.push_back(a.arc);
    const auto h_plan = build_plan(all, h_sources, explicit_edges, variant);
    const auto d_plan = build_plan(word_rows, d_sources, {}, variant);

    auto x = model.initial_states(tape, S, all);
    auto xd = model.initial_states(tape, S, word_rows);
    for (std::size_t l = 0; l < model.config().layers; ++l) {
      auto next_d = model.mp_layer(tape, l, xd, ad::concat_rows<T>({x, xd}), d_plan, train, rng);
      x = model.mp_layer(tape, l, x, x, h_plan, train, rng);
      xd = next_d;
    }
    head_rows = x;
    dep_rows = xd;

    // Step t selects V^(t) from the head states of V^(t-1).
    const std::size_t depth = *std::max_element(levels.begin(), levels.end());
    std::vector<std::vector<std::size_t>> groups(depth);
    for (std::size_t i = 0; i < n; ++i) {
      if (levels[i] < depth) groups[levels[i]].push_back(i);
    }
    auto pooled = ad::maxpool_groups(model.selection_logits(tape, x, S, train, rng), groups);
    std::vector<T> targets(depth * N, T(0));
    std::vector<std::uint8_t> mask(depth * N, 0);
    for (std::size_t g = 0; g < depth; ++g) {
      for (std::size_t w = 0; w < N; ++w) {
        const std::size_t lv = levels[w + 1];
        mask[g * N + w] = lv >= g + 1;
        targets[g * N + w] = lv == g + 1 ? T(1) : T(0);
      }
    }
    out.node = ad::bce_with_logits(pooled, targets, mask);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 1; i < n; ++i) arc_mask[j * N + i - 1] = levels[j] < levels[i];
    }
  }

  auto hv = model.head_views(tape, head_rows, train, rng);
  auto dv = model.dependent_views(tape, dep_rows, train, rng);
  std::vector<T> arc_targets(n * N);
  for (std::size_t k = 0; k < n * N; ++k) arc_targets[k] = is_gold[k] ? T(1) : T(0);
  out.arc = ad::bce_with_logits(model.arc_logits(tape, hv.arc, dv.arc), arc_targets, arc_mask);

  std::vector<std::pair<std::size_t, std::size_t>> pairs, slot_pairs;
  std::vector<std::size_t> labels, slots;
  for (const auto& a : arcs) {
    pairs.emplace_back(a.arc.head, a.arc.dep - 1);
    labels.push_back(a.arc.label);
    if (a.slot) {
      slot_pairs.emplace_back(a.arc.head, a.arc.dep - 1);
      slots.push_back(*a.slot);
    }
  }
  out.label = pairs.empty() ? zero_loss(tape)
                            : ad::cross_entropy(model.label_logits(tape, hv.label, dv.label, pairs),
                                                labels);
  out.slot = slot_pairs.empty()
                 ? zero_loss(tape)
                 : ad::cross_entropy(model.slot_logits(tape, hv.label, dv.label, S, slot_pairs),
                                     slots);
  out.total = ad::add(ad::add(out.node, out.arc), ad::add(out.label, out.slot));
  return out;
}

// ---------------------------------------------------------------------------
// Generator

template <typename T>
Generator<T>::Generator(const Model<T>& model, Tape<T>& tape, const std::vector<std::size_t>& words)
    : model_(model), tape_(tape), rng_(0), n_words_(words.size()) {
  sentence_ = model_.encode(tape_, words, false, rng_);
  heads_.resize(model_.config().layers + 1);
  begin_component({0});
  commit({});
}

template <typename T>
Var<T> Generator<T>::selection_logits() {
  std::vector<std::size_t> rows;
  const std::size_t last = components_.size() - 1;
  for (std::size_t r = 0; r < committed_.size(); ++r) {
    if (committed_[r].level == last) rows.push_back(r);
  }
  auto h = ad::gather_rows(head_states(), rows);
  std::vector<std::size_t> all(rows.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return ad::maxpool_groups(model_.selection_logits(tape_, h, sentence_, false, rng_), {all});
}

template <typename T>
void Generator<T>::begin_component(const std::vector<std::size_t>& nodes) {
  pending_ = nodes;
  dep_views_.reset();
  const std::size_t level = components_.size();
  if (level == 0) return;
  std::vector<QueryRow> queries;
  std::vector<SourceRow> sources;
  for (const auto& c : committed_) sources.push_back({c.node, c.level, true, false});
  for (auto node : nodes) {
    queries.push_back({node, level});
    sources.push_back({node, level, false, true});
  }
  const auto plan = build_plan(queries, sources, {}, model_.config().variant);
  auto x = model_.initial_states(tape_, sentence_, queries);
  for (std::size_t l = 0; l < model_.config().layers; ++l) {
    x = model_.mp_layer(tape_, l, x, ad::concat_rows<T>({heads_[l], x}), plan, false, rng_);
  }
  deps_ = x;
}

template <typename T>
Var<T> Generator<T>::arc_logits() {
  if (!head_views_) head_views_ = model_.head_views(tape_, head_states(), false, rng_);
  if (!dep_views_) dep_views_ = model_.dependent_views(tape_, deps_, false, rng_);
  return model_.arc_logits(tape_, head_views_->arc, dep_views_->arc);
}

template <typename T>
Var<T> Generator<T>::label_logits(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (!head_views_) head_views_ = model_.head_views(tape_, head_states(), false, rng_);
  if (!dep_views_) dep_views_ = model_.dependent_views(tape_, deps_, false, rng_);
  return model_.label_logits(tape_, head_views_->label, dep_views_->label, pairs);
}

template <typename T>
Var<T> Generator<T>::slot_logits(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (!head_views_) head_views_ = model_.head_views(tape_, head_states(), false, rng_);
  if (!dep_views_) dep_views_ = model_.dependent_views(tape_, deps_, false, rng_);
  return model_.slot_logits(tape_, head_views_->label, dep_views_->label, sentence_, pairs);
}

template <typename T>
void Generator<T>::commit(const std::vector<NodeArc>& arcs) {
  const std::size_t level = components_.size();
  std::vector<QueryRow> queries;
  std::vector<SourceRow> sources;
  for (const auto& c : committed_) sources.push_back({c.node, c.level, true, true});
  for (auto node : pending_) {
    queries.push_back({node, level});
    sources.push_back({node, level, false, true});
  }
  const auto plan = build_plan(queries, sources, arcs, model_.config().variant);
  const std::size_t L = model_.config().layers;
  std::vector<Var<T>> fresh(L + 1);
  fresh[0] = model_.initial_states(tape_, sentence_, queries);
  for (std::size_t l = 0; l < L; ++l) {
    auto src = committed_.empty() ? fresh[l] : ad::concat_rows<T>({heads_[l], fresh[l]});
    fresh[l + 1] = model_.mp_layer(tape_, l, fresh[l], src, plan, false, rng_);
  }
  for (std::size_t l = 0; l <= L; ++l) {
    heads_[l] = committed_.empty() ? fresh[l] : ad::concat_rows<T>({heads_[l], fresh[l]});
  }
  committed_.insert(committed_.end(), queries.begin(), queries.end());
  components_.push_back(pending_);
  pending_.clear();
  head_views_.reset();
  dep_views_.reset();
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

template <typename T>
std::size_t argmax_row(const Tensor<T>& m, std::size_t r) {
  const T* row = m.row(r);
  return static_cast<std::size_t>(std::max_element(row, row + m.cols()) - row);
}

// Commits per-pair arcs above 0.5, forcing the best head for a headless dependent.
// probs is [heads x deps].
std::vector<std::pair<std::size_t, std::size_t>> choose_arcs(const Tensor<double>& probs,
                                                             const std::vector<std::uint8_t>* allowed) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t c = 0; c < probs.cols(); ++c) {
    std::size_t best = static_cast<std::size_t>(-1);
    bool any = false;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      if (allowed && !(*allowed)[r * probs.cols() + c]) continue;
      if (best == static_cast<std::size_t>(-1) || probs(r, c) > probs(best, c)) best = r;
      if (probs(r, c) > 0.5) {
        pairs.emplace_back(r, c);
        any = true;
      }
    }
    if (!any && best != static_cast<std::size_t>(-1)) pairs.emplace_back(best, c);
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return std::tie(a.second, a.first) < std::tie(b.second, b.first); });
  return pairs;
}

template <typename T>
Tensor<double> sigmoid_of(const Tensor<T>& logits) {
  Tensor<double> p(logits.rows(), logits.cols());
  for (std::size_t k = 0; k < logits.size(); ++k) p[k] = sigmoid(static_cast<double>(logits[k]));
  return p;
}

// Labels (and slots for placeholder labels) for the chosen pairs, as relexicalized strings.
template <typename T>
std::vector<std::string> pick_labels(const Model<T>& model, const ParsedSentence& sentence,
                                     const Tensor<T>& label_logits,
                                     const std::function<Tensor<T>(
                                         const std::vector<std::pair<std::size_t, std::size_t>>&)>& slots_for,
                                     const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::vector<std::string> out(pairs.size());
  std::vector<std::size_t> label_ids(pairs.size());
  std::vector<std::pair<std::size_t, std::size_t>> slot_pairs;
  std::vector<std::size_t> slot_index;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    label_ids[k] = model.labels().size() ? argmax_row(label_logits, k) : 0;
    if (model.labels().size() && has_placeholder(model.labels().at(label_ids[k]))) {
      slot_pairs.push_back(pairs[k]);
      slot_index.push_back(k);
    }
  }
  Tensor<T> slot_logits;
  if (!slot_pairs.empty()) slot_logits = slots_for(slot_pairs);
  std::size_t next_slot = 0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (model.labels().size() == 0) {
      out[k] = "dep";
      continue;
    }
    const std::string& label = model.labels().at(label_ids[k]);
    std::optional<std::size_t> slot;
    if (next_slot < slot_index.size() && slot_index[next_slot] == k) {
      slot = argmax_row(slot_logits, next_slot);
      ++next_slot;
    }
    out[k] = relexicalize_label(label, slot, sentence);
  }
  return out;
}

template <typename T>
DecodeResult decode_nonauto(const Model<T>& model, const ParsedSentence& sentence,
                            std::size_t truncate) {
  DecodeResult r;
  const std::size_t total = sentence.tokens.size();
  r.graph.n_nodes = total + 1;
  r.levels.assign(total + 1, DecodeResult::kUnattached);
  r.levels[0] = 0;
  auto words = word_ids(model, sentence, truncate);
  const std::size_t N = words.size();
  for (std::size_t i = N + 1; i <= total; ++i) r.unattached.push_back(i);
  if (N == 0) return r;

  Tape<T> tape(false);
  CounterRng rng(0);
  auto S = model.encode(tape, words, false, rng);
  auto heads = ad::concat_rows<T>({model.root_vector(tape), S});
  auto hv = model.head_views(tape, heads, false, rng);
  auto dv = model.dependent_views(tape, S, false, rng);
  auto probs = sigmoid_of(model.arc_logits(tape, hv.arc, dv.arc).value());
  std::vector<std::uint8_t> allowed((N + 1) * N, 1);
  for (std::size_t i = 1; i <= N; ++i) allowed[i * N + i - 1] = 0;
  auto pairs = choose_arcs(probs, &allowed);
  auto label_logits = model.label_logits(tape, hv.label, dv.label, pairs).value();
  auto labels = pick_labels<T>(
      model, sentence, label_logits,
      [&](const auto& sp) { return model.slot_logits(tape, hv.label, dv.label, S, sp).value(); },
      pairs);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    r.graph.edges.push_back({pairs[k].first, pairs[k].second + 1, labels[k]});
  }
  DecodeStep step;
  for (std::size_t i = 1; i <= N; ++i) {
    step.selected.push_back(i);
    r.levels[i] = 1;
  }
  step.arc_probs = probs;
  r.steps.push_back(std::move(step));
  return r;
}

}  // namespace

template <typename T>
DecodeResult decode(const Model<T>& model, const ParsedSentence& sentence, std::size_t truncate) {
  const Variant variant = model.config().variant;
  if (variant == Variant::kNonAutoBaseline) return decode_nonauto(model, sentence, truncate);

  DecodeResult r;
  const std::size_t total = sentence.tokens.size();
  r.graph.n_nodes = total + 1;
  r.levels.assign(total + 1, DecodeResult::kUnattached);
  r.levels[0] = 0;
  auto words = word_ids(model, sentence, truncate);
  const std::size_t N = words.size();
  if (N == 0) return r;

  Tape<T> tape(false);
  Generator<T> gen(model, tape, words);
  std::vector<bool> selected(N, false);
  const bool one_per_step = is_autoregressive(variant);

  for (std::size_t step = 1; step <= N; ++step) {
    auto logits = gen.selection_logits().value();
    std::vector<double> probs(N);
    for (std::size_t w = 0; w < N; ++w) probs[w] = sigmoid(static_cast<double>(logits[w]));
    std::vector<std::size_t> nodes;
    if (one_per_step) {
      std::size_t best = N;
      for (std::size_t w = 0; w < N; ++w) {
        if (selected[w] || probs[w] <= 0.5) continue;
        if (best == N || probs[w] > probs[best]) best = w;
      }
      if (best < N) nodes.push_back(best + 1);
    } else {
      for (std::size_t w = 0; w < N; ++w) {
        if (!selected[w] && probs[w] > 0.5) nodes.push_back(w + 1);
      }
    }
    if (nodes.empty()) break;
    for (auto node : nodes) {
      selected[node - 1] = true;
      r.levels[node] = step;
    }

    gen.begin_component(nodes);
    auto arc_probs = sigmoid_of(gen.arc_logits().value());
    auto pairs = choose_arcs(arc_probs, nullptr);
    auto label_logits = gen.label_logits(pairs).value();
    auto labels = pick_labels<T>(
        model, sentence, label_logits, [&](const auto& sp) { return gen.slot_logits(sp).value(); },
        pairs);
    std::vector<NodeArc> arcs;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const std::size_t head = gen.committed()[pairs[k].first].node;
      const std::size_t dep = nodes[pairs[k].second];
      r.graph.edges.push_back({head, dep, labels[k]});
      arcs.push_back({head, dep, model.labels().size() ? argmax_row(label_logits, k) : 0});
    }
    gen.commit(arcs);
    r.steps.push_back({nodes, probs, std::move(arc_probs)});
  }
  for (std::size_t i = 1; i <= total; ++i) {
    if (r.levels[i] == DecodeResult::kUnattached) r.unattached.push_back(i);
  }
  return r;
}

template <typename T>
std::vector<ParsedSentence> parse_corpus(const Model<T>& model,
                                         const std::vector<ParsedSentence>& input,
                                         std::size_t truncate) {
  std::vector<ParsedSentence> out(input.size());
  std::vector<std::exception_ptr> errors(input.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t s = 0; s < input.size(); ++s) {
    try {
      auto result = decode(model, input[s], truncate);
      out[s] = input[s];
      assign_edges(out[s], result.graph);
    } catch (...) {
      errors[s] = std::current_exception();
    }
  }
  rethrow_first(errors);
  return out;
}

// ---------------------------------------------------------------------------
// Training

std::string format_epoch_log(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.4f\t%.6g", e.epoch, e.train_loss, e.dev_elas, e.lr);
  return buf;
}

template <typename T>
TrainResult train(Model<T>& model, const std::vector<ParsedSentence>& train_set,
                  const std::vector<ParsedSentence>& dev_set, const TrainConfig& config,
                  std::ostream* log) {
  config.validate();
  TrainResult result;
  std::vector<PreparedSentence> prepared;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    std::string reason;
    auto p = prepare_sentence(model, train_set[i], i, config.truncate, &reason);
    if (p) {
      prepared.push_back(std::move(*p));
    } else {
      ++result.skipped;
      std::cerr << "warning: skipping training sentence " << i + 1;
      if (!train_set[i].sent_id().empty()) std::cerr << " (" << train_set[i].sent_id() << ")";
      std::cerr << ": " << reason << "\n";
    }
  }
  if (prepared.empty()) throw TrainingError("no usable training sentences");

  auto& params = model.params();
  Adam<T> adam(AdamHyper{config.lr_main}, AdamHyper{config.lr_embed});
  std::vector<Tensor<T>> best;
  const Variant variant = model.config().variant;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr_main = decayed_lr(config.lr_main, config.lr_decay, epoch);
    adam.set_lr(lr_main, decayed_lr(config.lr_embed, config.lr_decay, epoch));

    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle_rng(derive_key(config.seed, 0x5100 + epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0;
    for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += config.batch_size, ++batch) {
      const std::size_t k = std::min(config.batch_size, order.size() - begin);
      std::vector<Gradients<T>> grads(k, Gradients<T>(params.size()));
      std::vector<double> losses(k, 0.0);
      std::vector<std::exception_ptr> errors(k);
#pragma omp parallel for schedule(dynamic)
      for (std::size_t q = 0; q < k; ++q) {
        try {
          const auto& s = prepared[order[begin + q]];
          auto levels = training_levels(s, variant, epoch, config.epochs, config.seed);
          CounterRng rng(derive_key(derive_key(config.seed, 0xD0 + epoch), s.index));
          Tape<T> tape;
          auto terms = teacher_force_loss(tape, model, s, levels, true, rng);
          losses[q] = static_cast<double>(terms.total.value()[0]);
          tape.backward(terms.total, grads[q]);
        } catch (...) {
          errors[q] = std::current_exception();
        }
      }
      rethrow_first(errors);
      for (std::size_t q = 0; q < k; ++q) {
        if (!std::isfinite(losses[q])) {
          throw TrainingError("non-finite loss in epoch " + std::to_string(epoch + 1) + " batch " +
                              std::to_string(batch + 1));
        }
        epoch_loss += losses[q];
      }
      params.zero_grad();
      for (const auto& g : grads) g.add_to(params, static_cast<T>(1.0 / static_cast<double>(k)));
      adam.step(params);
    }

    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.train_loss = epoch_loss / static_cast<double>(prepared.size());
    entry.lr = lr_main;
    if (!dev_set.empty()) {
      entry.dev_elas = 100.0 * elas(dev_set, parse_corpus(model, dev_set, config.truncate)).f1;
    }
    if (dev_set.empty() || entry.dev_elas > result.best_dev_elas) {
      result.best_dev_elas = entry.dev_elas;
      result.best_epoch = entry.epoch;
      best.clear();
      for (std::size_t i = 0; i < params.size(); ++i) best.push_back(params[i].value);
    }
    result.log.push_back(entry);
    if (log) *log << format_epoch_log(entry) << "\n" << std::flush;
  }
  for (std::size_t i = 0; i < best.size(); ++i) params[i].value = best[i];
  return result;
}

#define SAGER_INSTANTIATE_ENGINE(T)                                                              \
  template std::optional<PreparedSentence> prepare_sentence(const Model<T>&,                     \
                                                            const ParsedSentence&, std::size_t,   \
                                                            std::size_t, std::string*);           \
  template LossTerms<T> teacher_force_loss(Tape<T>&, const Model<T>&, const PreparedSentence&,   \
                                           const std::vector<std::size_t>&, bool, CounterRng&);  \
  template class Generator<T>;                                                                   \
  template DecodeResult decode(const Model<T>&, const ParsedSentence&, std::size_t);             \
  template std::vector<ParsedSentence> parse_corpus(const Model<T>&,                            \
                                                    const std::vector<ParsedSentence>&,           \
                                                    std::size_t);                                 \
  template TrainResult train(Model<T>&, const std::vector<ParsedSentence>&,                      \
                             const std::vector<ParsedSentence>&, const TrainConfig&,              \
                             std::ostream*);

SAGER_INSTANTIATE_ENGINE(float)
SAGER_INSTANTIATE_ENGINE(double)

#undef SAGER_INSTANTIATE_ENGINE

}  // namespace sager
