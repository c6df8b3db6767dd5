#include "sager/model.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "sager/graph.hpp"

namespace sager {

Vocab::Vocab(std::vector<std::string> items) {
  for (const auto& item : items) add(item);
}

std::size_t Vocab::add(const std::string& item) {
  auto [it, inserted] = index_.emplace(item, items_.size());
  if (inserted) items_.push_back(item);
  return it->second;
}

std::optional<std::size_t> Vocab::find(const std::string& item) const {
  auto it = index_.find(item);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

AttentionPlan build_plan(const std::vector<QueryRow>& queries,
                         const std::vector<SourceRow>& sources,
                         const std::vector<NodeArc>& explicit_edges, Variant variant) {
  AttentionPlan plan;
  plan.n_queries = queries.size();
  plan.n_sources = sources.size();
  plan.implicit.assign(plan.n_queries * plan.n_sources, 0);

  const bool use_explicit = variant != Variant::kNoExplicit;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& qi = queries[q];
    for (std::size_t s = 0; s < sources.size(); ++s) {
      const auto& sj = sources[s];
      bool allowed = false;
      if (sj.prior && sj.level < qi.level) {
        allowed = variant != Variant::kNoImplicit;
      } else if (sj.same_level && sj.level == qi.level) {
        allowed = sj.node == qi.node ||
                  (variant != Variant::kNoImplicit && variant != Variant::kNoSameLevelImplicit);
      }
      plan.implicit[q * plan.n_sources + s] = allowed ? 1 : 0;
    }
  }
  if (!use_explicit) return plan;

  for (const auto& e : explicit_edges) {
    std::optional<std::size_t> q_row;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      if (queries[q].node == e.dep) {
        q_row = q;
        break;
      }
    }
    if (!q_row) continue;  // dependent not among these queries
    std::optional<std::size_t> s_row;
    for (std::size_t s = 0; s < sources.size(); ++s) {
      if (sources[s].node == e.head && sources[s].prior) {
        s_row = s;
        break;
      }
    }
    if (!s_row) {
      throw GraphError("explicit edge " + std::to_string(e.head) + "->" + std::to_string(e.dep) +
                       " has no head state among the sources");
    }
    if (sources[*s_row].level >= queries[*q_row].level) {
      throw GraphError("explicit edge " + std::to_string(e.head) + "->" + std::to_string(e.dep) +
                       " does not point from an earlier hierarchy");
    }
    plan.implicit[*q_row * plan.n_sources + *s_row] = 0;
    plan.explicit_messages.push_back({*s_row, *q_row, e.label});
  }
  std::sort(plan.explicit_messages.begin(), plan.explicit_messages.end(),
            [](const ExplicitMessage& a, const ExplicitMessage& b) {
              return std::tie(a.label, a.query, a.source) < std::tie(b.label, b.query, b.source);
            });
  return plan;
}

template <typename T>
Tensor<T> sinusoid(std::size_t position, std::size_t d) {
  Tensor<T> out(1, d);
  for (std::size_t i = 0; i < d; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
    const double angle = static_cast<double>(position) * freq;
    out[i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
  }
  return out;
}

template <typename T>
Model<T>::Model(ModelConfig config, Vocab words, Vocab labels, std::uint64_t seed)
    : config_(config), words_(std::move(words)), labels_(std::move(labels)) {
  config_.validate();
  if (!words_.find(kUnknownWord)) {
    std::vector<std::string> items{kUnknownWord};
    for (const auto& w : words_.items()) items.push_back(w);
    words_ = Vocab(std::move(items));
  } else if (words_.at(0) != kUnknownWord) {
    throw ConfigError("word vocabulary must start with the unknown-word entry");
  }

  CounterRng rng(derive_key(seed, 0x1417));
  const std::size_t d = config_.d;

  Tensor<T> emb(words_.size(), d);
  for (auto& x : emb.values()) x = static_cast<T>(rng.normal(0.0, 0.02));
  word_emb_ = &params_.add("word_emb", std::move(emb), ParamGroup::kEmbedding);
  Tensor<T> root(1, d);
  for (auto& x : root.values()) x = static_cast<T>(rng.normal(0.0, 0.02));
  root_ = &params_.add("root", std::move(root));

  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    encoder_.push_back(add_block("enc." + std::to_string(l), rng));
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    decoder_.push_back(add_block("dec." + std::to_string(l), rng));
  }
  for (std::size_t z = 0; z < labels_.size(); ++z) {
    edge_u_.push_back(add_matrix("edge_u." + std::to_string(z), d, d, rng));
  }
  sel_w1_ = add_matrix("sel.w1", d, d, rng);
  sel_w2_ = add_matrix("sel.w2", d, d, rng);
  arc_head_ = add_projection("arc_head", rng);
  arc_dep_ = add_projection("arc_dep", rng);
  label_head_ = add_projection("label_head", rng);
  label_dep_ = add_projection("label_dep", rng);

  arc_biaffine_ = add_matrix("arc.biaffine", d + 1, d + 1, rng);
  // Each label's (d+1) x (d+1) block gets its own Glorot range.
  {
    const std::size_t L = std::max<std::size_t>(labels_.size(), 1);
    const double r = std::sqrt(6.0 / static_cast<double>(2 * (d + 1)));
    Tensor<T> w(d + 1, L * (d + 1));
    for (auto& x : w.values()) x = static_cast<T>(rng.uniform(-r, r));
    label_biaffine_ = &params_.add("label.biaffine", std::move(w));
  }
  slot_head_ = add_matrix("slot.head", d + 1, d, rng);
  slot_dep_ = add_matrix("slot.dep", d + 1, d, rng);
}

template <typename T>
const Param<T>* Model<T>::add_matrix(const std::string& name, std::size_t rows, std::size_t cols,
                                     CounterRng& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor<T> w(rows, cols);
  for (auto& x : w.values()) x = static_cast<T>(rng.uniform(-r, r));
  return &params_.add(name, std::move(w));
}

template <typename T>
const Param<T>* Model<T>::add_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  return &params_.add(name, Tensor<T>(rows, cols));
}

template <typename T>
typename Model<T>::Block Model<T>::add_block(const std::string& prefix, CounterRng& rng) {
  const std::size_t d = config_.d, inner = config_.ffn_mult * config_.d;
  Block b{};
  b.wq = add_matrix(prefix + ".wq", d, d, rng);
  b.wk = add_matrix(prefix + ".wk", d, d, rng);
  b.wv = add_matrix(prefix + ".wv", d, d, rng);
  b.wo = add_matrix(prefix + ".wo", d, d, rng);
  b.w1 = add_matrix(prefix + ".ffn.w1", d, inner, rng);
  b.b1 = add_zeros(prefix + ".ffn.b1", 1, inner);
  b.w2 = add_matrix(prefix + ".ffn.w2", inner, d, rng);
  b.b2 = add_zeros(prefix + ".ffn.b2", 1, d);
  b.gate_attn = add_zeros(prefix + ".gate_attn", 1, 1);
  b.gate_ffn = add_zeros(prefix + ".gate_ffn", 1, 1);
  return b;
}

template <typename T>
typename Model<T>::Projection Model<T>::add_projection(const std::string& prefix, CounterRng& rng) {
  return {add_matrix(prefix + ".w", config_.d, config_.d, rng), add_zeros(prefix + ".b", 1, config_.d)};
}

template <typename T>
std::size_t Model<T>::word_id(const std::string& form) const {
  return words_.find(form).value_or(0);
}

template <typename T>
Var<T> Model<T>::run_block(Tape<T>& tape, const Block& b, Var<T> queries, Var<T> keys_values,
                           const std::vector<std::uint8_t>& mask, bool train, CounterRng& rng,
                           Tensor<T>* attention) const {
  auto q = ad::matmul(queries, tape.param(*b.wq));
  auto k = ad::matmul(keys_values, tape.param(*b.wk));
  auto v = ad::matmul(keys_values, tape.param(*b.wv));
  auto att = ad::multihead_attention(q, k, v, mask, config_.heads, attention);
  auto o = ad::dropout(ad::matmul(att, tape.param(*b.wo)), config_.repr_dropout, train, rng);
  auto x = ad::add(queries, ad::scale_by(o, tape.param(*b.gate_attn)));

  auto h = ad::relu(ad::add_row(ad::matmul(x, tape.param(*b.w1)), tape.param(*b.b1)));
  auto f = ad::add_row(ad::matmul(h, tape.param(*b.w2)), tape.param(*b.b2));
  f = ad::dropout(f, config_.repr_dropout, train, rng);
  return ad::add(x, ad::scale_by(f, tape.param(*b.gate_ffn)));
}

template <typename T>
Var<T> Model<T>::encode(Tape<T>& tape, const std::vector<std::size_t>& word_ids, bool train,
                        CounterRng& rng) const {
  const std::size_t n = word_ids.size(), d = config_.d;
  if (n == 0) throw DimensionError("encode: empty sentence");
  Tensor<T> pos(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = sinusoid<T>(i, d);
    std::copy(p.data(), p.data() + d, pos.row(i));
  }
  auto x = ad::scale(ad::gather_rows(tape.param(*word_emb_), word_ids),
                     static_cast<T>(std::sqrt(static_cast<double>(d))));
  x = ad::add(x, tape.constant(std::move(pos)));
  x = ad::dropout(x, config_.repr_dropout, train, rng);
  const std::vector<std::uint8_t> mask(n * n, 1);
  for (const auto& block : encoder_) x = run_block(tape, block, x, x, mask, train, rng, nullptr);
  return x;
}

template <typename T>
Var<T> Model<T>::initial_states(Tape<T>& tape, Var<T> sentence,
                                const std::vector<QueryRow>& nodes) const {
  std::vector<std::size_t> rows;
  rows.reserve(nodes.size());
  for (const auto& n : nodes) rows.push_back(n.node);
  auto table = ad::concat_rows<T>({tape.param(*root_), sentence});
  auto x = ad::gather_rows(table, rows);
  if (config_.variant == Variant::kNoHierPos) return x;
  const std::size_t d = config_.d;
  Tensor<T> pos(nodes.size(), d);
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    auto p = sinusoid<T>(nodes[r].level, d);
    std::copy(p.data(), p.data() + d, pos.row(r));
  }
  return ad::add(x, tape.constant(std::move(pos)));
}

template <typename T>
Var<T> Model<T>::explicit_messages(Tape<T>& tape, Var<T> sources,
                                   const std::vector<ExplicitMessage>& messages) const {
  std::vector<Var<T>> groups;
  std::size_t i = 0;
  while (i < messages.size()) {
    const std::size_t label = messages[i].label;
    if (label >= edge_u_.size()) {
      throw ConfigError("edge label id " + std::to_string(label) + " outside the label vocabulary");
    }
    std::vector<std::size_t> rows;
    for (; i < messages.size() && messages[i].label == label; ++i) rows.push_back(messages[i].source);
    auto x = ad::gather_rows(sources, rows);
    groups.push_back(ad::add(x, ad::relu(ad::matmul(x, tape.param(*edge_u_[label])))));
  }
  return groups.size() == 1 ? groups[0] : ad::concat_rows(groups);
}

template <typename T>
Var<T> Model<T>::mp_layer(Tape<T>& tape, std::size_t layer, Var<T> queries, Var<T> sources,
                          const AttentionPlan& plan, bool train, CounterRng& rng,
                          Tensor<T>* attention) const {
  if (queries.rows() != plan.n_queries || sources.rows() != plan.n_sources) {
    throw DimensionError("mp_layer: plan does not match the query/source rows");
  }
  const std::size_t ne = plan.explicit_messages.size();
  const std::size_t width = plan.n_sources + ne;
  std::vector<std::uint8_t> mask(plan.n_queries * width, 0);
  for (std::size_t q = 0; q < plan.n_queries; ++q) {
    std::copy(plan.implicit.begin() + q * plan.n_sources,
              plan.implicit.begin() + (q + 1) * plan.n_sources, mask.begin() + q * width);
  }
  auto messages = sources;
  if (ne > 0) {
    for (std::size_t e = 0; e < ne; ++e) {
      mask[plan.explicit_messages[e].query * width + plan.n_sources + e] = 1;
    }
    messages = ad::concat_rows<T>({sources, explicit_messages(tape, sources, plan.explicit_messages)});
  }
  return run_block(tape, decoder_.at(layer), queries, messages, mask, train, rng, attention);
}

template <typename T>
Var<T> Model<T>::selection_logits(Tape<T>& tape, Var<T> heads, Var<T> sentence, bool train,
                                  CounterRng& rng) const {
  auto h = ad::dropout(ad::matmul(heads, tape.param(*sel_w1_)), config_.output_dropout, train, rng);
  auto s = ad::dropout(ad::matmul(sentence, tape.param(*sel_w2_)), config_.output_dropout, train, rng);
  return ad::matmul_nt(h, s);
}

template <typename T>
Var<T> Model<T>::project(Tape<T>& tape, const Projection& p, Var<T> x, bool train,
                         CounterRng& rng) const {
  auto y = ad::relu(ad::add_row(ad::matmul(x, tape.param(*p.w)), tape.param(*p.b)));
  return ad::dropout(y, config_.output_dropout, train, rng);
}

template <typename T>
typename Model<T>::ScorerViews Model<T>::head_views(Tape<T>& tape, Var<T> heads, bool train,
                                                    CounterRng& rng) const {
  auto arc = project(tape, arc_head_, heads, train, rng);
  auto label = project(tape, label_head_, heads, train, rng);
  return {arc, label};
}

template <typename T>
typename Model<T>::ScorerViews Model<T>::dependent_views(Tape<T>& tape, Var<T> deps, bool train,
                                                         CounterRng& rng) const {
  auto arc = project(tape, arc_dep_, deps, train, rng);
  auto label = project(tape, label_dep_, deps, train, rng);
  return {arc, label};
}

template <typename T>
Var<T> Model<T>::arc_logits(Tape<T>& tape, Var<T> head_arc, Var<T> dep_arc) const {
  auto left = ad::matmul(ad::append_ones(head_arc), tape.param(*arc_biaffine_));
  return ad::matmul_nt(left, ad::append_ones(dep_arc));
}

template <typename T>
Var<T> Model<T>::label_logits(Tape<T>& tape, Var<T> head_label, Var<T> dep_label,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const {
  return ad::bilinear_pairs(ad::append_ones(head_label), tape.param(*label_biaffine_),
                            ad::append_ones(dep_label), pairs,
                            std::max<std::size_t>(labels_.size(), 1));
}

template <typename T>
Var<T> Model<T>::slot_logits(Tape<T>& tape, Var<T> head_label, Var<T> dep_label, Var<T> sentence,
                             const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const {
  std::vector<std::size_t> hs, ds;
  for (auto [h, d] : pairs) {
    hs.push_back(h);
    ds.push_back(d);
  }
  auto qh = ad::matmul(ad::gather_rows(ad::append_ones(head_label), hs), tape.param(*slot_head_));
  auto qd = ad::matmul(ad::gather_rows(ad::append_ones(dep_label), ds), tape.param(*slot_dep_));
  return ad::matmul_nt(ad::add(qh, qd), sentence);
}

template Tensor<float> sinusoid<float>(std::size_t, std::size_t);
template Tensor<double> sinusoid<double>(std::size_t, std::size_t);
template class Model<float>;
template class Model<double>;

}  // namespace sager
