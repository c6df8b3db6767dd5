#include "sager/gradcheck.hpp"

#include <algorithm>
#include <functional>

#include "sager/engine.hpp"

namespace sager {

namespace {

using D = double;

constexpr const char* kToySentence =
    "# sent_id = toy\n"
    "1\tthe\tthe\tDET\t_\t_\t2\tdet\t2:det\t_\n"
    "2\tcat\tcat\tNOUN\t_\t_\t3\tnsubj\t3:nsubj|5:ref\t_\n"
    "3\tsat\tsit\tVERB\t_\t_\t0\troot\t0:root\t_\n"
    "4\ton\ton\tADP\t_\t_\t5\tcase\t5:case\t_\n"
    "5\tmat\tmat\tNOUN\t_\t_\t3\tobl\t2:nmod|3:obl:on\t_\n"
    "\n";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::unique_ptr<Model<D>> toy_model(const Vocabularies& v, Variant variant, std::uint64_t seed) {
  ModelConfig mc;
  mc.d = 8;
  mc.heads = 2;
  mc.layers = 2;
  mc.encoder_layers = 1;
  mc.ffn_mult = 2;
  mc.variant = variant;
  auto model = std::make_unique<Model<D>>(mc, v.words, v.labels, seed);
  // Open every residual branch so the check covers the sublayers too.
  CounterRng rng(derive_key(seed, 0x6A7E));
  auto& params = model->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.name.find("gate") != std::string::npos) {
      for (auto& x : p.value.values()) x = rng.uniform(0.5, 1.0);
    } else if (ends_with(p.name, ".b") || ends_with(p.name, ".b1") || ends_with(p.name, ".b2")) {
      for (auto& x : p.value.values()) x = rng.uniform(-0.1, 0.1);
    } else if (ends_with(p.name, ".biaffine")) {
      // Keeps the label softmax away from saturation, where finite differences only
      // measure rounding noise.
      for (auto& x : p.value.values()) x *= 0.1;
    }
  }
  return model;
}

std::vector<Param<D>*> with_prefix(Model<D>& model, const std::vector<std::string>& prefixes) {
  std::vector<Param<D>*> out;
  auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (const auto& pre : prefixes) {
      if (params[i].name.rfind(pre, 0) == 0) {
        out.push_back(&params[i]);
        break;
      }
    }
  }
  return out;
}

Tensor<D> random_matrix(std::size_t rows, std::size_t cols, CounterRng& rng) {
  Tensor<D> t(rows, cols);
  for (auto& x : t.values()) x = rng.uniform(-1.0, 1.0);
  return t;
}

// Random linear functional of a matrix-valued output.
Var<D> project_sum(Tape<D>& tape, Var<D> x, const Tensor<D>& w) {
  return ad::sum(ad::matmul(x, tape.constant(w)));
}

}  // namespace

std::vector<BlockCheck> run_gradient_checks(std::uint64_t seed) {
  std::vector<BlockCheck> out;
  const auto corpus = parse_conllu(kToySentence);
  const auto vocab = build_vocabularies(corpus);
  auto model = toy_model(vocab, Variant::kFull, seed);
  const std::size_t d = model->config().d;
  CounterRng data_rng(derive_key(seed, 0xDA7A));
  const std::uint64_t dropout_key = derive_key(seed, 0xD409);

  std::vector<std::size_t> words;
  for (const auto& t : corpus[0].tokens) words.push_back(model->word_id(t.form));
  const std::size_t N = words.size();

  auto check = [&](const std::string& name, const std::function<Var<D>(Tape<D>&)>& f,
                   std::vector<Param<D>*> params, std::size_t max_coords = 0) {
    out.push_back({name, grad_check<D>(f, std::move(params), 1e-5, max_coords)});
  };

  {
    auto w = random_matrix(d, 1, data_rng);
    check("encoder", [&](Tape<D>& tape) {
      CounterRng rng(dropout_key);
      return project_sum(tape, model->encode(tape, words, true, rng), w);
    }, with_prefix(*model, {"enc.", "word_emb"}));
  }

  {
    // Five nodes over four hierarchies with a reentrant node.
    const std::vector<std::size_t> levels = {0, 1, 1, 2, 3};
    std::vector<QueryRow> queries;
    std::vector<SourceRow> sources;
    for (std::size_t i = 0; i < 5; ++i) {
      queries.push_back({i, levels[i]});
      sources.push_back({i, levels[i], true, true});
    }
    const std::size_t L = model->labels().size();
    std::vector<NodeArc> arcs = {{0, 1, 0}, {0, 2, 1 % L}, {1, 3, 2 % L}, {2, 3, 3 % L}, {3, 4, 1 % L}};
    const auto plan = build_plan(queries, sources, arcs, Variant::kFull);
    auto x = random_matrix(5, d, data_rng);
    auto w = random_matrix(d, 1, data_rng);
    check("mp_layer", [&](Tape<D>& tape) {
      CounterRng rng(dropout_key);
      auto xv = tape.constant(x);
      return project_sum(tape, model->mp_layer(tape, 0, xv, xv, plan, true, rng), w);
    }, with_prefix(*model, {"dec.0.", "edge_u."}));
  }

  {
    auto h = random_matrix(3, d, data_rng);
    auto s = random_matrix(N, d, data_rng);
    std::vector<D> targets(N);
    for (std::size_t w = 0; w < N; ++w) targets[w] = w % 2 ? 1.0 : 0.0;
    std::vector<std::uint8_t> mask(N, 1);
    check("node_selection", [&](Tape<D>& tape) {
      CounterRng rng(dropout_key);
      auto logits = model->selection_logits(tape, tape.constant(h), tape.constant(s), true, rng);
      auto pooled = ad::maxpool_groups(logits, {{0, 1, 2}});
      return ad::bce_with_logits(pooled, targets, mask);
    }, with_prefix(*model, {"sel."}));
  }

  {
    auto h = random_matrix(4, d, data_rng);
    auto dep = random_matrix(3, d, data_rng);
    std::vector<D> targets(12);
    for (std::size_t k = 0; k < 12; ++k) targets[k] = k % 3 == 0 ? 1.0 : 0.0;
    std::vector<std::uint8_t> mask(12, 1);
    check("biaffine_arc", [&](Tape<D>& tape) {
      CounterRng rng(dropout_key);
      auto hv = model->head_views(tape, tape.constant(h), true, rng);
      auto dv = model->dependent_views(tape, tape.constant(dep), true, rng);
      return ad::bce_with_logits(model->arc_logits(tape, hv.arc, dv.arc), targets, mask);
    }, with_prefix(*model, {"arc_head.", "arc_dep.", "arc.biaffine"}));

    const std::vector<std::pair<std::size_t, std::size_t>> pairs = {{0, 0}, {1, 0}, {2, 1}, {3, 2}};
    std::vector<std::size_t> labels;
    for (std::size_t k = 0; k < pairs.size(); ++k) labels.push_back(k % model->labels().size());
    check("biaffine_label", [&](Tape<D>& tape) {
      CounterRng rng(dropout_key);
      auto hv = model->head_views(tape, tape.constant(h), true, rng);
      auto dv = model->dependent_views(tape, tape.constant(dep), true, rng);
      return ad::cross_entropy(model->label_logits(tape, hv.label, dv.label, pairs), labels);
    }, with_prefix(*model, {"label_head.", "label_dep.", "label.biaffine"}));

    auto s = random_matrix(N, d, data_rng);
    const std::vector<std::size_t> slots = {3, 1, 0, 4};
    check("label_slot", [&](Tape<D>& tape) {
      CounterRng rng(dropout_key);
      auto hv = model->head_views(tape, tape.constant(h), true, rng);
      auto dv = model->dependent_views(tape, tape.constant(dep), true, rng);
      return ad::cross_entropy(
          model->slot_logits(tape, hv.label, dv.label, tape.constant(s), pairs), slots);
    }, with_prefix(*model, {"slot."}));
  }

  for (Variant variant : {Variant::kFull, Variant::kNonAutoBaseline}) {
    auto m = toy_model(vocab, variant, seed);
    auto prepared = prepare_sentence(*m, corpus[0], 0, 100);
    if (!prepared) throw GraphError("gradient-check sentence could not be prepared");
    std::vector<Param<D>*> all;
    for (std::size_t i = 0; i < m->params().size(); ++i) all.push_back(&m->params()[i]);
    check(variant == Variant::kFull ? "teacher_forcing" : "nonauto_baseline",
          [&](Tape<D>& tape) {
            CounterRng rng(dropout_key);
            return teacher_force_loss(tape, *m, *prepared, prepared->levels, true, rng).total;
          },
          all, 24);
  }
  return out;
}

}  // namespace sager
