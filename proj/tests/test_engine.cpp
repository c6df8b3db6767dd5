#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "reference.hpp"
#include "sager/engine.hpp"
#include "support.hpp"

using namespace sager;

namespace {

ModelConfig tiny_config(Variant variant = Variant::kFull) {
  ModelConfig mc;
  mc.d = 16;
  mc.heads = 2;
  mc.layers = 2;
  mc.encoder_layers = 1;
  mc.ffn_mult = 2;
  mc.variant = variant;
  return mc;
}

template <typename T = double>
Model<T> fixture_model(const std::vector<ParsedSentence>& corpus, Variant variant, std::uint64_t seed) {
  auto v = build_vocabularies(corpus);
  return Model<T>(tiny_config(variant), v.words, v.labels, seed);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Sum of per-step losses computed with the incremental generator on gold prefixes.
double generator_loss(const Model<double>& model, const PreparedSentence& s) {
  const std::size_t N = s.words.size();
  Tape<double> tape(false);
  Generator<double> gen(model, tape, s.words);
  const std::size_t depth = *std::max_element(s.levels.begin(), s.levels.end());
  double total = 0;
  for (std::size_t t = 1; t <= depth; ++t) {
    auto sel = gen.selection_logits().value();
    for (std::size_t w = 0; w < N; ++w) {
      const std::size_t lv = s.levels[w + 1];
      if (lv < t) continue;
      total += lv == t ? softplus(-sel[w]) : softplus(sel[w]);
    }
    std::vector<std::size_t> nodes;
    for (std::size_t i = 1; i <= N; ++i) {
      if (s.levels[i] == t) nodes.push_back(i);
    }
    gen.begin_component(nodes);
    const auto& committed = gen.committed();
    auto row_of = [&](std::size_t node) {
      for (std::size_t r = 0; r < committed.size(); ++r) {
        if (committed[r].node == node) return r;
      }
      throw std::logic_error("head not committed");
    };
    auto col_of = [&](std::size_t node) {
      return static_cast<std::size_t>(std::find(nodes.begin(), nodes.end(), node) - nodes.begin());
    };
    auto arcs = gen.arc_logits().value();
    std::set<std::pair<std::size_t, std::size_t>> gold;
    std::vector<std::pair<std::size_t, std::size_t>> pairs, slot_pairs;
    std::vector<std::size_t> labels, slots;
    std::vector<NodeArc> incoming;
    for (const auto& a : s.arcs) {
      if (s.levels[a.arc.dep] != t) continue;
      gold.insert({row_of(a.arc.head), col_of(a.arc.dep)});
      pairs.push_back({row_of(a.arc.head), col_of(a.arc.dep)});
      labels.push_back(a.arc.label);
      if (a.slot) {
        slot_pairs.push_back(pairs.back());
        slots.push_back(*a.slot);
      }
      incoming.push_back(a.arc);
    }
    for (std::size_t r = 0; r < arcs.rows(); ++r) {
      for (std::size_t c = 0; c < arcs.cols(); ++c) {
        total += gold.count({r, c}) ? softplus(-arcs(r, c)) : softplus(arcs(r, c));
      }
    }
    auto nll = [](const Tensor<double>& logits, std::size_t row, std::size_t target) {
      double mx = logits(row, 0);
      for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, logits(row, c));
      double z = 0;
      for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits(row, c) - mx);
      return std::log(z) + mx - logits(row, target);
    };
    if (!pairs.empty()) {
      auto lab = gen.label_logits(pairs).value();
      for (std::size_t k = 0; k < pairs.size(); ++k) total += nll(lab, k, labels[k]);
    }
    if (!slot_pairs.empty()) {
      auto sl = gen.slot_logits(slot_pairs).value();
      for (std::size_t k = 0; k < slot_pairs.size(); ++k) total += nll(sl, k, slots[k]);
    }
    gen.commit(incoming);
  }
  return total;
}

}  // namespace

TEST_CASE("teacher forcing equals the sum of incremental generation losses") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  for (Variant variant : {Variant::kFull, Variant::kNoImplicit, Variant::kNoSameLevelImplicit,
                          Variant::kNoExplicit, Variant::kNoHierPos}) {
    auto model = fixture_model(corpus, variant, 31);
    CounterRng rng(32);
    test::perturb(model, rng);
    for (std::size_t k = 0; k < corpus.size(); ++k) {
      CAPTURE(to_string(variant));
      CAPTURE(corpus[k].sent_id());
      auto p = prepare_sentence(model, corpus[k], k, 100);
      REQUIRE(p.has_value());
      Tape<double> tape(false);
      CounterRng drop(0);
      auto terms = teacher_force_loss(tape, model, *p, p->levels, false, drop);
      const double tf = terms.total.value()[0];
      const double inc = generator_loss(model, *p);
      CHECK(tf > 1.0);
      CHECK(std::abs(tf - inc) <= 1e-9 * std::max(1.0, std::abs(tf)));
    }
  }
}

TEST_CASE("autoregressive teacher forcing matches generation with singleton steps") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  auto model = fixture_model(corpus, Variant::kAutoWord, 33);
  CounterRng rng(34);
  test::perturb(model, rng);
  auto p = prepare_sentence(model, corpus[0], 0, 100);
  REQUIRE(p.has_value());
  auto ar = *p;
  ar.levels = training_levels(*p, Variant::kAutoWord, 0, 10, 1);
  Tape<double> tape(false);
  CounterRng drop(0);
  const double tf = teacher_force_loss(tape, model, ar, ar.levels, false, drop).total.value()[0];
  CHECK(tf == doctest::Approx(generator_loss(model, ar)).epsilon(1e-10));
}

TEST_CASE("one-word sentence loss by hand") {
  auto corpus = parse_conllu("1\tgo\tgo\tVERB\t_\t_\t0\troot\t0:root\t_\n\n");
  auto model = fixture_model(corpus, Variant::kFull, 35);
  auto p = prepare_sentence(model, corpus[0], 0, 100);
  REQUIRE(p.has_value());
  CHECK(p->levels == std::vector<std::size_t>{0, 1});
  Tape<double> tape(false);
  CounterRng drop(0);
  auto terms = teacher_force_loss(tape, model, *p, p->levels, false, drop);

  // With every ReZero gate closed the encoder and decoder pass their inputs through.
  const std::size_t d = model.config().d;
  const auto& P = model.params();
  test::Matrix s(1, std::vector<double>(d)), root(1, std::vector<double>(d)),
      dep(1, std::vector<double>(d));
  const auto p0 = sinusoid<double>(0, d), p1 = sinusoid<double>(1, d);
  for (std::size_t c = 0; c < d; ++c) {
    s[0][c] = P.find("word_emb")->value(model.word_id("go"), c) * std::sqrt(double(d)) + p0[c];
    root[0][c] = P.find("root")->value[c] + p0[c];
    dep[0][c] = s[0][c] + p1[c];
  }
  auto view = [&](const test::Matrix& x, const std::string& name) {
    auto y = test::mul(x, test::to_matrix(P.find(name + ".w")->value));
    for (auto& v : y[0]) v = std::max(0.0, v);
    y[0].push_back(1.0);
    return y;
  };
  auto hw = test::mul(root, test::to_matrix(P.find("sel.w1")->value));
  auto sw = test::mul(s, test::to_matrix(P.find("sel.w2")->value));
  double sel = 0;
  for (std::size_t c = 0; c < d; ++c) sel += hw[0][c] * sw[0][c];
  auto left = test::mul(view(root, "arc_head"), test::to_matrix(P.find("arc.biaffine")->value));
  auto right = view(dep, "arc_dep");
  double arc = 0;
  for (std::size_t c = 0; c <= d; ++c) arc += left[0][c] * right[0][c];

  CHECK(terms.node.value()[0] == doctest::Approx(softplus(-sel)).epsilon(1e-10));
  CHECK(terms.arc.value()[0] == doctest::Approx(softplus(-arc)).epsilon(1e-10));
  CHECK(terms.label.value()[0] == doctest::Approx(0.0));  // a single label
  CHECK(terms.slot.value()[0] == 0.0);
}

TEST_CASE("loss terms are non-negative and vanish for a confident correct model") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  auto model = fixture_model(corpus, Variant::kFull, 36);
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    auto p = prepare_sentence(model, corpus[k], k, 100);
    Tape<double> tape(false);
    CounterRng drop(0);
    auto t = teacher_force_loss(tape, model, *p, p->levels, false, drop);
    for (auto v : {t.node, t.arc, t.label, t.slot}) CHECK(v.value()[0] >= 0.0);
  }
  // A pure BCE term at the correct extreme is at its floor of 0.
  Tape<double> tape(false);
  auto x = tape.constant(Tensor<double>(1, 2, std::vector<double>{60.0, -60.0}));
  CHECK(ad::bce_with_logits(x, {1.0, 0.0}, {1, 1}).value()[0] < 1e-20);
}

TEST_CASE("prepare_sentence skips unusable sentences") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  auto model = fixture_model(corpus, Variant::kFull, 37);
  std::string reason;
  CHECK_FALSE(prepare_sentence(model, corpus[0], 0, 3, &reason).has_value());
  CHECK(reason.find("longer than 3") != std::string::npos);

  auto other = parse_conllu("1\tgo\tgo\tVERB\t_\t_\t0\troot\t0:root\t_\n"
                            "2\tnow\tnow\tADV\t_\t_\t1\tadvmod\t1:weird_label\t_\n\n");
  CHECK_FALSE(prepare_sentence(model, other[0], 0, 100, &reason).has_value());
  CHECK(reason.find("weird_label") != std::string::npos);

  auto p = prepare_sentence(model, corpus[1], 1, 100);  // relative clause with a cycle
  REQUIRE(p.has_value());
  CHECK(p->all_arcs.size() == p->arcs.size() + 1);
}

TEST_CASE("autoregressive training orders") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  auto model = fixture_model(corpus, Variant::kAutoWord, 38);
  auto p = *prepare_sentence(model, corpus[0], 0, 100);
  // The cat sat in the box and slept: gold levels 4 3 1 3 3 2 3 2
  REQUIRE(p.levels == std::vector<std::size_t>{0, 4, 3, 1, 3, 3, 2, 3, 2});
  auto word = training_levels(p, Variant::kAutoWord, 0, 10, 1);
  CHECK(word == std::vector<std::size_t>{0, 8, 4, 1, 5, 6, 2, 7, 3});
  CHECK(training_levels(p, Variant::kFull, 0, 10, 1) == p.levels);

  std::set<std::vector<std::size_t>> seen;
  for (std::size_t epoch = 0; epoch < 6; ++epoch) {
    auto r = training_levels(p, Variant::kAutoRandom, epoch, 10, 1);
    seen.insert(r);
    // Singletons that respect the gold hierarchy order.
    for (std::size_t i = 1; i < r.size(); ++i) {
      for (std::size_t j = 1; j < r.size(); ++j) {
        if (p.levels[i] < p.levels[j]) CHECK(r[i] < r[j]);
      }
    }
    CHECK(std::set<std::size_t>(r.begin(), r.end()).size() == r.size());
  }
  CHECK(seen.size() > 1);
  CHECK(training_levels(p, Variant::kAutoRandom, 3, 10, 1) ==
        training_levels(p, Variant::kAutoRandom, 3, 10, 1));
  CHECK(training_levels(p, Variant::kAutoMixed, 2, 10, 1) ==
        training_levels(p, Variant::kAutoRandom, 2, 10, 1));
  CHECK(training_levels(p, Variant::kAutoMixed, 5, 10, 1) == word);
}

TEST_CASE("decoding an untrained model yields a well-formed graph") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  for (Variant variant : {Variant::kFull, Variant::kAutoRandom, Variant::kNoExplicit}) {
    auto model = fixture_model<float>(corpus, variant, 39);
    for (const auto& s : corpus) {
      auto r = decode(model, s);
      CHECK(r.graph.n_nodes == s.tokens.size() + 1);
      CHECK(is_acyclic(r.graph));
      for (const auto& e : r.graph.edges) {
        REQUIRE(r.levels[e.dep] != DecodeResult::kUnattached);
        CHECK(r.levels[e.head] < r.levels[e.dep]);
      }
      std::set<std::size_t> attached;
      for (const auto& e : r.graph.edges) attached.insert(e.dep);
      for (std::size_t i = 1; i < r.graph.n_nodes; ++i) {
        CHECK((attached.count(i) == 1) == (r.levels[i] != DecodeResult::kUnattached));
      }
      CHECK(attached.size() + r.unattached.size() == s.tokens.size());
      if (is_autoregressive(variant)) {
        for (const auto& step : r.steps) CHECK(step.selected.size() == 1);
      }
    }
  }
}

TEST_CASE("selection that never fires leaves only the root") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  auto model = fixture_model(corpus, Variant::kFull, 40);
  model.params().find("sel.w1")->value.fill(0.0);
  auto r = decode(model, corpus[0]);
  CHECK(r.graph.edges.empty());
  CHECK(r.unattached.size() == corpus[0].tokens.size());
  CHECK(r.steps.empty());
}

TEST_CASE("non-autoregressive baseline attaches every word in one step") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  auto model = fixture_model(corpus, Variant::kNonAutoBaseline, 42);
  for (const auto& s : corpus) {
    auto r = decode(model, s);
    REQUIRE(r.steps.size() == 1);
    CHECK(r.unattached.empty());
    std::set<std::size_t> attached;
    for (const auto& e : r.graph.edges) {
      CHECK(e.head != e.dep);
      attached.insert(e.dep);
    }
    CHECK(attached.size() == s.tokens.size());
  }
  // The baseline's teacher forcing has no node-selection term and scores the full graph.
  auto p = prepare_sentence(model, corpus[1], 1, 100);
  Tape<double> tape(false);
  CounterRng drop(0);
  auto t = teacher_force_loss(tape, model, *p, p->levels, false, drop);
  CHECK(t.node.value()[0] == 0.0);
  auto relaxed = *p;
  relaxed.levels.assign(relaxed.levels.size(), 0);
  Tape<double> tape2(false);
  CHECK(teacher_force_loss(tape2, model, relaxed, relaxed.levels, false, drop).total.value()[0] ==
        t.total.value()[0]);
}

TEST_CASE("words beyond the truncation limit stay unattached") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  auto model = fixture_model(corpus, Variant::kNonAutoBaseline, 43);
  auto r = decode(model, corpus[0], 3);
  CHECK(r.unattached == std::vector<std::size_t>{4, 5, 6, 7, 8});
  for (const auto& e : r.graph.edges) CHECK(e.dep <= 3);
}

TEST_CASE("parse_corpus keeps input order and is deterministic") {
  auto corpus = read_conllu_file(test::data_path("ablation_dev.conllu"));
  auto model = fixture_model<float>(read_conllu_file(test::data_path("ablation_train.conllu")),
                                    Variant::kFull, 44);
  auto a = parse_corpus(model, corpus);
  auto b = parse_corpus(model, corpus);
  REQUIRE(a.size() == corpus.size());
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    CHECK(a[k].sent_id() == corpus[k].sent_id());
    CHECK(a[k].tokens == corpus[k].tokens);
  }
  CHECK(write_conllu(a) == write_conllu(b));
}

TEST_CASE("training is deterministic and reduces the loss") {
  auto corpus = read_conllu_file(test::data_path("fixture.conllu"));
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 2;
  tc.lr_embed = 1e-3;
  auto run = [&] {
    auto model = fixture_model<float>(corpus, Variant::kFull, 45);
    std::ostringstream log;
    auto result = train(model, corpus, corpus, tc, &log);
    std::vector<Tensor<float>> values;
    for (std::size_t i = 0; i < model.params().size(); ++i) values.push_back(model.params()[i].value);
    return std::make_tuple(result, values, log.str());
  };
  auto [r1, v1, log1] = run();
  auto [r2, v2, log2] = run();
  CHECK(v1 == v2);
  CHECK(log1 == log2);
  REQUIRE(r1.log.size() == 6);
  CHECK(r1.log.back().train_loss < r1.log.front().train_loss);
  CHECK(r1.log[1].lr == doctest::Approx(tc.lr_main * tc.lr_decay));
  CHECK(log1.find(format_epoch_log(r1.log[0])) == 0);
}
