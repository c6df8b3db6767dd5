// Independent reference computations shared by the unit tests and the acceptance suite.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sager/model.hpp"

namespace sager::test {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor<double>& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  }
  return m;
}

inline Matrix mul(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

// Textbook pre-gated causal transformer decoder layer:
//   x <- x + g_a * (MHA_causal(x W_q, x W_k, x W_v) W_o)
//   x <- x + g_f * (relu(x W1 + b1) W2 + b2)
inline Matrix causal_decoder_layer(const Model<double>& model, std::size_t layer, Matrix x) {
  const auto& b = model.decoder_block(layer);
  const std::size_t n = x.size(), d = x[0].size(), heads = model.config().heads, dk = d / heads;
  auto q = mul(x, to_matrix(b.wq->value));
  auto k = mul(x, to_matrix(b.wk->value));
  auto v = mul(x, to_matrix(b.wv->value));
  Matrix att(n, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(i + 1);
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < dk; ++c) acc += q[i][h * dk + c] * k[j][h * dk + c];
        s[j] = acc / std::sqrt(static_cast<double>(dk));
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j <= i; ++j) {
        for (std::size_t c = 0; c < dk; ++c) att[i][h * dk + c] += s[j] / z * v[j][h * dk + c];
      }
    }
  }
  auto o = mul(att, to_matrix(b.wo->value));
  const double ga = b.gate_attn->value[0], gf = b.gate_ffn->value[0];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) x[i][c] += ga * o[i][c];
  }
  auto hidden = mul(x, to_matrix(b.w1->value));
  for (auto& row : hidden) {
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(0.0, row[c] + b.b1->value[c]);
  }
  auto f = mul(hidden, to_matrix(b.w2->value));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) x[i][c] += gf * (f[i][c] + b.b2->value[c]);
  }
  return x;
}

inline Matrix causal_decoder(const Model<double>& model, Matrix x) {
  for (std::size_t l = 0; l < model.config().layers; ++l) x = causal_decoder_layer(model, l, x);
  return x;
}

// Runs every decoder layer of `model` over nodes that all act as both queries and sources.
inline Tensor<double> run_decoder(const Model<double>& model, const Tensor<double>& x0,
                                  const std::vector<std::size_t>& levels,
                                  const std::vector<NodeArc>& arcs) {
  std::vector<QueryRow> queries;
  std::vector<SourceRow> sources;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    queries.push_back({i, levels[i]});
    sources.push_back({i, levels[i], true, true});
  }
  const auto plan = build_plan(queries, sources, arcs, model.config().variant);
  Tape<double> tape(false);
  CounterRng rng(0);
  auto x = tape.constant(x0);
  for (std::size_t l = 0; l < model.config().layers; ++l) {
    x = model.mp_layer(tape, l, x, x, plan, false, rng);
  }
  return x.value();
}

inline Model<double> small_model(std::uint64_t seed, Variant variant = Variant::kFull,
                                 std::size_t labels = 3, std::size_t d = 16) {
  ModelConfig mc;
  mc.d = d;
  mc.heads = 4;
  mc.layers = 2;
  mc.encoder_layers = 1;
  mc.ffn_mult = 4;
  mc.variant = variant;
  std::vector<std::string> label_names;
  for (std::size_t z = 0; z < labels; ++z) label_names.push_back("l" + std::to_string(z));
  return Model<double>(mc, Vocab({kUnknownWord, "a", "b", "c", "d", "e"}), Vocab(label_names), seed);
}

// Opens the ReZero gates and randomizes biases so every sublayer contributes.
inline void perturb(Model<double>& model, CounterRng& rng) {
  auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& n = p.name;
    if (n.find("gate") != std::string::npos) {
      for (auto& x : p.value.values()) x = rng.uniform(0.3, 1.0);
    } else if (n.size() > 2 && (n.ends_with(".b") || n.ends_with(".b1") || n.ends_with(".b2"))) {
      for (auto& x : p.value.values()) x = rng.uniform(-0.2, 0.2);
    }
  }
}

inline Tensor<double> random_states(std::size_t n, std::size_t d, CounterRng& rng) {
  Tensor<double> t(n, d);
  for (auto& x : t.values()) x = rng.uniform(-1.0, 1.0);
  return t;
}

// Max elementwise gap between the graph decoder on singleton hierarchies with U = 0 and
// the causal reference decoder, over `trials` random graphs.
inline double vanilla_decoder_gap(std::uint64_t seed, int trials) {
  double worst = 0;
  CounterRng rng(derive_key(seed, 0x7A1));
  for (int trial = 0; trial < trials; ++trial) {
    auto model = small_model(derive_key(seed, static_cast<std::uint64_t>(trial)));
    perturb(model, rng);
    for (std::size_t z = 0; z < model.labels().size(); ++z) {
      model.params().find("edge_u." + std::to_string(z))->value.fill(0.0);
    }
    const std::size_t n = 2 + rng.below(9);
    std::vector<std::size_t> levels(n);
    std::vector<NodeArc> arcs;
    for (std::size_t i = 0; i < n; ++i) {
      levels[i] = i;
      if (i == 0) continue;
      arcs.push_back({i - 1, i, rng.below(model.labels().size())});
      for (std::size_t j = 0; j + 1 < i; ++j) {
        if (rng.uniform() < 0.3) arcs.push_back({j, i, rng.below(model.labels().size())});
      }
    }
    auto x0 = random_states(n, model.config().d, rng);
    auto got = run_decoder(model, x0, levels, arcs);
    auto want = causal_decoder(model, to_matrix(x0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < model.config().d; ++c) {
        worst = std::max(worst, std::abs(got(i, c) - want[i][c]));
      }
    }
  }
  return worst;
}

// True when a freshly initialized decoder returns its input bit for bit on random graphs.
inline bool rezero_identity_holds(std::uint64_t seed, int trials) {
  CounterRng rng(derive_key(seed, 0x2E0));
  for (int trial = 0; trial < trials; ++trial) {
    auto model = small_model(derive_key(seed, 100 + static_cast<std::uint64_t>(trial)));
    const std::size_t n = 2 + rng.below(9);
    std::vector<std::size_t> levels(n, 0);
    std::vector<NodeArc> arcs;
    for (std::size_t i = 1; i < n; ++i) {
      const std::size_t head = rng.below(i);
      levels[i] = levels[head] + 1 + rng.below(2);
      arcs.push_back({head, i, rng.below(model.labels().size())});
    }
    auto x0 = random_states(n, model.config().d, rng);
    if (!(run_decoder(model, x0, levels, arcs) == x0)) return false;
  }
  return true;
}

}  // namespace sager::test
