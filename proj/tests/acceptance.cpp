// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is nonzero if any selected criterion fails.
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <tuple>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metric_cases.hpp"
#include "reference.hpp"
#include "sager/cli.hpp"
#include "sager/engine.hpp"
#include "sager/gradcheck.hpp"
#include "sager/metrics.hpp"
#include "support.hpp"

using namespace sager;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr std::size_t kOracleDags = 1000;
constexpr std::size_t kOracleMaxNodes = 12;
constexpr double kOracleSeconds = 10;
constexpr double kGradSeconds = 60;
constexpr double kVanillaTolerance = 1e-6;
constexpr std::size_t kOverfitEpochs = 200;
constexpr double kOverfitElas = 0.99;
constexpr double kOverfitGms = 0.95;
constexpr double kOverfitSeconds = 15 * 60;
constexpr double kAblationReversal = 0.02;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome hierarchy_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  CounterRng rng(derive_key(2024, 1));
  std::size_t mismatches = 0;
  for (std::size_t k = 0; k < kOracleDags; ++k) {
    auto g = test::random_dag(rng, kOracleMaxNodes);
    auto levels = build_hierarchy(g).levels();
    for (std::size_t i = 0; i < g.n_nodes; ++i) mismatches += levels[i] != longest_path_oracle(g, i);
  }
  const double s = seconds_since(t0);
  return {mismatches == 0 && s < kOracleSeconds,
          std::to_string(kOracleDags) + " DAGs, " + std::to_string(mismatches) + " mismatches, " +
              fmt("%.2fs", s)};
}

Outcome cycle_round_trip() {
  std::size_t total = 0, ok = 0, cyclic = 0;
  for (const auto& name : test::fixture_files()) {
    for (const auto& s : read_conllu_file(test::data_path(name))) {
      ++total;
      auto g = to_graph(s);
      auto cb = break_cycles(g);
      cyclic += !cb.removed.empty();
      ok += restore_edges(cb.dag, cb.removed) == g && is_acyclic(cb.dag);
    }
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " sentences (" +
                           std::to_string(cyclic) + " cyclic)"};
}

Outcome gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream out, err;
  const char* argv[] = {"sager", "gradcheck", "--seed", "1"};
  const int code = run(4, argv, out, err);
  const double s = seconds_since(t0);
  double worst = 0;
  std::size_t blocks = 0;
  std::istringstream lines(out.str());
  std::string block, value, status;
  while (lines >> block >> value >> status) {
    ++blocks;
    worst = std::max(worst, std::stod(value));
  }
  return {code == 0 && blocks >= 6 && worst < kGradTolerance && s < kGradSeconds,
          std::to_string(blocks) + " blocks, max rel error " + fmt("%.2e", worst) + ", exit " +
              std::to_string(code) + ", " + fmt("%.2fs", s)};
}

Outcome vanilla_decoder() {
  const double gap = test::vanilla_decoder_gap(7, 50);
  return {gap < kVanillaTolerance, "max |diff| " + fmt("%.2e", gap) + " over 50 graphs"};
}

Outcome overfit() {
  const auto corpus = read_conllu_file(test::data_path("overfit.conllu"));
  const auto t0 = std::chrono::steady_clock::now();
  auto vocab = build_vocabularies(corpus);
  ModelConfig mc;  // d=64, L=2
  TrainConfig tc;
  tc.epochs = kOverfitEpochs;
  tc.batch_size = 1;
  tc.lr_embed = 1e-3;
  Model<float> model(mc, vocab.words, vocab.labels, tc.seed);
  train(model, corpus, corpus, tc);
  auto parsed = parse_corpus(model, corpus);
  const double s = seconds_since(t0);
  const double e = elas(corpus, parsed).f1, g = gms(corpus, parsed).f1;
  return {e >= kOverfitElas && g >= kOverfitGms && s < kOverfitSeconds,
          "ELAS " + fmt("%.2f", 100 * e) + " GMS " + fmt("%.2f", 100 * g) + " after " +
              std::to_string(kOverfitEpochs) + " epochs, " + fmt("%.0fs", s)};
}

Outcome ablation() {
  const auto train_set = read_conllu_file(test::data_path("ablation_train.conllu"));
  const auto dev_set = read_conllu_file(test::data_path("ablation_dev.conllu"));
  const auto test_set = read_conllu_file(test::data_path("ablation_test.conllu"));
  auto vocab = build_vocabularies(train_set);
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 4;
  tc.lr_embed = 1e-3;
  double full = 0, auto_random = 0;
  std::string detail;
  for (Variant v : {Variant::kFull, Variant::kAutoRandom, Variant::kAutoWord, Variant::kAutoMixed,
                    Variant::kNoImplicit, Variant::kNoSameLevelImplicit, Variant::kNoExplicit,
                    Variant::kNoHierPos, Variant::kNonAutoBaseline}) {
    ModelConfig mc;
    mc.variant = v;
    Model<float> model(mc, vocab.words, vocab.labels, tc.seed);
    train(model, train_set, dev_set, tc);
    auto parsed = parse_corpus(model, test_set);
    const double e = elas(test_set, parsed).f1, g = gms(test_set, parsed).f1;
    if (v == Variant::kFull) full = e;
    if (v == Variant::kAutoRandom) auto_random = e;
    std::printf("    %-24s ELAS %6.2f  GMS %6.2f  HIER %6.2f\n", to_string(v).c_str(), 100 * e,
                100 * g, 100 * hierarchy_accuracy(test_set, parsed));
    std::fflush(stdout);
  }
  return {auto_random <= full + kAblationReversal,
          "semi-auto " + fmt("%.2f", 100 * full) + " vs auto_random " + fmt("%.2f", 100 * auto_random) +
              " ELAS, " + std::to_string(tc.epochs) + " epochs"};
}

Outcome metric_suite() {
  std::size_t ok = 0;
  std::string failed;
  const auto cases = test::metric_cases();
  for (const auto& c : cases) {
    if (c.ok) {
      ++ok;
    } else {
      failed += " [" + c.name + "]";
    }
  }
  return {ok == cases.size(), std::to_string(ok) + "/" + std::to_string(cases.size()) + " examples" + failed};
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("sager-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string cfg = (dir / "cfg").string();
  std::ofstream(cfg) << "epochs=4\nbatch_size=4\nd=32\n";
  const auto data = test::data_path("ablation_dev.conllu");
  auto run_once = [&](const std::string& tag) {
    const std::string ckpt = (dir / (tag + ".ckpt")).string(), out = (dir / (tag + ".conllu")).string();
    std::ostringstream o, e;
    const char* train_argv[] = {"sager", "train", "--train", data.c_str(), "--dev", data.c_str(),
                                "--out", ckpt.c_str(), "--config", cfg.c_str(), "--seed", "9"};
    const char* parse_argv[] = {"sager", "parse", "--model", ckpt.c_str(), "--input", data.c_str(),
                                "--output", out.c_str()};
    const int code = run(12, train_argv, o, e) | run(8, parse_argv, o, e);
    auto slurp = [](const std::string& p) {
      std::ifstream in(p, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    return std::make_tuple(code, slurp(ckpt), slurp(out));
  };
  auto [c1, ck1, out1] = run_once("a");
  auto [c2, ck2, out2] = run_once("b");
  fs::remove_all(dir);
  const bool same_ckpt = !ck1.empty() && ck1 == ck2, same_out = !out1.empty() && out1 == out2;
  return {c1 == 0 && c2 == 0 && same_ckpt && same_out,
          std::string("checkpoint ") + (same_ckpt ? "identical" : "differs") + " (" +
              std::to_string(ck1.size()) + " bytes), output " + (same_out ? "identical" : "differs")};
}

Outcome rezero_identity() {
  const bool ok = test::rezero_identity_holds(11, 50);
  return {ok, ok ? "decoder output == x0 bit for bit on 50 random graphs" : "decoder changed its input"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"hierarchy oracle equivalence", hierarchy_oracle},
      {"cycle round trip", cycle_round_trip},
      {"gradient checks", gradient_checks},
      {"vanilla decoder degradation", vanilla_decoder},
      {"overfit", overfit},
      {"ablation direction", ablation},
      {"metric suite", metric_suite},
      {"determinism", determinism},
      {"rezero identity", rezero_identity},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int number = static_cast<int>(k + 1);
    if (!selected.empty() && !selected.count(number)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", number, criteria[k].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
