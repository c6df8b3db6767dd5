#include "sager/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sager/checkpoint.hpp"
#include "sager/engine.hpp"
#include "sager/gradcheck.hpp"
#include "sager/kernels.hpp"
#include "sager/metrics.hpp"

namespace sager {

namespace {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<ParsedSentence> read_corpus(const std::string& path) {
  try {
    return parse_conllu(read_text(path));
  } catch (const ParseError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
  return buf;
}

void print_scores(std::ostream& out, const std::vector<ParsedSentence>& gold,
                  const std::vector<ParsedSentence>& system) {
  out << "ELAS\t" << pct(elas(gold, system).f1) << "\n";
  out << "GMS\t" << pct(gms(gold, system).f1) << "\n";
  out << "HIER\t" << pct(hierarchy_accuracy(gold, system)) << "\n";
}

struct Configs {
  ModelConfig model;
  TrainConfig train;
};

Configs load_configs(const std::string& config_path, const std::optional<std::uint64_t>& seed) {
  Configs c;
  if (!config_path.empty()) apply_config(parse_key_values(read_text(config_path)), &c.model, &c.train);
  if (seed) c.train.seed = *seed;
  return c;
}

template <typename T>
std::unique_ptr<Model<T>> fit(const Configs& c, const std::vector<ParsedSentence>& train_set,
                              const std::vector<ParsedSentence>& dev_set, std::ostream& log) {
  auto vocab = build_vocabularies(train_set);
  auto model = std::make_unique<Model<T>>(c.model, std::move(vocab.words), std::move(vocab.labels),
                                          c.train.seed);
  train(*model, train_set, dev_set, c.train, &log);
  return model;
}

int cmd_train(const std::string& train_path, const std::string& dev_path, const std::string& out_path,
              const std::string& config_path, const std::optional<std::uint64_t>& seed,
              std::ostream& out) {
  auto c = load_configs(config_path, seed);
  auto train_set = read_corpus(train_path);
  auto dev_set = read_corpus(dev_path);
  try {
    if (c.train.precision == Precision::kFloat64) {
      save_checkpoint(out_path, *fit<double>(c, train_set, dev_set, out), c.train);
    } else {
      save_checkpoint(out_path, *fit<float>(c, train_set, dev_set, out), c.train);
    }
  } catch (const CheckpointError& e) {
    throw IoError(e.what());
  }
  return 0;
}

int cmd_parse(const std::string& model_path, const std::string& input, const std::string& output) {
  Checkpoint ck;
  try {
    ck = load_checkpoint(model_path);
  } catch (const CheckpointError& e) {
    throw IoError(model_path + ": " + e.what());
  }
  auto corpus = read_corpus(input);
  std::vector<ParsedSentence> parsed;
  std::visit([&](const auto& m) { parsed = parse_corpus(*m, corpus, ck.train.truncate); }, ck.model);
  write_text(output, write_conllu(parsed));
  return 0;
}

int cmd_eval(const std::string& gold_path, const std::string& system_path, std::ostream& out) {
  auto gold = read_corpus(gold_path);
  auto system = read_corpus(system_path);
  print_scores(out, gold, system);
  return 0;
}

int cmd_hierarchy(const std::string& input, std::ostream& out) {
  auto corpus = read_corpus(input);
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    auto levels = reachable_levels(to_graph(corpus[s]));
    auto id = corpus[s].sent_id();
    out << (id.empty() ? std::to_string(s + 1) : id) << "\t";
    for (std::size_t i = 0; i < levels.size(); ++i) out << (i ? "," : "") << levels[i];
    out << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  for (const auto& c : run_gradient_checks(seed)) {
    const bool pass = c.max_rel_error < kGradTolerance;
    ok = ok && pass;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", c.max_rel_error);
    out << c.block << "\t" << buf << "\t" << (pass ? "ok" : "FAIL") << "\n";
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const std::string& variant, const std::string& train_path, const std::string& dev_path,
               const std::string& test_path, const std::string& config_path,
               const std::optional<std::uint64_t>& seed, std::ostream& out) {
  auto c = load_configs(config_path, seed);
  c.model.variant = parse_variant(variant);
  auto train_set = read_corpus(train_path);
  auto dev_set = read_corpus(dev_path);
  auto test_set = read_corpus(test_path);
  std::ostringstream log;
  std::vector<ParsedSentence> parsed;
  if (c.train.precision == Precision::kFloat64) {
    parsed = parse_corpus(*fit<double>(c, train_set, dev_set, log), test_set, c.train.truncate);
  } else {
    parsed = parse_corpus(*fit<float>(c, train_set, dev_set, log), test_set, c.train.truncate);
  }
  out << "variant\t" << to_string(c.model.variant) << "\n";
  print_scores(out, test_set, parsed);
  return 0;
}

void apply_thread_limit() {
  if (const char* env = std::getenv("SAGER_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) kernels::set_max_threads(n);
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-autoregressive dependency graph parser"};
  app.require_subcommand(1);

  std::string train_path, dev_path, test_path, out_path, config_path, model_path, input, output,
      gold_path, system_path, variant;
  std::uint64_t seed_value = 1;

  auto* train_cmd = app.add_subcommand("train", "Train a parser and write a checkpoint");
  train_cmd->add_option("--train", train_path, "Training corpus (CoNLL-U)")->required();
  train_cmd->add_option("--dev", dev_path, "Development corpus for model selection")->required();
  train_cmd->add_option("--out", out_path, "Checkpoint to write")->required();
  train_cmd->add_option("--config", config_path, "key=value configuration file");
  auto* train_seed = train_cmd->add_option("--seed", seed_value, "Random seed");

  auto* parse_cmd = app.add_subcommand("parse", "Parse a corpus with a trained checkpoint");
  parse_cmd->add_option("--model", model_path, "Checkpoint")->required();
  parse_cmd->add_option("--input", input, "Input corpus (CoNLL-U)")->required();
  parse_cmd->add_option("--output", output, "Output corpus")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score a system corpus against gold");
  eval_cmd->add_option("--gold", gold_path, "Gold corpus")->required();
  eval_cmd->add_option("--system", system_path, "System corpus")->required();

  auto* hier_cmd = app.add_subcommand("hierarchy", "Print topological hierarchy levels");
  hier_cmd->add_option("--input", input, "Input corpus (CoNLL-U)")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of all learned blocks");
  grad_cmd->add_option("--seed", seed_value, "Random seed");

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and test one model variant");
  ablate_cmd->add_option("--variant", variant, "A..G or nonauto")
      ->required()
      ->check(CLI::IsMember({"A", "B", "C", "D", "E", "F", "G", "nonauto", "full"}));
  ablate_cmd->add_option("--train", train_path, "Training corpus")->required();
  ablate_cmd->add_option("--dev", dev_path, "Development corpus")->required();
  ablate_cmd->add_option("--test", test_path, "Test corpus")->required();
  ablate_cmd->add_option("--config", config_path, "key=value configuration file");
  auto* ablate_seed = ablate_cmd->add_option("--seed", seed_value, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  apply_thread_limit();
  try {
    if (*train_cmd) {
      std::optional<std::uint64_t> seed;
      if (*train_seed) seed = seed_value;
      return cmd_train(train_path, dev_path, out_path, config_path, seed, out);
    }
    if (*parse_cmd) return cmd_parse(model_path, input, output);
    if (*eval_cmd) return cmd_eval(gold_path, system_path, out);
    if (*hier_cmd) return cmd_hierarchy(input, out);
    if (*grad_cmd) return cmd_gradcheck(seed_value, out);
    if (*ablate_cmd) {
      std::optional<std::uint64_t> seed;
      if (*ablate_seed) seed = seed_value;
      return cmd_ablate(variant, train_path, dev_path, test_path, config_path, seed, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace sager
