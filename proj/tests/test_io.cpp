#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sager/checkpoint.hpp"
#include "sager/cli.hpp"
#include "sager/engine.hpp"
#include "support.hpp"

using namespace sager;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("sager-test-" + std::to_string(splitmix64(reinterpret_cast<std::uintptr_t>(this))));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sager");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

template <typename T>
std::unique_ptr<Model<T>> small(Variant variant = Variant::kFull) {
  auto v = build_vocabularies(read_conllu_file(test::data_path("fixture.conllu")));
  ModelConfig mc;
  mc.d = 8;
  mc.heads = 2;
  mc.layers = 1;
  mc.encoder_layers = 1;
  mc.variant = variant;
  mc.repr_dropout = 0.05;
  return std::make_unique<Model<T>>(mc, v.words, v.labels, 3);
}

}  // namespace

TEST_CASE("config key=value parsing") {
  auto kv = parse_key_values("# comment\n d = 32 \n\nvariant=B\nlr_main=0.01\n");
  CHECK(kv.at("d") == "32");
  ModelConfig m;
  TrainConfig t;
  apply_config(kv, &m, &t);
  CHECK(m.d == 32);
  CHECK(m.variant == Variant::kAutoWord);
  CHECK(t.lr_main == 0.01);
  CHECK_THROWS_AS(apply_config({{"nope", "1"}}, &m, &t), ConfigError);
  CHECK_THROWS_AS(apply_config({{"d", "abc"}}, &m, &t), ConfigError);
  CHECK_THROWS_AS(apply_config({{"d", "30"}, {"heads", "4"}}, &m, &t), ConfigError);
  CHECK_THROWS_AS(parse_key_values("d 32\n"), ConfigError);

  for (auto v : {Variant::kFull, Variant::kAutoRandom, Variant::kAutoWord, Variant::kAutoMixed,
                 Variant::kNoImplicit, Variant::kNoSameLevelImplicit, Variant::kNoExplicit,
                 Variant::kNoHierPos, Variant::kNonAutoBaseline}) {
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK(parse_variant("A") == Variant::kAutoRandom);
  CHECK(parse_variant("G") == Variant::kNoHierPos);
  CHECK(parse_variant("nonauto") == Variant::kNonAutoBaseline);
  CHECK_THROWS_AS(parse_variant("H"), ConfigError);

  // Round trip through the text form.
  ModelConfig m2;
  TrainConfig t2;
  auto all = to_key_values(m);
  for (const auto& [k, v] : to_key_values(t)) all[k] = v;
  apply_config(parse_key_values(format_key_values(all)), &m2, &t2);
  CHECK(to_key_values(m2) == to_key_values(m));
  CHECK(to_key_values(t2) == to_key_values(t));
}

TEST_CASE("checkpoint round trip") {
  auto model = small<double>(Variant::kNoHierPos);
  CounterRng rng(4);
  for (std::size_t i = 0; i < model->params().size(); ++i) {
    for (auto& x : model->params()[i].value.values()) x += rng.uniform(-1, 1);
  }
  TrainConfig tc;
  tc.epochs = 7;
  tc.lr_embed = 1.5e-4;
  tc.precision = Precision::kFloat64;
  std::stringstream buf;
  write_checkpoint(buf, *model, tc);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 8) == "SAGERCKP");

  auto ck = read_checkpoint(buf);
  REQUIRE(std::holds_alternative<std::unique_ptr<Model<double>>>(ck.model));
  const auto& back = *std::get<std::unique_ptr<Model<double>>>(ck.model);
  CHECK(to_key_values(ck.train) == to_key_values(tc));
  CHECK(to_key_values(back.config()) == to_key_values(model->config()));
  CHECK(back.words() == model->words());
  CHECK(back.labels() == model->labels());
  REQUIRE(back.params().size() == model->params().size());
  for (std::size_t i = 0; i < back.params().size(); ++i) {
    CHECK(back.params()[i].name == model->params()[i].name);
    CHECK(back.params()[i].value == model->params()[i].value);
  }
  std::stringstream again;
  write_checkpoint(again, back, ck.train);
  CHECK(again.str() == bytes);

  auto f = small<float>();
  std::stringstream fbuf;
  write_checkpoint(fbuf, *f, TrainConfig{});
  CHECK(std::holds_alternative<std::unique_ptr<Model<float>>>(read_checkpoint(fbuf).model));
}

TEST_CASE("damaged checkpoints are rejected") {
  auto model = small<float>();
  std::stringstream buf;
  write_checkpoint(buf, *model, TrainConfig{});
  const std::string bytes = buf.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(truncated), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream m(bad_magic);
  CHECK_THROWS_AS(read_checkpoint(m), CheckpointError);
  std::string bad_version = bytes;
  bad_version[8] = 99;
  std::stringstream v(bad_version);
  CHECK_THROWS_AS(read_checkpoint(v), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/model.ckpt"), CheckpointError);
}

TEST_CASE("cli usage errors exit with 2") {
  auto r = cli({"train", "--bogus"});
  CHECK(r.code == 2);
  CHECK(r.err.find("error") != std::string::npos);
  CHECK(cli({}).code == 2);
  CHECK(cli({"eval", "--gold", "x"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("cli eval and hierarchy") {
  const auto fixture = test::data_path("fixture.conllu");
  auto r = cli({"eval", "--gold", fixture, "--system", fixture});
  CHECK(r.code == 0);
  CHECK(r.out == "ELAS\t100.00\nGMS\t100.00\nHIER\t100.00\n");

  auto h = cli({"hierarchy", "--input", test::data_path("chain.conllu")});
  CHECK(h.code == 0);
  CHECK(h.out == "chain\t0,1,2,3\n");

  TempDir tmp;
  spit(tmp.file("x.conllu"), "1\ta\ta\tX\t_\t_\t_\t_\t0:root\t_\n2\tb\tb\tX\t_\t_\t_\t_\t_\t_\n\n");
  auto partial = cli({"hierarchy", "--input", tmp.file("x.conllu")});
  CHECK(partial.out == "1\t0,1,-1\n");
}

TEST_CASE("cli I/O and data failures exit with 1") {
  TempDir tmp;
  CHECK(cli({"eval", "--gold", tmp.file("missing.conllu"), "--system", tmp.file("m2")}).code == 1);
  spit(tmp.file("bad.conllu"), "1\tcat\n\n");
  auto r = cli({"hierarchy", "--input", tmp.file("bad.conllu")});
  CHECK(r.code == 1);
  CHECK(r.err.find("line 1") != std::string::npos);
  spit(tmp.file("bad.ckpt"), "not a checkpoint");
  CHECK(cli({"parse", "--model", tmp.file("bad.ckpt"), "--input", test::data_path("chain.conllu"),
             "--output", tmp.file("o.conllu")}).code == 1);
  spit(tmp.file("cfg"), "no_such_key=3\n");
  CHECK(cli({"train", "--train", test::data_path("chain.conllu"), "--dev", test::data_path("chain.conllu"),
             "--out", tmp.file("m.ckpt"), "--config", tmp.file("cfg")}).code == 2);
  // Misaligned corpora.
  CHECK(cli({"eval", "--gold", test::data_path("chain.conllu"), "--system",
             test::data_path("fixture.conllu")}).code == 1);
}

TEST_CASE("cli train, parse and eval end to end") {
  TempDir tmp;
  spit(tmp.file("cfg"), "d=16\nheads=2\nlayers=1\nencoder_layers=1\nepochs=3\nbatch_size=2\n");
  const auto fixture = test::data_path("fixture.conllu");
  auto t = cli({"train", "--train", fixture, "--dev", fixture, "--out", tmp.file("m.ckpt"), "--config",
                tmp.file("cfg"), "--seed", "5"});
  REQUIRE(t.code == 0);
  CHECK(std::count(t.out.begin(), t.out.end(), '\n') == 3);
  auto p = cli({"parse", "--model", tmp.file("m.ckpt"), "--input", fixture, "--output", tmp.file("o.conllu")});
  REQUIRE(p.code == 0);
  auto parsed = read_conllu_file(tmp.file("o.conllu"));
  CHECK(parsed.size() == read_conllu_file(fixture).size());
  auto e = cli({"eval", "--gold", fixture, "--system", tmp.file("o.conllu")});
  CHECK(e.code == 0);
  CHECK(e.out.rfind("ELAS\t", 0) == 0);
}
