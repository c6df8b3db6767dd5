#include "sager/config.hpp"

#include <array>
#include <optional>
#include <charconv>
#include <sstream>
#include <utility>

namespace sager {

namespace {

struct VariantName {
  Variant variant;
  const char* name;
  const char* letter;
};

constexpr std::array<VariantName, 9> kVariants = {{
    {Variant::kFull, "full", "full"},
    {Variant::kAutoRandom, "auto_random", "A"},
    {Variant::kAutoWord, "auto_word", "B"},
    {Variant::kAutoMixed, "auto_mixed", "C"},
    {Variant::kNoImplicit, "no_implicit", "D"},
    {Variant::kNoSameLevelImplicit, "no_same_level_implicit", "E"},
    {Variant::kNoExplicit, "no_explicit", "F"},
    {Variant::kNoHierPos, "no_hier_pos", "G"},
    {Variant::kNonAutoBaseline, "nonauto_baseline", "nonauto"},
}};

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("invalid integer for " + key + ": '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw ConfigError("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for " + key + ": '" + v + "'");
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(Variant v) {
  for (const auto& e : kVariants) {
    if (e.variant == v) return e.name;
  }
  return "full";
}

Variant parse_variant(const std::string& name) {
  for (const auto& e : kVariants) {
    if (name == e.name || name == e.letter) return e.variant;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

bool is_autoregressive(Variant v) {
  return v == Variant::kAutoRandom || v == Variant::kAutoWord || v == Variant::kAutoMixed;
}

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("d=" + std::to_string(d) + " must be a positive multiple of heads=" +
                      std::to_string(heads));
  }
  if (layers == 0) throw ConfigError("layers must be positive");
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
  if (repr_dropout < 0 || repr_dropout >= 1 || output_dropout < 0 || output_dropout >= 1) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || truncate == 0) {
    throw ConfigError("epochs, batch_size and truncate must be positive");
  }
  if (!(lr_main > 0) || !(lr_embed > 0) || !(lr_decay > 0)) {
    throw ConfigError("learning rates and decay must be positive");
  }
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

void apply_config(const KeyValues& kv, ModelConfig* model_out, TrainConfig* train_out) {
  std::optional<ModelConfig> model_copy;
  std::optional<TrainConfig> train_copy;
  if (model_out) model_copy = *model_out;
  if (train_out) train_copy = *train_out;
  ModelConfig* model = model_copy ? &*model_copy : nullptr;
  TrainConfig* train = train_copy ? &*train_copy : nullptr;
  for (const auto& [key, value] : kv) {
    bool used = false;
    if (model) {
      used = true;
      if (key == "d") model->d = to_size(key, value);
      else if (key == "layers") model->layers = to_size(key, value);
      else if (key == "heads") model->heads = to_size(key, value);
      else if (key == "encoder_layers") model->encoder_layers = to_size(key, value);
      else if (key == "ffn_mult") model->ffn_mult = to_size(key, value);
      else if (key == "repr_dropout") model->repr_dropout = to_double(key, value);
      else if (key == "output_dropout") model->output_dropout = to_double(key, value);
      else if (key == "variant") model->variant = parse_variant(value);
      else used = false;
    }
    if (!used && train) {
      used = true;
      if (key == "epochs") train->epochs = to_size(key, value);
      else if (key == "batch_size") train->batch_size = to_size(key, value);
      else if (key == "lr_main") train->lr_main = to_double(key, value);
      else if (key == "lr_embed") train->lr_embed = to_double(key, value);
      else if (key == "lr_decay") train->lr_decay = to_double(key, value);
      else if (key == "seed") train->seed = to_size(key, value);
      else if (key == "truncate") train->truncate = to_size(key, value);
      else if (key == "precision") {
        if (value == "float" || value == "float32") train->precision = Precision::kFloat32;
        else if (value == "double" || value == "float64") train->precision = Precision::kFloat64;
        else throw ConfigError("precision must be float or double");
      } else used = false;
    }
    if (!used) throw ConfigError("unknown config key '" + key + "'");
  }
  if (model) model->validate();
  if (train) train->validate();
  if (model_out) *model_out = *model;
  if (train_out) *train_out = *train;
}

KeyValues to_key_values(const ModelConfig& m) {
  return {{"d", std::to_string(m.d)},
          {"layers", std::to_string(m.layers)},
          {"heads", std::to_string(m.heads)},
          {"encoder_layers", std::to_string(m.encoder_layers)},
          {"ffn_mult", std::to_string(m.ffn_mult)},
          {"repr_dropout", fmt(m.repr_dropout)},
          {"output_dropout", fmt(m.output_dropout)},
          {"variant", to_string(m.variant)}};
}

KeyValues to_key_values(const TrainConfig& t) {
  return {{"epochs", std::to_string(t.epochs)},
          {"batch_size", std::to_string(t.batch_size)},
          {"lr_main", fmt(t.lr_main)},
          {"lr_embed", fmt(t.lr_embed)},
          {"lr_decay", fmt(t.lr_decay)},
          {"seed", std::to_string(t.seed)},
          {"truncate", std::to_string(t.truncate)},
          {"precision", t.precision == Precision::kFloat32 ? "float" : "double"}};
}

}  // namespace sager
