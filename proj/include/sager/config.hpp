// Model and training configuration, serialized as `key=value` lines.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace sager {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Variant {
  kFull,                 // semi-autoregressive, all edge kinds
  kAutoRandom,           // A: one node per step, siblings shuffled every epoch
  kAutoWord,             // B: one node per step, siblings in word order
  kAutoMixed,            // C: A for the first half of training, then B
  kNoImplicit,           // D: D_i = {i}
  kNoSameLevelImplicit,  // E: D_i = earlier hierarchies + {i}
  kNoExplicit,           // F: explicit edges become implicit
  kNoHierPos,            // G: no hierarchy positional encoding
  kNonAutoBaseline,      // one-shot biaffine over all word pairs
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);  // config names or letters A..G / nonauto
bool is_autoregressive(Variant v);

enum class Precision { kFloat32, kFloat64 };

struct ModelConfig {
  std::size_t d = 64;
  std::size_t layers = 2;  // decoder message-passing layers
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t ffn_mult = 4;
  double repr_dropout = 0.1;
  double output_dropout = 0.3;
  Variant variant = Variant::kFull;

  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr_main = 1e-3;
  double lr_embed = 2e-5;
  double lr_decay = 0.97;
  std::uint64_t seed = 1;
  std::size_t truncate = 100;
  Precision precision = Precision::kFloat32;

  void validate() const;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

// Applies recognized keys; throws ConfigError on unknown keys or bad values, leaving
// both targets unchanged.
void apply_config(const KeyValues& kv, ModelConfig* model, TrainConfig* train);
KeyValues to_key_values(const ModelConfig& model);
KeyValues to_key_values(const TrainConfig& train);

}  // namespace sager
