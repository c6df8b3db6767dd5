#include "sager/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace sager {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O writes host-order scalars and assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'A', 'G', 'E', 'R', 'C', 'K', 'P'};

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename U>
U get(std::istream& in, const char* what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  return v;
}

std::string get_string(std::istream& in, const char* what) {
  auto n = get<std::uint64_t>(in, what);
  if (n > (1ull << 32)) throw CheckpointError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  return s;
}

void put_vocab(std::ostream& out, const Vocab& v) {
  put<std::uint64_t>(out, v.size());
  for (const auto& item : v.items()) put_string(out, item);
}

Vocab get_vocab(std::istream& in) {
  auto n = get<std::uint64_t>(in, "vocabulary size");
  std::vector<std::string> items;
  for (std::uint64_t i = 0; i < n; ++i) items.push_back(get_string(in, "vocabulary entry"));
  return Vocab(std::move(items));
}

template <typename T>
std::unique_ptr<Model<T>> read_model(std::istream& in, const ModelConfig& config) {
  Vocab words = get_vocab(in);
  Vocab labels = get_vocab(in);
  auto model = std::make_unique<Model<T>>(config, std::move(words), std::move(labels), 0);
  auto& params = model->params();
  auto count = get<std::uint64_t>(in, "tensor count");
  if (count != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  for (std::uint64_t t = 0; t < count; ++t) {
    auto name = get_string(in, "tensor name");
    auto* p = params.find(name);
    if (!p) throw CheckpointError("unknown tensor '" + name + "'");
    auto rank = get<std::uint32_t>(in, "tensor rank");
    std::vector<std::size_t> shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get<std::uint64_t>(in, "tensor dims"));
    if (shape != p->value.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) +
                            ", model expects " + shape_str(p->value.shape()));
    }
    if (!in.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(T)))) {
      throw CheckpointError("truncated data for tensor '" + name + "'");
    }
  }
  return model;
}

}  // namespace

template <typename T>
void write_checkpoint(std::ostream& out, const Model<T>& model, const TrainConfig& train) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, sizeof(T));
  KeyValues kv = to_key_values(model.config());
  for (auto& [k, v] : to_key_values(train)) kv[k] = v;
  put_string(out, format_key_values(kv));
  put_vocab(out, model.words());
  put_vocab(out, model.labels());
  const auto& params = model.params();
  put<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    put_string(out, p.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto dim : p.value.shape()) put<std::uint64_t>(out, dim);
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(T)));
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  auto scalar = get<std::uint32_t>(in, "scalar size");
  ModelConfig config;
  Checkpoint ck;
  try {
    apply_config(parse_key_values(get_string(in, "config block")), &config, &ck.train);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad config block: ") + e.what());
  }
  if (scalar == sizeof(float)) {
    ck.model = read_model<float>(in, config);
  } else if (scalar == sizeof(double)) {
    ck.model = read_model<double>(in, config);
  } else {
    throw CheckpointError("unsupported scalar size " + std::to_string(scalar));
  }
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const TrainConfig& train) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  write_checkpoint(out, model, train);
  if (!out) throw CheckpointError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

template void write_checkpoint(std::ostream&, const Model<float>&, const TrainConfig&);
template void write_checkpoint(std::ostream&, const Model<double>&, const TrainConfig&);
template void save_checkpoint(const std::string&, const Model<float>&, const TrainConfig&);
template void save_checkpoint(const std::string&, const Model<double>&, const TrainConfig&);

}  // namespace sager
