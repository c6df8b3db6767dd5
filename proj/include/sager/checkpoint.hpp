// Versioned binary checkpoints:
//   "SAGERCKP" | u32 version | u32 scalar bytes | config block (u64 length + key=value text)
//   | word vocab | label vocab (u64 count, then u64-length-prefixed strings)
//   | u64 tensor count | per tensor: name, u32 rank, u64 dims, raw little-endian scalars
#pragma once

#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>

#include "sager/config.hpp"
#include "sager/model.hpp"

namespace sager {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

using AnyModel = std::variant<std::unique_ptr<Model<float>>, std::unique_ptr<Model<double>>>;

struct Checkpoint {
  TrainConfig train;
  AnyModel model;
};

template <typename T>
void write_checkpoint(std::ostream& out, const Model<T>& model, const TrainConfig& train);
Checkpoint read_checkpoint(std::istream& in);

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const TrainConfig& train);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sager
