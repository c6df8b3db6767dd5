// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation eagerly: values are computed on the spot, and a
// backward closure is stored for nodes that depend on a parameter. backward()
// replays the closures in reverse recording order, which is a reverse topological
// order of the forward graph. A Tape is single-threaded; separate sentences use
// separate Tapes and write into separate Gradients buffers that are merged later.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sager/rng.hpp"
#include "sager/tensor.hpp"

namespace sager {

enum class ParamGroup { kMain, kEmbedding };

template <typename T>
struct Param {
  std::string name;
  ParamGroup group = ParamGroup::kMain;
  std::size_t index = 0;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;  // Adam first moment
  Tensor<T> v;  // Adam second moment
};

template <typename T>
class ParamStore {
 public:
  Param<T>& add(std::string name, Tensor<T> init, ParamGroup group = ParamGroup::kMain);

  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return *params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return *params_[i]; }
  Param<T>* find(const std::string& name);
  const Param<T>* find(const std::string& name) const;
  std::size_t element_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Per-Tape gradient buffer, indexed like the ParamStore. Slots are allocated on
// first write so untouched parameters cost nothing.
template <typename T>
class Gradients {
 public:
  explicit Gradients(std::size_t n_params = 0) : grads_(n_params) {}

  Tensor<T>& slot(const Param<T>& p);
  const Tensor<T>* get(std::size_t index) const;
  // param.grad += scale * buffer, for each allocated slot.
  void add_to(ParamStore<T>& store, T scale) const;

 private:
  std::vector<Tensor<T>> grads_;
};

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  // One leaf per parameter per Tape; the value is referenced, not copied.
  Var<T> param(const Param<T>& p);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn);

  const Tensor<T>& value(std::uint32_t id) const {
    const auto& n = nodes_[id];
    return n.ref ? *n.ref : n.own;
  }
  Tensor<T>& grad(std::uint32_t id);
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Loss must be 1x1. Accumulates parameter gradients into `out`.
  void backward(Var<T> loss, Gradients<T>& out);
  // Accumulates straight into Param::grad of `store`.
  void backward(Var<T> loss, ParamStore<T>& store);

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    const Param<T>* param = nullptr;
    bool needs_grad = false;
  };

  void sweep(Var<T> loss);

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param<T>*, std::uint32_t> param_nodes_;
};

namespace ad {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);     // a * b
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);  // a * b^T
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);  // broadcast [1 x n] over rows
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> scale_by(Var<T> a, Var<T> gate);  // gate is [1 x 1]
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
// axis 1: each row sums to one; axis 0: each column does.
template <typename T> Var<T> softmax(Var<T> a, int axis = 1);
// Row softmax over entries with mask != 0; masked entries are exactly 0.
template <typename T> Var<T> masked_softmax(Var<T> a, const std::vector<std::uint8_t>& mask);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows);
template <typename T> Var<T> append_ones(Var<T> a);  // extra constant-1 column
// Inverted dropout: identity unless `train`; survivors are scaled by 1/(1-rate).
template <typename T> Var<T> dropout(Var<T> a, double rate, bool train, CounterRng& rng);
template <typename T> Var<T> sum(Var<T> a);
// out[g, c] = max over rows r in groups[g] of a[r, c].
template <typename T>
Var<T> maxpool_groups(Var<T> a, const std::vector<std::vector<std::size_t>>& groups);

// Sum over mask != 0 of binary cross-entropy between sigmoid(logits) and targets.
template <typename T>
Var<T> bce_with_logits(Var<T> logits, const std::vector<T>& targets,
                       const std::vector<std::uint8_t>& mask);
// Sum over rows of -log softmax(logits)[row, targets[row]].
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::size_t>& targets);

// out[k, z] = a[pairs[k].first] * W_z * b[pairs[k].second]^T, where W is laid out as
// [p x labels*q] with W_z occupying columns z*q .. z*q+q-1.
template <typename T>
Var<T> bilinear_pairs(Var<T> a, Var<T> w, Var<T> b,
                      const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                      std::size_t labels);

// Scaled dot-product attention with `heads` column blocks. mask is [nq x nk]; every row
// needs at least one allowed key. If weights_out is set it receives [heads*nq x nk].
template <typename T>
Var<T> multihead_attention(Var<T> q, Var<T> k, Var<T> v, const std::vector<std::uint8_t>& mask,
                           std::size_t heads, Tensor<T>* weights_out = nullptr);

}  // namespace ad

// Central finite differences against Tape gradients for every coordinate of the given
// parameters (or `max_coords` evenly spaced ones per parameter when nonzero). Returns
// max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
template <typename T>
double grad_check(const std::function<Var<T>(Tape<T>&)>& f, std::vector<Param<T>*> params,
                  double step = 1e-5, std::size_t max_coords = 0);

}  // namespace sager
