#include "sager/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sager/kernels.hpp"

namespace sager {

namespace {

template <typename T>
[[noreturn]] void shape_mismatch(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore / Gradients

template <typename T>
Param<T>& ParamStore<T>::add(std::string name, Tensor<T> init, ParamGroup group) {
  if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  auto p = std::make_unique<Param<T>>();
  p->name = name;
  p->group = group;
  p->index = params_.size();
  p->grad = Tensor<T>(init.shape());
  p->m = Tensor<T>(init.shape());
  p->v = Tensor<T>(init.shape());
  p->value = std::move(init);
  by_name_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Param<T>* ParamStore<T>::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
const Param<T>* ParamStore<T>::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
std::size_t ParamStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p->grad.fill(T(0));
}

template <typename T>
Tensor<T>& Gradients<T>::slot(const Param<T>& p) {
  if (p.index >= grads_.size()) grads_.resize(p.index + 1);
  auto& g = grads_[p.index];
  if (g.empty()) g = Tensor<T>(p.value.shape());
  return g;
}

template <typename T>
const Tensor<T>* Gradients<T>::get(std::size_t index) const {
  if (index >= grads_.size() || grads_[index].empty()) return nullptr;
  return &grads_[index];
}

template <typename T>
void Gradients<T>::add_to(ParamStore<T>& store, T scale) const {
  for (std::size_t i = 0; i < grads_.size() && i < store.size(); ++i) {
    if (grads_[i].empty()) continue;
    auto& dst = store[i].grad;
    axpy(dst.size(), scale, grads_[i].data(), dst.data());
  }
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::param(const Param<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var<T>{this, it->second};
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_[&p] = id;
  return Var<T>{this, id};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  Node n;
  n.own = std::move(value);
  if (record_) {
    for (const auto& v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
  Node n;
  n.own = std::move(value);
  if (record_) {
    for (const auto& v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
void Tape<T>::sweep(Var<T> loss) {
  if (loss.tape != this) throw std::invalid_argument("loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " +
                                shape_str(value(loss.id).shape()));
  }
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  grad(loss.id)[0] = T(1);
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

template <typename T>
void Tape<T>::backward(Var<T> loss, ParamStore<T>& store) {
  sweep(loss);
  for (auto& n : nodes_) {
    if (n.param && !n.grad.empty()) {
      auto& dst = store[n.param->index].grad;
      if (&store[n.param->index] != n.param) {
        throw std::invalid_argument("parameter " + n.param->name + " is not in this store");
      }
      axpy(n.grad.size(), T(1), n.grad.data(), dst.data());
    }
  }
}

template <typename T>
void Tape<T>::backward(Var<T> loss, Gradients<T>& out) {
  sweep(loss);
  for (auto& n : nodes_) {
    if (n.param && !n.grad.empty()) {
      auto& dst = out.slot(*n.param);
      axpy(n.grad.size(), T(1), n.grad.data(), dst.data());
    }
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace ad {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) shape_mismatch("matmul", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> out(m, n);
  kernels::gemm_nn(m, n, k, A.data(), B.data(), out.data(), false);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, n, k](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) {
      kernels::gemm_nt(m, k, n, g.data(), t.value(b.id).data(), t.grad(a.id).data(), true);
    }
    if (t.needs_grad(b.id)) {
      kernels::gemm_tn(k, n, m, t.value(a.id).data(), g.data(), t.grad(b.id).data(), true);
    }
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols()) shape_mismatch("matmul_nt", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor<T> out(m, n);
  kernels::gemm_nt(m, n, k, A.data(), B.data(), out.data(), false);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, n, k](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) {
      kernels::gemm_nn(m, k, n, g.data(), t.value(b.id).data(), t.grad(a.id).data(), true);
    }
    if (t.needs_grad(b.id)) {
      kernels::gemm_tn(n, k, m, g.data(), t.value(a.id).data(), t.grad(b.id).data(), true);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (!A.same_shape(B)) shape_mismatch("add", A, B);
  Tensor<T> out = A;
  axpy(out.size(), T(1), B.data(), out.data());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) axpy(g.size(), T(1), g.data(), t.grad(a.id).data());
    if (t.needs_grad(b.id)) axpy(g.size(), T(1), g.data(), t.grad(b.id).data());
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const auto& A = a.value();
  const auto& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) shape_mismatch("add_row", A, R);
  Tensor<T> out = A;
  for (std::size_t r = 0; r < out.rows(); ++r) axpy(out.cols(), T(1), R.data(), out.row(r));
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) axpy(g.size(), T(1), g.data(), t.grad(a.id).data());
    if (t.needs_grad(row.id)) {
      auto& gr = t.grad(row.id);
      for (std::size_t r = 0; r < g.rows(); ++r) axpy(g.cols(), T(1), g.row(r), gr.data());
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& x : out.values()) x *= factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    axpy(g.size(), factor, g.data(), t.grad(a.id).data());
  });
}

template <typename T>
Var<T> scale_by(Var<T> a, Var<T> gate) {
  const auto& G = gate.value();
  if (G.size() != 1) shape_mismatch("scale_by", a.value(), G);
  const T s = G[0];
  Tensor<T> out = a.value();
  for (auto& x : out.values()) x *= s;
  return a.tape->record(std::move(out), {a, gate}, [a, gate](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) axpy(g.size(), t.value(gate.id)[0], g.data(), t.grad(a.id).data());
    if (t.needs_grad(gate.id)) {
      const auto& A = t.value(a.id);
      T acc = T(0);
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * A[i];
      t.grad(gate.id)[0] += acc;
    }
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& x : out.values()) x = x > T(0) ? x : T(0);
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& A = t.value(a.id);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (A[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& x : out.values()) x = T(1) / (T(1) + std::exp(-x));
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

namespace {

// Softmax over `n` entries spaced `stride` apart, skipping entries whose mask is 0.
template <typename T>
void softmax_line(const T* in, T* out, std::size_t n, std::size_t stride,
                  const std::uint8_t* mask) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask || mask[i]) mx = std::max(mx, in[i * stride]);
  }
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    T e = (!mask || mask[i]) ? std::exp(in[i * stride] - mx) : T(0);
    out[i * stride] = e;
    total += e;
  }
  for (std::size_t i = 0; i < n; ++i) out[i * stride] /= total;
}

template <typename T>
void softmax_line_backward(const T* y, const T* g, T* gx, std::size_t n, std::size_t stride) {
  T dot = T(0);
  for (std::size_t i = 0; i < n; ++i) dot += y[i * stride] * g[i * stride];
  for (std::size_t i = 0; i < n; ++i) gx[i * stride] += y[i * stride] * (g[i * stride] - dot);
}

}  // namespace

template <typename T>
Var<T> softmax(Var<T> a, int axis) {
  const auto& A = a.value();
  if (axis != 0 && axis != 1) throw DimensionError("softmax axis must be 0 or 1");
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out(A.shape());
  if (axis == 1) {
    for (std::size_t r = 0; r < rows; ++r) softmax_line(A.row(r), out.row(r), cols, 1, nullptr);
  } else {
    for (std::size_t c = 0; c < cols; ++c) {
      softmax_line(A.data() + c, out.data() + c, rows, cols, nullptr);
    }
  }
  return a.tape->record(std::move(out), {a},
                        [a, axis, rows, cols](Tape<T>& t, std::uint32_t self) {
                          const auto& g = t.grad(self);
                          const auto& y = t.value(self);
                          auto& ga = t.grad(a.id);
                          if (axis == 1) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              softmax_line_backward(y.row(r), g.row(r), ga.row(r), cols, 1);
                            }
                          } else {
                            for (std::size_t c = 0; c < cols; ++c) {
                              softmax_line_backward(y.data() + c, g.data() + c, ga.data() + c,
                                                    rows, cols);
                            }
                          }
                        });
}

template <typename T>
Var<T> masked_softmax(Var<T> a, const std::vector<std::uint8_t>& mask) {
  const auto& A = a.value();
  if (mask.size() != A.size()) throw DimensionError("masked_softmax: mask size mismatch");
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out(A.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* m = mask.data() + r * cols;
    if (std::none_of(m, m + cols, [](std::uint8_t x) { return x != 0; })) {
      throw DimensionError("masked_softmax: row " + std::to_string(r) + " has no entries");
    }
    softmax_line(A.row(r), out.row(r), cols, 1, m);
  }
  return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(a.id);
    for (std::size_t r = 0; r < rows; ++r) {
      softmax_line_backward(y.row(r), g.row(r), ga.row(r), cols, 1);
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_mismatch("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Tensor<T> out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  return parts[0].tape->record(std::move(out), parts, [parts](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const auto n = t.value(p.id).size();
      if (t.needs_grad(p.id)) axpy(n, T(1), g.data() + offset, t.grad(p.id).data());
      offset += n;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_mismatch("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Tensor<T> out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.row(r), v.row(r) + v.cols(), out.row(r) + offset);
    }
    offset += v.cols();
  }
  return parts[0].tape->record(std::move(out), parts, [parts](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const auto pc = t.value(p.id).cols();
      if (t.needs_grad(p.id)) {
        auto& gp = t.grad(p.id);
        for (std::size_t r = 0; r < g.rows(); ++r) axpy(pc, T(1), g.row(r) + offset, gp.row(r));
      }
      offset += pc;
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  if (begin > end || end > A.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of " + shape_str(A.shape()));
  }
  const std::size_t cols = A.cols();
  Tensor<T> out(end - begin, cols);
  std::copy(A.row(begin), A.row(begin) + (end - begin) * cols, out.data());
  return a.tape->record(std::move(out), {a}, [a, begin](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    axpy(g.size(), T(1), g.data(), t.grad(a.id).row(begin));
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  if (begin > end || end > A.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of " + shape_str(A.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> out(A.rows(), w);
  for (std::size_t r = 0; r < A.rows(); ++r) std::copy(A.row(r) + begin, A.row(r) + end, out.row(r));
  return a.tape->record(std::move(out), {a}, [a, begin, w](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t r = 0; r < g.rows(); ++r) axpy(w, T(1), g.row(r), ga.row(r) + begin);
  });
}

template <typename T>
Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows) {
  const auto& A = a.value();
  const std::size_t cols = A.cols();
  Tensor<T> out(rows.size(), cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= A.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[k]) + " out of " +
                           shape_str(A.shape()));
    }
    std::copy(A.row(rows[k]), A.row(rows[k]) + cols, out.row(k));
  }
  return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t k = 0; k < rows.size(); ++k) axpy(cols, T(1), g.row(k), ga.row(rows[k]));
  });
}

template <typename T>
Var<T> append_ones(Var<T> a) {
  const auto& A = a.value();
  const std::size_t cols = A.cols();
  Tensor<T> out(A.rows(), cols + 1, T(1));
  for (std::size_t r = 0; r < A.rows(); ++r) std::copy(A.row(r), A.row(r) + cols, out.row(r));
  return a.tape->record(std::move(out), {a}, [a, cols](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t r = 0; r < g.rows(); ++r) axpy(cols, T(1), g.row(r), ga.row(r));
  });
}

template <typename T>
Var<T> dropout(Var<T> a, double rate, bool train, CounterRng& rng) {
  if (!train || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  const auto& A = a.value();
  Tensor<T> mask(A.shape());
  for (auto& m : mask.values()) m = rng.uniform() >= rate ? keep : T(0);
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return a.tape->record(std::move(out), {a},
                        [a, mask = std::move(mask)](Tape<T>& t, std::uint32_t self) {
                          const auto& g = t.grad(self);
                          auto& ga = t.grad(a.id);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                        });
}

template <typename T>
Var<T> sum(Var<T> a) {
  const auto& A = a.value();
  T total = T(0);
  for (auto x : A.values()) total += x;
  return a.tape->record(Tensor<T>(1, 1, total), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const T g = t.grad(self)[0];
    auto& ga = t.grad(a.id);
    for (auto& x : ga.values()) x += g;
  });
}

template <typename T>
Var<T> maxpool_groups(Var<T> a, const std::vector<std::vector<std::size_t>>& groups) {
  const auto& A = a.value();
  const std::size_t cols = A.cols();
  Tensor<T> out(groups.size(), cols);
  std::vector<std::size_t> argmax(groups.size() * cols, 0);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& rows = groups[gi];
    if (rows.empty()) throw DimensionError("maxpool_groups: empty group");
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t best = rows[0];
      for (auto r : rows) {
        if (r >= A.rows()) throw DimensionError("maxpool_groups: row out of range");
        if (A(r, c) > A(best, c)) best = r;
      }
      out(gi, c) = A(best, c);
      argmax[gi * cols + c] = best;
    }
  }
  return a.tape->record(std::move(out), {a},
                        [a, cols, argmax = std::move(argmax)](Tape<T>& t, std::uint32_t self) {
                          const auto& g = t.grad(self);
                          auto& ga = t.grad(a.id);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            ga(argmax[i], i % cols) += g[i];
                          }
                        });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, const std::vector<T>& targets,
                       const std::vector<std::uint8_t>& mask) {
  const auto& X = logits.value();
  if (targets.size() != X.size() || mask.size() != X.size()) {
    throw DimensionError("bce_with_logits: target/mask size mismatch with " +
                         shape_str(X.shape()));
  }
  T total = T(0);
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (!mask[i]) continue;
    const T x = X[i];
    total += std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return logits.tape->record(Tensor<T>(1, 1, total), {logits},
                             [logits, targets, mask](Tape<T>& t, std::uint32_t self) {
                               const T g = t.grad(self)[0];
                               const auto& X = t.value(logits.id);
                               auto& gx = t.grad(logits.id);
                               for (std::size_t i = 0; i < X.size(); ++i) {
                                 if (!mask[i]) continue;
                                 const T s = T(1) / (T(1) + std::exp(-X[i]));
                                 gx[i] += g * (s - targets[i]);
                               }
                             });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::size_t>& targets) {
  const auto& X = logits.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (targets.size() != rows) throw DimensionError("cross_entropy: one target per row");
  Tensor<T> probs(rows, cols);
  T total = T(0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) throw DimensionError("cross_entropy: target out of range");
    softmax_line(X.row(r), probs.row(r), cols, 1, static_cast<const std::uint8_t*>(nullptr));
    T mx = *std::max_element(X.row(r), X.row(r) + cols);
    T lse = T(0);
    for (std::size_t c = 0; c < cols; ++c) lse += std::exp(X(r, c) - mx);
    total += mx + std::log(lse) - X(r, targets[r]);
  }
  return logits.tape->record(
      Tensor<T>(1, 1, total), {logits},
      [logits, targets, probs = std::move(probs)](Tape<T>& t, std::uint32_t self) {
        const T g = t.grad(self)[0];
        auto& gx = t.grad(logits.id);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            gx(r, c) += g * (probs(r, c) - (c == targets[r] ? T(1) : T(0)));
          }
        }
      });
}

template <typename T>
Var<T> bilinear_pairs(Var<T> a, Var<T> w, Var<T> b,
                      const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                      std::size_t labels) {
  const auto& A = a.value();
  const auto& W = w.value();
  const auto& B = b.value();
  const std::size_t p = A.cols(), q = B.cols();
  if (W.rows() != p || W.cols() != labels * q) shape_mismatch("bilinear_pairs", A, W);

  // Project each distinct head row once: AW[u] = A[heads[u]] * W.
  std::vector<std::size_t> heads;
  std::vector<std::size_t> head_slot(pairs.size());
  {
    std::vector<std::size_t> seen(A.rows(), static_cast<std::size_t>(-1));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      auto [j, i] = pairs[k];
      if (j >= A.rows() || i >= B.rows()) throw DimensionError("bilinear_pairs: pair out of range");
      if (seen[j] == static_cast<std::size_t>(-1)) {
        seen[j] = heads.size();
        heads.push_back(j);
      }
      head_slot[k] = seen[j];
    }
  }
  Tensor<T> a_heads(heads.size(), p);
  for (std::size_t u = 0; u < heads.size(); ++u) {
    std::copy(A.row(heads[u]), A.row(heads[u]) + p, a_heads.row(u));
  }
  Tensor<T> aw(heads.size(), labels * q);
  kernels::gemm_nn(heads.size(), labels * q, p, a_heads.data(), W.data(), aw.data(), false);

  Tensor<T> out(pairs.size(), labels);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const T* row = aw.row(head_slot[k]);
    const T* bi = B.row(pairs[k].second);
    for (std::size_t z = 0; z < labels; ++z) {
      T acc = T(0);
      for (std::size_t c = 0; c < q; ++c) acc += row[z * q + c] * bi[c];
      out(k, z) = acc;
    }
  }
  return a.tape->record(
      std::move(out), {a, w, b},
      [a, w, b, pairs, labels, p, q, heads = std::move(heads), head_slot = std::move(head_slot),
       a_heads = std::move(a_heads), aw = std::move(aw)](Tape<T>& t, std::uint32_t self) {
        const auto& g = t.grad(self);
        const auto& B = t.value(b.id);
        Tensor<T> gaw(heads.size(), labels * q);
        const bool need_b = t.needs_grad(b.id);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
          const std::size_t i = pairs[k].second;
          const T* row = aw.row(head_slot[k]);
          T* grow = gaw.row(head_slot[k]);
          const T* bi = B.row(i);
          T* gbi = need_b ? t.grad(b.id).row(i) : nullptr;
          for (std::size_t z = 0; z < labels; ++z) {
            const T gz = g(k, z);
            if (gz == T(0)) continue;
            for (std::size_t c = 0; c < q; ++c) {
              grow[z * q + c] += gz * bi[c];
              if (gbi) gbi[c] += gz * row[z * q + c];
            }
          }
        }
        if (t.needs_grad(w.id)) {
          kernels::gemm_tn(p, labels * q, heads.size(), a_heads.data(), gaw.data(),
                           t.grad(w.id).data(), true);
        }
        if (t.needs_grad(a.id)) {
          Tensor<T> ga_heads(heads.size(), p);
          kernels::gemm_nt(heads.size(), p, labels * q, gaw.data(), t.value(w.id).data(),
                           ga_heads.data(), false);
          auto& ga = t.grad(a.id);
          for (std::size_t u = 0; u < heads.size(); ++u) {
            axpy(p, T(1), ga_heads.row(u), ga.row(heads[u]));
          }
        }
      });
}

template <typename T>
Var<T> multihead_attention(Var<T> q, Var<T> k, Var<T> v, const std::vector<std::uint8_t>& mask,
                           std::size_t heads, Tensor<T>* weights_out) {
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  const std::size_t nq = Q.rows(), nk = K.rows(), d = Q.cols();
  if (K.cols() != d || V.cols() != d || V.rows() != nk) shape_mismatch("attention", Q, K);
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: d not divisible by heads");
  if (mask.size() != nq * nk) throw DimensionError("attention: mask size mismatch");
  const std::size_t dk = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));

  Tensor<T> weights(heads * nq, nk);
  Tensor<T> out(nq, d);
  std::vector<T> scores(nk);
  for (std::size_t i = 0; i < nq; ++i) {
    const std::uint8_t* m = mask.data() + i * nk;
    if (std::none_of(m, m + nk, [](std::uint8_t x) { return x != 0; })) {
      throw DimensionError("attention: query " + std::to_string(i) + " has an empty neighborhood");
    }
    for (std::size_t h = 0; h < heads; ++h) {
      const T* qi = Q.row(i) + h * dk;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!m[j]) continue;
        const T* kj = K.row(j) + h * dk;
        T acc = T(0);
        for (std::size_t c = 0; c < dk; ++c) acc += qi[c] * kj[c];
        scores[j] = acc * inv_sqrt;
      }
      T* w = weights.row(h * nq + i);
      softmax_line(scores.data(), w, nk, 1, m);
      T* oi = out.row(i) + h * dk;
      for (std::size_t j = 0; j < nk; ++j) {
        if (w[j] == T(0)) continue;
        axpy(dk, w[j], V.row(j) + h * dk, oi);
      }
    }
  }
  if (weights_out) *weights_out = weights;
  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, heads, nq, nk, dk, inv_sqrt, weights = std::move(weights)](Tape<T>& t,
                                                                           std::uint32_t self) {
        const auto& g = t.grad(self);
        const auto& Q = t.value(q.id);
        const auto& K = t.value(k.id);
        const auto& V = t.value(v.id);
        const bool need_q = t.needs_grad(q.id), need_k = t.needs_grad(k.id),
                   need_v = t.needs_grad(v.id);
        Tensor<T>* gq = need_q ? &t.grad(q.id) : nullptr;
        Tensor<T>* gk = need_k ? &t.grad(k.id) : nullptr;
        Tensor<T>* gv = need_v ? &t.grad(v.id) : nullptr;
        std::vector<T> dw(nk);
        for (std::size_t i = 0; i < nq; ++i) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* w = weights.row(h * nq + i);
            const T* go = g.row(i) + h * dk;
            T dot = T(0);
            for (std::size_t j = 0; j < nk; ++j) {
              if (w[j] == T(0)) {
                dw[j] = T(0);
                continue;
              }
              const T* vj = V.row(j) + h * dk;
              T acc = T(0);
              for (std::size_t c = 0; c < dk; ++c) acc += go[c] * vj[c];
              dw[j] = acc;
              dot += acc * w[j];
              if (gv) axpy(dk, w[j], go, gv->row(j) + h * dk);
            }
            const T* qi = Q.row(i) + h * dk;
            for (std::size_t j = 0; j < nk; ++j) {
              if (w[j] == T(0)) continue;
              const T ds = w[j] * (dw[j] - dot) * inv_sqrt;
              if (gq) axpy(dk, ds, K.row(j) + h * dk, gq->row(i) + h * dk);
              if (gk) axpy(dk, ds, qi, gk->row(j) + h * dk);
            }
          }
        }
      });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Finite-difference gradient check

template <typename T>
double grad_check(const std::function<Var<T>(Tape<T>&)>& f, std::vector<Param<T>*> params,
                  double step, std::size_t max_coords) {
  Gradients<T> grads;
  {
    Tape<T> tape;
    auto loss = f(tape);
    tape.backward(loss, grads);
  }
  auto eval = [&]() {
    Tape<T> tape(false);
    return static_cast<double>(f(tape).value()[0]);
  };
  double worst = 0.0;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    std::size_t stride = 1;
    if (max_coords > 0 && n > max_coords) stride = (n + max_coords - 1) / max_coords;
    for (std::size_t i = 0; i < n; i += stride) {
      const T orig = p->value[i];
      p->value[i] = static_cast<T>(orig + step);
      const double up = eval();
      p->value[i] = static_cast<T>(orig - step);
      const double down = eval();
      p->value[i] = orig;
      const double fd = (up - down) / (2.0 * step);
      const auto* g = grads.get(p->index);
      const double ad = g ? static_cast<double>((*g)[i]) : 0.0;
      const double err = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Instantiations

#define SAGER_INSTANTIATE_AD(T)                                                              \
  template class ParamStore<T>;                                                              \
  template class Gradients<T>;                                                               \
  template class Tape<T>;                                                                    \
  template Var<T> ad::matmul(Var<T>, Var<T>);                                                \
  template Var<T> ad::matmul_nt(Var<T>, Var<T>);                                             \
  template Var<T> ad::add(Var<T>, Var<T>);                                                   \
  template Var<T> ad::add_row(Var<T>, Var<T>);                                               \
  template Var<T> ad::scale(Var<T>, T);                                                      \
  template Var<T> ad::scale_by(Var<T>, Var<T>);                                              \
  template Var<T> ad::relu(Var<T>);                                                          \
  template Var<T> ad::sigmoid(Var<T>);                                                       \
  template Var<T> ad::softmax(Var<T>, int);                                                  \
  template Var<T> ad::masked_softmax(Var<T>, const std::vector<std::uint8_t>&);              \
  template Var<T> ad::concat_rows(const std::vector<Var<T>>&);                               \
  template Var<T> ad::concat_cols(const std::vector<Var<T>>&);                               \
  template Var<T> ad::slice_rows(Var<T>, std::size_t, std::size_t);                          \
  template Var<T> ad::slice_cols(Var<T>, std::size_t, std::size_t);                          \
  template Var<T> ad::gather_rows(Var<T>, const std::vector<std::size_t>&);                  \
  template Var<T> ad::append_ones(Var<T>);                                                   \
  template Var<T> ad::dropout(Var<T>, double, bool, CounterRng&);                            \
  template Var<T> ad::sum(Var<T>);                                                           \
  template Var<T> ad::maxpool_groups(Var<T>, const std::vector<std::vector<std::size_t>>&);  \
  template Var<T> ad::bce_with_logits(Var<T>, const std::vector<T>&,                         \
                                      const std::vector<std::uint8_t>&);                     \
  template Var<T> ad::cross_entropy(Var<T>, const std::vector<std::size_t>&);                \
  template Var<T> ad::bilinear_pairs(Var<T>, Var<T>, Var<T>,                                 \
                                     const std::vector<std::pair<std::size_t, std::size_t>>&, \
                                     std::size_t);                                           \
  template Var<T> ad::multihead_attention(Var<T>, Var<T>, Var<T>,                            \
                                          const std::vector<std::uint8_t>&, std::size_t,     \
                                          Tensor<T>*);                                       \
  template double grad_check(const std::function<Var<T>(Tape<T>&)>&, std::vector<Param<T>*>, \
                             double, std::size_t);

SAGER_INSTANTIATE_AD(float)
SAGER_INSTANTIATE_AD(double)

#undef SAGER_INSTANTIATE_AD

}  // namespace sager
