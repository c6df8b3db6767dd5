// Adam with bias correction and a per-epoch exponential learning-rate schedule.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "sager/autodiff.hpp"

namespace sager {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Learning rate in effect after `epoch` completed epochs.
double decayed_lr(double initial, double decay, std::size_t epoch);

template <typename T>
class Adam {
 public:
  Adam(AdamHyper main, AdamHyper embedding) : main_(main), embedding_(embedding) {}

  void set_lr(double main_lr, double embedding_lr) {
    main_.lr = main_lr;
    embedding_.lr = embedding_lr;
  }
  // Applies one update from Param::grad. Throws TrainingError naming the first
  // parameter with a non-finite gradient; no parameter is modified in that case.
  void step(ParamStore<T>& params);
  std::size_t steps() const { return t_; }

 private:
  AdamHyper main_;
  AdamHyper embedding_;
  std::size_t t_ = 0;
};

}  // namespace sager
