// Named trainable parameters and the AdamW update.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdet/tensor.hpp"

namespace cdet {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;  // frozen params are skipped by the optimizer, bit for bit
};

using ParamRefs = std::vector<Parameter*>;

// Adam with decoupled weight decay and bias correction.
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
  };

  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };

  explicit AdamW(ParamRefs params);
  AdamW(ParamRefs params, Options opts);

  // One update. Every live parameter must carry a gradient from a prior
  // backward call; a missing gradient is an error, not a silent no-op.
  void step();
  void zero_grad();

  double lr() const { return opts_.lr; }
  void set_lr(double lr) { opts_.lr = lr; }
  const Options& options() const { return opts_; }

  // Checkpoint surface: step count plus per-parameter moment buffers,
  // indexed in registration order.
  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }
  std::vector<Slot>& slots() { return slots_; }
  const ParamRefs& params() const { return params_; }

 private:
  ParamRefs params_;
  Options opts_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace cdet
