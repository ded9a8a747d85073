#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmg/tensor.hpp"

namespace mmg::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed set of parameters. State (first/second moments, step
// count) persists across calls for the optimizer's lifetime.
class Adam {
 public:
  Adam(std::vector<std::shared_ptr<Parameter>> params, AdamConfig cfg);

  void zero_grad();
  // Applies one update. Every managed parameter must carry a gradient
  // (zero_grad + backward guarantee this); a missing gradient is an error.
  void step();

  // Clears the moment state for the given rows of a 2-D parameter, used when
  // codebook rows are overwritten.
  void reset_rows(const std::string& param_name, const std::vector<int>& rows);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t step_count() const { return t_; }

 private:
  std::vector<std::shared_ptr<Parameter>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace mmg::num
