#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "mmg/ops.hpp"
#include "mmg/rng.hpp"
#include "mmg/tensor.hpp"

namespace mmg::test {

using num::Parameter;
using num::Tensor;

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true,
                            double scale = 1.0) {
  std::vector<double> v(num::shape_size(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

struct GradCheckResult {
  double max_err = 0.0;
  int checked = 0;
  bool ok = true;
};

// Central finite differences against the tape gradient. The loss closure
// must rebuild the graph from the leaf tensors on every call.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn,
                                 const std::vector<Tensor>& leaves, double h = 1e-5,
                                 double tol = 1e-4) {
  GradCheckResult res;
  for (const Tensor& leaf : leaves) const_cast<Tensor&>(leaf).zero_grad();
  Tensor loss = loss_fn();
  num::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());

  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = const_cast<Tensor&>(leaves[li]);
    for (int64_t i = 0; i < leaf.size(); ++i) {
      const double old = leaf.values()[i];
      leaf.values()[i] = old + h;
      const double f1 = loss_fn().value_at(0);
      leaf.values()[i] = old - h;
      const double f0 = loss_fn().value_at(0);
      leaf.values()[i] = old;
      const double fd = (f1 - f0) / (2.0 * h);
      const double an = analytic[li][i];
      const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      res.max_err = std::max(res.max_err, err);
      ++res.checked;
      if (err > tol) res.ok = false;
    }
  }
  return res;
}

}  // namespace mmg::test
