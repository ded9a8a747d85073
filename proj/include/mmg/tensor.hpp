#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mmg::num {

struct TensorNode;

// Value-semantics handle over a reverse-mode tape node. All data is 64-bit
// float, row-major. The tape is rebuilt on every training step: ops allocate
// fresh nodes whose backward closures push gradients into their parents.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int ndim() const;
  int64_t size() const;
  // 2-D accessors; throw on other ranks.
  int rows() const;
  int cols() const;

  const std::vector<double>& values() const;
  std::vector<double>& values();
  double value_at(int64_t i) const;
  double at(int r, int c) const;

  bool requires_grad() const;
  const std::vector<double>& grad() const;  // throws if absent
  bool has_grad() const;
  void ensure_grad();  // allocate zero grad if absent
  void zero_grad();

  // A detached copy of the values: same numbers, no tape history.
  Tensor detached() const;

  std::shared_ptr<TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily; same length as value
  bool requires_grad = false;
  uint64_t id = 0;  // creation order; reverse order is a valid topo order
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad, accumulates into parents' grads.
  std::function<void(TensorNode&)> backward;
};

// Runs reverse-mode accumulation from a scalar loss. Gradients accumulate
// into every reachable node that requires grad; leaf gradients persist
// across calls until explicitly zeroed.
void backward(const Tensor& loss);

// Named trainable tensor. Names are unique within a ParamSet and double as
// checkpoint keys.
struct Parameter {
  std::string name;
  Tensor tensor;
};

class ParamSet {
 public:
  std::shared_ptr<Parameter> create(const std::string& name, std::vector<int> shape);
  std::shared_ptr<Parameter> find(const std::string& name) const;
  const std::vector<std::shared_ptr<Parameter>>& all() const { return params_; }
  int64_t total_size() const;

 private:
  std::vector<std::shared_ptr<Parameter>> params_;
};

int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace mmg::num
