#include "mmg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "mmg/errors.hpp"

namespace mmg::num {

namespace {
std::atomic<uint64_t> g_next_id{1};
}

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.assign(shape_size(n->shape), 0.0);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1);
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(data.size()))
    throw DimError("tensor data length " + std::to_string(data.size()) +
                   " does not match shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->value.size()); }

int Tensor::rows() const {
  if (ndim() != 2) throw DimError("expected 2-D tensor, got shape " + shape_str(shape()));
  return node_->shape[0];
}
int Tensor::cols() const {
  if (ndim() != 2) throw DimError("expected 2-D tensor, got shape " + shape_str(shape()));
  return node_->shape[1];
}

const std::vector<double>& Tensor::values() const { return node_->value; }
std::vector<double>& Tensor::values() { return node_->value; }
double Tensor::value_at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
double Tensor::at(int r, int c) const { return node_->value[static_cast<size_t>(r) * cols() + c]; }

bool Tensor::requires_grad() const { return node_->requires_grad; }

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) throw DataError("tensor has no gradient");
  return node_->grad;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

void Tensor::ensure_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detached() const {
  return Tensor::from_data(node_->shape, node_->value, false);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw DimError("backward expects a defined scalar loss");
  if (!loss.requires_grad()) return;

  // Collect reachable grad-requiring nodes; reverse creation order is a
  // valid topological order because ops only consume existing nodes.
  std::vector<TensorNode*> nodes;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });

  for (TensorNode* n : nodes) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->grad[0] += 1.0;

  for (TensorNode* n : nodes) {
    if (n->backward) {
      for (auto& p : n->parents) {
        if (p->requires_grad && p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
      }
      n->backward(*n);
    }
  }
}

std::shared_ptr<Parameter> ParamSet::create(const std::string& name, std::vector<int> shape) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_shared<Parameter>();
  p->name = name;
  p->tensor = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  params_.push_back(p);
  return p;
}

std::shared_ptr<Parameter> ParamSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p;
  return nullptr;
}

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->tensor.size();
  return n;
}

}  // namespace mmg::num
