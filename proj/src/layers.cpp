#include "mmg/layers.hpp"

#include <cmath>

namespace mmg::nn {

void init_normal(Parameter& p, Rng& rng, double stddev) {
  for (auto& v : p.tensor.values()) v = rng.normal(0.0, stddev);
}

Linear::Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng) {
  w = ps.create(name + ".w", {in, out});
  b = ps.create(name + ".b", {1, out});
  init_normal(*w, rng, 1.0 / std::sqrt(static_cast<double>(in)));
}

Tensor Linear::forward(const Tensor& x) const {
  return num::add_row_broadcast(num::matmul(x, w->tensor), b->tensor);
}

LayerNorm::LayerNorm(ParamSet& ps, const std::string& name, int dim) {
  gain = ps.create(name + ".gain", {1, dim});
  bias = ps.create(name + ".bias", {1, dim});
  for (auto& v : gain->tensor.values()) v = 1.0;
}

Tensor LayerNorm::forward(const Tensor& x) const {
  return num::layer_norm(x, gain->tensor, bias->tensor);
}

Conv1d::Conv1d(ParamSet& ps, const std::string& name, int cin, int cout, int k, int stride,
               int pad, Rng& rng)
    : stride(stride), pad(pad) {
  w = ps.create(name + ".w", {cout, cin, k});
  b = ps.create(name + ".b", {1, cout});
  init_normal(*w, rng, 1.0 / std::sqrt(static_cast<double>(cin * k)));
}

Tensor Conv1d::forward(const Tensor& x) const {
  return num::conv1d(x, w->tensor, b->tensor, stride, pad);
}

ConvT1d::ConvT1d(ParamSet& ps, const std::string& name, int cin, int cout, int k, int stride,
                 int pad, Rng& rng)
    : stride(stride), pad(pad) {
  w = ps.create(name + ".w", {cin, cout, k});
  b = ps.create(name + ".b", {1, cout});
  init_normal(*w, rng, 1.0 / std::sqrt(static_cast<double>(cin * k)));
}

Tensor ConvT1d::forward(const Tensor& x) const {
  return num::conv1d_transpose(x, w->tensor, b->tensor, stride, pad);
}

ResBlock1d::ResBlock1d(ParamSet& ps, const std::string& name, int channels, Rng& rng)
    : c1(ps, name + ".c1", channels, channels, 3, 1, 1, rng),
      c2(ps, name + ".c2", channels, channels, 3, 1, 1, rng) {}

Tensor ResBlock1d::forward(const Tensor& x) const {
  return num::add(x, c2.forward(num::relu(c1.forward(num::relu(x)))));
}

std::shared_ptr<Parameter> make_embedding(ParamSet& ps, const std::string& name, int count,
                                          int dim, Rng& rng) {
  auto p = ps.create(name, {count, dim});
  init_normal(*p, rng, 0.02);
  return p;
}

}  // namespace mmg::nn
