#pragma once

#include <memory>
#include <string>

#include "mmg/ops.hpp"
#include "mmg/rng.hpp"
#include "mmg/tensor.hpp"

namespace mmg::nn {

using num::ParamSet;
using num::Parameter;
using num::Tensor;

// Weight init: affine/conv ~ N(0, 1/fan_in), embeddings ~ N(0, 0.02^2),
// biases zero. Recorded here once rather than per call site.
void init_normal(Parameter& p, Rng& rng, double stddev);

struct Linear {
  std::shared_ptr<Parameter> w, b;
  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
  std::shared_ptr<Parameter> gain, bias;
  LayerNorm() = default;
  LayerNorm(ParamSet& ps, const std::string& name, int dim);
  Tensor forward(const Tensor& x) const;
};

struct Conv1d {
  std::shared_ptr<Parameter> w, b;
  int stride = 1, pad = 0;
  Conv1d() = default;
  Conv1d(ParamSet& ps, const std::string& name, int cin, int cout, int k, int stride, int pad,
         Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct ConvT1d {
  std::shared_ptr<Parameter> w, b;
  int stride = 1, pad = 0;
  ConvT1d() = default;
  ConvT1d(ParamSet& ps, const std::string& name, int cin, int cout, int k, int stride, int pad,
          Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// Length-preserving residual block: x + conv(relu(conv(relu(x)))).
struct ResBlock1d {
  Conv1d c1, c2;
  ResBlock1d() = default;
  ResBlock1d(ParamSet& ps, const std::string& name, int channels, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

std::shared_ptr<Parameter> make_embedding(ParamSet& ps, const std::string& name, int count,
                                          int dim, Rng& rng);

}  // namespace mmg::nn
