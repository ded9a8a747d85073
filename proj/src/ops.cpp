#include "mmg/ops.hpp"

#include <Eigen/Core>
#include <atomic>
#include <cmath>
#include <cstring>

#include "mmg/errors.hpp"

namespace mmg::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

// Builds a tape node. Parents and the backward closure are only retained
// when some parent requires grad; otherwise the result is a plain constant.
Tensor make_node(std::vector<int> shape, std::vector<double> value,
                 std::vector<Tensor> parents,
                 std::function<void(TensorNode&)> bw) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  Tensor out = Tensor::from_data(std::move(shape), std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(bw);
  }
  return out;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

}  // namespace

AttnMask AttnMask::causal(int t) {
  AttnMask m;
  m.tq = m.tk = t;
  m.keep.assign(static_cast<size_t>(t) * t, 0);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j <= i; ++j) m.keep[static_cast<size_t>(i) * t + j] = 1;
  return m;
}

AttnMask AttnMask::full(int tq, int tk) {
  AttnMask m;
  m.tq = tq;
  m.tk = tk;
  m.keep.assign(static_cast<size_t>(tq) * tk, 1);
  return m;
}

AttnMask AttnMask::key_padding(int tq, const std::vector<uint8_t>& key_valid) {
  AttnMask m;
  m.tq = tq;
  m.tk = static_cast<int>(key_valid.size());
  m.keep.resize(static_cast<size_t>(tq) * m.tk);
  for (int i = 0; i < tq; ++i)
    for (int j = 0; j < m.tk; ++j) m.keep[static_cast<size_t>(i) * m.tk + j] = key_valid[j];
  return m;
}

AttnMask AttnMask::causal_with_padding(const std::vector<uint8_t>& valid) {
  const int t = static_cast<int>(valid.size());
  AttnMask m = causal(t);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j)
      if (!valid[j]) m.keep[static_cast<size_t>(i) * t + j] = 0;
  return m;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  return make_node(a.shape(), std::move(v), {a, b}, [](TensorNode& self) {
    for (int side = 0; side < 2; ++side) {
      auto& p = self.parents[side];
      if (!p->requires_grad) continue;
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  return make_node(a.shape(), std::move(v), {a, b}, [](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    if (pb->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  return make_node(a.shape(), std::move(v), {a, b}, [](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
    if (pb->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (auto& x : v) x += c;
  return make_node(a.shape(), std::move(v), {a}, [](TensorNode& self) {
    auto& p = self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (auto& x : v) x *= c;
  return make_node(a.shape(), std::move(v), {a}, [c](TensorNode& self) {
    auto& p = self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += c * self.grad[i];
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_size(shape) != a.size())
    throw DimError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return make_node(std::move(shape), a.values(), {a}, [](TensorNode& self) {
    auto& p = self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> v(static_cast<size_t>(r) * c);
  const auto& av = a.values();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) v[static_cast<size_t>(j) * r + i] = av[static_cast<size_t>(i) * c + j];
  return make_node({c, r}, std::move(v), {a}, [r, c](TensorNode& self) {
    auto& p = self.parents[0];
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        p->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
  });
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  const int r = a.rows(), c = a.cols();
  if (r0 < 0 || r1 > r || r0 >= r1)
    throw DimError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                   ") invalid for " + shape_str(a.shape()));
  std::vector<double> v(a.values().begin() + static_cast<size_t>(r0) * c,
                        a.values().begin() + static_cast<size_t>(r1) * c);
  return make_node({r1 - r0, c}, std::move(v), {a}, [r0, c](TensorNode& self) {
    auto& p = self.parents[0];
    const size_t off = static_cast<size_t>(r0) * c;
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[off + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  const int r = a.rows(), c = a.cols();
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw DimError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                   ") invalid for " + shape_str(a.shape()));
  const int w = c1 - c0;
  std::vector<double> v(static_cast<size_t>(r) * w);
  const auto& av = a.values();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j) v[static_cast<size_t>(i) * w + j] = av[static_cast<size_t>(i) * c + c0 + j];
  return make_node({r, w}, std::move(v), {a}, [r, c, c0, w](TensorNode& self) {
    auto& p = self.parents[0];
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        p->grad[static_cast<size_t>(i) * c + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimError("concat_rows: empty input");
  const int c = parts[0].cols();
  int r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw DimError("concat_rows: column mismatch " + shape_str(p.shape()));
    r += p.rows();
  }
  std::vector<double> v;
  v.reserve(static_cast<size_t>(r) * c);
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  std::vector<Tensor> parents(parts);
  return make_node({r, c}, std::move(v), std::move(parents), [](TensorNode& self) {
    size_t off = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad)
        for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self.grad[off + i];
      off += p->value.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimError("concat_cols: empty input");
  const int r = parts[0].rows();
  int c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimError("concat_cols: row mismatch " + shape_str(p.shape()));
    c += p.cols();
  }
  std::vector<double> v(static_cast<size_t>(r) * c);
  int coff = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        v[static_cast<size_t>(i) * c + coff + j] = p.values()[static_cast<size_t>(i) * w + j];
    coff += w;
  }
  std::vector<Tensor> parents(parts);
  return make_node({r, c}, std::move(v), std::move(parents), [r, c](TensorNode& self) {
    int coff = 0;
    for (auto& p : self.parents) {
      const int w = p->shape[1];
      if (p->requires_grad)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < w; ++j)
            p->grad[static_cast<size_t>(i) * w + j] +=
                self.grad[static_cast<size_t>(i) * c + coff + j];
      coff += w;
    }
  });
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
  const int r = a.rows(), c = a.cols();
  if (row.size() != c)
    throw DimError("add_row_broadcast: row length " + shape_str(row.shape()) +
                   " does not match " + shape_str(a.shape()));
  std::vector<double> v(a.values());
  const auto& rv = row.values();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) v[static_cast<size_t>(i) * c + j] += rv[j];
  return make_node({r, c}, std::move(v), {a, row}, [r, c](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pr = self.parents[1];
    if (pa->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    if (pr->requires_grad)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pr->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_node({1}, {s}, {a}, [](TensorNode& self) {
    auto& p = self.parents[0];
    for (auto& g : p->grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_node({1}, {s / n}, {a}, [n](TensorNode& self) {
    auto& p = self.parents[0];
    const double g = self.grad[0] / n;
    for (auto& pg : p->grad) pg += g;
  });
}

Tensor mean_rows(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> v(c, 0.0);
  const auto& av = a.values();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) v[j] += av[static_cast<size_t>(i) * c + j];
  for (auto& x : v) x /= r;
  return make_node({1, c}, std::move(v), {a}, [r, c](TensorNode& self) {
    auto& p = self.parents[0];
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) p->grad[static_cast<size_t>(i) * c + j] += self.grad[j] / r;
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> v(a.values());
  for (auto& x : v) x = x > 0.0 ? x : 0.0;
  return make_node(a.shape(), std::move(v), {a}, [](TensorNode& self) {
    auto& p = self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (p->value[i] > 0.0) p->grad[i] += self.grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> v(a.values());
  for (auto& x : v) {
    const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    x = 0.5 * x * (1.0 + t);
  }
  return make_node(a.shape(), std::move(v), {a}, [](TensorNode& self) {
    auto& p = self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = p->value[i];
      const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
      const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
      p->grad[i] += self.grad[i] * d;
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int m = a.rows(), k = a.cols();
  const int k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw DimError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
  std::vector<double> v(static_cast<size_t>(m) * n);
  {
    MapConst A(a.values().data(), m, k);
    MapConst B(b.values().data(), k, n);
    MapMat C(v.data(), m, n);
    C.noalias() = A * B;
  }
  return make_node({m, n}, std::move(v), {a, b}, [m, k, n](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    MapConst G(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MapConst B(pb->value.data(), k, n);
      MapMat dA(pa->grad.data(), m, k);
      dA.noalias() += G * B.transpose();
    }
    if (pb->requires_grad) {
      MapConst A(pa->value.data(), m, k);
      MapMat dB(pb->grad.data(), k, n);
      dB.noalias() += A.transpose() * G;
    }
  });
}

namespace {

Tensor softmax_rows_impl(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> v(a.values());
  for (double x : v)
    if (std::isnan(x)) throw NumericError("softmax: NaN input");
  for (int i = 0; i < r; ++i) {
    double* row = v.data() + static_cast<size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int j = 0; j < c; ++j) row[j] /= s;
  }
  return make_node({r, c}, std::move(v), {a}, [r, c](TensorNode& self) {
    auto& p = self.parents[0];
    for (int i = 0; i < r; ++i) {
      const double* y = self.value.data() + static_cast<size_t>(i) * c;
      const double* g = self.grad.data() + static_cast<size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g[j] * y[j];
      double* pg = p->grad.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) pg[j] += y[j] * (g[j] - dot);
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  if (a.ndim() == 1) return reshape(softmax_rows_impl(reshape(a, {1, a.shape()[0]})), a.shape());
  if (axis == 1) return softmax_rows_impl(a);
  if (axis == 0) return transpose(softmax_rows_impl(transpose(a)));
  throw DimError("softmax: axis must be 0 or 1");
}

Tensor softmax_rows_masked(const Tensor& a, const AttnMask& mask) {
  const int r = a.rows(), c = a.cols();
  if (mask.tq != r || mask.tk != c)
    throw DimError("mask " + std::to_string(mask.tq) + "x" + std::to_string(mask.tk) +
                   " does not match scores " + shape_str(a.shape()));
  std::vector<double> v(static_cast<size_t>(r) * c, 0.0);
  const auto& av = a.values();
  for (int i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (mask.at(i, j)) {
        const double x = av[static_cast<size_t>(i) * c + j];
        if (std::isnan(x)) throw NumericError("softmax: NaN input");
        mx = std::max(mx, x);
      }
    if (!std::isfinite(mx)) throw NumericError("softmax: fully masked row " + std::to_string(i));
    double s = 0.0;
    for (int j = 0; j < c; ++j)
      if (mask.at(i, j)) {
        const double e = std::exp(av[static_cast<size_t>(i) * c + j] - mx);
        v[static_cast<size_t>(i) * c + j] = e;
        s += e;
      }
    for (int j = 0; j < c; ++j)
      if (mask.at(i, j)) v[static_cast<size_t>(i) * c + j] /= s;
  }
  AttnMask m = mask;
  return make_node({r, c}, std::move(v), {a}, [r, c, m](TensorNode& self) {
    auto& p = self.parents[0];
    for (int i = 0; i < r; ++i) {
      const double* y = self.value.data() + static_cast<size_t>(i) * c;
      const double* g = self.grad.data() + static_cast<size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j)
        if (m.at(i, j)) dot += g[j] * y[j];
      double* pg = p->grad.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j)
        if (m.at(i, j)) pg[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c)
    throw DimError("layer_norm: gain/bias length must equal " + std::to_string(c));
  std::vector<double> v(static_cast<size_t>(r) * c);
  std::vector<double> xhat(static_cast<size_t>(r) * c);
  std::vector<double> inv_sigma(r);
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  for (int i = 0; i < r; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < c; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat[static_cast<size_t>(i) * c + j] = xh;
      v[static_cast<size_t>(i) * c + j] = xh * gv[j] + bv[j];
    }
  }
  return make_node({r, c}, std::move(v), {x, gain, bias},
                   [r, c, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](TensorNode& self) {
                     auto& px = self.parents[0];
                     auto& pg = self.parents[1];
                     auto& pb = self.parents[2];
                     const auto& gv = pg->value;
                     for (int i = 0; i < r; ++i) {
                       const double* g = self.grad.data() + static_cast<size_t>(i) * c;
                       const double* xh = xhat.data() + static_cast<size_t>(i) * c;
                       if (pg->requires_grad)
                         for (int j = 0; j < c; ++j) pg->grad[j] += g[j] * xh[j];
                       if (pb->requires_grad)
                         for (int j = 0; j < c; ++j) pb->grad[j] += g[j];
                       if (px->requires_grad) {
                         double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                         for (int j = 0; j < c; ++j) {
                           const double dxh = g[j] * gv[j];
                           mean_dxhat += dxh;
                           mean_dxhat_xhat += dxh * xh[j];
                         }
                         mean_dxhat /= c;
                         mean_dxhat_xhat /= c;
                         double* pxg = px->grad.data() + static_cast<size_t>(i) * c;
                         for (int j = 0; j < c; ++j) {
                           const double dxh = g[j] * gv[j];
                           pxg[j] += inv_sigma[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                         }
                       }
                     }
                   });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  const int r = x.rows(), c = x.cols();
  std::vector<double> v(static_cast<size_t>(r) * c);
  std::vector<double> norms(r);
  const auto& xv = x.values();
  for (int i = 0; i < r; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * c;
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += row[j] * row[j];
    const double n = std::sqrt(s + eps);
    norms[i] = n;
    for (int j = 0; j < c; ++j) v[static_cast<size_t>(i) * c + j] = row[j] / n;
  }
  return make_node({r, c}, std::move(v), {x}, [r, c, norms = std::move(norms)](TensorNode& self) {
    auto& p = self.parents[0];
    for (int i = 0; i < r; ++i) {
      const double* g = self.grad.data() + static_cast<size_t>(i) * c;
      const double* xv2 = p->value.data() + static_cast<size_t>(i) * c;
      const double n = norms[i];
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g[j] * xv2[j];
      double* pg = p->grad.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) pg[j] += g[j] / n - xv2[j] * dot / (n * n * n);
    }
  });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& indices) {
  const int k = table.rows(), d = table.cols();
  const int t = static_cast<int>(indices.size());
  std::vector<double> v(static_cast<size_t>(t) * d);
  const auto& tv = table.values();
  for (int i = 0; i < t; ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= k)
      throw DataError("embedding_lookup: index " + std::to_string(idx) + " out of range [0," +
                      std::to_string(k) + ")");
    std::memcpy(v.data() + static_cast<size_t>(i) * d, tv.data() + static_cast<size_t>(idx) * d,
                sizeof(double) * d);
  }
  auto idx_copy = indices;
  return make_node({t, d}, std::move(v), {table}, [d, idx_copy = std::move(idx_copy)](TensorNode& self) {
    auto& p = self.parents[0];
    for (size_t i = 0; i < idx_copy.size(); ++i) {
      const size_t src = i * d;
      const size_t dst = static_cast<size_t>(idx_copy[i]) * d;
      for (int j = 0; j < d; ++j) p->grad[dst + j] += self.grad[src + j];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
  const int t = logits.rows(), vsz = logits.cols();
  if (static_cast<int>(targets.size()) != t)
    throw DimError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                   std::to_string(t) + " rows");
  const auto& lv = logits.values();
  std::vector<double> probs(static_cast<size_t>(t) * vsz, 0.0);
  double loss = 0.0;
  int counted = 0;
  for (int i = 0; i < t; ++i) {
    const int y = targets[i];
    if (y == ignore_index) continue;
    if (y < 0 || y >= vsz)
      throw DataError("cross_entropy: target " + std::to_string(y) + " out of range [0," +
                      std::to_string(vsz) + ")");
    const double* row = lv.data() + static_cast<size_t>(i) * vsz;
    double mx = row[0];
    for (int j = 1; j < vsz; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < vsz; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    loss += lse - row[y];
    double* pr = probs.data() + static_cast<size_t>(i) * vsz;
    for (int j = 0; j < vsz; ++j) pr[j] = std::exp(row[j] - lse);
    ++counted;
  }
  if (counted == 0) throw DataError("cross_entropy: every target equals the ignore index");
  loss /= counted;
  auto tgt = targets;
  return make_node({1}, {loss}, {logits},
                   [t, vsz, counted, ignore_index, probs = std::move(probs),
                    tgt = std::move(tgt)](TensorNode& self) {
                     auto& p = self.parents[0];
                     const double g = self.grad[0] / counted;
                     for (int i = 0; i < t; ++i) {
                       if (tgt[i] == ignore_index) continue;
                       const double* pr = probs.data() + static_cast<size_t>(i) * vsz;
                       double* pg = p->grad.data() + static_cast<size_t>(i) * vsz;
                       for (int j = 0; j < vsz; ++j) pg[j] += g * (pr[j] - (j == tgt[i] ? 1.0 : 0.0));
                     }
                   });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  const auto& av = a.values();
  const auto& bv = b.values();
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  return make_node({1}, {s / n}, {a, b}, [n](TensorNode& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const double g = 2.0 * self.grad[0] / n;
    for (size_t i = 0; i < pa->value.size(); ++i) {
      const double d = pa->value[i] - pb->value[i];
      if (pa->requires_grad) pa->grad[i] += g * d;
      if (pb->requires_grad) pb->grad[i] -= g * d;
    }
  });
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "cosine_rows");
  const int r = a.rows(), c = a.cols();
  std::vector<double> v(r);
  std::vector<double> na(r), nb(r);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < r; ++i) {
    const double* x = av.data() + static_cast<size_t>(i) * c;
    const double* y = bv.data() + static_cast<size_t>(i) * c;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int j = 0; j < c; ++j) {
      sxx += x[j] * x[j];
      syy += y[j] * y[j];
      sxy += x[j] * y[j];
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("cosine_rows: zero vector at row " + std::to_string(i));
    na[i] = std::sqrt(sxx);
    nb[i] = std::sqrt(syy);
    v[i] = sxy / (na[i] * nb[i]);
  }
  return make_node({r, 1}, std::move(v), {a, b},
                   [r, c, na = std::move(na), nb = std::move(nb)](TensorNode& self) {
                     auto& pa = self.parents[0];
                     auto& pb = self.parents[1];
                     for (int i = 0; i < r; ++i) {
                       const double g = self.grad[i];
                       const double cval = self.value[i];
                       const double* x = pa->value.data() + static_cast<size_t>(i) * c;
                       const double* y = pb->value.data() + static_cast<size_t>(i) * c;
                       for (int j = 0; j < c; ++j) {
                         if (pa->requires_grad)
                           pa->grad[static_cast<size_t>(i) * c + j] +=
                               g * (y[j] / (na[i] * nb[i]) - cval * x[j] / (na[i] * na[i]));
                         if (pb->requires_grad)
                           pb->grad[static_cast<size_t>(i) * c + j] +=
                               g * (x[j] / (na[i] * nb[i]) - cval * y[j] / (nb[i] * nb[i]));
                       }
                     }
                   });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  if (w.ndim() != 3) throw DimError("conv1d: weight must be [C_out][C_in][k]");
  const int t = x.rows(), cin = x.cols();
  const int cout = w.shape()[0], wcin = w.shape()[1], k = w.shape()[2];
  if (wcin != cin)
    throw DimError("conv1d: input channels " + std::to_string(cin) + " vs weight " +
                   std::to_string(wcin));
  if (bias.size() != cout) throw DimError("conv1d: bias length must equal C_out");
  const int tout = (t + 2 * pad - k) / stride + 1;
  if (tout <= 0) throw DimError("conv1d: output length would be nonpositive");
  std::vector<double> v(static_cast<size_t>(tout) * cout);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = bias.values();
  for (int to = 0; to < tout; ++to) {
    for (int o = 0; o < cout; ++o) {
      double s = bv[o];
      for (int j = 0; j < k; ++j) {
        const int ti = to * stride - pad + j;
        if (ti < 0 || ti >= t) continue;
        const double* xr = xv.data() + static_cast<size_t>(ti) * cin;
        const double* wr = wv.data() + (static_cast<size_t>(o) * cin) * k + j;
        for (int c = 0; c < cin; ++c) s += xr[c] * wr[static_cast<size_t>(c) * k];
      }
      v[static_cast<size_t>(to) * cout + o] = s;
    }
  }
  return make_node({tout, cout}, std::move(v), {x, w, bias},
                   [t, cin, cout, k, stride, pad, tout](TensorNode& self) {
                     auto& px = self.parents[0];
                     auto& pw = self.parents[1];
                     auto& pb = self.parents[2];
                     for (int to = 0; to < tout; ++to) {
                       const double* g = self.grad.data() + static_cast<size_t>(to) * cout;
                       for (int o = 0; o < cout; ++o) {
                         const double go = g[o];
                         if (go == 0.0) continue;
                         if (pb->requires_grad) pb->grad[o] += go;
                         for (int j = 0; j < k; ++j) {
                           const int ti = to * stride - pad + j;
                           if (ti < 0 || ti >= t) continue;
                           for (int c = 0; c < cin; ++c) {
                             const size_t wi = (static_cast<size_t>(o) * cin + c) * k + j;
                             const size_t xi = static_cast<size_t>(ti) * cin + c;
                             if (pw->requires_grad) pw->grad[wi] += go * px->value[xi];
                             if (px->requires_grad) px->grad[xi] += go * pw->value[wi];
                           }
                         }
                       }
                     }
                   });
}

Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  if (w.ndim() != 3) throw DimError("conv1d_transpose: weight must be [C_in][C_out][k]");
  const int t = x.rows(), cin = x.cols();
  const int wcin = w.shape()[0], cout = w.shape()[1], k = w.shape()[2];
  if (wcin != cin)
    throw DimError("conv1d_transpose: input channels " + std::to_string(cin) + " vs weight " +
                   std::to_string(wcin));
  if (bias.size() != cout) throw DimError("conv1d_transpose: bias length must equal C_out");
  const int tout = (t - 1) * stride - 2 * pad + k;
  if (tout <= 0) throw DimError("conv1d_transpose: output length would be nonpositive");
  std::vector<double> v(static_cast<size_t>(tout) * cout);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = bias.values();
  for (int to = 0; to < tout; ++to)
    for (int o = 0; o < cout; ++o) v[static_cast<size_t>(to) * cout + o] = bv[o];
  for (int ti = 0; ti < t; ++ti) {
    const double* xr = xv.data() + static_cast<size_t>(ti) * cin;
    for (int j = 0; j < k; ++j) {
      const int to = ti * stride - pad + j;
      if (to < 0 || to >= tout) continue;
      double* vr = v.data() + static_cast<size_t>(to) * cout;
      for (int c = 0; c < cin; ++c) {
        const double xval = xr[c];
        if (xval == 0.0) continue;
        const double* wr = wv.data() + (static_cast<size_t>(c) * cout) * k + j;
        for (int o = 0; o < cout; ++o) vr[o] += xval * wr[static_cast<size_t>(o) * k];
      }
    }
  }
  return make_node({tout, cout}, std::move(v), {x, w, bias},
                   [t, cin, cout, k, stride, pad, tout](TensorNode& self) {
                     auto& px = self.parents[0];
                     auto& pw = self.parents[1];
                     auto& pb = self.parents[2];
                     if (pb->requires_grad) {
                       for (int to = 0; to < tout; ++to)
                         for (int o = 0; o < cout; ++o)
                           pb->grad[o] += self.grad[static_cast<size_t>(to) * cout + o];
                     }
                     for (int ti = 0; ti < t; ++ti) {
                       for (int j = 0; j < k; ++j) {
                         const int to = ti * stride - pad + j;
                         if (to < 0 || to >= tout) continue;
                         const double* g = self.grad.data() + static_cast<size_t>(to) * cout;
                         for (int c = 0; c < cin; ++c) {
                           const size_t xi = static_cast<size_t>(ti) * cin + c;
                           for (int o = 0; o < cout; ++o) {
                             const size_t wi = (static_cast<size_t>(c) * cout + o) * k + j;
                             if (pw->requires_grad) pw->grad[wi] += g[o] * px->value[xi];
                             if (px->requires_grad) px->grad[xi] += g[o] * pw->value[wi];
                           }
                         }
                       }
                     }
                   });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask* mask) {
  if (q.cols() != k.cols())
    throw DimError("attention: query dim " + shape_str(q.shape()) + " vs key dim " +
                   shape_str(k.shape()));
  if (k.rows() != v.rows())
    throw DimError("attention: key count " + shape_str(k.shape()) + " vs value count " +
                   shape_str(v.shape()));
  Tensor scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  Tensor probs;
  if (mask) {
    if (mask->tq != q.rows() || mask->tk != k.rows())
      throw DimError("attention mask " + std::to_string(mask->tq) + "x" + std::to_string(mask->tk) +
                     " does not match scores " + shape_str(scores.shape()));
    probs = softmax_rows_masked(scores, *mask);
  } else {
    probs = softmax(scores, 1);
  }
  return matmul(probs, v);
}

Tensor integrate_prefix_columns(const Tensor& x, const std::vector<double>& origin, int n_cols) {
  const int t = x.rows(), c = x.cols();
  if (static_cast<int>(origin.size()) != n_cols)
    throw DimError("integrate_prefix_columns: origin length " + std::to_string(origin.size()) +
                   " != " + std::to_string(n_cols));
  if (n_cols > c) throw DimError("integrate_prefix_columns: n_cols exceeds width");
  std::vector<double> v(x.values());
  for (int j = 0; j < n_cols; ++j) {
    double acc = origin[j];
    for (int i = 0; i < t; ++i) {
      acc += v[static_cast<size_t>(i) * c + j];
      v[static_cast<size_t>(i) * c + j] = acc;
    }
  }
  return make_node({t, c}, std::move(v), {x}, [t, c, n_cols](TensorNode& self) {
    auto& p = self.parents[0];
    for (int j = 0; j < c; ++j) {
      if (j < n_cols) {
        double acc = 0.0;
        for (int i = t - 1; i >= 0; --i) {
          acc += self.grad[static_cast<size_t>(i) * c + j];
          p->grad[static_cast<size_t>(i) * c + j] += acc;
        }
      } else {
        for (int i = 0; i < t; ++i)
          p->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(i) * c + j];
      }
    }
  });
}

Tensor stop_gradient(const Tensor& a) { return a.detached(); }

}  // namespace mmg::num
