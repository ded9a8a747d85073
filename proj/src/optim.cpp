#include "mmg/optim.hpp"

#include <cmath>

#include "mmg/errors.hpp"

namespace mmg::num {

Adam::Adam(std::vector<std::shared_ptr<Parameter>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->tensor.size(), 0.0);
    v_[i].assign(params_[i]->tensor.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->tensor.zero_grad();
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (!p.tensor.has_grad())
      throw DataError("adam: parameter '" + p.name + "' has no gradient; run backward first");
    const auto& g = p.tensor.grad();
    auto& val = p.tensor.values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < val.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::reset_rows(const std::string& param_name, const std::vector<int>& rows) {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i]->name != param_name) continue;
    const auto& shape = params_[i]->tensor.shape();
    if (shape.size() != 2) throw DimError("adam reset_rows: parameter must be 2-D");
    const int d = shape[1];
    for (int r : rows) {
      for (int j = 0; j < d; ++j) {
        m_[i][static_cast<size_t>(r) * d + j] = 0.0;
        v_[i][static_cast<size_t>(r) * d + j] = 0.0;
      }
    }
    return;
  }
  throw ConfigError("adam reset_rows: unknown parameter '" + param_name + "'");
}

}  // namespace mmg::num
