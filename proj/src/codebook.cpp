#include "mmg/codebook.hpp"

#include <algorithm>
#include <cmath>

#include "mmg/errors.hpp"
#include "mmg/layers.hpp"
#include "mmg/ops.hpp"

namespace mmg {

using num::Tensor;
using num::TensorNode;

Codebook::Codebook(num::ParamSet& ps, const std::string& name, int K, int d, Rng& rng)
    : name_(name), k_(K), d_(d) {
  if (K < 2) throw ConfigError("codebook '" + name + "': K must be >= 2, got " + std::to_string(K));
  emb_ = nn::make_embedding(ps, name + ".embeddings", K, d, rng);
  counts_.assign(K, 0);
}

std::vector<int> Codebook::nearest_indices(const std::vector<double>& rows, int n) const {
  if (static_cast<int>(rows.size()) != n * d_)
    throw DimError("codebook '" + name_ + "': input dim does not match embedding dim " +
                   std::to_string(d_));
  const auto& e = emb_->tensor.values();
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    const double* z = rows.data() + static_cast<size_t>(i) * d_;
    double best = std::numeric_limits<double>::infinity();
    int best_k = 0;
    for (int k = 0; k < k_; ++k) {
      const double* row = e.data() + static_cast<size_t>(k) * d_;
      double dist = 0.0;
      for (int j = 0; j < d_; ++j) {
        const double diff = z[j] - row[j];
        dist += diff * diff;
      }
      if (dist < best) {  // strict: ties keep the lowest index
        best = dist;
        best_k = k;
      }
    }
    out[i] = best_k;
  }
  return out;
}

QuantizeResult Codebook::quantize(const Tensor& z, bool count_activations) {
  if (z.cols() != d_)
    throw DimError("codebook '" + name_ + "': input dim " + std::to_string(z.cols()) +
                   " != embedding dim " + std::to_string(d_));
  const int n = z.rows();
  QuantizeResult res;
  res.indices = nearest_indices(z.values(), n);
  if (count_activations)
    for (int idx : res.indices) ++counts_[idx];

  // Straight-through: forward emits the selected embedding rows, backward
  // copies the incoming gradient to z unchanged. The embeddings learn only
  // through the codebook term.
  {
    std::vector<double> qv(static_cast<size_t>(n) * d_);
    const auto& e = emb_->tensor.values();
    for (int i = 0; i < n; ++i)
      std::copy_n(e.data() + static_cast<size_t>(res.indices[i]) * d_, d_,
                  qv.data() + static_cast<size_t>(i) * d_);
    Tensor out = Tensor::from_data({n, d_}, std::move(qv), z.requires_grad());
    if (z.requires_grad()) {
      out.node()->parents.push_back(z.node());
      out.node()->backward = [](TensorNode& self) {
        auto& p = self.parents[0];
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      };
    }
    res.quantized = out;
  }
  res.commit_term = num::mse(z, res.quantized.detached());
  res.codebook_term = num::mse(num::embedding_lookup(emb_->tensor, res.indices), z.detached());
  return res;
}

int Codebook::reinitialize(double tau, double sigma, Rng& rng, num::Adam* optimizer,
                           int64_t at_step) {
  if (tau < 0.0 || tau > 1.0)
    throw ConfigError("codebook '" + name_ + "': activation threshold must lie in [0,1], got " +
                      std::to_string(tau));
  int64_t total = 0;
  for (int64_t c : counts_) total += c;
  if (total == 0)
    throw DataError("codebook '" + name_ + "': reinitialize called before any quantizer selection");

  const auto report = activation_report();  // descending rates, e^1 ... e^n

  // Snapshot semantics: copy sources are the pre-update embeddings even when
  // the source row itself is below threshold.
  const std::vector<double> snapshot = emb_->tensor.values();
  auto& e = emb_->tensor.values();
  std::vector<int> touched;
  for (int pos = 0; pos < k_; ++pos) {
    if (report[pos].second >= tau) continue;
    const int target = report[pos].first;
    const int source = report[k_ - 1 - pos].first;  // mirrored sorted position
    for (int j = 0; j < d_; ++j)
      e[static_cast<size_t>(target) * d_ + j] =
          snapshot[static_cast<size_t>(source) * d_ + j] + rng.normal(0.0, sigma);
    touched.push_back(target);
  }
  if (optimizer && !touched.empty()) optimizer->reset_rows(emb_->name, touched);
  reset_counts();
  history_.emplace_back(at_step, static_cast<int64_t>(touched.size()));
  return static_cast<int>(touched.size());
}

std::vector<std::pair<int, double>> Codebook::activation_report() const {
  int64_t total = 0;
  for (int64_t c : counts_) total += c;
  std::vector<std::pair<int, double>> out(k_);
  for (int k = 0; k < k_; ++k)
    out[k] = {k, total > 0 ? static_cast<double>(counts_[k]) / static_cast<double>(total) : 0.0};
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

void Codebook::reset_counts() {
  counts_.assign(k_, 0);
  steps_since_reinit_ = 0;
}

void Codebook::set_counters(std::vector<int64_t> counts,
                            std::vector<std::pair<int64_t, int64_t>> history) {
  if (static_cast<int>(counts.size()) != k_)
    throw DataError("codebook '" + name_ + "': counter length mismatch");
  counts_ = std::move(counts);
  history_ = std::move(history);
}

uint64_t Codebook::content_hash() const {
  const auto& v = emb_->tensor.values();
  return fnv1a64(v.data(), v.size() * sizeof(double));
}

}  // namespace mmg
