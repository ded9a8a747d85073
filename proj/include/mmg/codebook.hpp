#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mmg/optim.hpp"
#include "mmg/rng.hpp"
#include "mmg/tensor.hpp"

namespace mmg {

struct QuantizeResult {
  std::vector<int> indices;   // nearest embedding per input row
  num::Tensor quantized;      // T' x d; straight-through to the input
  num::Tensor commit_term;    // mean ||z - sg[z_q]||^2, gradient to the encoder
  num::Tensor codebook_term;  // mean ||sg[z] - z_q||^2, gradient to the embeddings
};

// Learned K x d embedding table with activation telemetry. Selection is
// nearest squared-Euclidean row, ties broken by lowest index.
class Codebook {
 public:
  Codebook(num::ParamSet& ps, const std::string& name, int K, int d, Rng& rng);

  int size() const { return k_; }
  int dim() const { return d_; }
  const std::string& name() const { return name_; }

  // count_activations: training-mode selection increments the counters;
  // inference-mode quantization leaves the telemetry untouched.
  QuantizeResult quantize(const num::Tensor& z, bool count_activations = true);

  // Nearest-row indices only (no tape, no counting). `rows` holds n
  // contiguous d-dim vectors.
  std::vector<int> nearest_indices(const std::vector<double>& rows, int n) const;

  // Activation-rate-sorted re-initialization: rates sorted descending, every
  // sorted position k below the threshold is overwritten by the snapshot
  // embedding at the mirrored sorted position plus N(0, sigma^2) noise.
  // Counters reset; optimizer moments for overwritten rows reset when an
  // optimizer is supplied. Returns the number of re-initialized tokens.
  int reinitialize(double tau, double sigma, Rng& rng, num::Adam* optimizer = nullptr,
                   int64_t at_step = -1);

  // Descending (token, rate) pairs; stable by token index on equal rates.
  std::vector<std::pair<int, double>> activation_report() const;

  void note_step() { ++steps_since_reinit_; }
  int64_t steps_since_reinit() const { return steps_since_reinit_; }
  const std::vector<int64_t>& activation_counts() const { return counts_; }
  void reset_counts();
  const std::vector<std::pair<int64_t, int64_t>>& reinit_history() const { return history_; }
  void set_counters(std::vector<int64_t> counts, std::vector<std::pair<int64_t, int64_t>> history);

  std::shared_ptr<num::Parameter> embeddings() { return emb_; }
  const std::shared_ptr<num::Parameter>& embeddings() const { return emb_; }
  uint64_t content_hash() const;

 private:
  std::string name_;
  int k_ = 0, d_ = 0;
  std::shared_ptr<num::Parameter> emb_;
  std::vector<int64_t> counts_;
  int64_t steps_since_reinit_ = 0;
  std::vector<std::pair<int64_t, int64_t>> history_;  // (step, reinit count)
};

}  // namespace mmg
