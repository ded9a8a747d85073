#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmg/codebook.hpp"
#include "mmg/mat.hpp"
#include "mmg/rng.hpp"

namespace mmg {

enum class SamplerKind { Greedy, Multinomial, SemanticAware };

SamplerKind sampler_from_name(const std::string& name);
std::string sampler_name(SamplerKind k);

struct SamplerPolicy {
  SamplerKind kind = SamplerKind::Greedy;
  double temperature = 1.0;         // softmax temperature t_s
  double reweight_temperature = 1.0;  // distance-softmax temperature t_w
  uint64_t seed = 0;

  void validate() const;
};

// Special token slots appended after the K codebook ids.
struct SpecialIds {
  int bos = -1, eos = -1, pad = -1;
  bool is_special(int id) const { return id == bos || id == eos || id == pad; }
};

// Cached K x K Euclidean distances between codebook embeddings, keyed by a
// content hash so codebook updates invalidate it.
class DistanceCache {
 public:
  const Mat& get(const Mat& embeddings);
  const Mat& get(const Codebook& cb);

 private:
  uint64_t key_ = 0;
  Mat dist_;
};

Mat pairwise_distances(const Mat& embeddings);

// Softmax over negative distances from token i_star at temperature t:
// w_j = exp(-d_{i*,j}/t) / sum_j exp(-d_{i*,j}/t). Largest at j = i_star.
std::vector<double> semantic_weights(int i_star, const Mat& distances, double t);
std::vector<double> semantic_weights(int i_star, const Codebook& cb, double t);

// One sampling step over logits of width K (+ specials, if `specials` ids
// are >= 0). Greedy takes the argmax; multinomial draws from
// softmax(logits/t); semantic-aware reweights the codebook portion by the
// distance softmax around the argmax codebook token while special-token
// probabilities are preserved and the codebook mass is rescaled to fit.
int sample_next(const std::vector<double>& logits, const SamplerPolicy& policy,
                const Mat& codebook_embeddings, DistanceCache& cache, const SpecialIds& specials,
                Rng& rng);

// Exact post-reweighting distribution used by sample_next; exposed so tests
// and diagnostics can compare empirical frequencies against it.
std::vector<double> sampling_distribution(const std::vector<double>& logits,
                                          const SamplerPolicy& policy,
                                          const Mat& codebook_embeddings, DistanceCache& cache,
                                          const SpecialIds& specials);

}  // namespace mmg
