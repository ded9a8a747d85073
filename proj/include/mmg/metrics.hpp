#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmg/mat.hpp"
#include "mmg/motion.hpp"

namespace mmg {

// Feature vectors keyed by sample id, optionally grouped by condition for
// the multimodality metric. Pair sampling is re-derived from id-sorted order
// so permuting the input never changes a seeded result.
struct FeatureSet {
  std::vector<std::string> ids;
  std::vector<std::string> groups;
  Mat features;  // n x d_f

  void add(const std::string& id, const std::string& group, const std::vector<double>& f);
  int count() const { return features.rows; }
  FeatureSet sorted_by_id() const;
};

// Frechet distance between Gaussian fits:
// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), matrix square root
// via eigendecomposition of the symmetrized product with negative
// eigenvalues clipped at zero. Covariance shrinkage kicks in when a side has
// fewer than d_f + 1 samples.
double fid(const Mat& real_features, const Mat& gen_features);

// Mean Euclidean distance over seeded random pairs; exact all-pairs mean
// when n_pairs covers every unordered pair.
double diversity(const FeatureSet& features, int n_pairs, uint64_t seed);

struct MultimodalityResult {
  double value = 0.0;
  int groups_used = 0;
  int groups_skipped = 0;  // groups with fewer than 2 samples
};
MultimodalityResult multimodality(const FeatureSet& features, int n_pairs_per_group,
                                  uint64_t seed);

// Beat alignment score: mean over music beats of
// exp(-min_m (t_beat - t_m)^2 / (2 sigma_b^2)) where motion beats are local
// minima of the frame-to-frame velocity magnitude.
double beat_alignment(const Mat& torso, int fps, const std::vector<double>& beat_times,
                      double sigma_b = 0.1);

std::vector<double> velocity_magnitude(const Mat& torso);
std::vector<double> motion_beat_times(const Mat& torso, int fps);

// Symmetric PSD square root used by fid(); exposed for tests.
Mat sqrt_psd(const Mat& symmetric);

}  // namespace mmg
