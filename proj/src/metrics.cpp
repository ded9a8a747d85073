#include "mmg/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mmg/errors.hpp"
#include "mmg/rng.hpp"

namespace mmg {

namespace {

using EMat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;

EMat to_eigen(const Mat& m) {
  EMat out(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out(i, j) = m.at(i, j);
  return out;
}

Mat from_eigen(const EMat& m) {
  Mat out(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) = m(i, j);
  return out;
}

EMat sqrt_psd_eigen(const EMat& s) {
  const EMat sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<EMat> solver(sym);
  EVec vals = solver.eigenvalues();
  for (int i = 0; i < vals.size(); ++i) vals(i) = vals(i) > 0.0 ? std::sqrt(vals(i)) : 0.0;
  return solver.eigenvectors() * vals.asDiagonal() * solver.eigenvectors().transpose();
}

void mean_cov(const EMat& x, EVec& mu, EMat& cov) {
  const auto n = x.rows();
  mu = x.colwise().mean();
  const EMat centered = x.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / std::max<Eigen::Index>(1, n - 1);
  // Shrink toward the scaled identity when the sample count cannot support a
  // full-rank covariance.
  if (n < x.cols() + 1) {
    const double scale = cov.trace() / static_cast<double>(x.cols());
    cov = 0.95 * cov + 0.05 * scale * EMat::Identity(x.cols(), x.cols());
  }
}

double euclid(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

double mean_pair_distance(const Mat& f, const std::vector<int>& subset, int n_pairs, Rng& rng) {
  const int n = static_cast<int>(subset.size());
  const int64_t all_pairs = static_cast<int64_t>(n) * (n - 1) / 2;
  double total = 0.0;
  if (n_pairs >= all_pairs) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        total += euclid(f.row(subset[i]), f.row(subset[j]), f.cols);
    return total / static_cast<double>(all_pairs);
  }
  for (int p = 0; p < n_pairs; ++p) {
    const int i = rng.uniform_int(n);
    int j = rng.uniform_int(n - 1);
    if (j >= i) ++j;
    total += euclid(f.row(subset[i]), f.row(subset[j]), f.cols);
  }
  return total / n_pairs;
}

}  // namespace

void FeatureSet::add(const std::string& id, const std::string& group,
                     const std::vector<double>& f) {
  if (features.rows == 0) {
    features = Mat(0, static_cast<int>(f.size()));
  } else if (static_cast<int>(f.size()) != features.cols) {
    throw DimError("feature set: dim " + std::to_string(f.size()) + " != " +
                   std::to_string(features.cols));
  }
  ids.push_back(id);
  groups.push_back(group);
  features.v.insert(features.v.end(), f.begin(), f.end());
  ++features.rows;
}

FeatureSet FeatureSet::sorted_by_id() const {
  std::vector<int> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return ids[a] < ids[b]; });
  FeatureSet out;
  for (int i : order) {
    std::vector<double> row(features.row(i), features.row(i) + features.cols);
    out.add(ids[i], groups[i], row);
  }
  return out;
}

double fid(const Mat& real_features, const Mat& gen_features) {
  if (real_features.cols != gen_features.cols)
    throw DimError("fid: feature dims disagree (" + std::to_string(real_features.cols) + " vs " +
                   std::to_string(gen_features.cols) + ")");
  if (real_features.rows < 2 || gen_features.rows < 2)
    throw DataError("fid: need at least 2 samples per side");
  const EMat xr = to_eigen(real_features);
  const EMat xg = to_eigen(gen_features);
  EVec mu_r, mu_g;
  EMat cov_r, cov_g;
  mean_cov(xr, mu_r, cov_r);
  mean_cov(xg, mu_g, cov_g);

  const EMat a = sqrt_psd_eigen(cov_r);
  const EMat inner = sqrt_psd_eigen(a * cov_g * a);
  const double mean_term = (mu_r - mu_g).squaredNorm();
  const double trace_term = cov_r.trace() + cov_g.trace() - 2.0 * inner.trace();
  const double v = mean_term + trace_term;
  // Negative values can only come from eigenvalue clipping noise.
  return v < 0.0 && v > -1e-9 ? 0.0 : v;
}

Mat sqrt_psd(const Mat& symmetric) { return from_eigen(sqrt_psd_eigen(to_eigen(symmetric))); }

double diversity(const FeatureSet& features, int n_pairs, uint64_t seed) {
  if (features.count() < 2) throw DataError("diversity: need at least 2 samples");
  if (n_pairs <= 0) throw ConfigError("diversity: n_pairs must be positive");
  const FeatureSet sorted = features.sorted_by_id();
  std::vector<int> all(sorted.count());
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  return mean_pair_distance(sorted.features, all, n_pairs, rng);
}

MultimodalityResult multimodality(const FeatureSet& features, int n_pairs_per_group,
                                  uint64_t seed) {
  if (n_pairs_per_group <= 0) throw ConfigError("multimodality: n_pairs must be positive");
  const FeatureSet sorted = features.sorted_by_id();
  std::map<std::string, std::vector<int>> by_group;
  for (int i = 0; i < sorted.count(); ++i) by_group[sorted.groups[i]].push_back(i);
  MultimodalityResult res;
  double total = 0.0;
  for (const auto& [group, subset] : by_group) {
    if (subset.size() < 2) {
      ++res.groups_skipped;
      continue;
    }
    Rng rng(fnv1a64(group.data(), group.size(), seed));
    total += mean_pair_distance(sorted.features, subset, n_pairs_per_group, rng);
    ++res.groups_used;
  }
  if (res.groups_used == 0) throw DataError("multimodality: no group has 2+ samples");
  res.value = total / res.groups_used;
  return res;
}

std::vector<double> velocity_magnitude(const Mat& torso) {
  if (torso.rows < 2) throw DataError("velocity: clip shorter than two frames");
  std::vector<double> v(torso.rows - 1);
  for (int i = 0; i + 1 < torso.rows; ++i) v[i] = euclid(torso.row(i + 1), torso.row(i), torso.cols);
  return v;
}

std::vector<double> motion_beat_times(const Mat& torso, int fps) {
  const auto v = velocity_magnitude(torso);
  std::vector<double> beats;
  for (size_t i = 1; i + 1 < v.size(); ++i)
    if (v[i] < v[i - 1] && v[i] <= v[i + 1])
      beats.push_back((static_cast<double>(i) + 0.5) / fps);
  return beats;
}

double beat_alignment(const Mat& torso, int fps, const std::vector<double>& beat_times,
                      double sigma_b) {
  if (beat_times.empty()) throw DataError("beat alignment: no music beats supplied");
  if (fps <= 0) throw DataError("beat alignment: fps must be positive");
  const auto motion_beats = motion_beat_times(torso, fps);
  if (motion_beats.empty()) return 0.0;
  double score = 0.0;
  for (double tb : beat_times) {
    double best = std::numeric_limits<double>::infinity();
    for (double tm : motion_beats) best = std::min(best, (tb - tm) * (tb - tm));
    score += std::exp(-best / (2.0 * sigma_b * sigma_b));
  }
  return score / static_cast<double>(beat_times.size());
}

}  // namespace mmg
