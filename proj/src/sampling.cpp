#include "mmg/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "mmg/errors.hpp"

namespace mmg {

SamplerKind sampler_from_name(const std::string& name) {
  if (name == "greedy") return SamplerKind::Greedy;
  if (name == "multinomial") return SamplerKind::Multinomial;
  if (name == "semantic") return SamplerKind::SemanticAware;
  throw ConfigError("unknown sampler '" + name + "' (expected greedy|multinomial|semantic)");
}

std::string sampler_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::Greedy: return "greedy";
    case SamplerKind::Multinomial: return "multinomial";
    case SamplerKind::SemanticAware: return "semantic";
  }
  return "?";
}

void SamplerPolicy::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ConfigError("sampler temperature must be finite and positive, got " +
                      std::to_string(temperature));
  if (!(reweight_temperature > 0.0) || !std::isfinite(reweight_temperature))
    throw ConfigError("reweight temperature must be finite and positive, got " +
                      std::to_string(reweight_temperature));
}

Mat pairwise_distances(const Mat& embeddings) {
  const int k = embeddings.rows;
  Mat d(k, k);
  for (int i = 0; i < k; ++i) {
    d.at(i, i) = 0.0;
    for (int j = i + 1; j < k; ++j) {
      double s = 0.0;
      for (int c = 0; c < embeddings.cols; ++c) {
        const double diff = embeddings.at(i, c) - embeddings.at(j, c);
        s += diff * diff;
      }
      const double dist = std::sqrt(s);
      d.at(i, j) = dist;
      d.at(j, i) = dist;
    }
  }
  return d;
}

const Mat& DistanceCache::get(const Mat& embeddings) {
  const uint64_t h = fnv1a64(embeddings.v.data(), embeddings.v.size() * sizeof(double));
  if (h != key_ || dist_.empty()) {
    dist_ = pairwise_distances(embeddings);
    key_ = h;
  }
  return dist_;
}

const Mat& DistanceCache::get(const Codebook& cb) {
  const auto& t = cb.embeddings()->tensor;
  Mat m(t.rows(), t.cols());
  m.v = t.values();
  return get(m);
}

std::vector<double> semantic_weights(int i_star, const Mat& distances, double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw ConfigError("semantic_weights: temperature must be finite and positive");
  const int k = distances.rows;
  if (i_star < 0 || i_star >= k)
    throw DataError("semantic_weights: token " + std::to_string(i_star) + " outside [0," +
                    std::to_string(k) + ")");
  std::vector<double> w(k);
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) mx = std::max(mx, -distances.at(i_star, j) / t);
  double s = 0.0;
  for (int j = 0; j < k; ++j) {
    w[j] = std::exp(-distances.at(i_star, j) / t - mx);
    s += w[j];
  }
  for (auto& x : w) x /= s;
  return w;
}

std::vector<double> semantic_weights(int i_star, const Codebook& cb, double t) {
  const auto& tns = cb.embeddings()->tensor;
  Mat m(tns.rows(), tns.cols());
  m.v = tns.values();
  return semantic_weights(i_star, pairwise_distances(m), t);
}

namespace {

std::vector<double> softmax_vec(const std::vector<double>& logits, double t) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) mx = std::max(mx, x / t);
  if (!std::isfinite(mx)) throw NumericError("sample_next: all logits are -inf");
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] / t - mx);
    s += p[i];
  }
  for (auto& x : p) x /= s;
  return p;
}

int draw(const std::vector<double>& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Guard against accumulated rounding in the cumulative sum.
  for (int i = static_cast<int>(p.size()) - 1; i >= 0; --i)
    if (p[i] > 0.0) return i;
  throw NumericError("sample_next: degenerate distribution");
}

}  // namespace

std::vector<double> sampling_distribution(const std::vector<double>& logits,
                                          const SamplerPolicy& policy,
                                          const Mat& codebook_embeddings, DistanceCache& cache,
                                          const SpecialIds& specials) {
  policy.validate();
  const int k = codebook_embeddings.rows;
  if (static_cast<int>(logits.size()) < k)
    throw DimError("sample_next: logits narrower than the codebook (" +
                   std::to_string(logits.size()) + " < " + std::to_string(k) + ")");
  const int max_special = std::max({specials.bos, specials.eos, specials.pad, -1});
  if (max_special >= static_cast<int>(logits.size()))
    throw DimError("sample_next: special id " + std::to_string(max_special) +
                   " outside the logits width " + std::to_string(logits.size()));
  std::vector<double> p = softmax_vec(logits, policy.temperature);
  if (policy.kind != SamplerKind::SemanticAware) return p;

  // argmax over codebook tokens only
  int i_star = 0;
  for (int j = 1; j < k; ++j)
    if (p[j] > p[i_star]) i_star = j;

  const Mat& dist = cache.get(codebook_embeddings);
  const std::vector<double> w = semantic_weights(i_star, dist, policy.reweight_temperature);

  // Specials keep their softmax probability; the reweighted codebook portion
  // is rescaled to the remaining mass. Zero-probability tokens stay zero.
  double special_mass = 0.0;
  for (size_t j = k; j < p.size(); ++j) special_mass += p[j];
  double reweighted = 0.0;
  std::vector<double> out(p.size(), 0.0);
  for (int j = 0; j < k; ++j) {
    out[j] = p[j] * w[j];
    reweighted += out[j];
  }
  const double target = 1.0 - special_mass;
  if (reweighted > 0.0) {
    const double scale = target / reweighted;
    for (int j = 0; j < k; ++j) out[j] *= scale;
  }
  for (size_t j = k; j < p.size(); ++j) out[j] = p[j];
  return out;
}

int sample_next(const std::vector<double>& logits, const SamplerPolicy& policy,
                const Mat& codebook_embeddings, DistanceCache& cache, const SpecialIds& specials,
                Rng& rng) {
  policy.validate();
  if (policy.kind == SamplerKind::Greedy) {
    bool any_finite = false;
    int best = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
      if (!std::isfinite(logits[i])) continue;
      if (!any_finite || logits[i] > logits[best]) {
        best = static_cast<int>(i);
        any_finite = true;
      }
    }
    if (!any_finite) throw NumericError("sample_next: all logits are -inf");
    return best;
  }
  const std::vector<double> p =
      sampling_distribution(logits, policy, codebook_embeddings, cache, specials);
  return draw(p, rng);
}

}  // namespace mmg
