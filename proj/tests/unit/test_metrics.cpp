#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmg/errors.hpp"
#include "mmg/metrics.hpp"
#include "mmg/rng.hpp"
#include "mmg/synth.hpp"

using namespace mmg;

namespace {

Mat gaussian_features(int n, int d, double mean_shift, uint64_t seed) {
  Rng rng(seed);
  Mat m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m.at(i, j) = rng.normal(mean_shift, 1.0);
  return m;
}

}  // namespace

TEST_CASE("fid of identical sets is zero") {
  const Mat x = gaussian_features(200, 6, 0.0, 1);
  CHECK(std::abs(fid(x, x)) < 1e-6);
}

TEST_CASE("fid of offset gaussians matches the closed form") {
  const double delta = 1.5;
  const Mat a = gaussian_features(10000, 8, 0.0, 2);
  const Mat b = gaussian_features(10000, 8, delta, 3);
  const double expected = 8 * delta * delta;  // ||mu_r - mu_g||^2, equal covariances
  const double got = fid(a, b);
  CHECK(std::abs(got - expected) / expected < 0.05);
}

TEST_CASE("fid ordering: matched distribution beats noise") {
  const Mat real_a = gaussian_features(400, 6, 0.0, 4);
  const Mat real_b = gaussian_features(400, 6, 0.0, 5);
  Rng rng(6);
  Mat noise(400, 6);
  for (auto& v : noise.v) v = 4.0 * rng.uniform() - 2.0 + 3.0;  // shifted uniform
  CHECK(fid(real_a, real_b) < fid(real_a, noise));
}

TEST_CASE("fid is symmetric and validates dimensions") {
  const Mat a = gaussian_features(300, 5, 0.0, 7);
  const Mat b = gaussian_features(300, 5, 0.7, 8);
  CHECK(std::abs(fid(a, b) - fid(b, a)) < 1e-8);
  const Mat c = gaussian_features(300, 4, 0.0, 9);
  CHECK_THROWS_AS(fid(a, c), DimError);
}

TEST_CASE("fid applies shrinkage under rank deficiency") {
  // fewer samples than dimensions + 1: still finite and >= 0
  const Mat a = gaussian_features(5, 8, 0.0, 10);
  const Mat b = gaussian_features(5, 8, 1.0, 11);
  const double v = fid(a, b);
  CHECK(std::isfinite(v));
  CHECK(v >= 0.0);
}

TEST_CASE("sqrt_psd: diagonal case and reconstruction") {
  Mat d(3, 3);
  d.at(0, 0) = 4.0;
  d.at(1, 1) = 9.0;
  d.at(2, 2) = 0.25;
  const Mat s = sqrt_psd(d);
  CHECK(s.at(0, 0) == doctest::Approx(2.0));
  CHECK(s.at(1, 1) == doctest::Approx(3.0));
  CHECK(s.at(2, 2) == doctest::Approx(0.5));

  // random PSD: sqrt squared recovers the input
  Rng rng(12);
  Mat g(4, 4);
  for (auto& v : g.v) v = rng.normal(0.0, 1.0);
  Mat psd(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s2 = 0.0;
      for (int k = 0; k < 4; ++k) s2 += g.at(i, k) * g.at(j, k);
      psd.at(i, j) = s2;
    }
  const Mat r = sqrt_psd(psd);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double rr = 0.0;
      for (int k = 0; k < 4; ++k) rr += r.at(i, k) * r.at(k, j);
      CHECK(rr == doctest::Approx(psd.at(i, j)).epsilon(1e-8));
    }

  // negative eigenvalues clip to zero
  Mat neg(2, 2);
  neg.at(0, 0) = -1.0;
  neg.at(1, 1) = 4.0;
  const Mat clipped = sqrt_psd(neg);
  CHECK(clipped.at(0, 0) == doctest::Approx(0.0));
  CHECK(clipped.at(1, 1) == doctest::Approx(2.0));
}

TEST_CASE("diversity: degenerate and constructed cases") {
  FeatureSet all_same;
  for (int i = 0; i < 10; ++i) all_same.add("s" + std::to_string(i), "g", {1.0, 2.0});
  CHECK(diversity(all_same, 50, 1) == doctest::Approx(0.0));

  // two points at distance D: every pair crosses the clusters
  FeatureSet two;
  two.add("a", "g", {0.0, 0.0});
  two.add("b", "g", {3.0, 4.0});
  CHECK(diversity(two, 10, 1) == doctest::Approx(5.0));
}

TEST_CASE("diversity matches brute force when pairs cover everything") {
  Rng rng(13);
  FeatureSet set;
  const int n = 12;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < n; ++i) {
    std::vector<double> f{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
    rows.push_back(f);
    set.add("s" + std::to_string(i), "g", f);
  }
  double brute = 0.0;
  int pairs = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) s += (rows[i][c] - rows[j][c]) * (rows[i][c] - rows[j][c]);
      brute += std::sqrt(s);
      ++pairs;
    }
  brute /= pairs;
  CHECK(diversity(set, n * (n - 1) / 2, 7) == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("diversity is invariant to input permutation given the seed") {
  Rng rng(14);
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (int i = 0; i < 9; ++i)
    rows.push_back({"id" + std::to_string(i), {rng.normal(0, 1), rng.normal(0, 1)}});
  FeatureSet a, b;
  for (const auto& [id, f] : rows) a.add(id, "g", f);
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) b.add(it->first, "g", it->second);
  CHECK(diversity(a, 5, 99) == doctest::Approx(diversity(b, 5, 99)).epsilon(1e-15));
}

TEST_CASE("multimodality averages within groups and skips singletons") {
  FeatureSet set;
  set.add("a0", "A", {0.0});
  set.add("a1", "A", {2.0});
  set.add("b0", "B", {0.0});
  set.add("b1", "B", {4.0});
  set.add("c0", "C", {9.0});  // singleton, skipped
  const auto mm = multimodality(set, 10, 1);
  CHECK(mm.groups_used == 2);
  CHECK(mm.groups_skipped == 1);
  CHECK(mm.value == doctest::Approx(3.0));  // (2 + 4) / 2

  FeatureSet only_singletons;
  only_singletons.add("x", "X", {1.0});
  CHECK_THROWS_AS(multimodality(only_singletons, 10, 1), DataError);
}

TEST_CASE("beat alignment: exact hit, gaussian tail, and errors") {
  // a single velocity dip at frame 10 (fps 20): one motion beat at 0.525 s
  const int t = 41;
  Mat torso(t, 2);
  double pos = 0.0;
  for (int i = 0; i < t; ++i) {
    const bool slow = i >= 10 && i < 12;
    pos += slow ? 1.0 / 1024.0 : 0.5;  // exactly representable increments
    torso.at(i, 0) = pos;
  }
  const auto beats = motion_beat_times(torso, 20);
  REQUIRE(beats.size() == 1);
  const double hit = beat_alignment(torso, 20, {beats[0]}, 0.1);
  CHECK(hit == doctest::Approx(1.0));
  const double miss = beat_alignment(torso, 20, {beats[0] + 0.7}, 0.1);
  CHECK(miss < 1e-6);  // 7 sigma out

  CHECK_THROWS_AS(beat_alignment(torso, 20, {}, 0.1), DataError);
  Mat tiny(1, 2);
  CHECK_THROWS_AS(beat_alignment(tiny, 20, {0.5}, 0.1), DataError);
}

TEST_CASE("beat-locked synthetic music scores above a shifted copy") {
  SynthSpec spec;
  spec.modality = Modality::Music;
  spec.count = 6;
  spec.torso_joints = 4;
  spec.min_frames = spec.max_frames = 48;
  auto samples = synth_dataset(spec, 77);
  int higher = 0, total = 0;
  for (const auto& s : samples) {
    if (s.condition.beat_times.size() < 2) continue;
    const double locked = beat_alignment(s.clip.torso, s.clip.fps, s.condition.beat_times, 0.1);
    std::vector<double> shifted;
    const double half = 0.5 * 60.0 / 104.0;  // roughly half a beat period
    for (double b : s.condition.beat_times) shifted.push_back(b + half);
    const double off = beat_alignment(s.clip.torso, s.clip.fps, shifted, 0.1);
    if (locked > off) ++higher;
    ++total;
  }
  REQUIRE(total > 0);
  CHECK(higher * 2 > total);  // majority of clips score higher when locked
}
