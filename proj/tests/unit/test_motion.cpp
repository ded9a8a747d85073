#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mmg/errors.hpp"
#include "mmg/motion.hpp"
#include "mmg/synth.hpp"

using namespace mmg;
namespace fs = std::filesystem;

namespace {

Mat traj_only(const std::vector<std::array<double, 3>>& rows) {
  Mat m(static_cast<int>(rows.size()), 3);
  for (size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < 3; ++j) m.at(static_cast<int>(i), j) = rows[i][j];
  return m;
}

}  // namespace

TEST_CASE("to_delta matches first differences with zero first frame") {
  Mat traj = traj_only({{0, 0, 0}, {1, 0, 0}, {3, 0, 0}});
  const Mat d = to_delta(traj).torso_local;
  CHECK(d.at(0, 0) == 0.0);
  CHECK(d.at(1, 0) == 1.0);
  CHECK(d.at(2, 0) == 2.0);

  Mat constant = traj_only({{2, 5, 1}, {2, 5, 1}, {2, 5, 1}});
  const Mat dc = to_delta(constant).torso_local;
  for (double v : dc.v) CHECK(v == 0.0);
}

TEST_CASE("from_delta examples") {
  Mat zeros = traj_only({{0, 0, 0}, {0, 0, 0}, {0, 0, 0}});
  const Mat out = from_delta(zeros, {5, 0, 0});
  for (int i = 0; i < 3; ++i) {
    CHECK(out.at(i, 0) == 5.0);
    CHECK(out.at(i, 1) == 0.0);
  }
  Mat d = traj_only({{0, 0, 0}, {1, 1, 0}});
  const Mat out2 = from_delta(d, {0, 0, 0});
  CHECK(out2.at(1, 0) == 1.0);
  CHECK(out2.at(1, 1) == 1.0);
}

TEST_CASE("delta round trip and translation invariance") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const int t = 64;
    Mat torso(t, 9);
    for (auto& v : torso.v) v = rng.normal(0.0, 1.0);
    const std::array<double, 3> origin = {torso.at(0, 0), torso.at(0, 1), torso.at(0, 2)};
    const Mat rt = from_delta(to_delta(torso).torso_local, origin);
    for (size_t i = 0; i < torso.v.size(); ++i) CHECK(std::abs(rt.v[i] - torso.v[i]) < 1e-12);

    // Quantize positions and offsets so the shifted trajectory is exactly
    // representable; the invariance is then bit-exact.
    Mat snapped = torso;
    for (auto& v : snapped.v) v = std::round(v * 1048576.0) / 1048576.0;
    Mat shifted = snapped;
    for (int i = 0; i < t; ++i) {
      shifted.at(i, 0) += 10.0;
      shifted.at(i, 1) -= 3.5;
      shifted.at(i, 2) += 0.25;
    }
    const Mat d1 = to_delta(snapped).torso_local;
    const Mat d2 = to_delta(shifted).torso_local;
    CHECK(d1.v == d2.v);  // exact
  }
}

TEST_CASE("empty sequence raises input error") {
  Mat empty(0, 3);
  CHECK_THROWS_AS(to_delta(empty), DataError);
}

TEST_CASE("motion file round trip is bit identical") {
  SynthSpec spec;
  spec.modality = Modality::Speech;
  spec.count = 1;
  spec.min_frames = spec.max_frames = 32;
  spec.torso_joints = 3;
  spec.hand_dim = 4;
  auto samples = synth_dataset(spec, 4);
  const fs::path path = fs::temp_directory_path() / "mmg_clip.mot";
  write_motion(samples[0].clip, path.string());
  const MotionClip a = read_motion(path.string());
  write_motion(a, path.string());
  const MotionClip b = read_motion(path.string());
  CHECK(a.torso.v == b.torso.v);
  CHECK(a.left_hand.v == b.left_hand.v);
  CHECK(a.right_hand.v == b.right_hand.v);
  CHECK(a.labels == b.labels);
  CHECK(a.fps == b.fps);
  fs::remove(path);
  fs::remove(path.string() + ".json");
}

TEST_CASE("truncated and malformed motion files raise format errors") {
  SynthSpec spec;
  spec.count = 1;
  spec.min_frames = spec.max_frames = 32;
  spec.torso_joints = 3;
  auto samples = synth_dataset(spec, 4);
  const fs::path path = fs::temp_directory_path() / "mmg_trunc.mot";
  write_motion(samples[0].clip, path.string());
  fs::resize_file(path, fs::file_size(path) / 3);
  CHECK_THROWS_AS(read_motion(path.string()), DataError);

  // fps=0 in the header (offset 12: 8-byte magic + 4-byte version)
  write_motion(samples[0].clip, path.string());
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(12);
    uint32_t zero = 0;
    f.write(reinterpret_cast<const char*>(&zero), sizeof(zero));
  }
  CHECK_THROWS_WITH_AS(read_motion(path.string()), doctest::Contains("fps"), DataError);

  // unsupported version (offset 8)
  write_motion(samples[0].clip, path.string());
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    uint32_t bad = 42;
    f.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
  }
  CHECK_THROWS_WITH_AS(read_motion(path.string()), doctest::Contains("version"), DataError);
  fs::remove(path);
  fs::remove(path.string() + ".json");

  MotionClip bad;
  bad.fps = 0;
  bad.torso = Mat(4, 6);
  bad.left_hand = Mat(4, 2);
  bad.right_hand = Mat(4, 2);
  CHECK_THROWS_AS(write_motion(bad, (fs::temp_directory_path() / "x.mot").string()), DataError);
}

TEST_CASE("synthetic generation is pure in spec and seed") {
  SynthSpec spec;
  spec.modality = Modality::Music;
  spec.count = 6;
  spec.torso_joints = 4;
  auto a = synth_dataset(spec, 123);
  auto b = synth_dataset(spec, 123);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].clip.torso.v == b[i].clip.torso.v);
    CHECK(a[i].condition.audio == b[i].condition.audio);
    CHECK(a[i].condition.beat_times == b[i].condition.beat_times);
  }
  auto c = synth_dataset(spec, 124);
  CHECK(a[0].clip.torso.v != c[0].clip.torso.v);
}

TEST_CASE("forward text conditions move forward") {
  SynthSpec spec;
  spec.modality = Modality::Text;
  spec.count = 64;
  spec.torso_joints = 4;
  auto samples = synth_dataset(spec, 9);
  int found = 0;
  for (const auto& s : samples) {
    if (s.condition.text.find("forward") == std::string::npos) continue;
    ++found;
    const Mat d = to_delta(s.clip.torso).torso_local;
    double mean_dx = 0.0;
    for (int i = 0; i < d.rows; ++i) mean_dx += d.at(i, 0);
    mean_dx /= d.rows;
    CHECK(mean_dx > 0.0);
  }
  CHECK(found > 0);
}

TEST_CASE("music genres separable by nearest-centroid on velocity spectra") {
  SynthSpec spec;
  spec.modality = Modality::Music;
  spec.count = 48;
  spec.num_genres = 4;
  spec.torso_joints = 4;
  spec.min_frames = spec.max_frames = 48;
  auto samples = synth_dataset(spec, 33);

  // Oracle classifier: per-channel signed velocity probed at each genre's
  // motion frequency, nearest centroid over a half/half split.
  auto spectrum = [&](const MotionClip& clip) {
    std::vector<double> feat;
    for (int g = 0; g < spec.num_genres; ++g) {
      const double f = 0.8 + 0.45 * g;
      double energy = 0.0;
      for (int c = 3; c < clip.torso.cols; ++c) {
        double re = 0.0, im = 0.0;
        for (int i = 0; i + 1 < clip.torso.rows; ++i) {
          const double vel = clip.torso.at(i + 1, c) - clip.torso.at(i, c);
          const double w = 2.0 * M_PI * f * (static_cast<double>(i) / spec.fps);
          re += vel * std::cos(w);
          im += vel * std::sin(w);
        }
        energy += (re * re + im * im) / clip.torso.rows;
      }
      feat.push_back(std::sqrt(energy));
    }
    // scale-normalize so amplitude jitter cancels
    double norm = 0.0;
    for (double x : feat) norm += x * x;
    norm = std::sqrt(std::max(norm, 1e-12));
    for (double& x : feat) x /= norm;
    return feat;
  };
  auto genre_of = [](const Sample& s) {
    return std::stoi(s.clip.labels.at(0).substr(6));
  };

  // alternate groups of num_genres so both halves cover every genre
  auto in_fit_half = [&](size_t i) { return (i / spec.num_genres) % 2 == 0; };
  std::vector<std::vector<double>> centroids(spec.num_genres,
                                             std::vector<double>(spec.num_genres, 0.0));
  std::vector<int> counts(spec.num_genres, 0);
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!in_fit_half(i)) continue;
    const auto f = spectrum(samples[i].clip);
    const int g = genre_of(samples[i]);
    for (int j = 0; j < spec.num_genres; ++j) centroids[g][j] += f[j];
    ++counts[g];
  }
  for (int g = 0; g < spec.num_genres; ++g)
    for (auto& v : centroids[g]) v /= std::max(1, counts[g]);

  int correct = 0, total = 0;
  for (size_t i = 0; i < samples.size(); ++i) {  // classify the other half
    if (in_fit_half(i)) continue;
    const auto f = spectrum(samples[i].clip);
    int best = 0;
    double best_d = 1e300;
    for (int g = 0; g < spec.num_genres; ++g) {
      double d = 0.0;
      for (int j = 0; j < spec.num_genres; ++j)
        d += (f[j] - centroids[g][j]) * (f[j] - centroids[g][j]);
      if (d < best_d) {
        best_d = d;
        best = g;
      }
    }
    if (best == genre_of(samples[i])) ++correct;
    ++total;
  }
  CHECK(static_cast<double>(correct) / total >= 0.9);
}

TEST_CASE("dataset write/load round trip") {
  SynthSpec spec;
  spec.modality = Modality::Speech;
  spec.count = 5;
  spec.torso_joints = 3;
  spec.hand_dim = 4;
  auto samples = synth_dataset(spec, 8);
  const fs::path dir = fs::temp_directory_path() / "mmg_ds_test";
  fs::remove_all(dir);
  write_dataset(samples, spec, dir.string());
  auto back = load_dataset(dir.string());
  REQUIRE(back.size() == samples.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == samples[i].id);
    CHECK(back[i].split == samples[i].split);
    CHECK(back[i].condition.speaker_id == samples[i].condition.speaker_id);
    CHECK(back[i].clip.torso.rows == samples[i].clip.torso.rows);
  }
  fs::remove_all(dir);
}

TEST_CASE("unknown modality is a config error") {
  CHECK_THROWS_AS(modality_from_name("video"), ConfigError);
}
