#include "mmg/motion.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mmg/errors.hpp"

namespace mmg {

num::Tensor to_tensor(const Mat& m) {
  return num::Tensor::from_data({m.rows, m.cols}, m.v, false);
}

Mat to_mat(const num::Tensor& t) {
  Mat m(t.rows(), t.cols());
  m.v = t.values();
  return m;
}

void MotionClip::validate() const {
  if (fps <= 0) throw DataError("motion clip: fps must be positive, got " + std::to_string(fps));
  if (torso.rows < 1) throw DataError("motion clip: empty torso sequence");
  if (left_hand.rows != torso.rows || right_hand.rows != torso.rows)
    throw DataError("motion clip: part lengths disagree (torso " + std::to_string(torso.rows) +
                    ", left " + std::to_string(left_hand.rows) + ", right " +
                    std::to_string(right_hand.rows) + ")");
  for (double x : torso.v)
    if (!std::isfinite(x)) throw DataError("motion clip: non-finite torso value");
}

DeltaMotion to_delta(const Mat& torso) {
  if (torso.rows < 1) throw DataError("to_delta: empty sequence");
  if (torso.cols < kTrajDims) throw DimError("to_delta: torso needs at least 3 columns");
  DeltaMotion out;
  out.torso_local = torso;
  for (int j = 0; j < kTrajDims; ++j) {
    out.torso_local.at(0, j) = 0.0;
    for (int i = 1; i < torso.rows; ++i)
      out.torso_local.at(i, j) = torso.at(i, j) - torso.at(i - 1, j);
  }
  return out;
}

Mat from_delta(const Mat& torso_local, const std::array<double, 3>& origin) {
  if (torso_local.cols < kTrajDims) throw DimError("from_delta: torso needs at least 3 columns");
  Mat out = torso_local;
  for (int j = 0; j < kTrajDims; ++j) {
    double acc = origin[j];
    for (int i = 0; i < out.rows; ++i) {
      acc += torso_local.at(i, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'M', 'M', 'G', 'M', 'O', 'T', '\0', '\0'};
constexpr uint32_t kMotionVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& is, T& v, const char* field) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError(std::string("motion file truncated while reading ") + field);
}

void write_mat_f32(std::ofstream& os, const Mat& m) {
  std::vector<float> buf(m.v.size());
  for (size_t i = 0; i < m.v.size(); ++i) buf[i] = static_cast<float>(m.v[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Mat read_mat_f32(std::ifstream& is, int rows, int cols, const char* field) {
  Mat m(rows, cols);
  std::vector<float> buf(m.v.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw DataError(std::string("motion file truncated while reading ") + field);
  for (size_t i = 0; i < buf.size(); ++i) m.v[i] = static_cast<double>(buf[i]);
  return m;
}

std::string sidecar_path(const std::string& path) { return path + ".json"; }

}  // namespace

void write_motion(const MotionClip& clip, const std::string& path) {
  clip.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open motion file for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kMotionVersion);
  write_pod(os, static_cast<uint32_t>(clip.fps));
  write_pod(os, static_cast<uint32_t>(clip.torso.rows));
  write_pod(os, static_cast<uint32_t>(clip.torso.cols));
  write_pod(os, static_cast<uint32_t>(clip.left_hand.cols));
  write_pod(os, static_cast<uint32_t>(clip.right_hand.cols));
  write_mat_f32(os, clip.torso);
  write_mat_f32(os, clip.left_hand);
  write_mat_f32(os, clip.right_hand);
  if (!os) throw DataError("failed writing motion file: " + path);
  if (!clip.labels.empty()) {
    nlohmann::json j;
    j["labels"] = clip.labels;
    std::ofstream js(sidecar_path(path));
    js << j.dump(2) << "\n";
  }
}

MotionClip read_motion(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open motion file: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a motion file (bad magic): " + path);
  uint32_t version = 0;
  read_pod(is, version, "version");
  if (version != kMotionVersion)
    throw DataError("unsupported motion file version " + std::to_string(version) + ": " + path);
  uint32_t fps = 0, frames = 0, ct = 0, clh = 0, crh = 0;
  read_pod(is, fps, "fps");
  read_pod(is, frames, "frame count");
  read_pod(is, ct, "torso channel count");
  read_pod(is, clh, "left-hand channel count");
  read_pod(is, crh, "right-hand channel count");
  if (fps == 0) throw DataError("motion file declares fps=0: " + path);
  if (frames == 0) throw DataError("motion file declares zero frames: " + path);
  MotionClip clip;
  clip.fps = static_cast<int>(fps);
  clip.torso = read_mat_f32(is, static_cast<int>(frames), static_cast<int>(ct), "torso frames");
  clip.left_hand =
      read_mat_f32(is, static_cast<int>(frames), static_cast<int>(clh), "left-hand frames");
  clip.right_hand =
      read_mat_f32(is, static_cast<int>(frames), static_cast<int>(crh), "right-hand frames");
  const std::string side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream js(side);
    try {
      nlohmann::json j = nlohmann::json::parse(js);
      clip.labels = j.value("labels", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("motion label sidecar is not valid JSON: " + side + ": " + e.what());
    }
  }
  return clip;
}

}  // namespace mmg
