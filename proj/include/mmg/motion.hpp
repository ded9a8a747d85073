#pragma once

#include <array>
#include <string>
#include <vector>

#include "mmg/mat.hpp"

namespace mmg {

// Whole-body motion at a fixed frame rate, split into torso and hand
// channels. Torso columns: 3 root-trajectory dims (meters) followed by
// 3*J rotation-vector dims (radians). Hands hold PCA coefficients.
struct MotionClip {
  int fps = 0;
  Mat torso;       // T x c_t
  Mat left_hand;   // T x c_h
  Mat right_hand;  // T x c_h
  std::vector<std::string> labels;

  int frames() const { return torso.rows; }
  void validate() const;  // shared T, fps > 0
};

// Torso representation with per-frame trajectory displacements in the first
// three columns (zero at frame 0); rotation columns untouched.
struct DeltaMotion {
  Mat torso_local;
};

inline constexpr int kTrajDims = 3;

DeltaMotion to_delta(const Mat& torso);
Mat from_delta(const Mat& torso_local, const std::array<double, 3>& origin);

void write_motion(const MotionClip& clip, const std::string& path);
MotionClip read_motion(const std::string& path);

}  // namespace mmg
