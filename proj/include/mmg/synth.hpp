#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmg/motion.hpp"
#include "mmg/rng.hpp"

namespace mmg {

enum class Modality { Text, Music, Speech };

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Raw condition signal for one sample. Text carries a label sentence;
// music carries a waveform plus beat times; speech carries an energy
// envelope plus a speaker id (the auxiliary condition).
struct ConditionPayload {
  Modality modality = Modality::Text;
  std::string id;
  std::string text;
  std::vector<double> audio;
  double sample_rate = 0.0;
  std::vector<double> beat_times;
  int speaker_id = -1;
};

struct SynthSpec {
  Modality modality = Modality::Text;
  int count = 64;
  int fps = 20;
  int min_frames = 32;
  int max_frames = 64;
  int frame_multiple = 4;  // lengths rounded down to this multiple
  int torso_joints = 5;    // torso columns = 3 + 3*J
  int hand_dim = 12;
  double noise_scale = 0.05;
  int num_genres = 4;
  int num_speakers = 4;
  double audio_rate = 800.0;
  double holdout_fraction = 0.25;
};

struct Sample {
  std::string id;
  ConditionPayload condition;
  MotionClip clip;
  std::string split;  // "train" or "heldout"
  std::string group;  // condition group for multimodality; empty = derive
};

// Procedural dataset generator. Motions are deterministic functions of the
// condition plus seeded noise: text conditions set heading/gait/speed, music
// genres set oscillation frequency with velocity minima locked to beats,
// speakers set hand-coefficient statistics. Pure in (spec, seed).
std::vector<Sample> synth_dataset(const SynthSpec& spec, uint64_t seed);

// Text template vocabulary used by the generator (direction x gait x speed).
std::vector<std::string> text_condition_vocabulary();

// Dataset directory: manifest.json plus one .mot file per sample.
void write_dataset(const std::vector<Sample>& samples, const SynthSpec& spec,
                   const std::string& dir);
std::vector<Sample> load_dataset(const std::string& dir);

std::vector<const Sample*> split_of(const std::vector<Sample>& samples, const std::string& split);

}  // namespace mmg
