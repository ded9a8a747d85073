#include "mmg/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mmg/errors.hpp"

namespace mmg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::Music: return "music";
    case Modality::Speech: return "speech";
  }
  return "?";
}

Modality modality_from_name(const std::string& name) {
  if (name == "text") return Modality::Text;
  if (name == "music") return Modality::Music;
  if (name == "speech") return Modality::Speech;
  throw ConfigError("unknown modality '" + name + "' (expected text|music|speech)");
}

namespace {

struct TextTemplate {
  const char* direction;
  double dx, dy;
};
constexpr TextTemplate kDirections[] = {
    {"forward", 1.0, 0.0}, {"backward", -1.0, 0.0}, {"leftward", 0.0, 1.0}, {"rightward", 0.0, -1.0}};

struct GaitTemplate {
  const char* gait;
  double speed, freq, amp, bounce;
};
constexpr GaitTemplate kGaits[] = {
    {"walks", 1.0, 1.5, 0.30, 0.00}, {"runs", 2.2, 2.6, 0.55, 0.02}, {"jumps", 0.8, 1.0, 0.80, 0.10}};

struct SpeedTemplate {
  const char* word;
  double mult;
};
constexpr SpeedTemplate kSpeeds[] = {{"slowly", 0.5}, {"steadily", 1.0}, {"quickly", 1.8}};

int pick_frames(const SynthSpec& spec, Rng& rng) {
  int t = spec.min_frames;
  if (spec.max_frames > spec.min_frames)
    t += rng.uniform_int(spec.max_frames - spec.min_frames + 1);
  t -= t % spec.frame_multiple;
  if (t < spec.frame_multiple) t = spec.frame_multiple;
  return t;
}

MotionClip blank_clip(const SynthSpec& spec, int frames) {
  MotionClip clip;
  clip.fps = spec.fps;
  clip.torso = Mat(frames, 3 + 3 * spec.torso_joints);
  clip.left_hand = Mat(frames, spec.hand_dim);
  clip.right_hand = Mat(frames, spec.hand_dim);
  return clip;
}

void fill_hand_noise(Mat& hand, Rng& rng, double scale) {
  for (auto& x : hand.v) x = rng.normal(0.0, scale);
}

Sample make_text_sample(const SynthSpec& spec, Rng rng, int index) {
  const int di = rng.uniform_int(static_cast<int>(std::size(kDirections)));
  const int gi = rng.uniform_int(static_cast<int>(std::size(kGaits)));
  const int si = rng.uniform_int(static_cast<int>(std::size(kSpeeds)));
  const auto& dir = kDirections[di];
  const auto& gait = kGaits[gi];
  const auto& spd = kSpeeds[si];

  Sample s;
  s.condition.modality = Modality::Text;
  s.condition.text = std::string("a person ") + gait.gait + " " + dir.direction + " " + spd.word;

  const int frames = pick_frames(spec, rng);
  s.clip = blank_clip(spec, frames);
  const int joints = spec.torso_joints;
  const double fps = spec.fps;

  // Per-sample jitter keeps same-condition clips distinct while preserving
  // the condition-determined structure.
  const double heading_jitter = rng.normal(0.0, 0.6 * spec.noise_scale);
  const double amp_jitter = 1.0 + rng.normal(0.0, spec.noise_scale);
  std::vector<double> phase(joints);
  for (int j = 0; j < joints; ++j) phase[j] = 0.7 * j + 0.4 * gi + rng.normal(0.0, 0.15);

  const double cosj = std::cos(heading_jitter), sinj = std::sin(heading_jitter);
  const double vx = (dir.dx * cosj - dir.dy * sinj) * gait.speed * spd.mult;
  const double vy = (dir.dx * sinj + dir.dy * cosj) * gait.speed * spd.mult;
  const double freq = gait.freq * (0.75 + 0.25 * spd.mult);

  for (int t = 0; t < frames; ++t) {
    const double tt = t / fps;
    s.clip.torso.at(t, 0) = vx * tt + rng.normal(0.0, 0.002);
    s.clip.torso.at(t, 1) = vy * tt + rng.normal(0.0, 0.002);
    const double b = std::sin(2.0 * M_PI * freq * tt);
    s.clip.torso.at(t, 2) = gait.bounce * b * b;
    for (int j = 0; j < joints; ++j) {
      const double swing = gait.amp * amp_jitter * (0.6 + 0.4 * ((j * 37) % 7) / 6.0);
      const double posture = 0.35 * std::sin(1.3 * di + 0.45 * j) + 0.1 * si;
      const double theta = posture + swing * std::sin(2.0 * M_PI * freq * tt + phase[j]);
      for (int a = 0; a < 3; ++a)
        s.clip.torso.at(t, 3 + 3 * j + a) =
            theta * (a == j % 3 ? 1.0 : 0.25) + rng.normal(0.0, 0.01 * spec.noise_scale);
    }
  }
  fill_hand_noise(s.clip.left_hand, rng, 0.01);
  fill_hand_noise(s.clip.right_hand, rng, 0.01);
  s.clip.labels = {s.condition.text};
  (void)index;
  return s;
}

Sample make_music_sample(const SynthSpec& spec, Rng rng, int index) {
  const int genre = index % spec.num_genres;  // balanced classes
  Sample s;
  s.condition.modality = Modality::Music;

  const int frames = pick_frames(spec, rng);
  const double fps = spec.fps;
  const double duration = frames / fps;
  const double motion_freq = 0.8 + 0.45 * genre;
  const double bpm = 90.0 + 14.0 * genre;
  const double beat_period = 60.0 / bpm;
  const double audio_freq = 110.0 * (1.0 + 0.5 * genre);
  const double beat_phase = rng.uniform() * beat_period;

  for (double tb = beat_phase; tb < duration; tb += beat_period) s.condition.beat_times.push_back(tb);

  s.condition.sample_rate = spec.audio_rate;
  const int n_samples = static_cast<int>(duration * spec.audio_rate);
  s.condition.audio.resize(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const double tt = i / spec.audio_rate;
    double a = 0.6 * std::sin(2.0 * M_PI * audio_freq * tt) +
               0.3 * std::sin(4.0 * M_PI * audio_freq * tt);
    for (double tb : s.condition.beat_times)
      if (tt >= tb && tt < tb + 0.08) a += 0.8 * std::exp(-(tt - tb) / 0.025);
    s.condition.audio[i] = a + rng.normal(0.0, 0.01);
  }

  s.clip = blank_clip(spec, frames);
  const int joints = spec.torso_joints;
  std::vector<double> phase(joints), amp(joints);
  for (int j = 0; j < joints; ++j) {
    phase[j] = 0.9 * j + 0.3 * genre + rng.normal(0.0, 0.1);
    amp[j] = (0.5 + 0.5 * ((j * 13) % 5) / 4.0) * (1.0 + rng.normal(0.0, spec.noise_scale));
  }

  // Build joint velocities with an envelope that dips at beats, then
  // integrate, so kinematic velocity minima land on the beat times.
  auto envelope = [&](double tt) {
    double e = 1.0;
    for (double tb : s.condition.beat_times) {
      const double d = tt - tb;
      e -= 0.9 * std::exp(-d * d / (2.0 * 0.06 * 0.06));
    }
    return std::max(e, 0.02);
  };

  std::vector<double> theta(joints, 0.0);
  for (int t = 0; t < frames; ++t) {
    const double tt = t / fps;
    const double env = envelope(tt);
    s.clip.torso.at(t, 0) = 0.15 * std::sin(2.0 * M_PI * 0.25 * tt + genre);
    s.clip.torso.at(t, 1) = 0.15 * std::cos(2.0 * M_PI * 0.25 * tt + genre);
    s.clip.torso.at(t, 2) = 0.0;
    for (int j = 0; j < joints; ++j) {
      const double u =
          amp[j] * 2.0 * M_PI * motion_freq * std::cos(2.0 * M_PI * motion_freq * tt + phase[j]);
      theta[j] += u * env / fps;
      for (int a = 0; a < 3; ++a)
        s.clip.torso.at(t, 3 + 3 * j + a) =
            theta[j] * (a == j % 3 ? 1.0 : 0.3) + rng.normal(0.0, 0.005);
    }
  }
  fill_hand_noise(s.clip.left_hand, rng, 0.01);
  fill_hand_noise(s.clip.right_hand, rng, 0.01);
  s.clip.labels = {"genre:" + std::to_string(genre)};
  return s;
}

Sample make_speech_sample(const SynthSpec& spec, Rng rng, int index, const Rng& dataset_rng) {
  const int speaker = index % spec.num_speakers;  // balanced ids
  // Speaker profile is stable across samples and seeds within a dataset.
  Rng prof = dataset_rng.fork("speaker-profile", static_cast<uint64_t>(speaker));
  std::vector<double> hand_mean(spec.hand_dim);
  for (auto& x : hand_mean) x = prof.normal(0.0, 0.8);
  const double hand_amp = 0.3 + 0.4 * prof.uniform();
  const double hand_freq = 0.9 + 0.35 * speaker + 0.05 * prof.uniform();
  const double sway_amp = 0.1 + 0.15 * prof.uniform();
  std::vector<double> psi(spec.hand_dim);
  for (auto& x : psi) x = prof.uniform() * 2.0 * M_PI;

  Sample s;
  s.condition.modality = Modality::Speech;
  s.condition.speaker_id = speaker;

  const int frames = pick_frames(spec, rng);
  const double fps = spec.fps;
  const double duration = frames / fps;

  // Energy envelope: smoothed random speech bursts.
  s.condition.sample_rate = spec.audio_rate;
  const int n_samples = static_cast<int>(duration * spec.audio_rate);
  std::vector<double> burst_t, burst_w;
  const int n_bursts = 2 + rng.uniform_int(4);
  for (int b = 0; b < n_bursts; ++b) {
    burst_t.push_back(rng.uniform() * duration);
    burst_w.push_back(0.15 + 0.2 * rng.uniform());
  }
  auto env_at = [&](double tt) {
    double e = 0.1;
    for (size_t b = 0; b < burst_t.size(); ++b) {
      const double d = tt - burst_t[b];
      e += std::exp(-d * d / (2.0 * burst_w[b] * burst_w[b]));
    }
    return std::min(e, 1.5);
  };
  s.condition.audio.resize(n_samples);
  for (int i = 0; i < n_samples; ++i)
    s.condition.audio[i] = env_at(i / spec.audio_rate) + rng.normal(0.0, 0.01);

  s.clip = blank_clip(spec, frames);
  const int joints = spec.torso_joints;
  for (int t = 0; t < frames; ++t) {
    const double tt = t / fps;
    const double env = env_at(tt);
    s.clip.torso.at(t, 0) = rng.normal(0.0, 0.002);
    s.clip.torso.at(t, 1) = rng.normal(0.0, 0.002);
    s.clip.torso.at(t, 2) = 0.0;
    for (int j = 0; j < joints; ++j) {
      const double nod = sway_amp * std::sin(2.0 * M_PI * 0.4 * tt + 0.8 * j) * (0.4 + 0.6 * env);
      for (int a = 0; a < 3; ++a)
        s.clip.torso.at(t, 3 + 3 * j + a) = nod * (a == 0 ? 1.0 : 0.3) + rng.normal(0.0, 0.004);
    }
    for (int k = 0; k < spec.hand_dim; ++k) {
      const double g = hand_mean[k] +
                       hand_amp * std::sin(2.0 * M_PI * hand_freq * tt + psi[k]) * (0.5 + 0.5 * env);
      s.clip.left_hand.at(t, k) = g + rng.normal(0.0, 0.02);
      s.clip.right_hand.at(t, k) = -g + rng.normal(0.0, 0.02);
    }
  }
  s.clip.labels = {"speaker:" + std::to_string(speaker)};
  return s;
}

}  // namespace

std::vector<std::string> text_condition_vocabulary() {
  std::vector<std::string> v;
  for (const auto& g : kGaits)
    for (const auto& d : kDirections)
      for (const auto& sp : kSpeeds)
        v.push_back(std::string("a person ") + g.gait + " " + d.direction + " " + sp.word);
  return v;
}

std::vector<Sample> synth_dataset(const SynthSpec& spec, uint64_t seed) {
  if (spec.count <= 0) throw ConfigError("synth: count must be positive");
  if (spec.fps <= 0) throw ConfigError("synth: fps must be positive");
  if (spec.min_frames > spec.max_frames) throw ConfigError("synth: min_frames > max_frames");
  Rng root(seed);
  Rng dataset_rng = root.fork("dataset");
  std::vector<Sample> out;
  out.reserve(spec.count);
  const int holdout_every =
      spec.holdout_fraction > 0.0 ? std::max(2, static_cast<int>(1.0 / spec.holdout_fraction)) : 0;
  for (int i = 0; i < spec.count; ++i) {
    Rng srng = root.fork("sample", static_cast<uint64_t>(i));
    Sample s;
    switch (spec.modality) {
      case Modality::Text: s = make_text_sample(spec, srng, i); break;
      case Modality::Music: s = make_music_sample(spec, srng, i); break;
      case Modality::Speech: s = make_speech_sample(spec, srng, i, dataset_rng); break;
    }
    s.id = modality_name(spec.modality) + "_" + std::to_string(i);
    s.condition.id = s.id;
    s.split = (holdout_every > 0 && i % holdout_every == holdout_every - 1) ? "heldout" : "train";
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::vector<Sample>& samples, const SynthSpec& spec,
                   const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["modality"] = modality_name(spec.modality);
  manifest["fps"] = spec.fps;
  json list = json::array();
  for (const auto& s : samples) {
    const std::string file = s.id + ".mot";
    write_motion(s.clip, (fs::path(dir) / file).string());
    json e;
    e["id"] = s.id;
    e["split"] = s.split;
    if (!s.group.empty()) e["group"] = s.group;
    e["motion"] = file;
    json c;
    c["modality"] = modality_name(s.condition.modality);
    if (!s.condition.text.empty()) c["text"] = s.condition.text;
    if (!s.condition.audio.empty()) {
      c["audio"] = s.condition.audio;
      c["sample_rate"] = s.condition.sample_rate;
    }
    if (!s.condition.beat_times.empty()) c["beat_times"] = s.condition.beat_times;
    if (s.condition.speaker_id >= 0) c["speaker_id"] = s.condition.speaker_id;
    e["condition"] = c;
    list.push_back(e);
  }
  manifest["samples"] = list;
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw DataError("failed writing dataset manifest in " + dir);
}

std::vector<Sample> load_dataset(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream is(mpath);
  if (!is) throw DataError("dataset manifest not found: " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
  std::vector<Sample> out;
  for (const auto& e : manifest.at("samples")) {
    Sample s;
    s.id = e.at("id").get<std::string>();
    s.split = e.value("split", "train");
    s.group = e.value("group", "");
    s.clip = read_motion((fs::path(dir) / e.at("motion").get<std::string>()).string());
    const auto& c = e.at("condition");
    s.condition.modality = modality_from_name(c.at("modality").get<std::string>());
    s.condition.id = s.id;
    s.condition.text = c.value("text", "");
    if (c.contains("audio")) {
      s.condition.audio = c.at("audio").get<std::vector<double>>();
      s.condition.sample_rate = c.value("sample_rate", 0.0);
    }
    if (c.contains("beat_times")) s.condition.beat_times = c.at("beat_times").get<std::vector<double>>();
    s.condition.speaker_id = c.value("speaker_id", -1);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<const Sample*> split_of(const std::vector<Sample>& samples, const std::string& split) {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(&s);
  return out;
}

}  // namespace mmg
