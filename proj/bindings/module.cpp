#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mmg/codebook.hpp"
#include "mmg/errors.hpp"
#include "mmg/metrics.hpp"
#include "mmg/motion.hpp"
#include "mmg/ops.hpp"
#include "mmg/sampling.hpp"
#include "mmg/synth.hpp"

namespace py = pybind11;

namespace {

mmg::Mat mat_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw mmg::DimError("expected a 2-D array");
  mmg::Mat m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy_n(a.data(), m.v.size(), m.v.data());
  return m;
}

py::array_t<double> mat_to_numpy(const mmg::Mat& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy_n(m.v.data(), m.v.size(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(mmgpy, m) {
  m.doc() = "multimodal motion generation core operations";

  py::register_exception<mmg::ConfigError>(m, "ConfigError");
  py::register_exception<mmg::DataError>(m, "DataError");
  py::register_exception<mmg::NumericError>(m, "NumericError");

  m.def(
      "to_delta",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& torso) {
        return mat_to_numpy(mmg::to_delta(mat_from_numpy(torso)).torso_local);
      },
      py::arg("torso"),
      "Trajectory first differences (zero at frame 0); rotation columns pass through.");

  m.def(
      "from_delta",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& delta,
         const std::array<double, 3>& origin) {
        return mat_to_numpy(mmg::from_delta(mat_from_numpy(delta), origin));
      },
      py::arg("delta"), py::arg("origin") = std::array<double, 3>{0.0, 0.0, 0.0},
      "Reverse of to_delta: cumulative trajectory offset by the origin.");

  m.def(
      "softmax",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, int axis) {
        const mmg::Mat in = mat_from_numpy(x);
        return mat_to_numpy(mmg::to_mat(mmg::num::softmax(mmg::to_tensor(in), axis)));
      },
      py::arg("x"), py::arg("axis") = 1);

  m.def(
      "nearest_codes",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& embeddings,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& z) {
        const mmg::Mat emb = mat_from_numpy(embeddings);
        const mmg::Mat zm = mat_from_numpy(z);
        if (emb.cols != zm.cols) throw mmg::DimError("embedding dim mismatch");
        mmg::num::ParamSet ps;
        mmg::Rng rng(0);
        mmg::Codebook cb(ps, "cb", emb.rows, emb.cols, rng);
        cb.embeddings()->tensor.values() = emb.v;
        return cb.nearest_indices(zm.v, zm.rows);
      },
      py::arg("embeddings"), py::arg("z"),
      "Nearest codebook row per input row (squared Euclidean, lowest index on ties).");

  m.def(
      "semantic_weights",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& embeddings,
         int i_star, double t) {
        return mmg::semantic_weights(i_star, mmg::pairwise_distances(mat_from_numpy(embeddings)),
                                     t);
      },
      py::arg("embeddings"), py::arg("i_star"), py::arg("t") = 1.0,
      "Distance softmax around token i_star at temperature t.");

  m.def(
      "sample_next",
      [](const std::vector<double>& logits,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& embeddings,
         const std::string& sampler, double temperature, double reweight_temperature,
         uint64_t seed) {
        mmg::SamplerPolicy policy;
        policy.kind = mmg::sampler_from_name(sampler);
        policy.temperature = temperature;
        policy.reweight_temperature = reweight_temperature;
        policy.seed = seed;
        mmg::Rng rng(seed);
        mmg::DistanceCache cache;
        const mmg::Mat emb = mat_from_numpy(embeddings);
        const int k = emb.rows;
        mmg::SpecialIds specials{k, k + 1, k + 2};
        return mmg::sample_next(logits, policy, emb, cache, specials, rng);
      },
      py::arg("logits"), py::arg("embeddings"), py::arg("sampler") = "greedy",
      py::arg("temperature") = 1.0, py::arg("reweight_temperature") = 1.0, py::arg("seed") = 0);

  m.def(
      "fid",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& real,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& gen) {
        return mmg::fid(mat_from_numpy(real), mat_from_numpy(gen));
      },
      py::arg("real"), py::arg("gen"));

  m.def(
      "beat_alignment",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& torso, int fps,
         const std::vector<double>& beats, double sigma) {
        return mmg::beat_alignment(mat_from_numpy(torso), fps, beats, sigma);
      },
      py::arg("torso"), py::arg("fps"), py::arg("beats"), py::arg("sigma") = 0.1);

  m.def(
      "write_motion",
      [](const std::string& path,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& torso,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& left_hand,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& right_hand, int fps,
         const std::vector<std::string>& labels) {
        mmg::MotionClip clip;
        clip.fps = fps;
        clip.torso = mat_from_numpy(torso);
        clip.left_hand = mat_from_numpy(left_hand);
        clip.right_hand = mat_from_numpy(right_hand);
        clip.labels = labels;
        mmg::write_motion(clip, path);
      },
      py::arg("path"), py::arg("torso"), py::arg("left_hand"), py::arg("right_hand"),
      py::arg("fps") = 20, py::arg("labels") = std::vector<std::string>{});

  m.def(
      "read_motion",
      [](const std::string& path) {
        const mmg::MotionClip clip = mmg::read_motion(path);
        py::dict d;
        d["fps"] = clip.fps;
        d["torso"] = mat_to_numpy(clip.torso);
        d["left_hand"] = mat_to_numpy(clip.left_hand);
        d["right_hand"] = mat_to_numpy(clip.right_hand);
        d["labels"] = clip.labels;
        return d;
      },
      py::arg("path"));

  m.def(
      "synth_dataset",
      [](const std::string& modality, int count, uint64_t seed, int min_frames, int max_frames,
         int torso_joints, int hand_dim) {
        mmg::SynthSpec spec;
        spec.modality = mmg::modality_from_name(modality);
        spec.count = count;
        spec.min_frames = min_frames;
        spec.max_frames = max_frames;
        spec.torso_joints = torso_joints;
        spec.hand_dim = hand_dim;
        const auto samples = mmg::synth_dataset(spec, seed);
        py::list out;
        for (const auto& s : samples) {
          py::dict d;
          d["id"] = s.id;
          d["split"] = s.split;
          d["labels"] = s.clip.labels;
          d["torso"] = mat_to_numpy(s.clip.torso);
          d["left_hand"] = mat_to_numpy(s.clip.left_hand);
          d["right_hand"] = mat_to_numpy(s.clip.right_hand);
          d["text"] = s.condition.text;
          d["beat_times"] = s.condition.beat_times;
          d["speaker_id"] = s.condition.speaker_id;
          out.append(d);
        }
        return out;
      },
      py::arg("modality"), py::arg("count") = 8, py::arg("seed") = 0, py::arg("min_frames") = 32,
      py::arg("max_frames") = 32, py::arg("torso_joints") = 4, py::arg("hand_dim") = 6,
      "Procedural dataset samples as dicts of numpy arrays.");
}
