#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmg/config.hpp"
#include "mmg/evalmodels.hpp"
#include "mmg/seqgen.hpp"
#include "mmg/vqvae.hpp"

namespace mmg::pipeline {

// Desk-scale defaults: the "5-minute profile" every stage falls back to.
RunConfig default_config();

// Stage drivers. Each writes its artifacts under <run.out_dir> plus a
// manifest (config hash, seed, content hashes of inputs and outputs) under
// <run.out_dir>/manifests/.
void run_synth_data(const RunConfig& cfg);
void run_train_vq(const RunConfig& cfg, const std::string& part, const std::string& modality);
void run_train_prior(const RunConfig& cfg);
void run_train_seq(const RunConfig& cfg);

struct GenerateArgs {
  std::string modality = "text";
  std::string input;         // text sentence, or JSON payload path for music/speech
  std::string from_dataset;  // bulk mode: dataset dir to take conditions from
  std::string split = "heldout";
  int repeats = 1;
  int length_frames = 64;
  std::string sampler = "greedy";
  double temperature = 1.0;
  double reweight_temperature = -1.0;  // <0: from config
  uint64_t seed = 7;
  int aux_id = -1;
  bool interleaved = false;
  std::string out;  // .mot path (single) or directory (bulk)
};
void run_generate(const RunConfig& cfg, const GenerateArgs& args);

nlohmann::json run_eval(const RunConfig& cfg, const std::string& task, const std::string& gen_dir,
                        const std::string& ref_dir, const std::string& report_path);

std::string run_inspect(const std::string& ckpt_path);

nlohmann::json run_ablate(const RunConfig& cfg, const std::string& which);

// ---------------------------------------------------------------------------
// Checkpoint helpers (also used by tests)

void save_vqvae(PartVqvae& model, const std::string& part_kind, uint64_t model_seed,
                const std::string& path, const std::string& config_hash);
std::unique_ptr<PartVqvae> load_vqvae(const std::string& path);

void save_prior(MotionPrior& prior, uint64_t model_seed, const std::string& path,
                const std::string& config_hash);
std::unique_ptr<MotionPrior> load_prior(const std::string& path);

struct EncoderSpec {
  Modality modality = Modality::Text;
  std::string type = "synthetic";  // or "precomputed"
  std::string path;                // embedding file, precomputed only
  int dim = 24;
  int window = 256;
  int hop = 128;
  uint64_t seed = 9000;
};
EncoderSpec encoder_spec_from_config(const RunConfig& cfg, Modality m);
std::shared_ptr<const ModalityEncoder> make_encoder(const EncoderSpec& spec);

void save_seqgen(SeqGenModel& model, uint64_t model_seed,
                 const std::vector<EncoderSpec>& encoders, const std::string& path,
                 const std::string& config_hash,
                 const nlohmann::json& prior_hashes = nlohmann::json::object());
std::unique_ptr<SeqGenModel> load_seqgen(const std::string& path);

// Hash of one head's parameters, for staged-training isolation audits.
std::string head_hash(SeqGenModel& model, const VocabKey& key);

// ---------------------------------------------------------------------------
// Shared dataset plumbing

// Channels a modality's feature space sees: torso for text/music, torso plus
// both hands for speech.
Mat active_channels(const MotionClip& clip, Modality m);

// Tokenizes samples into per-part training items (plus prior embeddings when
// lambda_sem > 0).
std::vector<SeqTrainItem> build_seq_items(const std::vector<const Sample*>& samples, Modality m,
                                          const std::map<BodyPart, PartVqvae*>& tokenizers,
                                          const MotionPrior* prior);

// ---------------------------------------------------------------------------
// Direction benchmarks, shared by `ablate` and the acceptance suite.

struct DirectionResult {
  // One metric map per seed, for the baseline and the variant arm.
  std::vector<std::map<std::string, double>> baseline, variant;
  double median_baseline(const std::string& metric) const;
  double median_variant(const std::string& metric) const;
  nlohmann::json to_json() const;
};

DirectionResult bench_reinit(const RunConfig& cfg);     // metric: active_tokens
DirectionResult bench_two_stage(const RunConfig& cfg);  // metric: heldout_mse
DirectionResult bench_sas(const RunConfig& cfg);        // metrics: rtop1, mm
DirectionResult bench_seme(const RunConfig& cfg);       // metric: rtop1

}  // namespace mmg::pipeline
