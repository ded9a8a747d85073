#include "mmg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmg/checkpoint.hpp"
#include "mmg/errors.hpp"
#include "mmg/metrics.hpp"

namespace mmg::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Defaults and small helpers

RunConfig default_config() {
  RunConfig c;
  c.set("run.out_dir", "out");
  c.set("run.seed", "42");

  c.set("data.modalities", "text,music,speech");
  c.set("data.count.text", "48");
  c.set("data.count.music", "32");
  c.set("data.count.speech", "32");
  c.set("data.fps", "20");
  c.set("data.min_frames", "32");
  c.set("data.max_frames", "48");
  c.set("data.torso_joints", "21");
  c.set("data.hand_dim", "12");
  c.set("data.noise", "0.05");
  c.set("data.genres", "4");
  c.set("data.speakers", "4");
  c.set("data.holdout", "0.25");
  c.set("data.audio_rate", "800");

  c.set("vq.width", "24");
  c.set("vq.downsample", "4");
  c.set("vq.code_dim", "24");
  c.set("vq.codebook_size.torso", "64");
  c.set("vq.codebook_size.hand", "48");
  c.set("vq.two_stage", "true");
  c.set("vq.unet_width", "24");
  c.set("vq.steps", "400");
  c.set("vq.batch", "4");
  c.set("vq.lr", "1e-3");
  c.set("vq.reinit.enabled", "true");
  c.set("vq.reinit.every", "50");
  c.set("vq.reinit.tau", "-1");  // -1 -> 1/(4K)
  c.set("vq.reinit.sigma", "1e-3");
  c.set("vq.eval_every", "100");
  c.set("vq.beta1", "1.0");
  c.set("vq.beta2", "0.25");

  c.set("prior.width", "24");
  c.set("prior.latent", "32");
  c.set("prior.clip_len", "32");
  c.set("prior.downsample", "4");
  c.set("prior.steps", "300");
  c.set("prior.batch", "8");
  c.set("prior.lr", "1e-3");

  c.set("encoders.seed", "9000");
  c.set("encoders.text.dim", "24");
  c.set("encoders.music.dim", "24");
  c.set("encoders.music.window", "256");
  c.set("encoders.music.hop", "128");
  c.set("encoders.speech.dim", "24");
  c.set("encoders.speech.window", "64");
  c.set("encoders.speech.hop", "32");

  c.set("seq.dim", "32");
  c.set("seq.heads", "2");
  c.set("seq.ffn_mult", "4");
  c.set("seq.enc_layers", "2");
  c.set("seq.base_layers", "2");
  c.set("seq.head_layers", "1");
  c.set("seq.max_cond_len", "72");
  c.set("seq.max_tokens", "16");
  c.set("seq.lambda_sem", "0.1");
  c.set("seq.sem_mode", "cosine");
  c.set("seq.steps", "400");
  c.set("seq.batch", "8");
  c.set("seq.lr", "1e-3");
  c.set("seq.stages", "text,music,speech");

  c.set("sampling.temperature", "1.0");
  c.set("sampling.reweight_temperature", "1.0");

  c.set("eval.pool", "8");
  c.set("eval.topk", "1");
  c.set("eval.pairs", "200");
  c.set("eval.repeats", "8");
  c.set("eval.seeds", "3");
  c.set("eval.align.steps", "400");
  c.set("eval.align.batch", "8");
  c.set("eval.align.lr_adapter", "2e-3");
  c.set("eval.align.lr_encoder", "2e-4");
  c.set("eval.align.tau", "0.07");
  c.set("eval.id.steps", "400");
  c.set("eval.id.shared_dim", "16");
  c.set("eval.id.lr", "2e-3");
  c.set("eval.bas_sigma", "0.1");

  c.set("ablate.seeds", "3");
  return c;
}

namespace {

RunConfig with_defaults(const RunConfig& cfg) {
  RunConfig merged = default_config();
  for (const auto& [k, v] : cfg.entries()) merged.set(k, v);
  return merged;
}

fs::path out_dir(const RunConfig& cfg) { return fs::path(cfg.get_str("run.out_dir", "out")); }

std::string file_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot hash missing file: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

void write_stage_manifest(const RunConfig& cfg, const std::string& stage,
                          const std::vector<fs::path>& inputs,
                          const std::vector<fs::path>& outputs) {
  json m;
  m["stage"] = stage;
  m["config_hash"] = cfg.config_hash();
  m["seed"] = cfg.get_int("run.seed", 42);
  json in = json::object(), out = json::object();
  for (const auto& p : inputs) in[p.string()] = file_hash(p);
  for (const auto& p : outputs) out[p.string()] = file_hash(p);
  m["inputs"] = in;
  m["outputs"] = out;
  const fs::path dir = out_dir(cfg) / "manifests";
  fs::create_directories(dir);
  std::ofstream os(dir / (stage + ".json"));
  os << m.dump(2) << "\n";
}

void require_upstream(const fs::path& path, const std::string& produce_hint) {
  if (!fs::exists(path))
    throw DataError("missing upstream artifact " + path.string() + "; run `" + produce_hint +
                    "` first");
}

SynthSpec synth_spec_from_config(const RunConfig& cfg, Modality m) {
  SynthSpec spec;
  spec.modality = m;
  spec.count = static_cast<int>(cfg.get_int("data.count." + modality_name(m), 32));
  spec.fps = static_cast<int>(cfg.get_int("data.fps", 20));
  spec.min_frames = static_cast<int>(cfg.get_int("data.min_frames", 32));
  spec.max_frames = static_cast<int>(cfg.get_int("data.max_frames", 48));
  spec.frame_multiple = static_cast<int>(cfg.get_int("vq.downsample", 4));
  spec.torso_joints = static_cast<int>(cfg.get_int("data.torso_joints", 21));
  spec.hand_dim = static_cast<int>(cfg.get_int("data.hand_dim", 12));
  spec.noise_scale = cfg.get_double("data.noise", 0.05);
  spec.num_genres = static_cast<int>(cfg.get_int("data.genres", 4));
  spec.num_speakers = static_cast<int>(cfg.get_int("data.speakers", 4));
  spec.audio_rate = cfg.get_double("data.audio_rate", 800.0);
  spec.holdout_fraction = cfg.get_double("data.holdout", 0.25);
  return spec;
}

int torso_channels(const RunConfig& cfg) {
  return 3 + 3 * static_cast<int>(cfg.get_int("data.torso_joints", 21));
}

VqvaeConfig vq_config_from(const RunConfig& cfg, BodyPart part) {
  VqvaeConfig vc;
  vc.input_dim = part == BodyPart::Torso ? torso_channels(cfg)
                                         : static_cast<int>(cfg.get_int("data.hand_dim", 12));
  vc.width = static_cast<int>(cfg.get_int("vq.width", 24));
  vc.downsample = static_cast<int>(cfg.get_int("vq.downsample", 4));
  vc.code_dim = static_cast<int>(cfg.get_int("vq.code_dim", 24));
  vc.codebook_size = static_cast<int>(part == BodyPart::Torso
                                          ? cfg.get_int("vq.codebook_size.torso", 64)
                                          : cfg.get_int("vq.codebook_size.hand", 48));
  vc.two_stage = cfg.get_bool("vq.two_stage", true);
  vc.unet_width = static_cast<int>(cfg.get_int("vq.unet_width", 24));
  vc.beta1 = cfg.get_double("vq.beta1", 1.0);
  vc.beta2 = cfg.get_double("vq.beta2", 0.25);
  return vc;
}

VqTrainConfig vq_train_config_from(const RunConfig& cfg, uint64_t seed) {
  VqTrainConfig tc;
  tc.steps = static_cast<int>(cfg.get_int("vq.steps", 400));
  tc.batch = static_cast<int>(cfg.get_int("vq.batch", 4));
  tc.lr = cfg.get_double("vq.lr", 1e-3);
  tc.reinit_enabled = cfg.get_bool("vq.reinit.enabled", true);
  tc.reinit_every = static_cast<int>(cfg.get_int("vq.reinit.every", 50));
  tc.reinit_tau = cfg.get_double("vq.reinit.tau", -1.0);
  tc.reinit_sigma = cfg.get_double("vq.reinit.sigma", 1e-3);
  tc.eval_every = static_cast<int>(cfg.get_int("vq.eval_every", 100));
  tc.seed = seed;
  return tc;
}

PriorConfig prior_config_from(const RunConfig& cfg, Modality m) {
  PriorConfig pc;
  pc.input_dim = torso_channels(cfg);
  if (m == Modality::Speech)
    pc.input_dim += 2 * static_cast<int>(cfg.get_int("data.hand_dim", 12));
  pc.width = static_cast<int>(cfg.get_int("prior.width", 24));
  pc.latent = static_cast<int>(cfg.get_int("prior.latent", 32));
  pc.downsample = static_cast<int>(cfg.get_int("prior.downsample", 4));
  pc.clip_len = static_cast<int>(cfg.get_int("prior.clip_len", 32));
  return pc;
}

SeqGenConfig seq_config_from(const RunConfig& cfg) {
  SeqGenConfig sc;
  sc.dim = static_cast<int>(cfg.get_int("seq.dim", 32));
  sc.heads = static_cast<int>(cfg.get_int("seq.heads", 2));
  sc.ffn_mult = static_cast<int>(cfg.get_int("seq.ffn_mult", 4));
  sc.enc_layers = static_cast<int>(cfg.get_int("seq.enc_layers", 2));
  sc.base_layers = static_cast<int>(cfg.get_int("seq.base_layers", 2));
  sc.head_layers = static_cast<int>(cfg.get_int("seq.head_layers", 1));
  sc.max_cond_len = static_cast<int>(cfg.get_int("seq.max_cond_len", 72));
  sc.max_tokens = static_cast<int>(cfg.get_int("seq.max_tokens", 16));
  sc.aux_count = static_cast<int>(cfg.get_int("data.speakers", 4));
  sc.lambda_sem = cfg.get_double("seq.lambda_sem", 0.1);
  return sc;
}

fs::path data_dir(const RunConfig& cfg, Modality m) {
  return out_dir(cfg) / "data" / modality_name(m);
}

fs::path vq_ckpt_path(const RunConfig& cfg, BodyPart part, Modality m) {
  return out_dir(cfg) / "ckpt" / ("vq_" + part_name(part) + "_" + modality_name(m) + ".ckpt");
}

fs::path prior_ckpt_path(const RunConfig& cfg, Modality m) {
  return out_dir(cfg) / "ckpt" / ("prior_" + modality_name(m) + ".ckpt");
}

fs::path seq_ckpt_path(const RunConfig& cfg) { return out_dir(cfg) / "ckpt" / "seq.ckpt"; }

void write_trace_json(const fs::path& path, const std::vector<TraceRow>& trace) {
  json arr = json::array();
  for (const auto& row : trace) {
    json r;
    r["step"] = row.step;
    for (const auto& [k, v] : row.values) r[k] = v;
    arr.push_back(r);
  }
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << arr.dump(2) << "\n";
}

std::vector<const Mat*> part_mats(const std::vector<const Sample*>& samples, BodyPart part,
                                  std::vector<Mat>& storage) {
  storage.clear();
  storage.reserve(samples.size());
  for (const Sample* s : samples) {
    switch (part) {
      case BodyPart::Torso: storage.push_back(s->clip.torso); break;
      case BodyPart::LeftHand: storage.push_back(s->clip.left_hand); break;
      case BodyPart::RightHand: storage.push_back(s->clip.right_hand); break;
    }
  }
  std::vector<const Mat*> out;
  out.reserve(storage.size());
  for (const Mat& m : storage) out.push_back(&m);
  return out;
}

}  // namespace

Mat active_channels(const MotionClip& clip, Modality m) {
  if (m != Modality::Speech) return clip.torso;
  Mat out(clip.torso.rows, clip.torso.cols + clip.left_hand.cols + clip.right_hand.cols);
  for (int t = 0; t < out.rows; ++t) {
    int c = 0;
    for (int j = 0; j < clip.torso.cols; ++j) out.at(t, c++) = clip.torso.at(t, j);
    for (int j = 0; j < clip.left_hand.cols; ++j) out.at(t, c++) = clip.left_hand.at(t, j);
    for (int j = 0; j < clip.right_hand.cols; ++j) out.at(t, c++) = clip.right_hand.at(t, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth-data

void run_synth_data(const RunConfig& raw) {
  const RunConfig cfg = with_defaults(raw);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("run.seed", 42));
  std::vector<fs::path> outputs;
  for (const std::string& name : cfg.get_list("data.modalities", {"text"})) {
    const Modality m = modality_from_name(name);
    const SynthSpec spec = synth_spec_from_config(cfg, m);
    Rng root(seed);
    const auto samples = synth_dataset(spec, root.fork("synth-" + name).seed());
    const fs::path dir = data_dir(cfg, m);
    write_dataset(samples, spec, dir.string());
    outputs.push_back(dir / "manifest.json");
  }
  write_stage_manifest(cfg, "synth-data", {}, outputs);
}

// ---------------------------------------------------------------------------
// VQ-VAE checkpoints and stage

namespace {

json vqvae_config_json(const VqvaeConfig& vc) {
  return json{{"input_dim", vc.input_dim}, {"width", vc.width},
              {"downsample", vc.downsample}, {"codebook_size", vc.codebook_size},
              {"code_dim", vc.code_dim},   {"two_stage", vc.two_stage},
              {"unet_width", vc.unet_width}, {"alpha1", vc.alpha1},
              {"alpha2", vc.alpha2},       {"alpha3", vc.alpha3},
              {"beta1", vc.beta1},         {"beta2", vc.beta2}};
}

VqvaeConfig vqvae_config_from_json(const json& j) {
  VqvaeConfig vc;
  vc.input_dim = j.at("input_dim").get<int>();
  vc.width = j.at("width").get<int>();
  vc.downsample = j.at("downsample").get<int>();
  vc.codebook_size = j.at("codebook_size").get<int>();
  vc.code_dim = j.at("code_dim").get<int>();
  vc.two_stage = j.at("two_stage").get<bool>();
  vc.unet_width = j.at("unet_width").get<int>();
  vc.alpha1 = j.at("alpha1").get<double>();
  vc.alpha2 = j.at("alpha2").get<double>();
  vc.alpha3 = j.at("alpha3").get<double>();
  vc.beta1 = j.at("beta1").get<double>();
  vc.beta2 = j.at("beta2").get<double>();
  return vc;
}

}  // namespace

void save_vqvae(PartVqvae& model, const std::string& part_kind, uint64_t model_seed,
                const std::string& path, const std::string& config_hash) {
  Checkpoint ckpt;
  ckpt.manifest["version"] = 1;
  ckpt.manifest["type"] = "vqvae";
  ckpt.manifest["part_kind"] = part_kind;
  ckpt.manifest["model_seed"] = model_seed;
  ckpt.manifest["config_hash"] = config_hash;
  ckpt.manifest["config"] = vqvae_config_json(model.config());
  pack_params(ckpt, model.params());
  ckpt.add("state.activation_counts", CkptEntry::from_ints(model.codebook().activation_counts()));
  std::vector<int64_t> hist;
  for (const auto& [step, count] : model.codebook().reinit_history()) {
    hist.push_back(step);
    hist.push_back(count);
  }
  ckpt.add("state.reinit_history", CkptEntry::from_ints(hist));
  fs::create_directories(fs::path(path).parent_path());
  save_checkpoint(path, ckpt);
}

std::unique_ptr<PartVqvae> load_vqvae(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("type", "") != "vqvae")
    throw DataError("checkpoint " + path + " is not a vqvae checkpoint");
  const VqvaeConfig vc = vqvae_config_from_json(ckpt.manifest.at("config"));
  const uint64_t seed = ckpt.manifest.value("model_seed", 0ull);
  std::unique_ptr<PartVqvae> model;
  const std::string kind = ckpt.manifest.value("part_kind", "torso");
  if (kind == "torso")
    model = std::make_unique<TorsoVqvae>(vc, seed);
  else
    model = std::make_unique<HandVqvae>(vc, seed);
  unpack_params(ckpt, model->params());
  const CkptEntry* counts = ckpt.find("state.activation_counts");
  const CkptEntry* hist = ckpt.find("state.reinit_history");
  if (counts && hist) {
    std::vector<std::pair<int64_t, int64_t>> h;
    for (size_t i = 0; i + 1 < hist->i64.size(); i += 2) h.emplace_back(hist->i64[i], hist->i64[i + 1]);
    model->codebook().set_counters(counts->i64, h);
  }
  return model;
}

void run_train_vq(const RunConfig& raw, const std::string& part_str, const std::string& modality_str) {
  const RunConfig cfg = with_defaults(raw);
  const BodyPart part = part_from_name(part_str);
  const Modality m = modality_from_name(modality_str);
  if (part != BodyPart::Torso && m != Modality::Speech)
    throw ConfigError("hand tokenizers exist only for the speech domain");
  const fs::path ddir = data_dir(cfg, m);
  require_upstream(ddir / "manifest.json", "synth-data");
  const auto samples = load_dataset(ddir.string());
  const auto train = split_of(samples, "train");
  const auto heldout = split_of(samples, "heldout");

  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("run.seed", 42));
  Rng root(seed);
  const uint64_t model_seed = root.fork("vq-" + part_str + "-" + modality_str).seed();

  std::unique_ptr<PartVqvae> model;
  const VqvaeConfig vc = vq_config_from(cfg, part);
  if (part == BodyPart::Torso)
    model = std::make_unique<TorsoVqvae>(vc, model_seed);
  else
    model = std::make_unique<HandVqvae>(vc, model_seed);

  std::vector<Mat> train_storage, held_storage;
  const auto train_mats = part_mats(train, part, train_storage);
  const auto held_mats = part_mats(heldout, part, held_storage);
  VqTrainConfig tc = vq_train_config_from(cfg, root.fork("vq-train-" + part_str + "-" + modality_str).seed());
  const VqTrainResult res = train_vqvae(*model, train_mats, held_mats, tc);

  const fs::path ckpt = vq_ckpt_path(cfg, part, m);
  save_vqvae(*model, part == BodyPart::Torso ? "torso" : "hand", model_seed, ckpt.string(),
             cfg.config_hash());
  const fs::path trace = out_dir(cfg) / "metrics" /
                         ("vq_" + part_str + "_" + modality_str + ".trace.json");
  write_trace_json(trace, res.trace);
  write_stage_manifest(cfg, "train-vq-" + part_str + "-" + modality_str,
                       {ddir / "manifest.json"}, {ckpt, trace});
}

// ---------------------------------------------------------------------------
// Prior checkpoints and stage

void save_prior(MotionPrior& prior, uint64_t model_seed, const std::string& path,
                const std::string& config_hash) {
  Checkpoint ckpt;
  ckpt.manifest["version"] = 1;
  ckpt.manifest["type"] = "prior";
  ckpt.manifest["model_seed"] = model_seed;
  ckpt.manifest["config_hash"] = config_hash;
  const PriorConfig& pc = prior.config();
  ckpt.manifest["config"] = {{"input_dim", pc.input_dim}, {"width", pc.width},
                             {"latent", pc.latent},       {"downsample", pc.downsample},
                             {"clip_len", pc.clip_len}};
  pack_params(ckpt, prior.params());
  fs::create_directories(fs::path(path).parent_path());
  save_checkpoint(path, ckpt);
}

std::unique_ptr<MotionPrior> load_prior(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("type", "") != "prior")
    throw DataError("checkpoint " + path + " is not a prior checkpoint");
  const json& j = ckpt.manifest.at("config");
  PriorConfig pc;
  pc.input_dim = j.at("input_dim").get<int>();
  pc.width = j.at("width").get<int>();
  pc.latent = j.at("latent").get<int>();
  pc.downsample = j.at("downsample").get<int>();
  pc.clip_len = j.at("clip_len").get<int>();
  auto prior = std::make_unique<MotionPrior>(pc, ckpt.manifest.value("model_seed", 0ull));
  unpack_params(ckpt, prior->params());
  return prior;
}

void run_train_prior(const RunConfig& raw) {
  const RunConfig cfg = with_defaults(raw);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("run.seed", 42));
  Rng root(seed);
  std::vector<fs::path> inputs, outputs;
  for (const std::string& name : cfg.get_list("data.modalities", {"text"})) {
    const Modality m = modality_from_name(name);
    const fs::path ddir = data_dir(cfg, m);
    require_upstream(ddir / "manifest.json", "synth-data");
    inputs.push_back(ddir / "manifest.json");
    const auto samples = load_dataset(ddir.string());
    const auto train = split_of(samples, "train");
    std::vector<Mat> storage;
    storage.reserve(train.size());
    for (const Sample* s : train) storage.push_back(active_channels(s->clip, m));
    std::vector<const Mat*> mats;
    for (const Mat& mm : storage) mats.push_back(&mm);

    const uint64_t model_seed = root.fork("prior-" + name).seed();
    MotionPrior prior(prior_config_from(cfg, m), model_seed);
    PriorTrainConfig pc;
    pc.steps = static_cast<int>(cfg.get_int("prior.steps", 300));
    pc.batch = static_cast<int>(cfg.get_int("prior.batch", 8));
    pc.lr = cfg.get_double("prior.lr", 1e-3);
    pc.seed = root.fork("prior-train-" + name).seed();
    const PriorTrainResult res = train_prior(prior, mats, pc);

    const fs::path ckpt = prior_ckpt_path(cfg, m);
    save_prior(prior, model_seed, ckpt.string(), cfg.config_hash());
    const fs::path trace = out_dir(cfg) / "metrics" / ("prior_" + name + ".trace.json");
    write_trace_json(trace, res.trace);
    outputs.push_back(ckpt);
    outputs.push_back(trace);
  }
  write_stage_manifest(cfg, "train-prior", inputs, outputs);
}

// ---------------------------------------------------------------------------
// Encoders and seqgen checkpoints

EncoderSpec encoder_spec_from_config(const RunConfig& cfg, Modality m) {
  EncoderSpec spec;
  spec.modality = m;
  const std::string base = "encoders." + modality_name(m);
  spec.type = cfg.get_str(base + ".type", "synthetic");
  spec.path = cfg.get_str(base + ".path", "");
  spec.dim = static_cast<int>(cfg.get_int(base + ".dim", 24));
  spec.window = static_cast<int>(cfg.get_int(base + ".window", 256));
  spec.hop = static_cast<int>(cfg.get_int(base + ".hop", 128));
  spec.seed = static_cast<uint64_t>(cfg.get_int("encoders.seed", 9000));
  return spec;
}

std::shared_ptr<const ModalityEncoder> make_encoder(const EncoderSpec& spec) {
  if (spec.type == "precomputed") {
    if (spec.path.empty())
      throw ConfigError("precomputed encoder for " + modality_name(spec.modality) +
                        " needs encoders." + modality_name(spec.modality) + ".path");
    return std::make_shared<PrecomputedEncoder>(spec.modality, spec.path);
  }
  if (spec.type != "synthetic")
    throw ConfigError("unknown encoder type '" + spec.type + "' (expected synthetic|precomputed)");
  switch (spec.modality) {
    case Modality::Text: return std::make_shared<TextLabelEncoder>(spec.dim, spec.seed);
    case Modality::Music:
      return std::make_shared<MusicFeatureEncoder>(spec.dim, spec.window, spec.hop, spec.seed);
    case Modality::Speech:
      return std::make_shared<SpeechEnvelopeEncoder>(spec.dim, spec.window, spec.hop, spec.seed);
  }
  throw ConfigError("unknown encoder modality");
}

namespace {

json encoder_spec_json(const EncoderSpec& s) {
  return json{{"modality", modality_name(s.modality)},
              {"type", s.type},
              {"path", s.path},
              {"dim", s.dim},
              {"window", s.window},
              {"hop", s.hop},
              {"seed", s.seed}};
}

EncoderSpec encoder_spec_from_json(const json& j) {
  EncoderSpec s;
  s.modality = modality_from_name(j.at("modality").get<std::string>());
  s.type = j.value("type", "synthetic");
  s.path = j.value("path", "");
  s.dim = j.at("dim").get<int>();
  s.window = j.at("window").get<int>();
  s.hop = j.at("hop").get<int>();
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

}  // namespace

void save_seqgen(SeqGenModel& model, uint64_t model_seed,
                 const std::vector<EncoderSpec>& encoders, const std::string& path,
                 const std::string& config_hash, const nlohmann::json& prior_hashes) {
  Checkpoint ckpt;
  ckpt.manifest["version"] = 1;
  ckpt.manifest["type"] = "seqgen";
  ckpt.manifest["model_seed"] = model_seed;
  ckpt.manifest["config_hash"] = config_hash;
  ckpt.manifest["priors"] = prior_hashes;
  const SeqGenConfig& sc = model.config();
  ckpt.manifest["config"] = {{"dim", sc.dim},
                             {"heads", sc.heads},
                             {"ffn_mult", sc.ffn_mult},
                             {"enc_layers", sc.enc_layers},
                             {"base_layers", sc.base_layers},
                             {"head_layers", sc.head_layers},
                             {"max_cond_len", sc.max_cond_len},
                             {"max_tokens", sc.max_tokens},
                             {"aux_count", sc.aux_count},
                             {"lambda_sem", sc.lambda_sem}};
  json encs = json::array();
  for (const auto& e : encoders) encs.push_back(encoder_spec_json(e));
  ckpt.manifest["encoders"] = encs;
  json vocabs = json::array();
  for (const VocabKey& key : model.vocabulary_keys()) {
    const VocabEntry& entry = model.vocabulary(key);
    vocabs.push_back({{"part", part_name(key.part)},
                      {"modality", modality_name(key.modality)},
                      {"codebook_size", entry.codebook_size}});
    CkptEntry e;
    e.type = CkptEntry::Type::F64;
    e.shape = {entry.embeddings.rows, entry.embeddings.cols};
    e.f64 = entry.embeddings.v;
    ckpt.add("vocab." + part_name(key.part) + "." + modality_name(key.modality) + ".embeddings",
             std::move(e));
  }
  ckpt.manifest["vocabs"] = vocabs;
  pack_params(ckpt, model.params());
  fs::create_directories(fs::path(path).parent_path());
  save_checkpoint(path, ckpt);
}

std::unique_ptr<SeqGenModel> load_seqgen(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("type", "") != "seqgen")
    throw DataError("checkpoint " + path + " is not a seqgen checkpoint");
  const json& j = ckpt.manifest.at("config");
  SeqGenConfig sc;
  sc.dim = j.at("dim").get<int>();
  sc.heads = j.at("heads").get<int>();
  sc.ffn_mult = j.at("ffn_mult").get<int>();
  sc.enc_layers = j.at("enc_layers").get<int>();
  sc.base_layers = j.at("base_layers").get<int>();
  sc.head_layers = j.at("head_layers").get<int>();
  sc.max_cond_len = j.at("max_cond_len").get<int>();
  sc.max_tokens = j.at("max_tokens").get<int>();
  sc.aux_count = j.at("aux_count").get<int>();
  sc.lambda_sem = j.at("lambda_sem").get<double>();
  auto model = std::make_unique<SeqGenModel>(sc, ckpt.manifest.value("model_seed", 0ull));
  for (const auto& ej : ckpt.manifest.at("encoders"))
    model->register_encoder(make_encoder(encoder_spec_from_json(ej)));
  for (const auto& vj : ckpt.manifest.at("vocabs")) {
    const VocabKey key{part_from_name(vj.at("part").get<std::string>()),
                       modality_from_name(vj.at("modality").get<std::string>())};
    const CkptEntry* e = ckpt.find("vocab." + part_name(key.part) + "." +
                                   modality_name(key.modality) + ".embeddings");
    if (!e) throw DataError("seqgen checkpoint missing vocabulary embeddings for " + key.str());
    Mat emb(e->shape[0], e->shape[1]);
    emb.v = e->f64;
    model->add_vocabulary(key, emb);
  }
  unpack_params(ckpt, model->params());
  return model;
}

std::string head_hash(SeqGenModel& model, const VocabKey& key) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& name : model.head_param_names(key)) {
    auto p = model.params().find(name);
    if (!p) throw DataError("head parameter vanished: " + name);
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(p->tensor.values().data(), p->tensor.values().size() * sizeof(double), h);
  }
  return hash_hex(h);
}

// ---------------------------------------------------------------------------
// Sequence training stage

std::vector<SeqTrainItem> build_seq_items(const std::vector<const Sample*>& samples, Modality m,
                                          const std::map<BodyPart, PartVqvae*>& tokenizers,
                                          const MotionPrior* prior) {
  std::vector<SeqTrainItem> items;
  items.reserve(samples.size());
  for (const Sample* s : samples) {
    SeqTrainItem item;
    item.condition = s->condition;
    item.aux_id = m == Modality::Speech ? s->condition.speaker_id : -1;
    for (BodyPart part : active_parts(m)) {
      auto it = tokenizers.find(part);
      if (it == tokenizers.end())
        throw ConfigError("no tokenizer supplied for part " + part_name(part));
      const Mat& data = part == BodyPart::Torso
                            ? s->clip.torso
                            : (part == BodyPart::LeftHand ? s->clip.left_hand : s->clip.right_hand);
      item.tokens[part] = it->second->encode_tokens(data);
    }
    if (prior) item.motion_embedding = prior->embed(active_channels(s->clip, m));
    items.push_back(std::move(item));
  }
  return items;
}

void run_train_seq(const RunConfig& raw) {
  const RunConfig cfg = with_defaults(raw);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("run.seed", 42));
  Rng root(seed);
  const uint64_t model_seed = root.fork("seqgen").seed();
  SeqGenModel model(seq_config_from(cfg), model_seed);
  const double lambda = cfg.get_double("seq.lambda_sem", 0.1);

  std::vector<EncoderSpec> enc_specs;
  std::vector<fs::path> inputs;
  json stage_report = json::array();
  json prior_hashes = json::object();
  std::map<VocabKey, std::string> hash_after_own_stage;

  for (const std::string& name : cfg.get_list("seq.stages", {"text"})) {
    const Modality m = modality_from_name(name);
    const fs::path ddir = data_dir(cfg, m);
    require_upstream(ddir / "manifest.json", "synth-data");
    inputs.push_back(ddir / "manifest.json");
    const auto samples = load_dataset(ddir.string());
    const auto train = split_of(samples, "train");

    const EncoderSpec spec = encoder_spec_from_config(cfg, m);
    enc_specs.push_back(spec);
    model.register_encoder(make_encoder(spec));

    std::map<BodyPart, PartVqvae*> tokenizers;
    std::vector<std::unique_ptr<PartVqvae>> owned;
    for (BodyPart part : active_parts(m)) {
      const fs::path vq = vq_ckpt_path(cfg, part, m);
      require_upstream(vq, "train-vq --part " + part_name(part) + " --modality " + name);
      inputs.push_back(vq);
      owned.push_back(load_vqvae(vq.string()));
      tokenizers[part] = owned.back().get();
      const auto& emb_tensor = owned.back()->codebook().embeddings()->tensor;
      Mat emb(emb_tensor.rows(), emb_tensor.cols());
      emb.v = emb_tensor.values();
      model.add_vocabulary({part, m}, emb);
    }

    std::unique_ptr<MotionPrior> prior;
    if (lambda > 0.0) {
      const fs::path pp = prior_ckpt_path(cfg, m);
      require_upstream(pp, "train-prior");
      inputs.push_back(pp);
      prior_hashes[name] = file_hash(pp);
      prior = load_prior(pp.string());
      if (prior->config().latent != model.config().dim)
        throw ConfigError("semantic enhancement requires prior.latent == seq.dim (" +
                          std::to_string(prior->config().latent) +
                          " != " + std::to_string(model.config().dim) + ")");
    }

    const auto items = build_seq_items(train, m, tokenizers, prior.get());
    SeqTrainConfig tc;
    tc.steps = static_cast<int>(cfg.get_int("seq.steps", 400));
    tc.batch = static_cast<int>(cfg.get_int("seq.batch", 8));
    tc.lr = cfg.get_double("seq.lr", 1e-3);
    tc.lambda_sem = lambda;
    const std::string sem_mode = cfg.get_str("seq.sem_mode", "cosine");
    if (sem_mode != "cosine" && sem_mode != "pairwise")
      throw ConfigError("seq.sem_mode must be cosine or pairwise, got '" + sem_mode + "'");
    tc.sem_pairwise = sem_mode == "pairwise";
    tc.seed = root.fork("seq-train-" + name).seed();
    tc.eval_every = 100;
    const SeqTrainResult res = train_seqgen(model, items, tc);

    const fs::path trace = out_dir(cfg) / "metrics" / ("seq_" + name + ".trace.json");
    write_trace_json(trace, res.trace);

    json heads = json::object();
    for (const VocabKey& key : model.vocabulary_keys()) {
      const std::string h = head_hash(model, key);
      heads[key.str()] = h;
      if (key.modality == m) hash_after_own_stage[key] = h;
    }
    stage_report.push_back(
        {{"stage", name}, {"final_ce", res.final_ce}, {"head_hashes", heads}});
  }

  // Heads never change after the stage that trained them.
  json isolation = json::object();
  for (const auto& [key, h] : hash_after_own_stage)
    isolation[key.str()] = (head_hash(model, key) == h);
  const fs::path ckpt = seq_ckpt_path(cfg);
  save_seqgen(model, model_seed, enc_specs, ckpt.string(), cfg.config_hash(), prior_hashes);
  const fs::path report_path = out_dir(cfg) / "metrics" / "seq_stages.json";
  fs::create_directories(report_path.parent_path());
  {
    json report;
    report["stages"] = stage_report;
    report["head_isolation"] = isolation;
    std::ofstream os(report_path);
    os << report.dump(2) << "\n";
  }
  write_stage_manifest(cfg, "train-seq", inputs, {ckpt, report_path});
}

// ---------------------------------------------------------------------------
// Generation

namespace {

MotionClip assemble_clip(const RunConfig& cfg, Modality m,
                         const std::map<BodyPart, std::vector<int>>& tokens,
                         std::map<BodyPart, PartVqvae*>& decoders) {
  MotionClip clip;
  clip.fps = static_cast<int>(cfg.get_int("data.fps", 20));
  std::map<BodyPart, Mat> parts;
  int frames = 0;
  for (const auto& [part, ids] : tokens) {
    if (ids.empty()) continue;
    Mat decoded = decoders.at(part)->decode_tokens(ids, {0.0, 0.0, 0.0});
    frames = std::max(frames, decoded.rows);
    parts[part] = std::move(decoded);
  }
  if (frames == 0) throw NumericError("generation produced no tokens before EOS for every part");
  auto fit = [&](BodyPart part, int cols) {
    auto it = parts.find(part);
    Mat out(frames, cols);
    if (it == parts.end()) return out;  // inactive or empty part: zeros
    const Mat& src = it->second;
    for (int t = 0; t < frames; ++t)
      for (int c = 0; c < cols; ++c) out.at(t, c) = src.at(std::min(t, src.rows - 1), c);
    return out;
  };
  const int ct = torso_channels(cfg);
  const int ch = static_cast<int>(cfg.get_int("data.hand_dim", 12));
  clip.torso = fit(BodyPart::Torso, ct);
  clip.left_hand = fit(BodyPart::LeftHand, ch);
  clip.right_hand = fit(BodyPart::RightHand, ch);
  (void)m;
  return clip;
}

ConditionPayload payload_from_input(const RunConfig& cfg, Modality m, const std::string& input) {
  ConditionPayload p;
  p.modality = m;
  if (m == Modality::Text) {
    if (input.empty()) throw DataError("generate: text modality needs --input \"<sentence>\"");
    p.text = input;
    return p;
  }
  // music/speech: a JSON payload file
  std::ifstream is(input);
  if (!is) throw DataError("generate: cannot open payload file: " + input);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("generate: payload is not valid JSON: " + std::string(e.what()));
  }
  p.audio = j.value("audio", std::vector<double>{});
  p.sample_rate = j.value("sample_rate", cfg.get_double("data.audio_rate", 800.0));
  p.beat_times = j.value("beat_times", std::vector<double>{});
  p.speaker_id = j.value("speaker_id", -1);
  if (p.audio.empty()) throw DataError("generate: payload carries no audio samples");
  return p;
}

}  // namespace

void run_generate(const RunConfig& raw, const GenerateArgs& args) {
  const RunConfig cfg = with_defaults(raw);
  const Modality m = modality_from_name(args.modality);
  const fs::path seq_path = seq_ckpt_path(cfg);
  require_upstream(seq_path, "train-seq");
  auto model = load_seqgen(seq_path.string());

  std::map<BodyPart, PartVqvae*> decoders;
  std::vector<std::unique_ptr<PartVqvae>> owned;
  std::vector<fs::path> inputs{seq_path};
  for (BodyPart part : active_parts(m)) {
    const fs::path vq = vq_ckpt_path(cfg, part, m);
    require_upstream(vq, "train-vq --part " + part_name(part) + " --modality " + args.modality);
    inputs.push_back(vq);
    owned.push_back(load_vqvae(vq.string()));
    decoders[part] = owned.back().get();
  }

  const int downsample = static_cast<int>(cfg.get_int("vq.downsample", 4));
  if (args.length_frames <= 0) throw DataError("generate: length cap must be positive frames");
  GenerationRequest req;
  req.modality = m;
  req.max_tokens = std::max(1, args.length_frames / downsample);
  req.policy.kind = sampler_from_name(args.sampler);
  req.policy.temperature = args.temperature;
  req.policy.reweight_temperature = args.reweight_temperature > 0
                                        ? args.reweight_temperature
                                        : cfg.get_double("sampling.reweight_temperature", 1.0);
  req.interleaved = args.interleaved;

  std::vector<fs::path> outputs;
  if (args.from_dataset.empty()) {
    req.payload = payload_from_input(cfg, m, args.input);
    req.aux_id = args.aux_id >= 0 ? args.aux_id : req.payload.speaker_id;
    req.policy.seed = args.seed;
    const auto tokens = model->generate(req);
    MotionClip clip = assemble_clip(cfg, m, tokens, decoders);
    if (args.out.empty()) throw ConfigError("generate: --out path required");
    fs::create_directories(fs::path(args.out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(args.out).parent_path());
    write_motion(clip, args.out);
    outputs.push_back(args.out);
  } else {
    require_upstream(fs::path(args.from_dataset) / "manifest.json", "synth-data");
    inputs.push_back(fs::path(args.from_dataset) / "manifest.json");
    const auto ref = load_dataset(args.from_dataset);
    std::vector<Sample> generated;
    Rng root(args.seed);
    for (const Sample& s : ref) {
      if (!args.split.empty() && s.split != args.split) continue;
      for (int r = 0; r < args.repeats; ++r) {
        req.payload = s.condition;
        req.aux_id = m == Modality::Speech ? s.condition.speaker_id : -1;
        req.policy.seed = root.fork(s.id, static_cast<uint64_t>(r)).seed();
        const auto tokens = model->generate(req);
        Sample g;
        g.clip = assemble_clip(cfg, m, tokens, decoders);
        g.condition = s.condition;
        g.id = s.id + "#rep" + std::to_string(r);
        g.condition.id = g.id;
        g.group = s.id;
        g.split = "gen";
        g.clip.labels = s.clip.labels;
        generated.push_back(std::move(g));
      }
    }
    if (generated.empty()) throw DataError("generate: no conditions matched split '" + args.split + "'");
    SynthSpec spec = synth_spec_from_config(cfg, m);
    const std::string dir = args.out.empty() ? (out_dir(cfg) / "gen" / args.modality).string()
                                             : args.out;
    write_dataset(generated, spec, dir);
    outputs.push_back(fs::path(dir) / "manifest.json");
  }
  write_stage_manifest(cfg, "generate-" + args.modality, inputs, outputs);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

// Feature rows per consecutive window; always at least one via fit_window.
void add_segment_features(FeatureSet& set, const MotionPrior& prior, const Mat& channels,
                          const std::string& id, const std::string& group, int segment_frames) {
  const int seg = segment_frames > 0 ? segment_frames : prior.config().clip_len;
  int count = 0;
  for (int start = 0; start + seg <= channels.rows; start += seg) {
    Mat window(seg, channels.cols);
    for (int t = 0; t < seg; ++t)
      for (int c = 0; c < channels.cols; ++c) window.at(t, c) = channels.at(start + t, c);
    set.add(id + "#s" + std::to_string(count), group, prior.embed(window));
    ++count;
  }
  if (count == 0) set.add(id + "#s0", group, prior.embed(channels));
}

std::string sample_group(const Sample& s) {
  if (!s.group.empty()) return s.group;
  switch (s.condition.modality) {
    case Modality::Text: return s.condition.text;
    case Modality::Music:
    case Modality::Speech:
      return s.clip.labels.empty() ? s.id : s.clip.labels.front();
  }
  return s.id;
}

AlignmentModel train_or_load_alignment(const RunConfig& cfg, const std::vector<Sample>& ref,
                                       Modality m, const fs::path& cache_path) {
  AlignmentConfig ac;
  ac.motion = prior_config_from(cfg, m);
  ac.shared_dim = ac.motion.latent;
  ac.tau = cfg.get_double("eval.align.tau", 0.07);
  const EncoderSpec text_spec = encoder_spec_from_config(cfg, m);
  const uint64_t seed = Rng(static_cast<uint64_t>(cfg.get_int("run.seed", 42)))
                            .fork("align-" + modality_name(m)).seed();
  AlignmentModel model(ac, make_encoder(text_spec), seed);

  if (fs::exists(cache_path)) {
    const Checkpoint ckpt = load_checkpoint(cache_path.string());
    unpack_params(ckpt, model.params());
    unpack_params(ckpt, model.motion_autoencoder().params(), "motion_ae.");
    return model;
  }
  // Pretrain the motion autoencoder, then tune jointly with the adapters.
  const fs::path prior_path = prior_ckpt_path(cfg, m);
  require_upstream(prior_path, "train-prior");
  auto prior = load_prior(prior_path.string());
  model.init_from_prior(*prior);

  std::vector<AlignmentPair> pairs;
  for (const auto& s : ref)
    if (s.split == "train") pairs.push_back({active_channels(s.clip, m), s.condition});
  AlignmentTrainConfig tc;
  tc.steps = static_cast<int>(cfg.get_int("eval.align.steps", 400));
  tc.batch = static_cast<int>(cfg.get_int("eval.align.batch", 8));
  tc.lr_adapter = cfg.get_double("eval.align.lr_adapter", 2e-3);
  tc.lr_encoder = cfg.get_double("eval.align.lr_encoder", 2e-4);
  tc.seed = Rng(seed).fork("train").seed();
  model.train(pairs, tc);

  Checkpoint ckpt;
  ckpt.manifest["type"] = "alignment";
  ckpt.manifest["config_hash"] = cfg.config_hash();
  pack_params(ckpt, model.params());
  pack_params(ckpt, model.motion_autoencoder().params(), "motion_ae.");
  fs::create_directories(cache_path.parent_path());
  save_checkpoint(cache_path.string(), ckpt);
  return model;
}

}  // namespace

nlohmann::json run_eval(const RunConfig& raw, const std::string& task, const std::string& gen_dir,
                        const std::string& ref_dir, const std::string& report_path) {
  const RunConfig cfg = with_defaults(raw);
  Modality m;
  if (task == "t2m")
    m = Modality::Text;
  else if (task == "m2m")
    m = Modality::Music;
  else if (task == "s2m")
    m = Modality::Speech;
  else
    throw ConfigError("unknown eval task '" + task + "' (expected t2m|m2m|s2m)");

  require_upstream(fs::path(ref_dir) / "manifest.json", "synth-data");
  require_upstream(fs::path(gen_dir) / "manifest.json", "generate --from-dataset " + ref_dir);
  const auto ref = load_dataset(ref_dir);
  const auto gen = load_dataset(gen_dir);
  const fs::path prior_path = prior_ckpt_path(cfg, m);
  require_upstream(prior_path, "train-prior");
  auto prior = load_prior(prior_path.string());

  const int seg = static_cast<int>(cfg.get_int("eval.segment_frames", prior->config().clip_len));
  FeatureSet real_set, gen_set;
  for (const auto& s : ref)
    add_segment_features(real_set, *prior, active_channels(s.clip, m), s.id, sample_group(s), seg);
  for (const auto& s : gen)
    add_segment_features(gen_set, *prior, active_channels(s.clip, m), s.id, sample_group(s), seg);

  const int n_pairs = static_cast<int>(cfg.get_int("eval.pairs", 200));
  const int eval_seeds = std::max(1, static_cast<int>(cfg.get_int("eval.seeds", 3)));
  const uint64_t seed0 = static_cast<uint64_t>(cfg.get_int("run.seed", 42));

  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return std::pair<double, double>(mean, v.size() > 1 ? std::sqrt(var / (v.size() - 1)) : 0.0);
  };

  json metrics = json::object();
  const std::string config_hash = cfg.config_hash();
  auto put_metric = [&](const std::string& name, double value, double std_dev) {
    metrics[name] = {{"value", value}, {"std", std_dev}, {"config_hash", config_hash}};
  };

  put_metric("fid", fid(real_set.features, gen_set.features), 0.0);
  {
    std::vector<double> div_vals, mm_vals;
    for (int s = 0; s < eval_seeds; ++s) {
      div_vals.push_back(diversity(gen_set, n_pairs, seed0 + 101 * s));
      mm_vals.push_back(multimodality(gen_set, n_pairs, seed0 + 211 * s).value);
    }
    auto [dm, ds] = mean_std(div_vals);
    put_metric("div", dm, ds);
    auto [mm, ms] = mean_std(mm_vals);
    put_metric("mm", mm, ms);
  }

  if (m == Modality::Text) {
    AlignmentModel align =
        train_or_load_alignment(cfg, ref, m, out_dir(cfg) / "ckpt" / "align_text.ckpt");
    std::vector<AlignmentPair> gen_pairs;
    for (const auto& s : gen) gen_pairs.push_back({active_channels(s.clip, m), s.condition});
    const int pool = static_cast<int>(cfg.get_int("eval.pool", 8));
    for (int k : {1, 2, 3}) {
      if (pool < k) continue;
      std::vector<double> vals;
      for (int s = 0; s < eval_seeds; ++s)
        vals.push_back(r_precision(align, gen_pairs, pool, k, seed0 + 307 * s));
      auto [mean, sd] = mean_std(vals);
      put_metric("r_top" + std::to_string(k), mean, sd);
    }
  }

  if (m == Modality::Music) {
    const double sigma = cfg.get_double("eval.bas_sigma", 0.1);
    double bas = 0.0;
    int counted = 0;
    for (const auto& s : gen) {
      if (s.condition.beat_times.empty()) continue;
      bas += beat_alignment(s.clip.torso, s.clip.fps, s.condition.beat_times, sigma);
      ++counted;
    }
    if (counted > 0) put_metric("bas", bas / counted, 0.0);
  }

  if (m == Modality::Speech) {
    const fs::path cache = out_dir(cfg) / "ckpt" / "idmodel.ckpt";
    IdConsistencyConfig ic;
    ic.n_ids = static_cast<int>(cfg.get_int("data.speakers", 4));
    ic.shared_dim = static_cast<int>(cfg.get_int("eval.id.shared_dim", 16));
    std::shared_ptr<const MotionPrior> prior_shared = std::move(prior);
    const uint64_t id_seed = Rng(seed0).fork("idmodel").seed();
    IdConsistencyModel idm(ic, prior_shared, make_encoder(encoder_spec_from_config(cfg, m)),
                           id_seed);
    if (fs::exists(cache)) {
      const Checkpoint ckpt = load_checkpoint(cache.string());
      unpack_params(ckpt, idm.params());
    } else {
      std::vector<IdSample> train_samples;
      for (const auto& s : ref)
        if (s.split == "train" && s.condition.speaker_id >= 0)
          train_samples.push_back(
              {active_channels(s.clip, m), s.condition, s.condition.speaker_id});
      IdTrainConfig tc;
      tc.steps = static_cast<int>(cfg.get_int("eval.id.steps", 400));
      tc.lr = cfg.get_double("eval.id.lr", 2e-3);
      tc.seed = Rng(id_seed).fork("train").seed();
      idm.train(train_samples, tc);
      Checkpoint ckpt;
      ckpt.manifest["type"] = "idmodel";
      ckpt.manifest["config_hash"] = config_hash;
      pack_params(ckpt, idm.params());
      fs::create_directories(cache.parent_path());
      save_checkpoint(cache.string(), ckpt);
    }
    std::vector<std::pair<Mat, int>> eval_items;
    for (const auto& s : gen)
      if (s.condition.speaker_id >= 0)
        eval_items.push_back({active_channels(s.clip, m), s.condition.speaker_id});
    if (!eval_items.empty()) {
      const IdMetrics im = idm.evaluate(eval_items);
      put_metric("id_acc", im.acc, 0.0);
      put_metric("id_i2i", im.i2i, 0.0);
    }
  }

  json report;
  report["task"] = task;
  report["ref"] = ref_dir;
  report["gen"] = gen_dir;
  report["counts"] = {{"ref_samples", ref.size()},
                      {"gen_samples", gen.size()},
                      {"real_features", real_set.count()},
                      {"gen_features", gen_set.count()}};
  // Numbers are only comparable under the same frozen extractor.
  report["feature_extractor"] = {{"checkpoint", prior_path.filename().string()},
                                 {"hash", file_hash(prior_path)}};
  report["metrics"] = metrics;
  if (!report_path.empty()) {
    fs::create_directories(fs::path(report_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(report_path).parent_path());
    std::ofstream os(report_path);
    os << report.dump(2) << "\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// Inspect

std::string run_inspect(const std::string& ckpt_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  std::ostringstream os;
  os << "checkpoint: " << ckpt_path << "\n";
  os << "manifest: " << ckpt.manifest.dump(2) << "\n";
  os << "entries (" << ckpt.entries.size() << "):\n";
  for (const auto& [name, e] : ckpt.entries) {
    os << "  " << name << "  shape=" << num::shape_str(e.shape)
       << (e.type == CkptEntry::Type::F64 ? " f64" : " i64") << "\n";
  }
  const CkptEntry* counts = ckpt.find("state.activation_counts");
  if (counts) {
    int64_t total = 0;
    int active = 0;
    for (int64_t c : counts->i64) {
      total += c;
      if (c > 0) ++active;
    }
    os << "codebook: " << counts->i64.size() << " tokens, " << active
       << " active since last re-init, " << total << " selections\n";
    if (total > 0) {
      std::vector<std::pair<int64_t, int>> sorted;
      for (size_t i = 0; i < counts->i64.size(); ++i)
        sorted.emplace_back(counts->i64[i], static_cast<int>(i));
      std::stable_sort(sorted.begin(), sorted.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      os << "top tokens:";
      for (size_t i = 0; i < std::min<size_t>(8, sorted.size()); ++i)
        os << " " << sorted[i].second << " (" << std::fixed
           << (static_cast<double>(sorted[i].first) / total) << ")";
      os << "\n";
    }
  }
  const CkptEntry* hist = ckpt.find("state.reinit_history");
  if (hist && !hist->i64.empty()) {
    os << "re-init history (step, count):";
    for (size_t i = 0; i + 1 < hist->i64.size(); i += 2)
      os << " (" << hist->i64[i] << ", " << hist->i64[i + 1] << ")";
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Direction benchmarks

double DirectionResult::median_baseline(const std::string& metric) const {
  std::vector<double> v;
  for (const auto& m : baseline) v.push_back(m.at(metric));
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double DirectionResult::median_variant(const std::string& metric) const {
  std::vector<double> v;
  for (const auto& m : variant) v.push_back(m.at(metric));
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

json DirectionResult::to_json() const {
  json j;
  j["baseline"] = baseline;
  j["variant"] = variant;
  return j;
}

namespace {

// Small text-torso dataset + single-part VQ benchmark shared by the
// re-init and two-stage benches.
struct VqBenchSetup {
  std::vector<Sample> samples;
  std::vector<Mat> train_storage, held_storage;
  std::vector<const Mat*> train, heldout;
};

VqBenchSetup make_vq_bench(const RunConfig& cfg, uint64_t seed) {
  VqBenchSetup setup;
  SynthSpec spec;
  spec.modality = Modality::Text;
  spec.count = static_cast<int>(cfg.get_int("ablate.vq.count", 48));
  spec.fps = 20;
  spec.min_frames = static_cast<int>(cfg.get_int("ablate.vq.frames", 32));
  spec.max_frames = spec.min_frames;
  spec.frame_multiple = 4;
  spec.torso_joints = static_cast<int>(cfg.get_int("ablate.vq.joints", 4));
  spec.hand_dim = 4;
  spec.noise_scale = cfg.get_double("ablate.vq.noise", 0.05);
  spec.holdout_fraction = 0.25;
  setup.samples = synth_dataset(spec, seed);
  auto train = split_of(setup.samples, "train");
  auto held = split_of(setup.samples, "heldout");
  setup.train = part_mats(train, BodyPart::Torso, setup.train_storage);
  setup.heldout = part_mats(held, BodyPart::Torso, setup.held_storage);
  return setup;
}

VqvaeConfig vq_bench_config(const RunConfig& cfg, bool two_stage) {
  VqvaeConfig vc;
  vc.input_dim = 3 + 3 * static_cast<int>(cfg.get_int("ablate.vq.joints", 4));
  vc.width = static_cast<int>(cfg.get_int("ablate.vq.width", 16));
  vc.downsample = 4;
  vc.code_dim = static_cast<int>(cfg.get_int("ablate.vq.code_dim", 16));
  vc.codebook_size = static_cast<int>(cfg.get_int("ablate.vq.codebook", 64));
  vc.two_stage = two_stage;
  vc.unet_width = static_cast<int>(cfg.get_int("ablate.vq.unet_width", 16));
  return vc;
}

}  // namespace

DirectionResult bench_reinit(const RunConfig& raw) {
  const RunConfig cfg = with_defaults(raw);
  const int seeds = static_cast<int>(cfg.get_int("ablate.seeds", 3));
  const int steps = static_cast<int>(cfg.get_int("ablate.reinit.steps", 5000));
  DirectionResult res;
  for (int s = 0; s < seeds; ++s) {
    const uint64_t seed = 1000 + 17 * static_cast<uint64_t>(s);
    VqBenchSetup setup = make_vq_bench(cfg, seed);
    for (bool reinit : {false, true}) {
      TorsoVqvae model(vq_bench_config(cfg, /*two_stage=*/false), seed);
      VqTrainConfig tc;
      tc.steps = steps;
      tc.batch = static_cast<int>(cfg.get_int("ablate.vq.batch", 4));
      tc.lr = cfg.get_double("ablate.reinit.lr", 5e-4);
      tc.reinit_enabled = reinit;
      tc.reinit_every = static_cast<int>(cfg.get_int("ablate.reinit.every", 50));
      // Bench threshold 1/(2K): separates the arms cleanly at this scale.
      tc.reinit_tau = cfg.get_double("ablate.reinit.tau", 1.0 / (2.0 * 64.0));
      tc.reinit_sigma = cfg.get_double("ablate.reinit.sigma", 1e-3);
      tc.eval_every = std::max(1, steps / 4);
      tc.seed = seed + 7;
      const VqTrainResult out = train_vqvae(model, setup.train, setup.heldout, tc);
      std::map<std::string, double> metrics{
          {"active_tokens", static_cast<double>(out.heldout_active_tokens)},
          {"heldout_mse", out.final_heldout_mse}};
      (reinit ? res.variant : res.baseline).push_back(std::move(metrics));
    }
  }
  return res;
}

DirectionResult bench_two_stage(const RunConfig& raw) {
  const RunConfig cfg = with_defaults(raw);
  const int seeds = static_cast<int>(cfg.get_int("ablate.seeds", 3));
  const int steps = static_cast<int>(cfg.get_int("ablate.two_stage.steps", 1500));
  DirectionResult res;
  for (int s = 0; s < seeds; ++s) {
    const uint64_t seed = 2000 + 23 * static_cast<uint64_t>(s);
    VqBenchSetup setup = make_vq_bench(cfg, seed);
    for (bool two_stage : {false, true}) {
      TorsoVqvae model(vq_bench_config(cfg, two_stage), seed);
      VqTrainConfig tc;
      tc.steps = steps;
      tc.batch = static_cast<int>(cfg.get_int("ablate.vq.batch", 4));
      tc.lr = cfg.get_double("ablate.vq.lr", 1e-3);
      tc.reinit_enabled = true;
      tc.reinit_every = 50;
      tc.eval_every = std::max(1, steps / 4);
      tc.seed = seed + 7;
      const VqTrainResult out = train_vqvae(model, setup.train, setup.heldout, tc);
      std::map<std::string, double> metrics{{"heldout_mse", out.final_heldout_mse}};
      (two_stage ? res.variant : res.baseline).push_back(std::move(metrics));
    }
  }
  return res;
}

namespace {

// Text-to-motion mini pipeline shared by the SaS and SemE benches.
struct T2mBench {
  std::vector<Sample> samples;
  std::unique_ptr<TorsoVqvae> vq;
  std::unique_ptr<MotionPrior> prior;
  std::unique_ptr<AlignmentModel> align;
  std::vector<SeqTrainItem> items;  // train split, tokenized
  std::vector<const Sample*> heldout;
  RunConfig cfg;
  uint64_t seed = 0;
};

T2mBench make_t2m_bench(const RunConfig& cfg, uint64_t seed) {
  T2mBench b;
  b.cfg = cfg;
  b.seed = seed;
  SynthSpec spec;
  spec.modality = Modality::Text;
  spec.count = static_cast<int>(cfg.get_int("ablate.t2m.count", 48));
  spec.fps = 20;
  spec.min_frames = 32;
  spec.max_frames = 32;
  spec.frame_multiple = 4;
  spec.torso_joints = static_cast<int>(cfg.get_int("ablate.t2m.joints", 4));
  spec.hand_dim = 4;
  spec.noise_scale = cfg.get_double("ablate.t2m.noise", 0.08);
  spec.holdout_fraction = 0.25;
  b.samples = synth_dataset(spec, seed);
  const auto train = split_of(b.samples, "train");
  b.heldout = split_of(b.samples, "heldout");

  VqvaeConfig vc = vq_bench_config(cfg, true);
  vc.codebook_size = static_cast<int>(cfg.get_int("ablate.t2m.codebook", 32));
  b.vq = std::make_unique<TorsoVqvae>(vc, seed + 1);
  std::vector<Mat> storage;
  std::vector<const Mat*> train_mats;
  for (const Sample* s : train) storage.push_back(s->clip.torso);
  for (const Mat& m : storage) train_mats.push_back(&m);
  VqTrainConfig vt;
  vt.steps = static_cast<int>(cfg.get_int("ablate.t2m.vq_steps", 1200));
  vt.batch = 4;
  vt.lr = 1e-3;
  vt.seed = seed + 2;
  vt.eval_every = vt.steps;
  train_vqvae(*b.vq, train_mats, {}, vt);

  PriorConfig pc;
  pc.input_dim = vc.input_dim;
  pc.width = 16;
  pc.latent = static_cast<int>(cfg.get_int("ablate.t2m.dim", 32));
  pc.downsample = 4;
  pc.clip_len = 32;
  b.prior = std::make_unique<MotionPrior>(pc, seed + 3);
  PriorTrainConfig pt;
  pt.steps = static_cast<int>(cfg.get_int("ablate.t2m.prior_steps", 600));
  pt.batch = 8;
  pt.lr = 1e-3;
  pt.seed = seed + 4;
  train_prior(*b.prior, train_mats, pt);

  AlignmentConfig ac;
  ac.motion = pc;
  ac.shared_dim = pc.latent;
  const EncoderSpec text_spec{Modality::Text, "synthetic", "", 24, 256, 128, 9000};
  b.align = std::make_unique<AlignmentModel>(ac, make_encoder(text_spec), seed + 5);
  b.align->init_from_prior(*b.prior);
  std::vector<AlignmentPair> pairs;
  for (const Sample* s : train) pairs.push_back({s->clip.torso, s->condition});
  AlignmentTrainConfig at;
  at.steps = static_cast<int>(cfg.get_int("ablate.t2m.align_steps", 500));
  at.batch = 8;
  at.seed = seed + 6;
  b.align->train(pairs, at);

  std::map<BodyPart, PartVqvae*> tokenizers{{BodyPart::Torso, b.vq.get()}};
  b.items = build_seq_items(train, Modality::Text, tokenizers, b.prior.get());
  return b;
}

std::unique_ptr<SeqGenModel> train_bench_seq(T2mBench& b, double lambda) {
  SeqGenConfig sc;
  sc.dim = static_cast<int>(b.cfg.get_int("ablate.t2m.dim", 32));
  sc.heads = 2;
  sc.enc_layers = 2;
  sc.base_layers = 2;
  sc.head_layers = 1;
  sc.max_cond_len = 16;
  sc.max_tokens = 12;
  sc.aux_count = 0;
  auto model = std::make_unique<SeqGenModel>(sc, b.seed + 10);
  model->register_encoder(make_encoder({Modality::Text, "synthetic", "", 24, 256, 128, 9000}));
  const auto& emb_tensor = b.vq->codebook().embeddings()->tensor;
  Mat emb(emb_tensor.rows(), emb_tensor.cols());
  emb.v = emb_tensor.values();
  model->add_vocabulary({BodyPart::Torso, Modality::Text}, emb);
  SeqTrainConfig tc;
  tc.steps = static_cast<int>(b.cfg.get_int("ablate.t2m.seq_steps", 1200));
  tc.batch = 8;
  tc.lr = b.cfg.get_double("ablate.t2m.seq_lr", 1e-3);
  tc.lambda_sem = lambda;
  tc.seed = b.seed + 11;
  train_seqgen(*model, b.items, tc);
  return model;
}

struct GenEval {
  double rtop1 = 0.0;
  double mm = 0.0;
};

GenEval eval_generated(T2mBench& b, SeqGenModel& model, const SamplerPolicy& policy, int repeats) {
  FeatureSet feats;
  std::vector<AlignmentPair> pairs;
  Rng root(b.seed + 100);
  for (const Sample* s : b.heldout) {
    for (int r = 0; r < repeats; ++r) {
      GenerationRequest req;
      req.modality = Modality::Text;
      req.payload = s->condition;
      req.max_tokens = 8;
      req.policy = policy;
      req.policy.seed = root.fork(s->id, static_cast<uint64_t>(r)).seed();
      const auto tokens = model.generate(req);
      const auto& torso_tokens = tokens.at(BodyPart::Torso);
      if (torso_tokens.empty()) continue;
      Mat motion = b.vq->decode_tokens(torso_tokens, {0.0, 0.0, 0.0});
      const std::string id = s->id + "#r" + std::to_string(r);
      feats.add(id, s->id, b.prior->embed(motion));
      pairs.push_back({std::move(motion), s->condition});
    }
  }
  GenEval out;
  if (pairs.size() < 4) return out;  // degenerate run; metrics stay at 0
  const int pool = std::min<int>(8, static_cast<int>(pairs.size()));
  out.rtop1 = r_precision(*b.align, pairs, pool, 1, b.seed + 200);
  out.mm = multimodality(feats, 64, b.seed + 300).value;
  return out;
}

}  // namespace

DirectionResult bench_sas(const RunConfig& raw) {
  const RunConfig cfg = with_defaults(raw);
  const int seeds = static_cast<int>(cfg.get_int("ablate.seeds", 3));
  const int repeats = static_cast<int>(cfg.get_int("ablate.t2m.repeats", 6));
  DirectionResult res;
  for (int s = 0; s < seeds; ++s) {
    const uint64_t seed = 3000 + 31 * static_cast<uint64_t>(s);
    T2mBench b = make_t2m_bench(cfg, seed);
    auto model = train_bench_seq(b, 0.1);
    SamplerPolicy multinomial{SamplerKind::Multinomial,
                              cfg.get_double("ablate.t2m.temperature", 1.0), 1.0, 0};
    SamplerPolicy semantic{SamplerKind::SemanticAware,
                           cfg.get_double("ablate.t2m.temperature", 1.0),
                           cfg.get_double("ablate.t2m.reweight_temperature", 3.0), 0};
    const GenEval base = eval_generated(b, *model, multinomial, repeats);
    const GenEval sas = eval_generated(b, *model, semantic, repeats);
    res.baseline.push_back({{"rtop1", base.rtop1}, {"mm", base.mm}});
    res.variant.push_back({{"rtop1", sas.rtop1}, {"mm", sas.mm}});
  }
  return res;
}

DirectionResult bench_seme(const RunConfig& raw) {
  const RunConfig cfg = with_defaults(raw);
  const int seeds = static_cast<int>(cfg.get_int("ablate.seeds", 3));
  const int repeats = static_cast<int>(cfg.get_int("ablate.t2m.repeats", 6));
  DirectionResult res;
  for (int s = 0; s < seeds; ++s) {
    const uint64_t seed = 4000 + 37 * static_cast<uint64_t>(s);
    T2mBench b = make_t2m_bench(cfg, seed);
    auto plain = train_bench_seq(b, 0.0);
    auto enhanced = train_bench_seq(b, cfg.get_double("ablate.t2m.lambda", 0.1));
    SamplerPolicy policy{SamplerKind::Multinomial, cfg.get_double("ablate.t2m.temperature", 1.0),
                         1.0, 0};
    const GenEval base = eval_generated(b, *plain, policy, repeats);
    const GenEval seme = eval_generated(b, *enhanced, policy, repeats);
    res.baseline.push_back({{"rtop1", base.rtop1}, {"mm", base.mm}});
    res.variant.push_back({{"rtop1", seme.rtop1}, {"mm", seme.mm}});
  }
  return res;
}

nlohmann::json run_ablate(const RunConfig& raw, const std::string& which) {
  const RunConfig cfg = with_defaults(raw);
  DirectionResult res;
  json summary;
  if (which == "reinit") {
    res = bench_reinit(cfg);
    summary["metric"] = "active_tokens";
    summary["direction"] = "variant (re-init on) should activate more tokens";
    summary["median_baseline"] = res.median_baseline("active_tokens");
    summary["median_variant"] = res.median_variant("active_tokens");
  } else if (which == "two-stage") {
    res = bench_two_stage(cfg);
    summary["metric"] = "heldout_mse";
    summary["direction"] = "variant (two-stage) should reconstruct better";
    summary["median_baseline"] = res.median_baseline("heldout_mse");
    summary["median_variant"] = res.median_variant("heldout_mse");
  } else if (which == "sas") {
    res = bench_sas(cfg);
    summary["metric"] = "rtop1 / mm";
    summary["direction"] = "variant (semantic-aware sampling) should raise R-Top-1";
    summary["median_baseline_rtop1"] = res.median_baseline("rtop1");
    summary["median_variant_rtop1"] = res.median_variant("rtop1");
    summary["median_baseline_mm"] = res.median_baseline("mm");
    summary["median_variant_mm"] = res.median_variant("mm");
  } else if (which == "seme") {
    res = bench_seme(cfg);
    summary["metric"] = "rtop1";
    summary["direction"] = "variant (semantic enhancement) should raise R-Top-1";
    summary["median_baseline"] = res.median_baseline("rtop1");
    summary["median_variant"] = res.median_variant("rtop1");
  } else {
    throw ConfigError("unknown ablation '" + which + "' (expected reinit|two-stage|seme|sas)");
  }
  summary["runs"] = res.to_json();
  const fs::path path = out_dir(cfg) / "metrics" / ("ablate_" + which + ".json");
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << summary.dump(2) << "\n";
  return summary;
}

}  // namespace mmg::pipeline
