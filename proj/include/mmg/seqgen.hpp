#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmg/conditions.hpp"
#include "mmg/sampling.hpp"
#include "mmg/trace.hpp"
#include "mmg/transformer.hpp"
#include "mmg/vqvae.hpp"

namespace mmg {

enum class BodyPart { Torso, LeftHand, RightHand };

std::string part_name(BodyPart p);
BodyPart part_from_name(const std::string& name);

// Parts a modality conditions: text and music drive the torso only, speech
// drives torso plus both hands.
std::vector<BodyPart> active_parts(Modality m);

struct VocabKey {
  BodyPart part = BodyPart::Torso;
  Modality modality = Modality::Text;
  bool operator<(const VocabKey& o) const {
    return part != o.part ? part < o.part : modality < o.modality;
  }
  bool operator==(const VocabKey& o) const { return part == o.part && modality == o.modality; }
  std::string str() const { return part_name(part) + "/" + modality_name(modality); }
};

// One (body part, modality) vocabulary: K codebook ids plus BOS/EOS/PAD.
struct VocabEntry {
  VocabKey key;
  int codebook_size = 0;
  int bos = 0, eos = 0, pad = 0;
  int total = 0;
  Mat embeddings;  // frozen codebook snapshot for decoding-side distances
  SpecialIds specials() const { return {bos, eos, pad}; }
};

struct SeqGenConfig {
  int dim = 128;
  int heads = 4;
  int ffn_mult = 4;
  int enc_layers = 8;   // condition encoder
  int base_layers = 6;  // shared base decoder
  int head_layers = 2;  // per-vocabulary head decoder
  int max_cond_len = 64;
  int max_tokens = 64;
  int aux_count = 0;
  double lambda_sem = 0.1;
};

// Frozen motion autoencoder: temporal pooling encoder used as the semantic
// prior and as the metric feature extractor; the decoder exists for
// pretraining only. Operates on fixed-length windows.
struct PriorConfig {
  int input_dim = 0;
  int width = 32;
  int latent = 32;
  int downsample = 4;
  int clip_len = 32;
};

class MotionPrior {
 public:
  MotionPrior(const PriorConfig& cfg, uint64_t seed);
  num::ParamSet& params() { return params_; }
  const num::ParamSet& params() const { return params_; }
  const PriorConfig& config() const { return cfg_; }

  num::Tensor encode_tensor(const num::Tensor& x) const;  // clip_len x c -> 1 x latent
  num::Tensor decode_tensor(const num::Tensor& z) const;  // 1 x latent -> clip_len x c
  // Center-crop / edge-pad to the window, then encode; detached values.
  std::vector<double> embed(const Mat& part) const;
  Mat fit_window(const Mat& part) const;

 private:
  PriorConfig cfg_;
  num::ParamSet params_;
  SeqEncoder enc_;
  nn::Linear enc_out_;
  nn::Linear dec_in_;
  SeqDecoder dec_;
};

struct PriorTrainConfig {
  int steps = 1500;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 1;
  int eval_every = 100;
};

struct PriorTrainResult {
  std::vector<TraceRow> trace;
  double final_train_mse = 0.0;
};

PriorTrainResult train_prior(MotionPrior& prior, const std::vector<const Mat*>& clips,
                             const PriorTrainConfig& cfg);

struct GenerationRequest {
  Modality modality = Modality::Text;
  ConditionPayload payload;
  int max_tokens = 16;  // per-part length cap, in tokens
  SamplerPolicy policy;
  int aux_id = -1;          // auxiliary condition (speaker id); -1 = none
  bool interleaved = false; // cross-part conditioning extension for speech
};

// Encoder-decoder token generator: condition encoder with full attention,
// shared causal base decoder with cross-attention, and per-vocabulary head
// decoders projecting onto their own token space.
class SeqGenModel {
 public:
  SeqGenModel(const SeqGenConfig& cfg, uint64_t seed);

  const SeqGenConfig& config() const { return cfg_; }
  num::ParamSet& params() { return params_; }
  ConditionStage& conditions() { return *cond_; }
  void register_encoder(std::shared_ptr<const ModalityEncoder> enc);

  // Creates the head decoder + embedding table for a new vocabulary.
  // Existing heads are untouched, which is what makes staged domain
  // integration safe.
  void add_vocabulary(const VocabKey& key, const Mat& codebook_embeddings);
  bool has_vocabulary(const VocabKey& key) const { return heads_.count(key) > 0; }
  const VocabEntry& vocabulary(const VocabKey& key) const;
  std::vector<VocabKey> vocabulary_keys() const;

  struct EncodedCondition {
    num::Tensor memory;
    std::vector<uint8_t> valid;
  };
  // Adapter + aux fusion + optional padding + condition encoder.
  EncodedCondition encode_condition(const ConditionPayload& payload, int aux_id,
                                    int pad_to = -1) const;

  // Next-token logits at every prefix position. prefix ids live in the
  // vocabulary of `key` (BOS/EOS/PAD included); row i depends only on the
  // condition and prefix positions <= i.
  num::Tensor forward_logits(const EncodedCondition& cond, const std::vector<int>& prefix,
                             const VocabKey& key) const;

  std::map<BodyPart, std::vector<int>> generate(const GenerationRequest& req) const;

  // Parameter names of one head, for isolation audits.
  std::vector<std::string> head_param_names(const VocabKey& key) const;

 private:
  struct Head {
    VocabEntry entry;
    std::shared_ptr<num::Parameter> token_emb;
    std::shared_ptr<num::Parameter> part_tag;  // interleaved-mode stream tag
    nn::TransformerDecoderStack stack;
    nn::LayerNorm final;
    nn::Linear proj;
    std::vector<std::string> param_names;
  };
  num::Tensor decode_hidden(const num::Tensor& tok_embedding, const EncodedCondition& cond,
                            const Head& head) const;
  std::vector<int> generate_part(const GenerationRequest& req, const EncodedCondition& cond,
                                 const VocabKey& key, Rng& rng, DistanceCache& cache) const;
  std::map<BodyPart, std::vector<int>> generate_interleaved(const GenerationRequest& req,
                                                            const EncodedCondition& cond,
                                                            Rng& rng) const;

  SeqGenConfig cfg_;
  num::ParamSet params_;
  Rng init_rng_;
  std::unique_ptr<ConditionStage> cond_;
  nn::TransformerEncoder encoder_;
  nn::TransformerDecoderStack base_;
  std::shared_ptr<num::Parameter> tok_pos_;
  std::map<VocabKey, Head> heads_;
};

struct SeqTrainItem {
  ConditionPayload condition;
  int aux_id = -1;
  std::map<BodyPart, std::vector<int>> tokens;  // ground-truth ids per active part
  std::vector<double> motion_embedding;         // frozen prior e_m; empty if absent
};

struct SeqTrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 3e-4;
  double lambda_sem = 0.0;
  // false: per-sample cosine alignment of e_c to e_m. true: align the
  // within-batch similarity profiles of the two embedding sets instead.
  bool sem_pairwise = false;
  uint64_t seed = 1;
  int eval_every = 100;
};

struct SeqBatchLoss {
  num::Tensor total;
  std::map<std::string, double> terms;  // "ce <part>/<modality>", "sem"
};

// Cross-entropy over every active head plus the semantic alignment term
// lambda * mean(1 - cos(e_c, e_m)). PAD targets are excluded from the CE.
SeqBatchLoss seq_batch_loss(SeqGenModel& model, const std::vector<const SeqTrainItem*>& batch,
                            double lambda_sem, bool sem_pairwise = false);

struct SeqTrainResult {
  std::vector<TraceRow> trace;
  double final_ce = 0.0;
};

SeqTrainResult train_seqgen(SeqGenModel& model, const std::vector<SeqTrainItem>& items,
                            const SeqTrainConfig& cfg);

}  // namespace mmg
