#pragma once

#include <memory>
#include <vector>

#include "mmg/conditions.hpp"
#include "mmg/metrics.hpp"
#include "mmg/seqgen.hpp"

namespace mmg {

// Text-motion alignment model: frozen text encoder and a pretrained motion
// autoencoder, joined by two trainable adapters into a shared space where
// paired samples score high cosine similarity. Trained with reconstruction
// plus infoNCE.
struct AlignmentConfig {
  PriorConfig motion;    // motion encoder/decoder architecture
  int shared_dim = 32;
  double tau = 0.07;     // infoNCE temperature
};

struct AlignmentTrainConfig {
  int steps = 800;
  int batch = 8;
  double lr_adapter = 2e-3;
  double lr_encoder = 2e-4;  // small-lr tuning of the pretrained motion autoencoder
  bool tune_motion_encoder = true;
  bool tune_motion_decoder = true;
  uint64_t seed = 1;
  int eval_every = 100;
};

struct AlignmentPair {
  Mat motion;
  ConditionPayload condition;
};

class AlignmentModel {
 public:
  AlignmentModel(const AlignmentConfig& cfg,
                 std::shared_ptr<const ModalityEncoder> text_encoder, uint64_t seed);

  // Copies pretrained autoencoder weights into the motion branch.
  void init_from_prior(const MotionPrior& prior);

  std::vector<double> embed_motion(const Mat& motion) const;          // L2-normalized
  std::vector<double> embed_text(const ConditionPayload& cond) const; // L2-normalized

  std::vector<TraceRow> train(const std::vector<AlignmentPair>& pairs,
                              const AlignmentTrainConfig& cfg);

  // Batch infoNCE + reconstruction loss; exposed for oracle tests.
  num::Tensor batch_loss(const std::vector<const AlignmentPair*>& batch, double tau) const;

  const AlignmentConfig& config() const { return cfg_; }
  num::ParamSet& params() { return params_; }
  MotionPrior& motion_autoencoder() { return *motion_ae_; }

 private:
  num::Tensor motion_z(const num::Tensor& window) const;  // unnormalized shared embedding
  num::Tensor text_z(const ConditionPayload& cond) const;

  AlignmentConfig cfg_;
  num::ParamSet params_;
  std::shared_ptr<const ModalityEncoder> text_enc_;
  std::unique_ptr<MotionPrior> motion_ae_;
  nn::Linear adapter_m_, adapter_t_;
};

// One-directional infoNCE over paired rows: mean over i of
// -log( exp(<zm_i, zt_i>/tau) / sum_j exp(<zm_i, zt_j>/tau) ).
num::Tensor info_nce(const num::Tensor& zm, const num::Tensor& zt, double tau);

// Fraction of motions whose true condition ranks in the top-k by cosine
// against pool_size - 1 seeded distractor conditions.
double r_precision(const AlignmentModel& model, const std::vector<AlignmentPair>& pairs,
                   int pool_size, int top_k, uint64_t seed);

// Same ranking over precomputed (normalized) embedding rows.
double r_precision_embeddings(const std::vector<std::vector<double>>& zm,
                              const std::vector<std::vector<double>>& zt, int pool_size, int top_k,
                              uint64_t seed);

// Speech-to-motion identity consistency: frozen motion and speech encoders,
// trainable adapters and per-id cluster centers.
struct IdConsistencyConfig {
  int n_ids = 0;
  int shared_dim = 16;
};

struct IdTrainConfig {
  int steps = 600;
  int batch = 8;
  double lr = 2e-3;
  uint64_t seed = 1;
};

struct IdSample {
  Mat motion;
  ConditionPayload speech;
  int id = 0;
};

struct IdMetrics {
  double acc = 0.0;  // nearest-center id prediction accuracy
  double i2i = 0.0;  // mean intra/inter cluster distance ratio
};

class IdConsistencyModel {
 public:
  IdConsistencyModel(const IdConsistencyConfig& cfg, std::shared_ptr<const MotionPrior> motion_enc,
                     std::shared_ptr<const ModalityEncoder> speech_enc, uint64_t seed);

  std::vector<TraceRow> train(const std::vector<IdSample>& samples, const IdTrainConfig& cfg);

  std::vector<double> embed_motion(const Mat& motion) const;
  IdMetrics evaluate(const std::vector<std::pair<Mat, int>>& motions_with_ids) const;
  Mat centers() const;
  int n_ids() const { return cfg_.n_ids; }
  num::ParamSet& params() { return params_; }

 private:
  IdConsistencyConfig cfg_;
  num::ParamSet params_;
  std::shared_ptr<const MotionPrior> motion_enc_;
  std::shared_ptr<const ModalityEncoder> speech_enc_;
  nn::Linear adapter_m_, adapter_s_;
  std::shared_ptr<num::Parameter> centers_;
};

}  // namespace mmg
