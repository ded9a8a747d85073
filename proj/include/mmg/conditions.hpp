#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmg/layers.hpp"
#include "mmg/mat.hpp"
#include "mmg/synth.hpp"

namespace mmg {

// Frozen modality encoder: deterministic payload -> T' x c' embedding rows.
// Stand-ins for large pretrained encoders; never receives gradients.
class ModalityEncoder {
 public:
  virtual ~ModalityEncoder() = default;
  virtual Modality modality() const = 0;
  virtual int out_dim() const = 0;
  virtual Mat encode(const ConditionPayload& payload) const = 0;
};

// One fixed random row per vocabulary word, keyed by a hash of the word.
class TextLabelEncoder : public ModalityEncoder {
 public:
  TextLabelEncoder(int out_dim, uint64_t seed);
  Modality modality() const override { return Modality::Text; }
  int out_dim() const override { return dim_; }
  Mat encode(const ConditionPayload& payload) const override;

 private:
  int dim_;
  uint64_t seed_;
};

// Short-time energy and band-energy features per hop window, lifted to the
// output dim by a fixed random projection.
class MusicFeatureEncoder : public ModalityEncoder {
 public:
  MusicFeatureEncoder(int out_dim, int window, int hop, uint64_t seed);
  Modality modality() const override { return Modality::Music; }
  int out_dim() const override { return dim_; }
  int hop() const { return hop_; }
  Mat encode(const ConditionPayload& payload) const override;

 private:
  int dim_, window_, hop_;
  Mat lift_;  // feature -> out_dim projection, fixed at construction
};

// Windowed envelope statistics, lifted to the output dim.
class SpeechEnvelopeEncoder : public ModalityEncoder {
 public:
  SpeechEnvelopeEncoder(int out_dim, int window, int hop, uint64_t seed);
  Modality modality() const override { return Modality::Speech; }
  int out_dim() const override { return dim_; }
  Mat encode(const ConditionPayload& payload) const override;

 private:
  int dim_, window_, hop_;
  Mat lift_;
};

// Reads rows for a sample id from an embedding file written by
// write_embedding_file; lets externally computed encoders drop in.
class PrecomputedEncoder : public ModalityEncoder {
 public:
  PrecomputedEncoder(Modality m, const std::string& path);
  Modality modality() const override { return modality_; }
  int out_dim() const override { return dim_; }
  Mat encode(const ConditionPayload& payload) const override;

 private:
  Modality modality_;
  int dim_ = 0;
  std::map<std::string, Mat> rows_;
};

void write_embedding_file(const std::string& path, const std::map<std::string, Mat>& rows);

struct PaddedEmbedding {
  num::Tensor embedding;        // L x d
  std::vector<uint8_t> valid;   // 1 = real row, 0 = pad
};

// Adapter projection to the shared dimension plus auxiliary-condition
// fusion and pad handling. Owns the trainable adapter/aux/pad parameters
// inside the caller's ParamSet; the encoders themselves stay frozen.
class ConditionStage {
 public:
  ConditionStage(num::ParamSet& ps, int shared_dim, int aux_count, Rng& rng);

  void register_encoder(std::shared_ptr<const ModalityEncoder> enc, num::ParamSet& ps, Rng& rng);
  bool has(Modality m) const { return encoders_.count(m) > 0; }

  // Adapter-projected embedding sequence, length preserved.
  num::Tensor encode(const ConditionPayload& payload) const;

  // Appends the auxiliary embedding row; aux_id < 0 leaves the input as is.
  num::Tensor fuse_auxiliary(const num::Tensor& e, int aux_id) const;

  PaddedEmbedding pad_to_length(const num::Tensor& e, int length) const;

  int shared_dim() const { return dim_; }
  int aux_count() const { return aux_count_; }

 private:
  int dim_;
  int aux_count_;
  std::map<Modality, std::shared_ptr<const ModalityEncoder>> encoders_;
  std::map<Modality, nn::Linear> adapters_;
  std::shared_ptr<num::Parameter> aux_vocab_;
  std::shared_ptr<num::Parameter> pad_embedding_;
};

}  // namespace mmg
