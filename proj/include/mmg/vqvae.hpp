#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmg/codebook.hpp"
#include "mmg/layers.hpp"
#include "mmg/motion.hpp"
#include "mmg/synth.hpp"
#include "mmg/trace.hpp"

namespace mmg {

struct VqvaeConfig {
  int input_dim = 0;      // channels of the part this model tokenizes
  int width = 32;         // conv channel width
  int downsample = 4;     // temporal factor, power of two
  int codebook_size = 64;
  int code_dim = 32;
  bool two_stage = true;  // torso: enable the global U-net refiner
  int unet_width = 64;
  double alpha1 = 1.0, alpha2 = 1.0, alpha3 = 1.0;  // recon term weights
  double beta1 = 1.0;   // codebook term
  double beta2 = 0.25;  // commitment term
};

struct VqLossOut {
  num::Tensor total;
  std::map<std::string, double> terms;  // rec_local / rec_global_coarse / rec_global / codebook / commit
  std::vector<int> indices;
};

// Temporal stride-2 conv stack: T x c -> T/downsample x code_dim.
class SeqEncoder {
 public:
  SeqEncoder() = default;
  SeqEncoder(num::ParamSet& ps, const std::string& name, int in_dim, int width, int out_dim,
             int downsample, Rng& rng);
  num::Tensor forward(const num::Tensor& x) const;

 private:
  nn::Conv1d in_;
  std::vector<nn::Conv1d> downs_;
  std::vector<nn::ResBlock1d> blocks_;
  nn::Conv1d out_;
};

// Mirrored upsampling stack: T' x code_dim -> T x out_dim.
class SeqDecoder {
 public:
  SeqDecoder() = default;
  SeqDecoder(num::ParamSet& ps, const std::string& name, int code_dim, int width, int out_dim,
             int upsample, Rng& rng);
  num::Tensor forward(const num::Tensor& z) const;

 private:
  nn::Conv1d in_;
  std::vector<nn::ConvT1d> ups_;
  std::vector<nn::ResBlock1d> blocks_;
  nn::Conv1d out_;
};

// 1-D U-net refiner (2 down / 2 up, skip connections) applied as a residual
// correction; preserves length and channel count. Input length must be a
// multiple of 4.
class Unet1d {
 public:
  Unet1d() = default;
  Unet1d(num::ParamSet& ps, const std::string& name, int channels, int width, Rng& rng);
  num::Tensor forward(const num::Tensor& x) const;

 private:
  nn::Conv1d in_, d1_, d2_, out_;
  nn::ResBlock1d mid_;
  nn::ConvT1d u1_, u2_;
  nn::Conv1d m1_, m2_;
};

class PartVqvae {
 public:
  virtual ~PartVqvae() = default;
  virtual VqLossOut forward_loss(const Mat& part, bool count_activations) = 0;
  virtual std::vector<int> encode_tokens(const Mat& part) = 0;
  virtual Mat decode_tokens(const std::vector<int>& tokens,
                            const std::array<double, 3>& origin) = 0;
  virtual Mat reconstruct(const Mat& part) = 0;  // full encode/quantize/decode

  Codebook& codebook() { return *cb_; }
  const Codebook& codebook() const { return *cb_; }
  num::ParamSet& params() { return params_; }
  const VqvaeConfig& config() const { return cfg_; }
  void check_length(int frames) const;

 protected:
  VqvaeConfig cfg_;
  num::ParamSet params_;
  std::unique_ptr<Codebook> cb_;
};

// Single-stage tokenizer for hand PCA coefficients.
class HandVqvae : public PartVqvae {
 public:
  HandVqvae(const VqvaeConfig& cfg, uint64_t seed);
  VqLossOut forward_loss(const Mat& part, bool count_activations) override;
  std::vector<int> encode_tokens(const Mat& part) override;
  Mat decode_tokens(const std::vector<int>& tokens, const std::array<double, 3>& origin) override;
  Mat reconstruct(const Mat& part) override;

 private:
  SeqEncoder enc_;
  SeqDecoder dec_;
};

// Two-stage torso tokenizer: encodes the trajectory-delta representation,
// decodes local poses, integrates the trajectory, then refines globally.
class TorsoVqvae : public PartVqvae {
 public:
  TorsoVqvae(const VqvaeConfig& cfg, uint64_t seed);
  VqLossOut forward_loss(const Mat& part, bool count_activations) override;
  std::vector<int> encode_tokens(const Mat& part) override;
  Mat decode_tokens(const std::vector<int>& tokens, const std::array<double, 3>& origin) override;
  Mat reconstruct(const Mat& part) override;

  // Intermediate decode used by tests: local poses and the integrated
  // (pre-refiner) global poses.
  std::pair<num::Tensor, num::Tensor> decode_stages(const std::vector<int>& tokens,
                                                    const std::array<double, 3>& origin);

 private:
  SeqEncoder enc_;
  SeqDecoder dec_local_;
  std::unique_ptr<Unet1d> refiner_;
};

struct VqTrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  bool reinit_enabled = true;
  int reinit_every = 50;
  double reinit_tau = -1.0;  // <0 -> 1/(4K)
  double reinit_sigma = 1e-3;
  int eval_every = 100;
  uint64_t seed = 1;
};

struct VqTrainResult {
  std::vector<TraceRow> trace;
  double final_heldout_mse = 0.0;
  int heldout_active_tokens = 0;
  int total_reinit = 0;
};

// Trains a part tokenizer. `train`/`heldout` hold the part channel matrices.
VqTrainResult train_vqvae(PartVqvae& model, const std::vector<const Mat*>& train,
                          const std::vector<const Mat*>& heldout, const VqTrainConfig& cfg);

double heldout_recon_mse(PartVqvae& model, const std::vector<const Mat*>& heldout);
int heldout_active_token_count(PartVqvae& model, const std::vector<const Mat*>& heldout);

}  // namespace mmg
