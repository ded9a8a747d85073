#pragma once

#include <string>
#include <vector>

#include "mmg/layers.hpp"
#include "mmg/ops.hpp"

namespace mmg::nn {

struct MultiHeadAttention {
  int heads = 1, dim = 0;
  Linear wq, wk, wv, wo;
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamSet& ps, const std::string& name, int dim, int heads, Rng& rng);
  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const num::AttnMask* mask) const;
};

struct FeedForward {
  Linear up, down;
  FeedForward() = default;
  FeedForward(ParamSet& ps, const std::string& name, int dim, int mult, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// Pre-LN encoder layer: x + attn(ln(x)), x + ffn(ln(x)).
struct EncoderLayer {
  LayerNorm n1, n2;
  MultiHeadAttention self;
  FeedForward ff;
  EncoderLayer() = default;
  EncoderLayer(ParamSet& ps, const std::string& name, int dim, int heads, int ffn_mult, Rng& rng);
  Tensor forward(const Tensor& x, const num::AttnMask* mask) const;
};

// Pre-LN decoder layer with causal self-attention and cross-attention.
struct DecoderLayer {
  LayerNorm n1, n2, n3;
  MultiHeadAttention self, cross;
  FeedForward ff;
  DecoderLayer() = default;
  DecoderLayer(ParamSet& ps, const std::string& name, int dim, int heads, int ffn_mult, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& memory, const num::AttnMask& self_mask,
                 const num::AttnMask& mem_mask) const;
};

// Full-attention encoder with learned absolute positions and a final norm.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParamSet& ps, const std::string& name, int dim, int heads, int ffn_mult,
                     int layers, int max_len, Rng& rng);
  // valid: key-padding flags, one per row of e.
  Tensor forward(const Tensor& e, const std::vector<uint8_t>& valid) const;

 private:
  std::shared_ptr<Parameter> pos_;
  std::vector<EncoderLayer> layers_;
  LayerNorm final_;
};

// Decoder stack; the caller owns token embeddings and positions.
class TransformerDecoderStack {
 public:
  TransformerDecoderStack() = default;
  TransformerDecoderStack(ParamSet& ps, const std::string& name, int dim, int heads, int ffn_mult,
                          int layers, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& memory, const num::AttnMask& self_mask,
                 const num::AttnMask& mem_mask) const;
  int layer_count() const { return static_cast<int>(layers_.size()); }

 private:
  std::vector<DecoderLayer> layers_;
};

}  // namespace mmg::nn
