#include "mmg/transformer.hpp"

#include "mmg/errors.hpp"

namespace mmg::nn {

using num::AttnMask;
using num::Tensor;

MultiHeadAttention::MultiHeadAttention(ParamSet& ps, const std::string& name, int dim, int heads,
                                       Rng& rng)
    : heads(heads),
      dim(dim),
      wq(ps, name + ".wq", dim, dim, rng),
      wk(ps, name + ".wk", dim, dim, rng),
      wv(ps, name + ".wv", dim, dim, rng),
      wo(ps, name + ".wo", dim, dim, rng) {
  if (dim % heads != 0)
    throw mmg::ConfigError("attention dim " + std::to_string(dim) + " not divisible by " +
                           std::to_string(heads) + " heads");
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in,
                                   const AttnMask* mask) const {
  const Tensor q = wq.forward(q_in);
  const Tensor k = wk.forward(kv_in);
  const Tensor v = wv.forward(kv_in);
  const int hd = dim / heads;
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const int c0 = h * hd, c1 = (h + 1) * hd;
    outs.push_back(num::attention(num::slice_cols(q, c0, c1), num::slice_cols(k, c0, c1),
                                  num::slice_cols(v, c0, c1), mask));
  }
  return wo.forward(heads == 1 ? outs[0] : num::concat_cols(outs));
}

FeedForward::FeedForward(ParamSet& ps, const std::string& name, int dim, int mult, Rng& rng)
    : up(ps, name + ".up", dim, dim * mult, rng), down(ps, name + ".down", dim * mult, dim, rng) {}

Tensor FeedForward::forward(const Tensor& x) const {
  return down.forward(num::gelu(up.forward(x)));
}

EncoderLayer::EncoderLayer(ParamSet& ps, const std::string& name, int dim, int heads, int ffn_mult,
                           Rng& rng)
    : n1(ps, name + ".n1", dim),
      n2(ps, name + ".n2", dim),
      self(ps, name + ".self", dim, heads, rng),
      ff(ps, name + ".ff", dim, ffn_mult, rng) {}

Tensor EncoderLayer::forward(const Tensor& x, const AttnMask* mask) const {
  Tensor normed = n1.forward(x);
  Tensor h = num::add(x, self.forward(normed, normed, mask));
  return num::add(h, ff.forward(n2.forward(h)));
}

DecoderLayer::DecoderLayer(ParamSet& ps, const std::string& name, int dim, int heads, int ffn_mult,
                           Rng& rng)
    : n1(ps, name + ".n1", dim),
      n2(ps, name + ".n2", dim),
      n3(ps, name + ".n3", dim),
      self(ps, name + ".self", dim, heads, rng),
      cross(ps, name + ".cross", dim, heads, rng),
      ff(ps, name + ".ff", dim, ffn_mult, rng) {}

Tensor DecoderLayer::forward(const Tensor& x, const Tensor& memory, const AttnMask& self_mask,
                             const AttnMask& mem_mask) const {
  Tensor normed = n1.forward(x);
  Tensor h = num::add(x, self.forward(normed, normed, &self_mask));
  h = num::add(h, cross.forward(n2.forward(h), memory, &mem_mask));
  return num::add(h, ff.forward(n3.forward(h)));
}

TransformerEncoder::TransformerEncoder(ParamSet& ps, const std::string& name, int dim, int heads,
                                       int ffn_mult, int layers, int max_len, Rng& rng) {
  pos_ = make_embedding(ps, name + ".pos", max_len, dim, rng);
  for (int l = 0; l < layers; ++l)
    layers_.emplace_back(ps, name + ".layer" + std::to_string(l), dim, heads, ffn_mult, rng);
  final_ = LayerNorm(ps, name + ".final", dim);
}

Tensor TransformerEncoder::forward(const Tensor& e, const std::vector<uint8_t>& valid) const {
  const int t = e.rows();
  if (static_cast<int>(valid.size()) != t)
    throw mmg::DimError("encoder: validity mask length " + std::to_string(valid.size()) +
                        " != sequence length " + std::to_string(t));
  if (t > pos_->tensor.rows())
    throw mmg::DataError("encoder: sequence length " + std::to_string(t) +
                         " exceeds max positions " + std::to_string(pos_->tensor.rows()));
  std::vector<int> pos_ids(t);
  for (int i = 0; i < t; ++i) pos_ids[i] = i;
  Tensor h = num::add(e, num::embedding_lookup(pos_->tensor, pos_ids));
  const AttnMask mask = AttnMask::key_padding(t, valid);
  for (const auto& layer : layers_) h = layer.forward(h, &mask);
  return final_.forward(h);
}

TransformerDecoderStack::TransformerDecoderStack(ParamSet& ps, const std::string& name, int dim,
                                                 int heads, int ffn_mult, int layers, Rng& rng) {
  for (int l = 0; l < layers; ++l)
    layers_.emplace_back(ps, name + ".layer" + std::to_string(l), dim, heads, ffn_mult, rng);
}

Tensor TransformerDecoderStack::forward(const Tensor& x, const Tensor& memory,
                                        const AttnMask& self_mask, const AttnMask& mem_mask) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer.forward(h, memory, self_mask, mem_mask);
  return h;
}

}  // namespace mmg::nn
