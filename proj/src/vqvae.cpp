#include "mmg/vqvae.hpp"

#include <cmath>

#include "mmg/errors.hpp"
#include "mmg/ops.hpp"

namespace mmg {

using num::Tensor;

namespace {

int log2_exact(int v, const char* what) {
  int l = 0, x = v;
  while (x > 1) {
    if (x % 2 != 0) throw ConfigError(std::string(what) + " must be a power of two, got " + std::to_string(v));
    x /= 2;
    ++l;
  }
  return l;
}

}  // namespace

SeqEncoder::SeqEncoder(num::ParamSet& ps, const std::string& name, int in_dim, int width,
                       int out_dim, int downsample, Rng& rng)
    : in_(ps, name + ".in", in_dim, width, 3, 1, 1, rng),
      out_(ps, name + ".out", width, out_dim, 3, 1, 1, rng) {
  const int levels = log2_exact(downsample, "encoder downsample");
  for (int l = 0; l < levels; ++l) {
    downs_.emplace_back(ps, name + ".down" + std::to_string(l), width, width, 4, 2, 1, rng);
    blocks_.emplace_back(ps, name + ".res" + std::to_string(l), width, rng);
  }
}

Tensor SeqEncoder::forward(const Tensor& x) const {
  Tensor h = num::relu(in_.forward(x));
  for (size_t l = 0; l < downs_.size(); ++l) {
    h = num::relu(downs_[l].forward(h));
    h = blocks_[l].forward(h);
  }
  return out_.forward(h);
}

SeqDecoder::SeqDecoder(num::ParamSet& ps, const std::string& name, int code_dim, int width,
                       int out_dim, int upsample, Rng& rng)
    : in_(ps, name + ".in", code_dim, width, 3, 1, 1, rng),
      out_(ps, name + ".out", width, out_dim, 3, 1, 1, rng) {
  const int levels = log2_exact(upsample, "decoder upsample");
  for (int l = 0; l < levels; ++l) {
    ups_.emplace_back(ps, name + ".up" + std::to_string(l), width, width, 4, 2, 1, rng);
    blocks_.emplace_back(ps, name + ".res" + std::to_string(l), width, rng);
  }
}

Tensor SeqDecoder::forward(const Tensor& z) const {
  Tensor h = num::relu(in_.forward(z));
  for (size_t l = 0; l < ups_.size(); ++l) {
    h = num::relu(ups_[l].forward(h));
    h = blocks_[l].forward(h);
  }
  return out_.forward(h);
}

Unet1d::Unet1d(num::ParamSet& ps, const std::string& name, int channels, int width, Rng& rng)
    : in_(ps, name + ".in", channels, width, 3, 1, 1, rng),
      d1_(ps, name + ".d1", width, width, 4, 2, 1, rng),
      d2_(ps, name + ".d2", width, 2 * width, 4, 2, 1, rng),
      out_(ps, name + ".outc", width, channels, 3, 1, 1, rng),
      mid_(ps, name + ".mid", 2 * width, rng),
      u1_(ps, name + ".u1", 2 * width, width, 4, 2, 1, rng),
      u2_(ps, name + ".u2", width, width, 4, 2, 1, rng),
      m1_(ps, name + ".m1", 2 * width, width, 3, 1, 1, rng),
      m2_(ps, name + ".m2", 2 * width, width, 3, 1, 1, rng) {}

Tensor Unet1d::forward(const Tensor& x) const {
  if (x.rows() % 4 != 0)
    throw DataError("refiner input length " + std::to_string(x.rows()) +
                    " is not a multiple of 4; pad or crop the clip");
  Tensor s0 = num::relu(in_.forward(x));          // T x w
  Tensor s1 = num::relu(d1_.forward(s0));         // T/2 x w
  Tensor h = num::relu(d2_.forward(s1));          // T/4 x 2w
  h = mid_.forward(h);                            // T/4 x 2w
  h = num::relu(u1_.forward(h));                  // T/2 x w
  h = num::relu(m1_.forward(num::concat_cols({h, s1})));  // skip
  h = num::relu(u2_.forward(h));                  // T x w
  h = num::relu(m2_.forward(num::concat_cols({h, s0})));  // skip
  Tensor correction = out_.forward(h);            // T x channels
  return num::add(x, correction);
}

void PartVqvae::check_length(int frames) const {
  if (frames <= 0) throw DataError("vqvae: empty input sequence");
  if (frames % cfg_.downsample != 0)
    throw DataError("vqvae: sequence length " + std::to_string(frames) +
                    " is not divisible by the downsample factor " +
                    std::to_string(cfg_.downsample) + "; pad or crop the clip");
}

HandVqvae::HandVqvae(const VqvaeConfig& cfg, uint64_t seed) {
  cfg_ = cfg;
  Rng rng(seed);
  Rng init = rng.fork("init");
  enc_ = SeqEncoder(params_, "encoder", cfg.input_dim, cfg.width, cfg.code_dim, cfg.downsample, init);
  dec_ = SeqDecoder(params_, "decoder", cfg.code_dim, cfg.width, cfg.input_dim, cfg.downsample, init);
  Rng cbrng = rng.fork("codebook");
  cb_ = std::make_unique<Codebook>(params_, "codebook", cfg.codebook_size, cfg.code_dim, cbrng);
}

VqLossOut HandVqvae::forward_loss(const Mat& part, bool count_activations) {
  check_length(part.rows);
  Tensor x = to_tensor(part);
  Tensor z = enc_.forward(x);
  QuantizeResult q = cb_->quantize(z, count_activations);
  Tensor recon = dec_.forward(q.quantized);
  Tensor rec = num::mse(recon, x);
  Tensor total = num::add(num::mul_scalar(rec, cfg_.alpha1),
                          num::add(num::mul_scalar(q.codebook_term, cfg_.beta1),
                                   num::mul_scalar(q.commit_term, cfg_.beta2)));
  VqLossOut out;
  out.total = total;
  out.terms["rec_local"] = rec.value_at(0);
  out.terms["codebook"] = q.codebook_term.value_at(0);
  out.terms["commit"] = q.commit_term.value_at(0);
  out.indices = q.indices;
  return out;
}

std::vector<int> HandVqvae::encode_tokens(const Mat& part) {
  check_length(part.rows);
  Tensor z = enc_.forward(to_tensor(part));
  return cb_->nearest_indices(z.values(), z.rows());
}

Mat HandVqvae::decode_tokens(const std::vector<int>& tokens, const std::array<double, 3>&) {
  if (tokens.empty()) throw DataError("decode_tokens: empty token sequence");
  for (int t : tokens)
    if (t < 0 || t >= cfg_.codebook_size)
      throw DataError("decode_tokens: token " + std::to_string(t) + " outside vocabulary [0," +
                      std::to_string(cfg_.codebook_size) + ")");
  Tensor q = num::embedding_lookup(cb_->embeddings()->tensor, tokens).detached();
  return to_mat(dec_.forward(q));
}

Mat HandVqvae::reconstruct(const Mat& part) {
  return decode_tokens(encode_tokens(part), {0.0, 0.0, 0.0});
}

TorsoVqvae::TorsoVqvae(const VqvaeConfig& cfg, uint64_t seed) {
  cfg_ = cfg;
  Rng rng(seed);
  Rng init = rng.fork("init");
  enc_ = SeqEncoder(params_, "encoder", cfg.input_dim, cfg.width, cfg.code_dim, cfg.downsample, init);
  dec_local_ =
      SeqDecoder(params_, "local_decoder", cfg.code_dim, cfg.width, cfg.input_dim, cfg.downsample, init);
  if (cfg.two_stage)
    refiner_ = std::make_unique<Unet1d>(params_, "refiner", cfg.input_dim, cfg.unet_width, init);
  Rng cbrng = rng.fork("codebook");
  cb_ = std::make_unique<Codebook>(params_, "codebook", cfg.codebook_size, cfg.code_dim, cbrng);
}

VqLossOut TorsoVqvae::forward_loss(const Mat& part, bool count_activations) {
  check_length(part.rows);
  const Mat delta = to_delta(part).torso_local;
  // Ground-truth origin so the integrated reconstruction is well-posed.
  const std::array<double, 3> origin = {part.at(0, 0), part.at(0, 1), part.at(0, 2)};

  Tensor x = to_tensor(part);
  Tensor xbar = to_tensor(delta);
  Tensor z = enc_.forward(xbar);
  QuantizeResult q = cb_->quantize(z, count_activations);
  Tensor ybar = dec_local_.forward(q.quantized);
  Tensor ytilde = num::integrate_prefix_columns(ybar, {origin[0], origin[1], origin[2]}, kTrajDims);

  Tensor rec_l = num::mse(ybar, xbar);
  Tensor rec_gt = num::mse(ytilde, x);
  Tensor total = num::add(num::mul_scalar(rec_l, cfg_.alpha1), num::mul_scalar(rec_gt, cfg_.alpha2));
  VqLossOut out;
  out.terms["rec_local"] = rec_l.value_at(0);
  out.terms["rec_global_coarse"] = rec_gt.value_at(0);
  if (refiner_) {
    Tensor y = refiner_->forward(ytilde);
    Tensor rec_g = num::mse(y, x);
    total = num::add(total, num::mul_scalar(rec_g, cfg_.alpha3));
    out.terms["rec_global"] = rec_g.value_at(0);
  }
  total = num::add(total, num::add(num::mul_scalar(q.codebook_term, cfg_.beta1),
                                   num::mul_scalar(q.commit_term, cfg_.beta2)));
  out.total = total;
  out.terms["codebook"] = q.codebook_term.value_at(0);
  out.terms["commit"] = q.commit_term.value_at(0);
  out.indices = q.indices;
  return out;
}

std::vector<int> TorsoVqvae::encode_tokens(const Mat& part) {
  check_length(part.rows);
  Tensor z = enc_.forward(to_tensor(to_delta(part).torso_local));
  return cb_->nearest_indices(z.values(), z.rows());
}

std::pair<Tensor, Tensor> TorsoVqvae::decode_stages(const std::vector<int>& tokens,
                                                    const std::array<double, 3>& origin) {
  if (tokens.empty()) throw DataError("decode_tokens: empty token sequence");
  for (int t : tokens)
    if (t < 0 || t >= cfg_.codebook_size)
      throw DataError("decode_tokens: token " + std::to_string(t) + " outside vocabulary [0," +
                      std::to_string(cfg_.codebook_size) + ")");
  Tensor q = num::embedding_lookup(cb_->embeddings()->tensor, tokens).detached();
  Tensor ybar = dec_local_.forward(q);
  Tensor ytilde = num::integrate_prefix_columns(ybar, {origin[0], origin[1], origin[2]}, kTrajDims);
  return {ybar, ytilde};
}

Mat TorsoVqvae::decode_tokens(const std::vector<int>& tokens, const std::array<double, 3>& origin) {
  auto [ybar, ytilde] = decode_stages(tokens, origin);
  if (refiner_) return to_mat(refiner_->forward(ytilde));
  return to_mat(ytilde);
}

Mat TorsoVqvae::reconstruct(const Mat& part) {
  const std::array<double, 3> origin = {part.at(0, 0), part.at(0, 1), part.at(0, 2)};
  return decode_tokens(encode_tokens(part), origin);
}

VqTrainResult train_vqvae(PartVqvae& model, const std::vector<const Mat*>& train,
                          const std::vector<const Mat*>& heldout, const VqTrainConfig& cfg) {
  if (train.empty()) throw DataError("train_vqvae: empty training set");
  const double tau =
      cfg.reinit_tau >= 0.0 ? cfg.reinit_tau : 1.0 / (4.0 * model.codebook().size());
  Rng rng(cfg.seed);
  Rng batch_rng = rng.fork("batches");
  Rng reinit_rng = rng.fork("reinit");
  num::Adam opt(model.params().all(), {.lr = cfg.lr});

  VqTrainResult res;
  std::map<std::string, double> acc;
  int acc_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    opt.zero_grad();
    Tensor loss;
    for (int b = 0; b < cfg.batch; ++b) {
      const Mat& item = *train[batch_rng.uniform_int(static_cast<int>(train.size()))];
      VqLossOut out = model.forward_loss(item, /*count_activations=*/true);
      Tensor scaled = num::mul_scalar(out.total, 1.0 / cfg.batch);
      loss = loss.defined() ? num::add(loss, scaled) : scaled;
      for (const auto& [k, v] : out.terms) acc[k] += v / cfg.batch;
    }
    ++acc_n;
    const double loss_val = loss.value_at(0);
    if (!std::isfinite(loss_val))
      throw NumericError("vq training diverged at step " + std::to_string(step) +
                         " (loss not finite)");
    num::backward(loss);
    opt.step();
    model.codebook().note_step();

    if (cfg.reinit_enabled && cfg.reinit_every > 0 &&
        model.codebook().steps_since_reinit() >= cfg.reinit_every) {
      res.total_reinit +=
          model.codebook().reinitialize(tau, cfg.reinit_sigma, reinit_rng, &opt, step);
    }

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      TraceRow row;
      row.step = step;
      for (auto& [k, v] : acc) row.values[k] = v / acc_n;
      acc.clear();
      acc_n = 0;
      int active = 0;
      for (int64_t c : model.codebook().activation_counts())
        if (c > 0) ++active;
      row.values["active_fraction"] = static_cast<double>(active) / model.codebook().size();
      if (!heldout.empty()) row.values["heldout_mse"] = heldout_recon_mse(model, heldout);
      res.trace.push_back(std::move(row));
    }
  }
  res.final_heldout_mse = heldout.empty() ? 0.0 : heldout_recon_mse(model, heldout);
  res.heldout_active_tokens = heldout.empty() ? 0 : heldout_active_token_count(model, heldout);
  return res;
}

double heldout_recon_mse(PartVqvae& model, const std::vector<const Mat*>& heldout) {
  double total = 0.0;
  for (const Mat* m : heldout) {
    const Mat recon = model.reconstruct(*m);
    double s = 0.0;
    for (size_t i = 0; i < m->v.size(); ++i) {
      const double d = recon.v[i] - m->v[i];
      s += d * d;
    }
    total += s / static_cast<double>(m->v.size());
  }
  return total / static_cast<double>(heldout.size());
}

int heldout_active_token_count(PartVqvae& model, const std::vector<const Mat*>& heldout) {
  std::vector<uint8_t> used(model.codebook().size(), 0);
  for (const Mat* m : heldout)
    for (int t : model.encode_tokens(*m)) used[t] = 1;
  int n = 0;
  for (uint8_t u : used) n += u;
  return n;
}

}  // namespace mmg
