#include "mmg/evalmodels.hpp"

#include <algorithm>
#include <cmath>

#include "mmg/errors.hpp"
#include "mmg/ops.hpp"

namespace mmg {

using num::Tensor;

AlignmentModel::AlignmentModel(const AlignmentConfig& cfg,
                               std::shared_ptr<const ModalityEncoder> text_encoder, uint64_t seed)
    : cfg_(cfg), text_enc_(std::move(text_encoder)) {
  if (cfg.shared_dim != cfg.motion.latent)
    throw ConfigError(
        "alignment: shared_dim must equal the motion latent dim so the pretrained decoder can "
        "reconstruct from aligned embeddings (" +
        std::to_string(cfg.shared_dim) + " != " + std::to_string(cfg.motion.latent) + ")");
  Rng rng(seed);
  motion_ae_ = std::make_unique<MotionPrior>(cfg.motion, rng.fork("motion-ae").seed());
  // Adapters live in this model's ParamSet; the autoencoder keeps its own so
  // the two learning rates stay separable.
  Rng init = rng.fork("adapters");
  adapter_m_ = nn::Linear(params_, "adapter_m", cfg.motion.latent, cfg.shared_dim, init);
  adapter_t_ = nn::Linear(params_, "adapter_t", text_enc_->out_dim(), cfg.shared_dim, init);
}

void AlignmentModel::init_from_prior(const MotionPrior& prior) {
  const auto& src = prior.params().all();
  for (const auto& p : src) {
    auto dst = motion_ae_->params().find(p->name);
    if (!dst || dst->tensor.shape() != p->tensor.shape())
      throw ConfigError("alignment model: prior architecture mismatch at '" + p->name + "'");
    dst->tensor.values() = p->tensor.values();
  }
}

Tensor AlignmentModel::motion_z(const Tensor& window) const {
  return adapter_m_.forward(motion_ae_->encode_tensor(window));
}

Tensor AlignmentModel::text_z(const ConditionPayload& cond) const {
  const Mat raw = text_enc_->encode(cond);
  return adapter_t_.forward(num::mean_rows(to_tensor(raw)));
}

std::vector<double> AlignmentModel::embed_motion(const Mat& motion) const {
  Tensor z = num::l2_normalize_rows(motion_z(to_tensor(motion_ae_->fit_window(motion))));
  return z.values();
}

std::vector<double> AlignmentModel::embed_text(const ConditionPayload& cond) const {
  Tensor z = num::l2_normalize_rows(text_z(cond));
  return z.values();
}

num::Tensor info_nce(const Tensor& zm, const Tensor& zt, double tau) {
  if (zm.rows() != zt.rows() || zm.cols() != zt.cols())
    throw DimError("info_nce: embedding shapes disagree");
  if (!(tau > 0.0)) throw ConfigError("info_nce: tau must be positive");
  Tensor sims = num::mul_scalar(num::matmul(zm, num::transpose(zt)), 1.0 / tau);
  std::vector<int> diag(zm.rows());
  for (int i = 0; i < zm.rows(); ++i) diag[i] = i;
  return num::cross_entropy(sims, diag);
}

Tensor AlignmentModel::batch_loss(const std::vector<const AlignmentPair*>& batch,
                                  double tau) const {
  if (batch.size() < 2) throw DataError("alignment: batch needs at least 2 pairs");
  std::vector<Tensor> zm_rows, zt_rows;
  Tensor recon_sum;
  for (const AlignmentPair* p : batch) {
    Tensor x = to_tensor(motion_ae_->fit_window(p->motion));
    Tensor zm = motion_z(x);
    zm_rows.push_back(zm);
    zt_rows.push_back(text_z(p->condition));
    // Reconstruction from the aligned embedding regularizes the shared space.
    Tensor recon = motion_ae_->decode_tensor(zm);
    Tensor term = num::mul_scalar(num::mse(recon, x), 1.0 / static_cast<double>(batch.size()));
    recon_sum = recon_sum.defined() ? num::add(recon_sum, term) : term;
  }
  Tensor zm = num::l2_normalize_rows(num::concat_rows(zm_rows));
  Tensor zt = num::l2_normalize_rows(num::concat_rows(zt_rows));
  return num::add(recon_sum, info_nce(zm, zt, tau));
}

std::vector<TraceRow> AlignmentModel::train(const std::vector<AlignmentPair>& pairs,
                                            const AlignmentTrainConfig& cfg) {
  if (pairs.size() < 2) throw DataError("alignment training: need at least 2 pairs");
  Rng rng(cfg.seed);
  Rng batch_rng = rng.fork("batches");
  num::Adam opt_fast(params_.all(), {.lr = cfg.lr_adapter});

  // Small-lr group: the pretrained motion encoder/decoder, per the tuning
  // flags (the frozen variants exist for the ablation).
  std::vector<std::shared_ptr<num::Parameter>> slow;
  for (const auto& p : motion_ae_->params().all()) {
    const bool enc = p->name.rfind("encoder", 0) == 0;
    const bool dec = p->name.rfind("decoder", 0) == 0;
    if ((enc && cfg.tune_motion_encoder) || (dec && cfg.tune_motion_decoder)) slow.push_back(p);
  }
  std::unique_ptr<num::Adam> opt_slow;
  if (!slow.empty()) opt_slow = std::make_unique<num::Adam>(slow, num::AdamConfig{.lr = cfg.lr_encoder});

  std::vector<TraceRow> trace;
  double acc = 0.0;
  int acc_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    opt_fast.zero_grad();
    if (opt_slow) opt_slow->zero_grad();
    // Frozen motion-ae params still collect grads on the tape; drop them
    // unless the slow group applies the update.
    for (const auto& p : motion_ae_->params().all()) p->tensor.zero_grad();

    std::vector<const AlignmentPair*> batch;
    const int bs = std::min<int>(cfg.batch, static_cast<int>(pairs.size()));
    for (int b = 0; b < bs; ++b)
      batch.push_back(&pairs[batch_rng.uniform_int(static_cast<int>(pairs.size()))]);
    Tensor loss = batch_loss(batch, cfg_.tau);
    const double lv = loss.value_at(0);
    if (!std::isfinite(lv))
      throw NumericError("alignment training diverged at step " + std::to_string(step));
    acc += lv;
    ++acc_n;
    num::backward(loss);
    opt_fast.step();
    if (opt_slow) opt_slow->step();
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      TraceRow row;
      row.step = step;
      row.values["loss"] = acc / acc_n;
      acc = 0.0;
      acc_n = 0;
      trace.push_back(std::move(row));
    }
  }
  return trace;
}

double r_precision_embeddings(const std::vector<std::vector<double>>& zm,
                              const std::vector<std::vector<double>>& zt, int pool_size, int top_k,
                              uint64_t seed) {
  const int n = static_cast<int>(zm.size());
  if (static_cast<int>(zt.size()) != n) throw DimError("r_precision: pair count mismatch");
  if (pool_size < top_k) throw ConfigError("r_precision: pool must be >= top_k");
  if (pool_size > n)
    throw DataError("r_precision: pool size " + std::to_string(pool_size) +
                    " exceeds dataset size " + std::to_string(n));
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;  // embeddings are already normalized
  };
  Rng rng(seed);
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const double true_sim = cosine(zm[i], zt[i]);
    int rank = 1;
    // P-1 distinct distractor conditions drawn from the other samples.
    std::vector<int> others;
    others.reserve(n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    for (int p = 0; p < pool_size - 1; ++p) {
      const int pick = rng.uniform_int(static_cast<int>(others.size()) - p);
      std::swap(others[pick], others[others.size() - 1 - p]);
      const int j = others[others.size() - 1 - p];
      if (cosine(zm[i], zt[j]) > true_sim) ++rank;
    }
    if (rank <= top_k) ++hits;
  }
  return static_cast<double>(hits) / n;
}

double r_precision(const AlignmentModel& model, const std::vector<AlignmentPair>& pairs,
                   int pool_size, int top_k, uint64_t seed) {
  const int n = static_cast<int>(pairs.size());
  std::vector<std::vector<double>> zm(n), zt(n);
  for (int i = 0; i < n; ++i) {
    zm[i] = model.embed_motion(pairs[i].motion);
    zt[i] = model.embed_text(pairs[i].condition);
  }
  return r_precision_embeddings(zm, zt, pool_size, top_k, seed);
}

IdConsistencyModel::IdConsistencyModel(const IdConsistencyConfig& cfg,
                                       std::shared_ptr<const MotionPrior> motion_enc,
                                       std::shared_ptr<const ModalityEncoder> speech_enc,
                                       uint64_t seed)
    : cfg_(cfg), motion_enc_(std::move(motion_enc)), speech_enc_(std::move(speech_enc)) {
  if (cfg.n_ids < 2) throw ConfigError("id consistency: need at least 2 ids");
  Rng rng(seed);
  Rng init = rng.fork("init");
  adapter_m_ = nn::Linear(params_, "adapter_m", motion_enc_->config().latent, cfg.shared_dim, init);
  adapter_s_ = nn::Linear(params_, "adapter_s", speech_enc_->out_dim(), cfg.shared_dim, init);
  centers_ = params_.create("centers", {cfg.n_ids, cfg.shared_dim});
  nn::init_normal(*centers_, init, 0.5);
}

std::vector<double> IdConsistencyModel::embed_motion(const Mat& motion) const {
  // The pretrained encoder stays frozen; only its output enters the adapter.
  Tensor frozen = Tensor::from_data({1, motion_enc_->config().latent},
                                    motion_enc_->embed(motion), false);
  return adapter_m_.forward(frozen).values();
}

std::vector<TraceRow> IdConsistencyModel::train(const std::vector<IdSample>& samples,
                                                const IdTrainConfig& cfg) {
  if (samples.empty()) throw DataError("id consistency: empty training set");
  for (const auto& s : samples)
    if (s.id < 0 || s.id >= cfg_.n_ids)
      throw DataError("id consistency: sample id " + std::to_string(s.id) + " outside [0," +
                      std::to_string(cfg_.n_ids) + ")");
  Rng rng(cfg.seed);
  Rng batch_rng = rng.fork("batches");
  num::Adam opt(params_.all(), {.lr = cfg.lr});
  std::vector<TraceRow> trace;
  for (int step = 1; step <= cfg.steps; ++step) {
    opt.zero_grad();
    Tensor loss;
    const int bs = std::min<int>(cfg.batch, static_cast<int>(samples.size()));
    for (int b = 0; b < bs; ++b) {
      const IdSample& s = samples[batch_rng.uniform_int(static_cast<int>(samples.size()))];
      Tensor zm = adapter_m_.forward(Tensor::from_data(
          {1, motion_enc_->config().latent}, motion_enc_->embed(s.motion), false));
      Tensor zs = adapter_s_.forward(num::mean_rows(to_tensor(speech_enc_->encode(s.speech))));
      // Distance logits to the learned centers drive both the id cross
      // entropy and the clustering pull.
      auto center_logits = [&](const Tensor& z) {
        std::vector<Tensor> cols;
        for (int c = 0; c < cfg_.n_ids; ++c) {
          Tensor center = num::embedding_lookup(centers_->tensor, {c});
          Tensor diff = num::sub(z, center);
          cols.push_back(num::reshape(num::neg(num::sum_all(num::mul(diff, diff))), {1, 1}));
        }
        return num::concat_cols(cols);
      };
      Tensor ce_m = num::cross_entropy(center_logits(zm), {s.id});
      Tensor ce_s = num::cross_entropy(center_logits(zs), {s.id});
      Tensor pull = num::mse(zm, num::embedding_lookup(centers_->tensor, {s.id}).detached());
      Tensor item = num::add(num::add(ce_m, ce_s), pull);
      item = num::mul_scalar(item, 1.0 / bs);
      loss = loss.defined() ? num::add(loss, item) : item;
    }
    const double lv = loss.value_at(0);
    if (!std::isfinite(lv))
      throw NumericError("id-consistency training diverged at step " + std::to_string(step));
    num::backward(loss);
    opt.step();
    if (step % 100 == 0 || step == cfg.steps) {
      TraceRow row;
      row.step = step;
      row.values["loss"] = lv;
      trace.push_back(std::move(row));
    }
  }
  return trace;
}

Mat IdConsistencyModel::centers() const {
  Mat m(cfg_.n_ids, cfg_.shared_dim);
  m.v = centers_->tensor.values();
  return m;
}

IdMetrics IdConsistencyModel::evaluate(const std::vector<std::pair<Mat, int>>& motions_with_ids) const {
  if (motions_with_ids.empty()) throw DataError("id consistency: nothing to evaluate");
  const Mat c = centers();
  IdMetrics out;
  double i2i_sum = 0.0;
  int correct = 0;
  for (const auto& [motion, id] : motions_with_ids) {
    if (id < 0 || id >= cfg_.n_ids)
      throw DataError("id consistency: id " + std::to_string(id) + " not in the model");
    const auto z = embed_motion(motion);
    double d_intra = 0.0;
    double best = std::numeric_limits<double>::infinity();
    int best_id = 0;
    double inter_sum = 0.0;
    for (int j = 0; j < cfg_.n_ids; ++j) {
      double s = 0.0;
      for (int k = 0; k < cfg_.shared_dim; ++k) {
        const double diff = z[k] - c.at(j, k);
        s += diff * diff;
      }
      const double dist = std::sqrt(s);
      if (dist < best) {
        best = dist;
        best_id = j;
      }
      if (j == id)
        d_intra = dist;
      else
        inter_sum += dist;
    }
    const double d_inter = inter_sum / (cfg_.n_ids - 1);
    if (d_inter <= 0.0) throw NumericError("id consistency: degenerate (coincident) centers");
    i2i_sum += d_intra / d_inter;
    if (best_id == id) ++correct;
  }
  out.acc = static_cast<double>(correct) / motions_with_ids.size();
  out.i2i = i2i_sum / motions_with_ids.size();
  return out;
}

}  // namespace mmg
