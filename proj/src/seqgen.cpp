#include "mmg/seqgen.hpp"

#include <cmath>

#include "mmg/errors.hpp"
#include "mmg/ops.hpp"

namespace mmg {

using num::AttnMask;
using num::Tensor;

std::string part_name(BodyPart p) {
  switch (p) {
    case BodyPart::Torso: return "torso";
    case BodyPart::LeftHand: return "lhand";
    case BodyPart::RightHand: return "rhand";
  }
  return "?";
}

BodyPart part_from_name(const std::string& name) {
  if (name == "torso") return BodyPart::Torso;
  if (name == "lhand") return BodyPart::LeftHand;
  if (name == "rhand") return BodyPart::RightHand;
  throw ConfigError("unknown body part '" + name + "' (expected torso|lhand|rhand)");
}

std::vector<BodyPart> active_parts(Modality m) {
  if (m == Modality::Speech)
    return {BodyPart::Torso, BodyPart::LeftHand, BodyPart::RightHand};
  return {BodyPart::Torso};
}

// ---------------------------------------------------------------------------
// MotionPrior

MotionPrior::MotionPrior(const PriorConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.clip_len % cfg.downsample != 0)
    throw ConfigError("prior: clip_len must be divisible by the downsample factor");
  Rng rng(seed);
  Rng init = rng.fork("init");
  enc_ = SeqEncoder(params_, "encoder", cfg.input_dim, cfg.width, cfg.width, cfg.downsample, init);
  enc_out_ = nn::Linear(params_, "encoder_out", cfg.width, cfg.latent, init);
  const int t0 = cfg.clip_len / cfg.downsample;
  dec_in_ = nn::Linear(params_, "decoder_in", cfg.latent, t0 * cfg.width, init);
  dec_ = SeqDecoder(params_, "decoder", cfg.width, cfg.width, cfg.input_dim, cfg.downsample, init);
}

Tensor MotionPrior::encode_tensor(const Tensor& x) const {
  if (x.rows() != cfg_.clip_len)
    throw DimError("prior: expected window of " + std::to_string(cfg_.clip_len) + " frames, got " +
                   std::to_string(x.rows()));
  Tensor h = enc_.forward(x);
  return enc_out_.forward(num::mean_rows(h));
}

Tensor MotionPrior::decode_tensor(const Tensor& z) const {
  const int t0 = cfg_.clip_len / cfg_.downsample;
  Tensor h = num::reshape(dec_in_.forward(z), {t0, cfg_.width});
  return dec_.forward(h);
}

Mat MotionPrior::fit_window(const Mat& part) const {
  if (part.rows == 0) throw DataError("prior: empty clip");
  if (part.cols != cfg_.input_dim)
    throw DimError("prior: clip has " + std::to_string(part.cols) + " channels, expected " +
                   std::to_string(cfg_.input_dim));
  Mat out(cfg_.clip_len, part.cols);
  if (part.rows >= cfg_.clip_len) {
    const int start = (part.rows - cfg_.clip_len) / 2;
    for (int i = 0; i < cfg_.clip_len; ++i)
      for (int j = 0; j < part.cols; ++j) out.at(i, j) = part.at(start + i, j);
  } else {
    for (int i = 0; i < cfg_.clip_len; ++i) {
      const int src = std::min(i, part.rows - 1);
      for (int j = 0; j < part.cols; ++j) out.at(i, j) = part.at(src, j);
    }
  }
  return out;
}

std::vector<double> MotionPrior::embed(const Mat& part) const {
  Tensor z = encode_tensor(to_tensor(fit_window(part)));
  return z.values();
}

PriorTrainResult train_prior(MotionPrior& prior, const std::vector<const Mat*>& clips,
                             const PriorTrainConfig& cfg) {
  if (clips.empty()) throw DataError("train_prior: empty dataset");
  Rng rng(cfg.seed);
  Rng batch_rng = rng.fork("batches");
  num::Adam opt(prior.params().all(), {.lr = cfg.lr});
  PriorTrainResult res;
  double acc = 0.0;
  int acc_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    opt.zero_grad();
    Tensor loss;
    for (int b = 0; b < cfg.batch; ++b) {
      const Mat& clip = *clips[batch_rng.uniform_int(static_cast<int>(clips.size()))];
      Tensor x = to_tensor(prior.fit_window(clip));
      Tensor recon = prior.decode_tensor(prior.encode_tensor(x));
      Tensor term = num::mul_scalar(num::mse(recon, x), 1.0 / cfg.batch);
      loss = loss.defined() ? num::add(loss, term) : term;
    }
    const double lv = loss.value_at(0);
    if (!std::isfinite(lv))
      throw NumericError("prior training diverged at step " + std::to_string(step));
    acc += lv;
    ++acc_n;
    num::backward(loss);
    opt.step();
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      TraceRow row;
      row.step = step;
      row.values["recon_mse"] = acc / acc_n;
      acc = 0.0;
      acc_n = 0;
      res.trace.push_back(std::move(row));
    }
  }
  double mse = 0.0;
  for (const Mat* c : clips) {
    Tensor x = to_tensor(prior.fit_window(*c));
    Tensor recon = prior.decode_tensor(prior.encode_tensor(x));
    mse += num::mse(recon, x).value_at(0);
  }
  res.final_train_mse = mse / static_cast<double>(clips.size());
  return res;
}

// ---------------------------------------------------------------------------
// SeqGenModel

SeqGenModel::SeqGenModel(const SeqGenConfig& cfg, uint64_t seed) : cfg_(cfg), init_rng_(seed) {
  Rng rng = init_rng_.fork("trunk");
  cond_ = std::make_unique<ConditionStage>(params_, cfg.dim, cfg.aux_count, rng);
  encoder_ = nn::TransformerEncoder(params_, "encoder", cfg.dim, cfg.heads, cfg.ffn_mult,
                                    cfg.enc_layers, cfg.max_cond_len, rng);
  base_ = nn::TransformerDecoderStack(params_, "base", cfg.dim, cfg.heads, cfg.ffn_mult,
                                      cfg.base_layers, rng);
  tok_pos_ = nn::make_embedding(params_, "base.pos", cfg.max_tokens + 1, cfg.dim, rng);
}

void SeqGenModel::register_encoder(std::shared_ptr<const ModalityEncoder> enc) {
  Rng rng = init_rng_.fork("adapter-" + modality_name(enc->modality()));
  cond_->register_encoder(std::move(enc), params_, rng);
}

void SeqGenModel::add_vocabulary(const VocabKey& key, const Mat& codebook_embeddings) {
  if (heads_.count(key)) throw ConfigError("vocabulary already registered for " + key.str());
  const int k = codebook_embeddings.rows;
  if (k < 2) throw ConfigError("vocabulary for " + key.str() + " needs at least 2 tokens");
  Head head;
  head.entry.key = key;
  head.entry.codebook_size = k;
  head.entry.bos = k;
  head.entry.eos = k + 1;
  head.entry.pad = k + 2;
  head.entry.total = k + 3;
  head.entry.embeddings = codebook_embeddings;

  const std::string prefix = "head." + part_name(key.part) + "." + modality_name(key.modality);
  Rng rng = init_rng_.fork("head-" + key.str());
  const size_t before = params_.all().size();
  head.token_emb = nn::make_embedding(params_, prefix + ".tokens", head.entry.total, cfg_.dim, rng);
  head.part_tag = nn::make_embedding(params_, prefix + ".tag", 1, cfg_.dim, rng);
  head.stack = nn::TransformerDecoderStack(params_, prefix, cfg_.dim, cfg_.heads, cfg_.ffn_mult,
                                           cfg_.head_layers, rng);
  head.final = nn::LayerNorm(params_, prefix + ".final", cfg_.dim);
  head.proj = nn::Linear(params_, prefix + ".proj", cfg_.dim, head.entry.total, rng);
  for (size_t i = before; i < params_.all().size(); ++i)
    head.param_names.push_back(params_.all()[i]->name);
  heads_.emplace(key, std::move(head));
}

const VocabEntry& SeqGenModel::vocabulary(const VocabKey& key) const {
  auto it = heads_.find(key);
  if (it == heads_.end())
    throw ConfigError("no vocabulary registered for " + key.str() +
                      "; train or load that domain first");
  return it->second.entry;
}

std::vector<VocabKey> SeqGenModel::vocabulary_keys() const {
  std::vector<VocabKey> keys;
  for (const auto& [k, _] : heads_) keys.push_back(k);
  return keys;
}

std::vector<std::string> SeqGenModel::head_param_names(const VocabKey& key) const {
  auto it = heads_.find(key);
  if (it == heads_.end()) throw ConfigError("no vocabulary registered for " + key.str());
  return it->second.param_names;
}

SeqGenModel::EncodedCondition SeqGenModel::encode_condition(const ConditionPayload& payload,
                                                            int aux_id, int pad_to) const {
  Tensor e = cond_->encode(payload);
  e = cond_->fuse_auxiliary(e, aux_id);
  EncodedCondition out;
  if (pad_to > 0) {
    PaddedEmbedding padded = cond_->pad_to_length(e, pad_to);
    out.valid = padded.valid;
    e = padded.embedding;
  } else {
    out.valid.assign(e.rows(), 1);
  }
  out.memory = encoder_.forward(e, out.valid);
  return out;
}

Tensor SeqGenModel::decode_hidden(const Tensor& tok_embedding, const EncodedCondition& cond,
                                  const Head& head) const {
  const int n = tok_embedding.rows();
  const AttnMask self_mask = AttnMask::causal(n);
  const AttnMask mem_mask = AttnMask::key_padding(n, cond.valid);
  Tensor h = base_.forward(tok_embedding, cond.memory, self_mask, mem_mask);
  h = head.stack.forward(h, cond.memory, self_mask, mem_mask);
  return head.final.forward(h);
}

Tensor SeqGenModel::forward_logits(const EncodedCondition& cond, const std::vector<int>& prefix,
                                   const VocabKey& key) const {
  auto it = heads_.find(key);
  if (it == heads_.end())
    throw ConfigError("no head registered for " + key.str() + "; add the vocabulary first");
  const Head& head = it->second;
  if (prefix.empty()) throw DataError("forward_logits: empty prefix (expected at least BOS)");
  const int n = static_cast<int>(prefix.size());
  if (n > cfg_.max_tokens + 1)
    throw DataError("forward_logits: prefix length " + std::to_string(n) +
                    " exceeds max positions " + std::to_string(cfg_.max_tokens + 1));
  Tensor x = num::embedding_lookup(head.token_emb->tensor, prefix);
  std::vector<int> pos_ids(n);
  for (int i = 0; i < n; ++i) pos_ids[i] = i;
  x = num::add(x, num::embedding_lookup(tok_pos_->tensor, pos_ids));
  Tensor h = decode_hidden(x, cond, head);
  return head.proj.forward(h);
}

std::vector<int> SeqGenModel::generate_part(const GenerationRequest& req,
                                            const EncodedCondition& cond, const VocabKey& key,
                                            Rng& rng, DistanceCache& cache) const {
  const VocabEntry& entry = vocabulary(key);
  std::vector<int> ids{entry.bos};
  std::vector<int> emitted;
  for (int step = 0; step < req.max_tokens; ++step) {
    Tensor logits = forward_logits(cond, ids, key);
    const int last = logits.rows() - 1;
    std::vector<double> row(logits.cols());
    for (int j = 0; j < logits.cols(); ++j) row[j] = logits.at(last, j);
    if (emitted.empty()) {
      // min-length guard: never stop before emitting a single motion token
      row[entry.bos] = row[entry.eos] = row[entry.pad] =
          -std::numeric_limits<double>::infinity();
    }
    const int id = sample_next(row, req.policy, entry.embeddings, cache, entry.specials(), rng);
    if (id == entry.eos || id == entry.pad || id == entry.bos) break;
    emitted.push_back(id);
    ids.push_back(id);
    if (static_cast<int>(ids.size()) > cfg_.max_tokens) break;
  }
  return emitted;
}

std::map<BodyPart, std::vector<int>> SeqGenModel::generate_interleaved(
    const GenerationRequest& req, const EncodedCondition& cond, Rng& rng) const {
  const auto parts = active_parts(req.modality);
  struct StreamEntry {
    VocabKey key;
    int id;
  };
  std::vector<StreamEntry> stream;
  std::map<BodyPart, std::vector<int>> out;
  std::map<BodyPart, bool> done;
  for (BodyPart p : parts) {
    const VocabKey key{p, req.modality};
    stream.push_back({key, vocabulary(key).bos});
    out[p] = {};
    done[p] = false;
  }
  DistanceCache cache;
  auto embed_stream = [&]() {
    std::vector<Tensor> rows;
    rows.reserve(stream.size());
    for (size_t i = 0; i < stream.size(); ++i) {
      const Head& head = heads_.at(stream[i].key);
      Tensor tok = num::embedding_lookup(head.token_emb->tensor, {stream[i].id});
      tok = num::add(tok, num::embedding_lookup(head.part_tag->tensor, {0}));
      tok = num::add(tok, num::embedding_lookup(tok_pos_->tensor, {static_cast<int>(i)}));
      rows.push_back(tok);
    }
    return num::concat_rows(rows);
  };
  for (int step = 0; step < req.max_tokens; ++step) {
    for (BodyPart p : parts) {
      if (done[p]) continue;
      const VocabKey key{p, req.modality};
      const Head& head = heads_.at(key);
      if (static_cast<int>(stream.size()) >= cfg_.max_tokens + 1) {
        done[p] = true;
        continue;
      }
      Tensor x = embed_stream();
      Tensor h = decode_hidden(x, cond, head);
      Tensor logits = head.proj.forward(h);
      const int last = logits.rows() - 1;
      std::vector<double> row(logits.cols());
      for (int j = 0; j < logits.cols(); ++j) row[j] = logits.at(last, j);
      if (out[p].empty()) {
        row[head.entry.bos] = row[head.entry.eos] = row[head.entry.pad] =
            -std::numeric_limits<double>::infinity();
      }
      const int id =
          sample_next(row, req.policy, head.entry.embeddings, cache, head.entry.specials(), rng);
      if (id == head.entry.eos || id == head.entry.pad || id == head.entry.bos) {
        done[p] = true;
        continue;
      }
      out[p].push_back(id);
      stream.push_back({key, id});
    }
    bool all_done = true;
    for (BodyPart p : parts) all_done = all_done && done[p];
    if (all_done) break;
  }
  return out;
}

std::map<BodyPart, std::vector<int>> SeqGenModel::generate(const GenerationRequest& req) const {
  if (req.max_tokens <= 0) throw DataError("generate: length cap must be positive");
  req.policy.validate();
  if (!cond_->has(req.modality))
    throw ConfigError("generate: no encoder registered for modality " +
                      modality_name(req.modality));
  EncodedCondition cond = encode_condition(req.payload, req.aux_id);
  Rng rng(req.policy.seed);
  if (req.interleaved && req.modality == Modality::Speech)
    return generate_interleaved(req, cond, rng);
  std::map<BodyPart, std::vector<int>> out;
  DistanceCache cache;
  for (BodyPart p : active_parts(req.modality)) {
    Rng part_rng = rng.fork(part_name(p));
    out[p] = generate_part(req, cond, {p, req.modality}, part_rng, cache);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

SeqBatchLoss seq_batch_loss(SeqGenModel& model, const std::vector<const SeqTrainItem*>& batch,
                            double lambda_sem, bool sem_pairwise) {
  if (batch.empty()) throw DataError("seq_batch_loss: empty batch");
  SeqBatchLoss out;
  std::map<std::string, double> term_sums;
  std::map<std::string, int> term_counts;
  Tensor total;
  Tensor sem_sum;
  int sem_count = 0;
  std::vector<Tensor> ec_rows;      // pairwise mode: condition embeddings
  std::vector<Tensor> em_rows;      // pairwise mode: frozen motion embeddings

  for (const SeqTrainItem* item : batch) {
    const Modality modality = item->condition.modality;
    SeqGenModel::EncodedCondition cond = model.encode_condition(item->condition, item->aux_id);

    for (BodyPart part : active_parts(modality)) {
      const VocabKey key{part, modality};
      const VocabEntry& entry = model.vocabulary(key);
      auto tok_it = item->tokens.find(part);
      if (tok_it == item->tokens.end())
        throw DataError("training item lacks ground-truth tokens for " + key.str());
      const std::vector<int>& tokens = tok_it->second;
      if (tokens.empty()) throw DataError("training item has empty token sequence for " + key.str());
      std::vector<int> input{entry.bos};
      input.insert(input.end(), tokens.begin(), tokens.end());
      std::vector<int> targets(tokens);
      targets.push_back(entry.eos);
      Tensor logits = model.forward_logits(cond, input, key);
      Tensor ce = num::cross_entropy(logits, targets, entry.pad);
      const std::string term = "ce " + key.str();
      term_sums[term] += ce.value_at(0);
      term_counts[term] += 1;
      Tensor scaled = num::mul_scalar(ce, 1.0 / static_cast<double>(batch.size()));
      total = total.defined() ? num::add(total, scaled) : scaled;
    }

    if (lambda_sem > 0.0) {
      if (item->motion_embedding.empty())
        throw ConfigError("semantic enhancement is enabled but the batch item carries no motion "
                          "prior embedding; train the prior first");
      int valid_rows = 0;
      for (uint8_t v : cond.valid) valid_rows += v;
      Tensor ec = num::mean_rows(num::slice_rows(cond.memory, 0, valid_rows));
      if (static_cast<int>(item->motion_embedding.size()) != ec.cols())
        throw ConfigError("prior embedding dim " + std::to_string(item->motion_embedding.size()) +
                          " does not match model dim " + std::to_string(ec.cols()));
      Tensor em = Tensor::from_data({1, ec.cols()}, item->motion_embedding, false);
      if (sem_pairwise) {
        ec_rows.push_back(ec);
        em_rows.push_back(em);
      } else {
        Tensor one_minus = num::add_scalar(num::neg(num::cosine_rows(ec, em)), 1.0);
        sem_sum = sem_sum.defined() ? num::add(sem_sum, one_minus) : one_minus;
        ++sem_count;
      }
    }
  }

  // Pairwise reading: for each sample, the profile of its similarities to
  // the rest of the batch should agree between the condition and motion
  // embedding spaces.
  if (lambda_sem > 0.0 && sem_pairwise) {
    const int n = static_cast<int>(ec_rows.size());
    if (n < 2)
      throw ConfigError("pairwise semantic enhancement needs a batch of at least 2 samples");
    for (int i = 0; i < n; ++i) {
      std::vector<Tensor> sc_entries, sm_entries;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        sc_entries.push_back(num::cosine_rows(ec_rows[i], ec_rows[j]));
        sm_entries.push_back(num::cosine_rows(em_rows[i], em_rows[j]).detached());
      }
      Tensor sc = num::transpose(num::concat_rows(sc_entries));  // 1 x (n-1)
      Tensor sm = num::transpose(num::concat_rows(sm_entries));
      Tensor one_minus = num::add_scalar(num::neg(num::cosine_rows(sc, sm)), 1.0);
      sem_sum = sem_sum.defined() ? num::add(sem_sum, one_minus) : one_minus;
      ++sem_count;
    }
  }

  for (const auto& [k, v] : term_sums) out.terms[k] = v / term_counts[k];
  if (sem_count > 0) {
    Tensor sem = num::reshape(num::mul_scalar(sem_sum, 1.0 / sem_count), {1});
    out.terms["sem"] = sem.value_at(0);
    total = num::add(total, num::mul_scalar(sem, lambda_sem));
  }
  out.total = total;
  return out;
}

SeqTrainResult train_seqgen(SeqGenModel& model, const std::vector<SeqTrainItem>& items,
                            const SeqTrainConfig& cfg) {
  if (items.empty()) throw DataError("train_seqgen: empty dataset");
  Rng rng(cfg.seed);
  Rng batch_rng = rng.fork("batches");
  num::Adam opt(model.params().all(), {.lr = cfg.lr});
  SeqTrainResult res;
  std::map<std::string, double> acc;
  int acc_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    opt.zero_grad();
    std::vector<const SeqTrainItem*> batch;
    for (int b = 0; b < cfg.batch; ++b)
      batch.push_back(&items[batch_rng.uniform_int(static_cast<int>(items.size()))]);
    SeqBatchLoss loss = seq_batch_loss(model, batch, cfg.lambda_sem, cfg.sem_pairwise);
    const double lv = loss.total.value_at(0);
    if (!std::isfinite(lv))
      throw NumericError("sequence training diverged at step " + std::to_string(step));
    for (const auto& [k, v] : loss.terms) acc[k] += v;
    ++acc_n;
    num::backward(loss.total);
    opt.step();
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      TraceRow row;
      row.step = step;
      for (auto& [k, v] : acc) row.values[k] = v / acc_n;
      acc.clear();
      acc_n = 0;
      res.trace.push_back(std::move(row));
    }
  }
  // Final CE: sum of per-head cross-entropies over the full dataset.
  std::vector<const SeqTrainItem*> all;
  for (const auto& item : items) all.push_back(&item);
  SeqBatchLoss final_loss = seq_batch_loss(model, all, 0.0);
  for (const auto& [k, v] : final_loss.terms)
    if (k.rfind("ce ", 0) == 0) res.final_ce += v;
  return res;
}

}  // namespace mmg
