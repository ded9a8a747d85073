#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmg/errors.hpp"
#include "mmg/ops.hpp"
#include "mmg/seqgen.hpp"

using namespace mmg;
using mmg::num::Tensor;

namespace {

SeqGenConfig tiny_config() {
  SeqGenConfig sc;
  sc.dim = 16;
  sc.heads = 2;
  sc.ffn_mult = 2;
  sc.enc_layers = 1;
  sc.base_layers = 1;
  sc.head_layers = 1;
  sc.max_cond_len = 16;
  sc.max_tokens = 12;
  sc.aux_count = 4;
  return sc;
}

Mat random_embeddings(int k, int d, uint64_t seed) {
  Rng rng(seed);
  Mat m(k, d);
  for (auto& v : m.v) v = rng.normal(0.0, 0.5);
  return m;
}

ConditionPayload text_payload(const std::string& s) {
  ConditionPayload p;
  p.modality = Modality::Text;
  p.text = s;
  return p;
}

SeqGenModel make_model(uint64_t seed = 7) {
  SeqGenModel model(tiny_config(), seed);
  model.register_encoder(std::make_shared<TextLabelEncoder>(10, 100));
  model.add_vocabulary({BodyPart::Torso, Modality::Text}, random_embeddings(8, 6, 11));
  return model;
}

}  // namespace

TEST_CASE("logits width covers the vocabulary plus specials") {
  SeqGenModel model = make_model();
  const VocabEntry& entry = model.vocabulary({BodyPart::Torso, Modality::Text});
  CHECK(entry.total == 11);
  CHECK(entry.bos == 8);
  CHECK(entry.eos == 9);
  CHECK(entry.pad == 10);

  auto cond = model.encode_condition(text_payload("walk forward"), -1);
  Tensor logits = model.forward_logits(cond, {entry.bos}, {BodyPart::Torso, Modality::Text});
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 11);
}

TEST_CASE("unknown vocabulary key raises a registry error") {
  SeqGenModel model = make_model();
  auto cond = model.encode_condition(text_payload("walk"), -1);
  CHECK_THROWS_AS(model.forward_logits(cond, {0}, {BodyPart::LeftHand, Modality::Text}),
                  ConfigError);
  CHECK_THROWS_AS(model.vocabulary({BodyPart::Torso, Modality::Music}), ConfigError);
}

TEST_CASE("causal masking: perturbing token j leaves logits rows < j bit-identical") {
  SeqGenModel model = make_model();
  auto cond = model.encode_condition(text_payload("walk forward quickly"), -1);
  const VocabKey key{BodyPart::Torso, Modality::Text};
  const VocabEntry& entry = model.vocabulary(key);
  std::vector<int> prefix{entry.bos, 2, 5, 1, 7};
  Tensor base = model.forward_logits(cond, prefix, key);
  const int j = 3;
  std::vector<int> perturbed = prefix;
  perturbed[j] = 6;
  Tensor changed = model.forward_logits(cond, perturbed, key);
  for (int r = 0; r < j; ++r)
    for (int c = 0; c < base.cols(); ++c) CHECK(base.at(r, c) == changed.at(r, c));
  bool at_j_changed = false;
  for (int c = 0; c < base.cols(); ++c) at_j_changed = at_j_changed || base.at(j, c) != changed.at(j, c);
  CHECK(at_j_changed);
}

TEST_CASE("padding invariance: extra pads leave valid encoder rows unchanged") {
  SeqGenModel model = make_model();
  const ConditionPayload payload = text_payload("run backward slowly now");
  auto short_pad = model.encode_condition(payload, -1, 6);
  auto long_pad = model.encode_condition(payload, -1, 14);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < short_pad.memory.cols(); ++c) {
      CHECK(std::abs(short_pad.memory.at(r, c) - long_pad.memory.at(r, c)) <= 1e-10);
    }
}

TEST_CASE("head isolation: gradients from one head never touch another") {
  SeqGenModel model = make_model(9);
  model.add_vocabulary({BodyPart::Torso, Modality::Music}, random_embeddings(8, 6, 12));
  for (const auto& p : model.params().all()) p->tensor.zero_grad();

  SeqTrainItem item;
  item.condition = text_payload("walk leftward");
  item.tokens[BodyPart::Torso] = {1, 2, 3};
  SeqBatchLoss loss = seq_batch_loss(model, {&item}, 0.0);
  num::backward(loss.total);

  bool music_touched = false;
  for (const std::string& name : model.head_param_names({BodyPart::Torso, Modality::Music})) {
    const auto p = model.params().find(name);
    for (double g : p->tensor.grad()) music_touched = music_touched || g != 0.0;
  }
  CHECK_FALSE(music_touched);

  bool text_head_touched = false;
  for (const std::string& name : model.head_param_names({BodyPart::Torso, Modality::Text})) {
    const auto p = model.params().find(name);
    for (double g : p->tensor.grad()) text_head_touched = text_head_touched || g != 0.0;
  }
  CHECK(text_head_touched);

  // shared trunk sees gradients too
  auto base_param = model.params().find("base.layer0.self.wq.w");
  REQUIRE(base_param);
  bool base_touched = false;
  for (double g : base_param->tensor.grad()) base_touched = base_touched || g != 0.0;
  CHECK(base_touched);
}

TEST_CASE("adding a vocabulary never changes existing parameters") {
  SeqGenModel model = make_model(10);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.params().all()) before.push_back(p->tensor.values());
  model.add_vocabulary({BodyPart::Torso, Modality::Speech}, random_embeddings(6, 6, 13));
  for (size_t i = 0; i < before.size(); ++i)
    CHECK(model.params().all()[i]->tensor.values() == before[i]);
}

TEST_CASE("generation determinism, range, and part routing") {
  SeqGenModel model = make_model(11);
  GenerationRequest req;
  req.modality = Modality::Text;
  req.payload = text_payload("jump rightward");
  req.max_tokens = 6;
  req.policy.kind = SamplerKind::Greedy;
  const auto a = model.generate(req);
  const auto b = model.generate(req);
  CHECK(a.size() == 1);  // text drives the torso only
  CHECK(a.count(BodyPart::Torso) == 1);
  CHECK(a.at(BodyPart::Torso) == b.at(BodyPart::Torso));

  req.policy.kind = SamplerKind::Multinomial;
  for (uint64_t s = 0; s < 20; ++s) {
    req.policy.seed = s;
    const auto out = model.generate(req);
    for (int id : out.at(BodyPart::Torso)) {
      CHECK(id >= 0);
      CHECK(id < 8);
    }
  }

  req.max_tokens = 0;
  CHECK_THROWS_AS(model.generate(req), DataError);
}

TEST_CASE("semantic term vanishes when e_c equals e_m and lambda=0 reduces to pure CE") {
  SeqGenModel model = make_model(12);
  SeqTrainItem item;
  item.condition = text_payload("walk forward");
  item.tokens[BodyPart::Torso] = {1, 2};

  SeqBatchLoss plain = seq_batch_loss(model, {&item}, 0.0);
  CHECK(plain.terms.count("sem") == 0);

  // motion embedding set to the condition pooled embedding -> sem == 0
  auto cond = model.encode_condition(item.condition, -1);
  int valid = static_cast<int>(cond.valid.size());
  Tensor ec = num::mean_rows(num::slice_rows(cond.memory, 0, valid));
  item.motion_embedding = ec.values();
  SeqBatchLoss with_sem = seq_batch_loss(model, {&item}, 0.5);
  CHECK(with_sem.terms.at("sem") == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(with_sem.total.value_at(0) ==
        doctest::Approx(plain.total.value_at(0)).epsilon(1e-9));

  // lambda > 0 without a prior embedding is a config error
  SeqTrainItem missing = item;
  missing.motion_embedding.clear();
  CHECK_THROWS_AS(seq_batch_loss(model, {&missing}, 0.5), ConfigError);
}

TEST_CASE("pairwise semantic mode aligns similarity profiles") {
  SeqGenModel model = make_model(14);
  std::vector<SeqTrainItem> items;
  for (int i = 0; i < 3; ++i) {
    SeqTrainItem item;
    item.condition = text_payload(i == 0 ? "walk forward" : i == 1 ? "run backward" : "jump up");
    item.tokens[BodyPart::Torso] = {1, 2};
    auto cond = model.encode_condition(item.condition, -1);
    Tensor ec = num::mean_rows(num::slice_rows(cond.memory, 0, cond.memory.rows()));
    item.motion_embedding = ec.values();  // e_m == e_c -> identical profiles
    items.push_back(std::move(item));
  }
  std::vector<const SeqTrainItem*> batch{&items[0], &items[1], &items[2]};
  SeqBatchLoss loss = seq_batch_loss(model, batch, 0.5, /*sem_pairwise=*/true);
  CHECK(loss.terms.at("sem") == doctest::Approx(0.0).epsilon(1e-9));

  // a single-sample batch cannot form pairs
  CHECK_THROWS_AS(seq_batch_loss(model, {&items[0]}, 0.5, true), ConfigError);

  // perturbed motion embeddings give a positive profile mismatch
  items[1].motion_embedding[0] += 2.5;
  items[2].motion_embedding[3] -= 1.5;
  SeqBatchLoss loss2 = seq_batch_loss(model, batch, 0.5, true);
  CHECK(loss2.terms.at("sem") > 0.0);
}

TEST_CASE("tiny overfit drives cross entropy down") {
  SeqGenModel model = make_model(13);
  std::vector<SeqTrainItem> items;
  const char* sentences[4] = {"walk forward", "walk backward", "run leftward", "jump rightward"};
  for (int i = 0; i < 4; ++i) {
    SeqTrainItem item;
    item.condition = text_payload(sentences[i]);
    item.tokens[BodyPart::Torso] = {i, (i + 3) % 8, (2 * i + 1) % 8};
    items.push_back(item);
  }
  SeqTrainConfig tc;
  tc.steps = 300;
  tc.batch = 4;
  tc.lr = 3e-3;
  tc.seed = 5;
  tc.eval_every = 100;
  const SeqTrainResult res = train_seqgen(model, items, tc);
  CHECK(res.final_ce < 0.5);
}

TEST_CASE("motion prior embeds deterministically with the right dimension") {
  PriorConfig pc;
  pc.input_dim = 9;
  pc.width = 12;
  pc.latent = 16;
  pc.downsample = 4;
  pc.clip_len = 16;
  MotionPrior prior(pc, 21);
  Rng rng(3);
  Mat clip(24, 9);
  for (auto& v : clip.v) v = rng.normal(0.0, 1.0);
  const auto a = prior.embed(clip);
  const auto b = prior.embed(clip);
  CHECK(a == b);
  CHECK(a.size() == 16);

  // shorter clips edge-pad
  Mat short_clip(10, 9);
  for (auto& v : short_clip.v) v = rng.normal(0.0, 1.0);
  CHECK(prior.embed(short_clip).size() == 16);

  Mat wrong(16, 8);
  CHECK_THROWS_AS(prior.embed(wrong), DimError);
}

TEST_CASE("prior training reconstructs a tiny dataset") {
  PriorConfig pc;
  pc.input_dim = 6;
  pc.width = 12;
  pc.latent = 12;
  pc.downsample = 4;
  pc.clip_len = 16;
  MotionPrior prior(pc, 22);
  std::vector<Mat> clips;
  Rng rng(4);
  for (int i = 0; i < 4; ++i) {
    Mat m(16, 6);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 6; ++c) m.at(r, c) = std::sin(0.3 * r + i) * (0.2 + 0.1 * c);
    clips.push_back(std::move(m));
  }
  std::vector<const Mat*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  PriorTrainConfig cfg;
  cfg.steps = 400;
  cfg.batch = 4;
  cfg.lr = 2e-3;
  cfg.seed = 23;
  const PriorTrainResult res = train_prior(prior, ptrs, cfg);
  CHECK(res.final_train_mse < 1e-2);
}
