#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mmg/conditions.hpp"
#include "mmg/errors.hpp"
#include "mmg/ops.hpp"

using namespace mmg;
namespace fs = std::filesystem;

namespace {

ConditionPayload text_payload(const std::string& s) {
  ConditionPayload p;
  p.modality = Modality::Text;
  p.text = s;
  return p;
}

}  // namespace

TEST_CASE("text encoder shape and determinism") {
  TextLabelEncoder enc(16, 100);
  const Mat a = enc.encode(text_payload("one two three four five"));
  CHECK(a.rows == 5);
  CHECK(a.cols == 16);
  const Mat b = enc.encode(text_payload("one two three four five"));
  CHECK(a.v == b.v);
  CHECK_THROWS_AS(enc.encode(text_payload("")), DataError);
}

TEST_CASE("synthetic encoders are injective on the template vocabulary") {
  TextLabelEncoder enc(16, 100);
  const auto vocab = text_condition_vocabulary();
  std::vector<Mat> embs;
  for (const auto& s : vocab) embs.push_back(enc.encode(text_payload(s)));
  for (size_t i = 0; i < embs.size(); ++i)
    for (size_t j = i + 1; j < embs.size(); ++j) {
      if (embs[i].rows != embs[j].rows) continue;
      CHECK(embs[i].v != embs[j].v);
    }
}

TEST_CASE("music encoder frame count follows the hop") {
  MusicFeatureEncoder enc(12, 64, 32, 100);
  ConditionPayload p;
  p.modality = Modality::Music;
  p.sample_rate = 800.0;
  p.audio.assign(320, 0.1);
  const Mat m = enc.encode(p);
  CHECK(m.rows == 10);  // ceil(320/32)
  CHECK(m.cols == 12);
  p.audio.assign(321, 0.1);
  CHECK(enc.encode(p).rows == 11);
}

TEST_CASE("speech encoder windows the envelope") {
  SpeechEnvelopeEncoder enc(8, 16, 8, 100);
  ConditionPayload p;
  p.modality = Modality::Speech;
  p.audio.assign(80, 0.5);
  const Mat m = enc.encode(p);
  CHECK(m.rows == 10);
  CHECK(m.cols == 8);
}

TEST_CASE("condition stage: adapters, aux fusion, padding") {
  num::ParamSet ps;
  Rng rng(3);
  ConditionStage stage(ps, 12, 4, rng);
  stage.register_encoder(std::make_shared<TextLabelEncoder>(16, 100), ps, rng);

  const num::Tensor e = stage.encode(text_payload("a person walks forward"));
  CHECK(e.rows() == 4);
  CHECK(e.cols() == 12);

  // identical payloads give identical embeddings
  const num::Tensor e2 = stage.encode(text_payload("a person walks forward"));
  CHECK(e.values() == e2.values());

  // unknown modality
  ConditionPayload music;
  music.modality = Modality::Music;
  music.audio = {0.1};
  music.sample_rate = 800;
  CHECK_THROWS_AS(stage.encode(music), ConfigError);

  // aux fusion appends exactly one row
  const num::Tensor fused = stage.fuse_auxiliary(e, 2);
  CHECK(fused.rows() == 5);
  for (int c = 0; c < 12; ++c) CHECK(fused.at(0, c) == e.at(0, c));
  const num::Tensor same = stage.fuse_auxiliary(e, -1);
  CHECK(same.values() == e.values());
  CHECK_THROWS_AS(stage.fuse_auxiliary(e, 7), DataError);

  // two aux ids differ only in the appended row
  const num::Tensor f2 = stage.fuse_auxiliary(e, 3);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 12; ++c) CHECK(fused.at(r, c) == f2.at(r, c));
  bool last_differs = false;
  for (int c = 0; c < 12; ++c) last_differs = last_differs || fused.at(4, c) != f2.at(4, c);
  CHECK(last_differs);

  // padding
  const PaddedEmbedding same_len = stage.pad_to_length(e, 4);
  CHECK(same_len.embedding.values() == e.values());
  CHECK(same_len.valid == std::vector<uint8_t>{1, 1, 1, 1});
  const PaddedEmbedding padded = stage.pad_to_length(e, 6);
  CHECK(padded.embedding.rows() == 6);
  CHECK(padded.valid == std::vector<uint8_t>{1, 1, 1, 1, 0, 0});
  // pad rows carry the learned pad embedding (identical rows)
  for (int c = 0; c < 12; ++c) CHECK(padded.embedding.at(4, c) == padded.embedding.at(5, c));
  CHECK_THROWS_WITH_AS(stage.pad_to_length(e, 3), doctest::Contains("truncation"), DataError);
}

TEST_CASE("precomputed embedding file round trip") {
  const fs::path path = fs::temp_directory_path() / "mmg_emb_test.bin";
  std::map<std::string, Mat> rows;
  Mat a(3, 4);
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] = 0.5 * static_cast<double>(i);
  Mat b(2, 4);
  for (size_t i = 0; i < b.v.size(); ++i) b.v[i] = -1.0 * static_cast<double>(i);
  rows["s0"] = a;
  rows["s1"] = b;
  write_embedding_file(path.string(), rows);

  PrecomputedEncoder enc(Modality::Text, path.string());
  CHECK(enc.out_dim() == 4);
  ConditionPayload p;
  p.modality = Modality::Text;
  p.id = "s1";
  const Mat got = enc.encode(p);
  CHECK(got.rows == 2);
  CHECK(got.v == b.v);  // f32 exact for these values
  p.id = "missing";
  CHECK_THROWS_AS(enc.encode(p), DataError);
  fs::remove(path);
}

TEST_CASE("frozen encoders produce constant tensors; adapters train") {
  num::ParamSet ps;
  Rng rng(4);
  ConditionStage stage(ps, 8, 0, rng);
  stage.register_encoder(std::make_shared<TextLabelEncoder>(6, 100), ps, rng);
  for (const auto& p : ps.all()) p->tensor.zero_grad();
  num::Tensor e = stage.encode(text_payload("hello world"));
  CHECK(e.requires_grad());
  num::backward(num::mean_all(e));
  auto adapter_w = ps.find("cond.adapter.text.w");
  REQUIRE(adapter_w);
  bool nonzero = false;
  for (double g : adapter_w->tensor.grad()) nonzero = nonzero || g != 0.0;
  CHECK(nonzero);
}
