#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmg/errors.hpp"
#include "mmg/vqvae.hpp"

using namespace mmg;

namespace {

VqvaeConfig small_torso_config() {
  VqvaeConfig vc;
  vc.input_dim = 9;  // 3 traj + 2 joints
  vc.width = 12;
  vc.downsample = 4;
  vc.code_dim = 8;
  vc.codebook_size = 16;
  vc.two_stage = true;
  vc.unet_width = 8;
  return vc;
}

std::vector<Mat> small_torso_clips(int count, int t, int cols, uint64_t seed) {
  Rng rng(seed);
  std::vector<Mat> clips;
  for (int i = 0; i < count; ++i) {
    Mat m(t, cols);
    const double f = 0.8 + 0.3 * (i % 3);
    for (int r = 0; r < t; ++r) {
      m.at(r, 0) = 0.05 * r;
      m.at(r, 1) = 0.02 * std::sin(0.3 * r + i);
      m.at(r, 2) = 0.0;
      for (int c = 3; c < cols; ++c)
        m.at(r, c) = 0.4 * std::sin(2.0 * M_PI * f * r / 20.0 + 0.3 * c) + rng.normal(0, 0.01);
    }
    clips.push_back(std::move(m));
  }
  return clips;
}

}  // namespace

TEST_CASE("token range, determinism, and translation invariance") {
  TorsoVqvae model(small_torso_config(), 42);
  auto clips = small_torso_clips(3, 32, 9, 1);
  const auto tokens = model.encode_tokens(clips[0]);
  CHECK(tokens.size() == 8);
  for (int t : tokens) {
    CHECK(t >= 0);
    CHECK(t < 16);
  }
  CHECK(model.encode_tokens(clips[0]) == tokens);

  Mat shifted = clips[0];
  for (int r = 0; r < shifted.rows; ++r) shifted.at(r, 0) += 10.0;
  CHECK(model.encode_tokens(shifted) == tokens);
}

TEST_CASE("indivisible length suggests pad or crop") {
  TorsoVqvae model(small_torso_config(), 42);
  Mat clip(30, 9);
  CHECK_THROWS_WITH_AS(model.encode_tokens(clip), doctest::Contains("pad or crop"), DataError);
}

TEST_CASE("decode stage linearity in the origin before the refiner") {
  TorsoVqvae model(small_torso_config(), 43);
  const std::vector<int> tokens{1, 5, 3, 2};
  auto [ybar_a, ytilde_a] = model.decode_stages(tokens, {0, 0, 0});
  auto [ybar_b, ytilde_b] = model.decode_stages(tokens, {2.5, -1.0, 0.5});
  // local decode identical, integrated outputs differ by exactly the origin
  for (int64_t i = 0; i < ybar_a.size(); ++i)
    CHECK(ybar_a.values()[i] == ybar_b.values()[i]);
  for (int r = 0; r < ytilde_a.rows(); ++r) {
    CHECK(ytilde_b.at(r, 0) - ytilde_a.at(r, 0) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(ytilde_b.at(r, 1) - ytilde_a.at(r, 1) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(ytilde_b.at(r, 2) - ytilde_a.at(r, 2) == doctest::Approx(0.5).epsilon(1e-12));
    for (int c = 3; c < 9; ++c) CHECK(ytilde_a.at(r, c) == ytilde_b.at(r, c));
  }
}

TEST_CASE("decode token validation") {
  TorsoVqvae model(small_torso_config(), 44);
  CHECK_THROWS_AS(model.decode_tokens({}, {0, 0, 0}), DataError);
  CHECK_THROWS_WITH_AS(model.decode_tokens({0, 99}, {0, 0, 0}), doctest::Contains("vocabulary"),
                       DataError);
}

TEST_CASE("loss terms compose the total with the configured weights") {
  VqvaeConfig vc = small_torso_config();
  vc.alpha1 = 0.7;
  vc.alpha2 = 1.3;
  vc.alpha3 = 0.9;
  vc.beta1 = 1.1;
  vc.beta2 = 0.25;
  TorsoVqvae model(vc, 45);
  auto clips = small_torso_clips(1, 32, 9, 2);
  VqLossOut out = model.forward_loss(clips[0], false);
  const double expect = 0.7 * out.terms["rec_local"] + 1.3 * out.terms["rec_global_coarse"] +
                        0.9 * out.terms["rec_global"] + 1.1 * out.terms["codebook"] +
                        0.25 * out.terms["commit"];
  CHECK(out.total.value_at(0) == doctest::Approx(expect).epsilon(1e-12));
  for (const auto& [k, v] : out.terms) {
    CAPTURE(k);
    CHECK(v >= 0.0);
  }
}

TEST_CASE("alpha2=alpha3=0 reduces to local reconstruction plus vq terms") {
  VqvaeConfig vc = small_torso_config();
  vc.alpha2 = 0.0;
  vc.alpha3 = 0.0;
  TorsoVqvae model(vc, 46);
  auto clips = small_torso_clips(1, 32, 9, 3);
  VqLossOut out = model.forward_loss(clips[0], false);
  const double expect =
      out.terms["rec_local"] + out.terms["codebook"] + 0.25 * out.terms["commit"];
  CHECK(out.total.value_at(0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gradients flow to the encoder through quantization") {
  TorsoVqvae model(small_torso_config(), 47);
  auto clips = small_torso_clips(1, 32, 9, 4);
  for (const auto& p : model.params().all()) p->tensor.zero_grad();
  VqLossOut out = model.forward_loss(clips[0], true);
  num::backward(out.total);
  auto enc_w = model.params().find("encoder.in.w");
  REQUIRE(enc_w);
  bool nonzero = false;
  for (double g : enc_w->tensor.grad()) nonzero = nonzero || g != 0.0;
  CHECK(nonzero);
}

TEST_CASE("hand vqvae round trip and loss shape") {
  VqvaeConfig vc;
  vc.input_dim = 6;
  vc.width = 10;
  vc.downsample = 4;
  vc.code_dim = 8;
  vc.codebook_size = 12;
  HandVqvae model(vc, 48);
  Rng rng(9);
  Mat hand(32, 6);
  for (auto& v : hand.v) v = rng.normal(0.0, 0.5);
  VqLossOut out = model.forward_loss(hand, false);
  CHECK(out.terms.count("rec_local") == 1);
  CHECK(out.terms.count("codebook") == 1);
  CHECK(out.terms.count("commit") == 1);
  const auto tokens = model.encode_tokens(hand);
  CHECK(tokens.size() == 8);
  const Mat recon = model.decode_tokens(tokens, {0, 0, 0});
  CHECK(recon.rows == 32);
  CHECK(recon.cols == 6);
}

TEST_CASE("short overfit run drives every reconstruction term down") {
  VqvaeConfig vc = small_torso_config();
  TorsoVqvae model(vc, 49);
  auto clips = small_torso_clips(4, 32, 9, 5);
  std::vector<const Mat*> train;
  for (const auto& c : clips) train.push_back(&c);
  VqTrainConfig tc;
  tc.steps = 200;
  tc.batch = 2;
  tc.lr = 2e-3;
  tc.eval_every = 50;
  tc.seed = 50;
  const VqTrainResult res = train_vqvae(model, train, {}, tc);
  REQUIRE(res.trace.size() >= 3);
  const auto& first = res.trace.front().values;
  const auto& last = res.trace.back().values;
  for (const char* term : {"rec_local", "rec_global_coarse", "rec_global"}) {
    CAPTURE(term);
    CHECK(last.at(term) < first.at(term));
  }
}

TEST_CASE("8-clip overfit run reaches sub-1e-3 reconstruction") {
  VqvaeConfig vc = small_torso_config();
  vc.width = 16;
  vc.code_dim = 12;
  vc.codebook_size = 32;
  vc.unet_width = 12;
  TorsoVqvae model(vc, 49);
  auto clips = small_torso_clips(8, 32, 9, 7);
  // overfit oracle wants a noise-free target
  for (auto& c : clips)
    for (auto& v : c.v) v = std::round(v * 4096.0) / 4096.0;
  std::vector<const Mat*> train;
  for (const auto& c : clips) train.push_back(&c);
  VqTrainConfig tc;
  tc.steps = 2000;
  tc.batch = 4;
  tc.lr = 2e-3;
  tc.eval_every = 500;
  tc.seed = 50;
  train_vqvae(model, train, {}, tc);
  CHECK(heldout_recon_mse(model, train) < 1e-3);
}

TEST_CASE("identical seeds give identical training traces") {
  auto run = [] {
    TorsoVqvae model(small_torso_config(), 51);
    auto clips = small_torso_clips(4, 32, 9, 6);
    std::vector<const Mat*> train;
    for (const auto& c : clips) train.push_back(&c);
    VqTrainConfig tc;
    tc.steps = 60;
    tc.batch = 2;
    tc.eval_every = 20;
    tc.seed = 52;
    return train_vqvae(model, train, {}, tc);
  };
  const auto a = run(), b = run();
  REQUIRE(a.trace.size() == b.trace.size());
  for (size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].values == b.trace[i].values);
}
