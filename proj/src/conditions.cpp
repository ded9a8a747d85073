#include "mmg/conditions.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmg/errors.hpp"
#include "mmg/ops.hpp"

namespace mmg {

using num::Tensor;

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

Mat fixed_random_matrix(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  Mat m(rows, cols);
  for (auto& x : m.v) x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  return m;
}

Mat lift_features(const std::vector<std::vector<double>>& feats, const Mat& lift) {
  const int t = static_cast<int>(feats.size());
  Mat out(t, lift.cols);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < lift.cols; ++j) {
      double s = 0.0;
      for (int f = 0; f < lift.rows; ++f) s += feats[i][f] * lift.at(f, j);
      out.at(i, j) = s;
    }
  return out;
}

}  // namespace

TextLabelEncoder::TextLabelEncoder(int out_dim, uint64_t seed) : dim_(out_dim), seed_(seed) {}

Mat TextLabelEncoder::encode(const ConditionPayload& payload) const {
  const auto words = split_words(payload.text);
  if (words.empty()) throw DataError("text encoder: empty label sentence");
  Mat out(static_cast<int>(words.size()), dim_);
  for (size_t i = 0; i < words.size(); ++i) {
    Rng wr(fnv1a64(words[i].data(), words[i].size(), seed_));
    for (int j = 0; j < dim_; ++j) out.at(static_cast<int>(i), j) = wr.normal(0.0, 1.0);
  }
  return out;
}

MusicFeatureEncoder::MusicFeatureEncoder(int out_dim, int window, int hop, uint64_t seed)
    : dim_(out_dim), window_(window), hop_(hop) {
  // 8 features: log energy, 5 band energies, zero crossings, mean.
  lift_ = fixed_random_matrix(8, out_dim, fnv1a64("music-lift", 10, seed));
}

Mat MusicFeatureEncoder::encode(const ConditionPayload& payload) const {
  const auto& a = payload.audio;
  if (a.empty()) throw DataError("music encoder: empty audio payload");
  if (payload.sample_rate <= 0) throw DataError("music encoder: missing sample rate");
  static const double kBandHz[5] = {80.0, 160.0, 320.0, 640.0, 1280.0};
  const int frames = static_cast<int>((a.size() + hop_ - 1) / hop_);
  std::vector<std::vector<double>> feats;
  feats.reserve(frames);
  for (int f = 0; f < frames; ++f) {
    const int s0 = f * hop_;
    const int s1 = std::min<int>(s0 + window_, static_cast<int>(a.size()));
    std::vector<double> row(8, 0.0);
    double energy = 0.0, mean = 0.0;
    int zc = 0;
    for (int s = s0; s < s1; ++s) {
      energy += a[s] * a[s];
      mean += a[s];
      if (s > s0 && (a[s] >= 0) != (a[s - 1] >= 0)) ++zc;
    }
    const int n = std::max(1, s1 - s0);
    row[0] = std::log(energy / n + 1e-8);
    // Goertzel-style band energy probes.
    for (int b = 0; b < 5; ++b) {
      const double w = 2.0 * M_PI * kBandHz[b] / payload.sample_rate;
      double re = 0.0, im = 0.0;
      for (int s = s0; s < s1; ++s) {
        re += a[s] * std::cos(w * (s - s0));
        im += a[s] * std::sin(w * (s - s0));
      }
      row[1 + b] = std::log((re * re + im * im) / (n * n) + 1e-8);
    }
    row[6] = static_cast<double>(zc) / n;
    row[7] = mean / n;
    feats.push_back(std::move(row));
  }
  return lift_features(feats, lift_);
}

SpeechEnvelopeEncoder::SpeechEnvelopeEncoder(int out_dim, int window, int hop, uint64_t seed)
    : dim_(out_dim), window_(window), hop_(hop) {
  // 6 features: mean, std, max, min, slope, first-diff energy.
  lift_ = fixed_random_matrix(6, out_dim, fnv1a64("speech-lift", 11, seed));
}

Mat SpeechEnvelopeEncoder::encode(const ConditionPayload& payload) const {
  const auto& a = payload.audio;
  if (a.empty()) throw DataError("speech encoder: empty envelope payload");
  const int frames = static_cast<int>((a.size() + hop_ - 1) / hop_);
  std::vector<std::vector<double>> feats;
  feats.reserve(frames);
  for (int f = 0; f < frames; ++f) {
    const int s0 = f * hop_;
    const int s1 = std::min<int>(s0 + window_, static_cast<int>(a.size()));
    const int n = std::max(1, s1 - s0);
    double mean = 0.0, mx = -1e300, mn = 1e300, diff = 0.0;
    for (int s = s0; s < s1; ++s) {
      mean += a[s];
      mx = std::max(mx, a[s]);
      mn = std::min(mn, a[s]);
      if (s > s0) diff += (a[s] - a[s - 1]) * (a[s] - a[s - 1]);
    }
    mean /= n;
    double var = 0.0;
    for (int s = s0; s < s1; ++s) var += (a[s] - mean) * (a[s] - mean);
    var /= n;
    const double slope = n > 1 ? (a[s1 - 1] - a[s0]) / (n - 1) : 0.0;
    feats.push_back({mean, std::sqrt(var), mx, mn, slope, diff / n});
  }
  return lift_features(feats, lift_);
}

namespace {
constexpr char kEmbMagic[8] = {'M', 'M', 'G', 'E', 'M', 'B', '1', '\0'};
}

void write_embedding_file(const std::string& path, const std::map<std::string, Mat>& rows) {
  if (rows.empty()) throw DataError("embedding file: nothing to write");
  const int dim = rows.begin()->second.cols;
  nlohmann::json manifest;
  manifest["dim"] = dim;
  nlohmann::json samples;
  int64_t offset = 0;
  for (const auto& [id, m] : rows) {
    if (m.cols != dim) throw DimError("embedding file: inconsistent dims for sample " + id);
    samples[id] = {{"offset_rows", offset}, {"rows", m.rows}};
    offset += m.rows;
  }
  manifest["samples"] = samples;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open embedding file for writing: " + path);
  os.write(kEmbMagic, sizeof(kEmbMagic));
  const std::string mstr = manifest.dump();
  const uint64_t mlen = mstr.size();
  os.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const auto& [id, m] : rows) {
    std::vector<float> buf(m.v.size());
    for (size_t i = 0; i < m.v.size(); ++i) buf[i] = static_cast<float>(m.v[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw DataError("failed writing embedding file: " + path);
}

PrecomputedEncoder::PrecomputedEncoder(Modality m, const std::string& path) : modality_(m) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open embedding file: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kEmbMagic, sizeof(kEmbMagic)) != 0)
    throw DataError("not an embedding file (bad magic): " + path);
  uint64_t mlen = 0;
  is.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw DataError("embedding file truncated: " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mstr);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("embedding manifest is not valid JSON: " + std::string(e.what()));
  }
  dim_ = manifest.at("dim").get<int>();
  for (const auto& [id, info] : manifest.at("samples").items()) {
    const int nrows = info.at("rows").get<int>();
    Mat m(nrows, dim_);
    std::vector<float> buf(m.v.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw DataError("embedding file truncated while reading rows of " + id);
    for (size_t i = 0; i < buf.size(); ++i) m.v[i] = static_cast<double>(buf[i]);
    rows_.emplace(id, std::move(m));
  }
}

Mat PrecomputedEncoder::encode(const ConditionPayload& payload) const {
  auto it = rows_.find(payload.id);
  if (it == rows_.end())
    throw DataError("no precomputed embedding for sample id '" + payload.id + "'");
  return it->second;
}

ConditionStage::ConditionStage(num::ParamSet& ps, int shared_dim, int aux_count, Rng& rng)
    : dim_(shared_dim), aux_count_(aux_count) {
  if (aux_count > 0) aux_vocab_ = nn::make_embedding(ps, "cond.aux_vocab", aux_count, shared_dim, rng);
  pad_embedding_ = nn::make_embedding(ps, "cond.pad_embedding", 1, shared_dim, rng);
}

void ConditionStage::register_encoder(std::shared_ptr<const ModalityEncoder> enc,
                                      num::ParamSet& ps, Rng& rng) {
  const Modality m = enc->modality();
  if (encoders_.count(m)) throw ConfigError("encoder already registered for " + modality_name(m));
  adapters_.emplace(m, nn::Linear(ps, "cond.adapter." + modality_name(m), enc->out_dim(), dim_, rng));
  encoders_.emplace(m, std::move(enc));
}

Tensor ConditionStage::encode(const ConditionPayload& payload) const {
  auto it = encoders_.find(payload.modality);
  if (it == encoders_.end())
    throw ConfigError("no encoder registered for modality " + modality_name(payload.modality));
  const Mat raw = it->second->encode(payload);
  return adapters_.at(payload.modality).forward(to_tensor(raw));
}

Tensor ConditionStage::fuse_auxiliary(const Tensor& e, int aux_id) const {
  if (aux_id < 0) return e;
  if (!aux_vocab_ || aux_id >= aux_count_)
    throw DataError("auxiliary id " + std::to_string(aux_id) + " outside [0," +
                    std::to_string(aux_count_) + ")");
  Tensor row = num::embedding_lookup(aux_vocab_->tensor, {aux_id});
  return num::concat_rows({e, row});
}

PaddedEmbedding ConditionStage::pad_to_length(const Tensor& e, int length) const {
  const int t = e.rows();
  if (t > length)
    throw DataError("cannot pad length " + std::to_string(t) + " down to " +
                    std::to_string(length) + "; truncation is never implicit");
  PaddedEmbedding out;
  out.valid.assign(length, 0);
  for (int i = 0; i < t; ++i) out.valid[i] = 1;
  if (t == length) {
    out.embedding = e;
    return out;
  }
  std::vector<int> pad_ids(length - t, 0);
  Tensor pads = num::embedding_lookup(pad_embedding_->tensor, pad_ids);
  out.embedding = num::concat_rows({e, pads});
  return out;
}

}  // namespace mmg
