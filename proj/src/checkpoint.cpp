#include "mmg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mmg/errors.hpp"
#include "mmg/rng.hpp"

namespace mmg {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'G', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts unsupported");

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& is, T& v, const char* what) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError(std::string("checkpoint truncated while reading ") + what);
}

}  // namespace

CkptEntry CkptEntry::from_tensor(const num::Tensor& t) {
  CkptEntry e;
  e.type = Type::F64;
  e.shape = t.shape();
  e.f64 = t.values();
  return e;
}

CkptEntry CkptEntry::from_ints(std::vector<int64_t> v) {
  CkptEntry e;
  e.type = Type::I64;
  e.shape = {static_cast<int>(v.size())};
  e.i64 = std::move(v);
  return e;
}

num::Tensor CkptEntry::to_tensor(bool requires_grad) const {
  if (type != Type::F64) throw DataError("checkpoint entry is not a float tensor");
  return num::Tensor::from_data(shape, f64, requires_grad);
}

const CkptEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, e] : entries)
    if (n == name) return &e;
  return nullptr;
}

void Checkpoint::add(const std::string& name, CkptEntry e) {
  if (find(name)) throw ConfigError("checkpoint: duplicate entry '" + name + "'");
  entries.emplace_back(name, std::move(e));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  const std::string manifest = ckpt.manifest.dump();
  write_pod(os, static_cast<uint64_t>(manifest.size()));
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  write_pod(os, static_cast<uint64_t>(ckpt.entries.size()));
  for (const auto& [name, e] : ckpt.entries) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint8_t>(e.type));
    write_pod(os, static_cast<uint32_t>(e.shape.size()));
    for (int d : e.shape) write_pod(os, static_cast<uint32_t>(d));
    if (e.type == CkptEntry::Type::F64) {
      os.write(reinterpret_cast<const char*>(e.f64.data()),
               static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
    } else {
      os.write(reinterpret_cast<const char*>(e.i64.data()),
               static_cast<std::streamsize>(e.i64.size() * sizeof(int64_t)));
    }
  }
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  uint32_t version = 0;
  read_pod(is, version, "version");
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  uint64_t mlen = 0;
  read_pod(is, mlen, "manifest length");
  std::string manifest(mlen, '\0');
  is.read(manifest.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw DataError("checkpoint truncated while reading manifest");
  Checkpoint ckpt;
  try {
    ckpt.manifest = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  uint64_t count = 0;
  read_pod(is, count, "entry count");
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nlen = 0;
    read_pod(is, nlen, "entry name length");
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw DataError("checkpoint truncated while reading entry name");
    uint8_t type = 0;
    read_pod(is, type, "entry type");
    uint32_t ndim = 0;
    read_pod(is, ndim, "entry rank");
    CkptEntry e;
    e.type = static_cast<CkptEntry::Type>(type);
    int64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      uint32_t dim = 0;
      read_pod(is, dim, "entry shape");
      e.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    if (e.type == CkptEntry::Type::F64) {
      e.f64.resize(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(e.f64.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    } else if (e.type == CkptEntry::Type::I64) {
      e.i64.resize(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(e.i64.data()),
              static_cast<std::streamsize>(n * sizeof(int64_t)));
    } else {
      throw DataError("checkpoint entry '" + name + "' has unknown dtype");
    }
    if (!is) throw DataError("checkpoint truncated while reading payload of '" + name + "'");
    ckpt.entries.emplace_back(std::move(name), std::move(e));
  }
  return ckpt;
}

std::string checkpoint_param_hash(const Checkpoint& ckpt) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, e] : ckpt.entries) {
    h = fnv1a64(name.data(), name.size(), h);
    if (e.type == CkptEntry::Type::F64)
      h = fnv1a64(e.f64.data(), e.f64.size() * sizeof(double), h);
    else
      h = fnv1a64(e.i64.data(), e.i64.size() * sizeof(int64_t), h);
  }
  return hash_hex(h);
}

void pack_params(Checkpoint& ckpt, const num::ParamSet& params, const std::string& prefix) {
  for (const auto& p : params.all()) ckpt.add(prefix + p->name, CkptEntry::from_tensor(p->tensor));
}

void unpack_params(const Checkpoint& ckpt, num::ParamSet& params, const std::string& prefix) {
  for (const auto& p : params.all()) {
    const CkptEntry* e = ckpt.find(prefix + p->name);
    if (!e) throw DataError("checkpoint missing parameter '" + prefix + p->name + "'");
    if (e->shape != p->tensor.shape())
      throw DataError("checkpoint parameter '" + p->name + "' has shape " +
                      num::shape_str(e->shape) + ", expected " + num::shape_str(p->tensor.shape()));
    p->tensor.values() = e->f64;
  }
}

}  // namespace mmg
