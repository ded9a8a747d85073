#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmg/tensor.hpp"

namespace mmg {

// Flat checkpoint archive: a JSON manifest followed by named entries, each a
// shape plus a little-endian payload of doubles or int64s. Parameter names
// are the keys.
struct CkptEntry {
  enum class Type : uint8_t { F64 = 0, I64 = 1 };
  Type type = Type::F64;
  std::vector<int> shape;
  std::vector<double> f64;
  std::vector<int64_t> i64;

  static CkptEntry from_tensor(const num::Tensor& t);
  static CkptEntry from_ints(std::vector<int64_t> v);
  num::Tensor to_tensor(bool requires_grad = false) const;
};

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, CkptEntry>> entries;

  const CkptEntry* find(const std::string& name) const;
  void add(const std::string& name, CkptEntry e);
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over every payload byte plus names, for reproducibility audits.
std::string checkpoint_param_hash(const Checkpoint& ckpt);

// Writes every parameter of a ParamSet into a checkpoint / loads them back
// (shapes must match).
void pack_params(Checkpoint& ckpt, const num::ParamSet& params, const std::string& prefix = "");
void unpack_params(const Checkpoint& ckpt, num::ParamSet& params, const std::string& prefix = "");

}  // namespace mmg
