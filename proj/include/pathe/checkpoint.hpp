#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathe/autodiff.hpp"

namespace pathe::ad {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

// File layout: the line "pathe-ckpt v1\n", then one record per parameter:
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f32 values[]
// All integers and floats little-endian.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<NamedTensor> snapshot(const ParameterSet<T>& params) {
  std::vector<NamedTensor> out;
  for (const auto& p : params) out.push_back({p->name(), p->value().template cast<float>()});
  return out;
}

// Copies tensors into parameters with matching names. Every parameter must be
// present with the same shape.
template <typename T>
void restore(ParameterSet<T>& params, const std::vector<NamedTensor>& tensors) {
  for (auto& p : params) {
    const NamedTensor* found = nullptr;
    for (const auto& t : tensors) {
      if (t.name == p->name()) found = &t;
    }
    if (!found) throw CheckpointError("checkpoint has no parameter '" + p->name() + "'");
    if (found->value.shape() != p->value().shape()) {
      throw CheckpointError("checkpoint parameter '" + p->name() + "' has shape " +
                            shape_str(found->value.shape()) + ", expected " +
                            shape_str(p->value().shape()));
    }
    p->value() = found->value.template cast<T>();
  }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params) {
  write_checkpoint(path, snapshot(params));
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params) {
  restore(params, read_checkpoint(path));
}

}  // namespace pathe::ad
