#pragma once

#include "attr/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace attr {

// Flat binary parameter container:
//   magic "ATTRCKPT", u32 version,
//   per tensor (sorted by name): u32 name_len, name bytes, u32 rank,
//   u32 dims[rank], little-endian f32 payload.
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

struct StoredTensor {
  Shape shape;
  std::vector<float> data;
};

void save_checkpoint_raw(const std::string& path,
                         const std::map<std::string, StoredTensor>& tensors);
std::map<std::string, StoredTensor> load_checkpoint_raw(const std::string& path);

template <typename S>
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor<S>>& named) {
  std::map<std::string, StoredTensor> raw;
  for (const auto& [name, t] : named) {
    StoredTensor st;
    st.shape = t.shape();
    st.data.resize(static_cast<size_t>(t.size()));
    for (std::int64_t i = 0; i < t.size(); ++i)
      st.data[static_cast<size_t>(i)] = static_cast<float>(t.at(i));
    raw.emplace(name, std::move(st));
  }
  save_checkpoint_raw(path, raw);
}

template <typename S>
void load_checkpoint_into(const std::string& path, std::map<std::string, Tensor<S>>& named) {
  auto raw = load_checkpoint_raw(path);
  for (auto& [name, t] : named) {
    auto it = raw.find(name);
    if (it == raw.end()) throw CheckpointError("checkpoint missing tensor: " + name);
    if (it->second.shape != t.shape())
      throw CheckpointError("checkpoint shape mismatch for " + name + ": file " +
                            shape_str(it->second.shape) + " vs model " + shape_str(t.shape()));
    for (std::int64_t i = 0; i < t.size(); ++i)
      t.at(i) = static_cast<S>(it->second.data[static_cast<size_t>(i)]);
  }
  if (raw.size() != named.size())
    throw CheckpointError("checkpoint has " + std::to_string(raw.size()) +
                          " tensors, model expects " + std::to_string(named.size()));
}

}  // namespace attr
