#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ste/nn/tensor.hpp"

namespace ste {

// Named-tensor archive used for checkpoints and VGG weights.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "STEARCH1"
//   bytes 8..15  u64 header length L
//   next L bytes UTF-8 JSON header
//   rest         raw tensor data
//
// The header holds caller metadata plus
//   "tensors": [{"name", "shape": [n,c,h,w], "dtype": "f32"|"f64", "offset", "nbytes"}]
// where offset counts from the start of the data section.
struct ArchiveEntry {
  std::string name;
  nn::Shape shape;
  // Values are kept in double; dtype selects the on-disk width.
  std::vector<double> values;
  bool f64 = false;
};

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ArchiveEntry> tensors;

  const ArchiveEntry* find(const std::string& name) const;
};

void write_archive(const Archive& archive, const std::filesystem::path& path);
// Throws kFileNotFound, kParseError (bad magic, header or bounds).
Archive read_archive(const std::filesystem::path& path);

template <typename T>
ArchiveEntry make_entry(const std::string& name, const nn::Tensor<T>& t, bool f64 = false) {
  return {name, t.shape(), std::vector<double>(t.values().begin(), t.values().end()), f64};
}

template <typename T>
nn::Tensor<T> entry_tensor(const ArchiveEntry& e) {
  return nn::Tensor<T>(e.shape, std::vector<T>(e.values.begin(), e.values.end()));
}

}  // namespace ste
