#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "ste/archive.hpp"
#include "ste/net.hpp"

namespace ste {

nlohmann::json config_to_json(const NetworkConfig& c);
// Missing keys keep their defaults; the result is validated.
NetworkConfig config_from_json(const nlohmann::json& j);

// Checkpoint archive header: {"format": "stroke_erase.checkpoint", "config",
// "epoch", "parameter_count", "bn_frozen", ...extra}. Tensors are named
// "param/<name>" and "buffer/<name>"; callers may append more entries.
template <typename T>
void save_checkpoint(EraseNet<T>& net, const std::filesystem::path& path, int epoch,
                     const nlohmann::json& extra = nlohmann::json::object(),
                     const std::vector<ArchiveEntry>& extra_tensors = {});

struct CheckpointInfo {
  NetworkConfig config;
  int epoch = 0;
  std::size_t parameter_count = 0;
  bool bn_frozen = false;
};

CheckpointInfo checkpoint_info(const Archive& archive);

// Copies weights and BN statistics into `net`, whose configuration must match,
// and re-applies the encoder BN freeze.
template <typename T>
void load_weights(EraseNet<T>& net, const Archive& archive);

template <typename T>
EraseNet<T> load_network(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace ste
