#include "ste/checkpoint.hpp"

#include <type_traits>

namespace ste {

namespace {

constexpr const char* kFormat = "stroke_erase.checkpoint";

}  // namespace

nlohmann::json config_to_json(const NetworkConfig& c) {
  return {{"input_height", c.input_height},
          {"input_width", c.input_width},
          {"smpm_channels", c.smpm_channels},
          {"bipm_channels", c.bipm_channels},
          {"res_blocks", c.res_blocks},
          {"res_inner", c.res_inner},
          {"gc_ratio", c.gc_ratio},
          {"mask_threshold", c.mask_threshold},
          {"bipm_batch_norm", c.bipm_batch_norm},
          {"bipm_decoder_skips", c.bipm_decoder_skips},
          {"seed", c.seed}};
}

NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    if (j.contains("miniature")) {
      const auto& m = j.at("miniature");
      c = NetworkConfig::miniature(m.at("height").get<int>(), m.at("width").get<int>(),
                                   m.at("divisor").get<int>());
    }
    c.input_height = j.value("input_height", c.input_height);
    c.input_width = j.value("input_width", c.input_width);
    c.smpm_channels = j.value("smpm_channels", c.smpm_channels);
    c.bipm_channels = j.value("bipm_channels", c.bipm_channels);
    c.res_blocks = j.value("res_blocks", c.res_blocks);
    c.res_inner = j.value("res_inner", c.res_inner);
    c.gc_ratio = j.value("gc_ratio", c.gc_ratio);
    c.mask_threshold = j.value("mask_threshold", c.mask_threshold);
    c.bipm_batch_norm = j.value("bipm_batch_norm", c.bipm_batch_norm);
    c.bipm_decoder_skips = j.value("bipm_decoder_skips", c.bipm_decoder_skips);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
void save_checkpoint(EraseNet<T>& net, const std::filesystem::path& path, int epoch,
                     const nlohmann::json& extra, const std::vector<ArchiveEntry>& extra_tensors) {
  constexpr bool kF64 = std::is_same_v<T, double>;
  Archive a;
  a.meta = extra;
  a.meta["format"] = kFormat;
  a.meta["config"] = config_to_json(net.config());
  a.meta["epoch"] = epoch;
  a.meta["parameter_count"] = net.count_parameters(false);
  a.meta["bn_frozen"] = net.config().bipm_batch_norm && net.encoder_bn_frozen();
  const nn::ParamSet<T> ps = net.parameters();
  for (const auto& p : ps.params) a.tensors.push_back(make_entry("param/" + p.name, p.var.value(), kF64));
  for (const auto& b : ps.buffers) a.tensors.push_back(make_entry("buffer/" + b.name, *b.tensor, kF64));
  a.tensors.insert(a.tensors.end(), extra_tensors.begin(), extra_tensors.end());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_archive(a, path);
}

CheckpointInfo checkpoint_info(const Archive& archive) {
  if (archive.meta.value("format", "") != kFormat) {
    throw Error(ErrorKind::kParseError, "archive is not a network checkpoint");
  }
  CheckpointInfo info;
  try {
    info.config = config_from_json(archive.meta.at("config"));
    info.epoch = archive.meta.at("epoch").get<int>();
    info.parameter_count = archive.meta.at("parameter_count").get<std::size_t>();
    info.bn_frozen = archive.meta.value("bn_frozen", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("checkpoint header: ") + e.what());
  }
  return info;
}

template <typename T>
void load_weights(EraseNet<T>& net, const Archive& archive) {
  const CheckpointInfo info = checkpoint_info(archive);
  if (!(info.config == net.config())) {
    throw Error(ErrorKind::kShapeMismatch, "checkpoint was saved for a different network configuration");
  }
  nn::ParamSet<T> ps = net.parameters();
  auto fetch = [&](const std::string& name, const nn::Shape& want) -> const ArchiveEntry& {
    const ArchiveEntry* e = archive.find(name);
    if (!e) throw Error(ErrorKind::kParseError, "checkpoint lacks " + name);
    if (!(e->shape == want)) {
      throw Error(ErrorKind::kShapeMismatch, name + " is " + e->shape.str() + ", expected " + want.str());
    }
    return *e;
  };
  for (auto& p : ps.params) {
    p.var.mutable_value() = entry_tensor<T>(fetch("param/" + p.name, p.var.shape()));
  }
  for (auto& b : ps.buffers) *b.tensor = entry_tensor<T>(fetch("buffer/" + b.name, b.tensor->shape()));
  if (info.bn_frozen && !net.encoder_bn_frozen()) net.freeze_encoder_bn();
}

template <typename T>
EraseNet<T> load_network(const std::filesystem::path& path, CheckpointInfo* info) {
  const Archive a = read_archive(path);
  const CheckpointInfo i = checkpoint_info(a);
  EraseNet<T> net(i.config);
  load_weights(net, a);
  net.set_training(false);
  if (info) *info = i;
  return net;
}

#define STE_INSTANTIATE_CHECKPOINT(T)                                                                 \
  template void save_checkpoint(EraseNet<T>&, const std::filesystem::path&, int, const nlohmann::json&, \
                                const std::vector<ArchiveEntry>&);                                    \
  template void load_weights(EraseNet<T>&, const Archive&);                                           \
  template EraseNet<T> load_network(const std::filesystem::path&, CheckpointInfo*);

STE_INSTANTIATE_CHECKPOINT(float)
STE_INSTANTIATE_CHECKPOINT(double)

#undef STE_INSTANTIATE_CHECKPOINT

}  // namespace ste
