#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ste/archive.hpp"
#include "ste/losses.hpp"
#include "ste/net.hpp"

namespace ste {

struct TrainConfig {
  std::filesystem::path dataset;         // directory holding manifest.json
  std::filesystem::path checkpoint_dir;
  std::filesystem::path log_path;        // JSON lines; empty = checkpoint_dir/train_log.jsonl
  int epochs = 1;
  int batch_size = 8;
  double lr_initial = 2e-4;
  double lr_decay = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  int bn_freeze_after_epochs = 10;       // negative disables the freeze
  std::uint64_t seed = 0;
  int workers = 1;                       // > 1 prefetches the next batch
  bool resume = true;
  NetworkConfig network;
  LossWeights loss_weights;
  std::filesystem::path vgg_weights;     // empty = random frozen VGG
  int vgg_width_divisor = 1;

  void validate() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

// lr_initial * lr_decay^epoch, epoch 0-based.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

// Adam with decoupled state per parameter name. Parameters whose Var does not
// require a gradient, or that received none, are skipped.
template <typename T>
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);

  void step(const nn::ParamSet<T>& params, double lr);
  std::int64_t steps() const { return steps_; }

  std::vector<ArchiveEntry> state_entries() const;
  void load_state(const Archive& archive, std::int64_t steps);

 private:
  struct Moments {
    std::vector<double> m, v;
    std::int64_t count = 0;
  };
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

struct TrainSample {
  ImageBuffer input;
  ImageBuffer gt;
  StrokeMask mask;  // 1 = background, 0 = text hole
};

// Directory produced by write_dataset; samples are decoded on demand.
class SynthDataset {
 public:
  explicit SynthDataset(const std::filesystem::path& dir);

  std::size_t size() const { return dirs_.size(); }
  TrainSample load(std::size_t i) const;

 private:
  std::filesystem::path root_;
  std::vector<std::string> dirs_;
  std::vector<std::string> inputs_;
};

struct TrainBatch {
  nn::Tensor<float> input;    // [N,3,H,W]
  nn::Tensor<float> gt;       // [N,3,H,W]
  nn::Tensor<float> gt_text;  // [N,1,H,W], text = 1
};

TrainBatch make_batch(const std::vector<TrainSample>& samples);

// Permutation of [0, n) drawn from (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  ~Trainer();

  // One forward pass, total loss, backward and Adam update. Throws
  // kNonFiniteLoss without touching the weights when any term is not finite.
  std::map<std::string, double> train_step(const TrainBatch& batch, double lr);

  // Runs the remaining epochs (resuming from the newest checkpoint when
  // enabled) and returns the last checkpoint written.
  std::filesystem::path fit();

  // Freezes the encoder BN layers once `epoch` reaches the configured epoch.
  void apply_schedule(int epoch);

  void save(const std::filesystem::path& path, int epoch);
  // Restores weights, optimizer state and the epoch counter.
  void restore(const std::filesystem::path& path);

  EraseNet<float>& net() { return net_; }
  const Vgg19<float>& vgg() const { return *vgg_; }
  const TrainConfig& config() const { return cfg_; }
  int epoch() const { return epoch_; }
  std::int64_t global_step() const { return adam_.steps(); }

  void set_log_stream(std::ostream* out) { extra_log_ = out; }

  static std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int epoch);
  static std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir);

 private:
  TrainConfig cfg_;
  EraseNet<float> net_;
  std::unique_ptr<Vgg19<float>> vgg_;
  Adam<float> adam_;
  int epoch_ = 0;
  std::ostream* extra_log_ = nullptr;
};

}  // namespace ste
