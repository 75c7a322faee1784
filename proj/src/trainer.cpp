#include "ste/trainer.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <random>
#include <regex>

#include "ste/checkpoint.hpp"

namespace ste {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::kInvalidArgument, "batch_size must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "lr_decay must be in (0, 1]");
  if (!(lr_initial >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "lr_initial must be >= 0");
  if (epochs < 0) throw Error(ErrorKind::kInvalidArgument, "epochs must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) {
    throw Error(ErrorKind::kInvalidArgument, "invalid Adam hyper-parameters");
  }
  if (vgg_width_divisor < 1) throw Error(ErrorKind::kInvalidArgument, "vgg_width_divisor must be >= 1");
  if (checkpoint_dir.empty()) throw Error(ErrorKind::kInvalidArgument, "checkpoint_dir is required");
  network.validate();
  loss_weights.validate();
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.dataset = j.value("dataset", std::string());
    c.checkpoint_dir = j.value("checkpoint_dir", std::string());
    c.log_path = j.value("log", std::string());
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_initial = j.value("lr_initial", c.lr_initial);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.bn_freeze_after_epochs = j.value("bn_freeze_after_epochs", c.bn_freeze_after_epochs);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.resume = j.value("resume", c.resume);
    c.vgg_weights = j.value("vgg_weights", std::string());
    c.vgg_width_divisor = j.value("vgg_width_divisor", c.vgg_width_divisor);
    if (j.contains("network")) c.network = config_from_json(j.at("network"));
    if (j.contains("loss_weights")) {
      const json& w = j.at("loss_weights");
      LossWeights& lw = c.loss_weights;
      lw.dice = w.value("dice", lw.dice);
      lw.smpm = w.value("smpm", lw.smpm);
      lw.pixel = w.value("pixel", lw.pixel);
      lw.hole_pixel = w.value("hole_pixel", lw.hole_pixel);
      lw.perceptual = w.value("perceptual", lw.perceptual);
      lw.style = w.value("style", lw.style);
      lw.tv = w.value("tv", lw.tv);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kFileNotFound, path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParseError, path.string() + ": " + e.what());
  }
  return from_json(j);
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw Error(ErrorKind::kInvalidArgument, "epoch must be >= 0");
  return cfg.lr_initial * std::pow(cfg.lr_decay, epoch);
}

template <typename T>
Adam<T>::Adam(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

template <typename T>
void Adam<T>::step(const nn::ParamSet<T>& params, double lr) {
  ++steps_;
  for (const auto& p : params.params) {
    nn::Var<T> var = p.var;
    if (!var.requires_grad() || var.grad().numel() == 0) continue;
    Moments& s = state_[p.name];
    const std::size_t n = var.value().numel();
    if (s.m.size() != n) {
      s.m.assign(n, 0.0);
      s.v.assign(n, 0.0);
      s.count = 0;
    }
    ++s.count;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.count));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.count));
    auto w = var.mutable_value().values();
    const auto g = var.grad().values();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>(g[i]) + weight_decay_ * static_cast<double>(w[i]);
      s.m[i] = beta1_ * s.m[i] + (1 - beta1_) * gi;
      s.v[i] = beta2_ * s.v[i] + (1 - beta2_) * gi * gi;
      const double update = lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
  }
}

template <typename T>
std::vector<ArchiveEntry> Adam<T>::state_entries() const {
  std::vector<ArchiveEntry> out;
  for (const auto& [name, s] : state_) {
    const nn::Shape shape{1, 1, 1, static_cast<int>(s.m.size())};
    out.push_back({"adam.m/" + name, shape, s.m, true});
    out.push_back({"adam.v/" + name, shape, s.v, true});
    out.push_back({"adam.count/" + name, {1, 1, 1, 1}, {static_cast<double>(s.count)}, true});
  }
  return out;
}

template <typename T>
void Adam<T>::load_state(const Archive& archive, std::int64_t steps) {
  state_.clear();
  steps_ = steps;
  const std::string prefix = "adam.m/";
  for (const ArchiveEntry& e : archive.tensors) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    const std::string name = e.name.substr(prefix.size());
    const ArchiveEntry* v = archive.find("adam.v/" + name);
    const ArchiveEntry* c = archive.find("adam.count/" + name);
    if (!v || !c || v->values.size() != e.values.size()) {
      throw Error(ErrorKind::kParseError, "incomplete optimizer state for " + name);
    }
    state_[name] = {e.values, v->values, static_cast<std::int64_t>(c->values.at(0))};
  }
}

template class Adam<float>;
template class Adam<double>;

SynthDataset::SynthDataset(const fs::path& dir) : root_(dir) {
  const fs::path manifest = dir / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorKind::kFileNotFound, manifest.string());
  try {
    const json j = json::parse(in);
    for (const json& s : j.at("samples")) {
      dirs_.push_back(s.at("dir").get<std::string>());
      inputs_.push_back(s.value("input", std::string("input.jpg")));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParseError, manifest.string() + ": " + e.what());
  }
}

TrainSample SynthDataset::load(std::size_t i) const {
  const fs::path d = root_ / dirs_.at(i);
  return {load_image(d / inputs_.at(i)), load_image(d / "gt.png"), load_mask(d / "mask.png")};
}

TrainBatch make_batch(const std::vector<TrainSample>& samples) {
  std::vector<ImageBuffer> in, gt;
  std::vector<StrokeMask> masks;
  for (const TrainSample& s : samples) {
    in.push_back(s.input);
    gt.push_back(s.gt);
    masks.push_back(invert(s.mask));
  }
  return {images_to_tensor<float>(in), images_to_tensor<float>(gt), mask_to_tensor<float>(masks)};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace {

std::unique_ptr<Vgg19<float>> make_vgg(const TrainConfig& cfg) {
  if (!cfg.vgg_weights.empty()) return std::make_unique<Vgg19<float>>(Vgg19<float>::load(cfg.vgg_weights));
  return std::make_unique<Vgg19<float>>(Vgg19<float>::random(cfg.seed ^ 0x9e3779b97f4a7c15ULL, cfg.vgg_width_divisor));
}

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      net_(cfg_.network),
      vgg_(make_vgg(cfg_)),
      adam_(cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay) {
  net_.set_training(true);
}

Trainer::~Trainer() = default;

std::map<std::string, double> Trainer::train_step(const TrainBatch& batch, double lr) {
  nn::ParamSet<float> params = net_.parameters();
  for (auto& p : params.params) p.var.zero_grad();
  net_.set_training(true);
  const nn::Var<float> x(batch.input);
  const EraseOutput<float> out = net_.forward(x);
  LossInputs<float> in;
  in.text_prob = out.text_prob;
  in.gt_text = batch.gt_text;
  in.out = out.out;
  in.gt = batch.gt;
  in.hole = out.valid;
  for (float& v : in.hole.values()) v = 1.0f - v;
  // The inpainting losses see the predicted mask as data; otherwise the hole
  // weighting pays SMPM to predict no text at all.
  in.valid = out.text_prob.value();
  for (float& v : in.valid.values()) v = 1.0f - v;
  const LossTerms<float> terms = total_loss(in, *vgg_, cfg_.loss_weights);
  std::map<std::string, double> b = terms.breakdown();
  for (const auto& [name, v] : b) {
    if (!std::isfinite(v)) {
      json diag = b;
      throw Error(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch_) + " step " +
                                                 std::to_string(adam_.steps() + 1) + ": " + diag.dump());
    }
  }
  nn::backward(terms.total);
  adam_.step(params, lr);
  return b;
}

void Trainer::apply_schedule(int epoch) {
  if (cfg_.bn_freeze_after_epochs >= 0 && epoch >= cfg_.bn_freeze_after_epochs && !net_.encoder_bn_frozen()) {
    net_.freeze_encoder_bn();
  }
}

fs::path Trainer::checkpoint_name(const fs::path& dir, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04d.ckpt", epoch);
  return dir / buf;
}

std::optional<fs::path> Trainer::latest_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(epoch_(\d{4,})\.ckpt)");
  std::optional<fs::path> best;
  int best_epoch = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern) && std::stoi(m[1]) > best_epoch) {
      best_epoch = std::stoi(m[1]);
      best = entry.path();
    }
  }
  return best;
}

void Trainer::save(const fs::path& path, int epoch) {
  const json extra = {{"optimizer_steps", adam_.steps()}, {"train_seed", cfg_.seed}};
  save_checkpoint(net_, path, epoch, extra, adam_.state_entries());
}

void Trainer::restore(const fs::path& path) {
  const Archive a = read_archive(path);
  load_weights(net_, a);
  adam_.load_state(a, a.meta.value("optimizer_steps", std::int64_t{0}));
  epoch_ = checkpoint_info(a).epoch;
}

fs::path Trainer::fit() {
  fs::create_directories(cfg_.checkpoint_dir);
  const SynthDataset data(cfg_.dataset);
  fs::path last;
  if (auto found = cfg_.resume ? latest_checkpoint(cfg_.checkpoint_dir) : std::nullopt) {
    restore(*found);
    last = *found;
  } else {
    epoch_ = 0;
    last = checkpoint_name(cfg_.checkpoint_dir, 0);
    save(last, 0);
  }
  const fs::path log_path = cfg_.log_path.empty() ? cfg_.checkpoint_dir / "train_log.jsonl" : cfg_.log_path;
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw Error(ErrorKind::kIoError, "cannot open " + log_path.string());

  auto load_batch = [&](const std::vector<std::size_t>& order, std::size_t start) {
    std::vector<TrainSample> samples;
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
    for (std::size_t i = start; i < end; ++i) samples.push_back(data.load(order[i]));
    return make_batch(samples);
  };

  for (int epoch = epoch_; epoch < cfg_.epochs; ++epoch) {
    apply_schedule(epoch);
    const double lr = lr_at_epoch(cfg_, epoch);
    const std::vector<std::size_t> order = epoch_order(data.size(), cfg_.seed, epoch);
    std::future<TrainBatch> next;
    if (cfg_.workers > 1 && !order.empty()) next = std::async(std::launch::async, load_batch, order, 0);
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      TrainBatch batch = next.valid() ? next.get() : load_batch(order, start);
      const std::size_t following = start + cfg_.batch_size;
      if (cfg_.workers > 1 && following < order.size()) {
        next = std::async(std::launch::async, load_batch, order, following);
      }
      const auto terms = train_step(batch, lr);
      const json line = {{"step", adam_.steps()}, {"epoch", epoch}, {"lr", lr}, {"loss", terms}};
      log << line.dump() << '\n';
      log.flush();
      if (extra_log_) *extra_log_ << line.dump() << '\n';
    }
    epoch_ = epoch + 1;
    last = checkpoint_name(cfg_.checkpoint_dir, epoch_);
    save(last, epoch_);
  }
  return last;
}

}  // namespace ste
