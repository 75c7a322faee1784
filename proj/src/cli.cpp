#include "ste/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ste/checkpoint.hpp"
#include "ste/metrics.hpp"
#include "ste/pipeline.hpp"
#include "ste/synthgen.hpp"
#include "ste/trainer.hpp"

namespace ste::cli {

namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

ImageFormat format_for(const fs::path& p) {
  const std::string e = lower_ext(p);
  return e == ".jpg" || e == ".jpeg" ? ImageFormat::kJpeg : ImageFormat::kPng;
}

template <typename F>
int guarded(std::ostream& err, const char* cmd, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    err << cmd << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, "synth", [&] {
    SynthConfig cfg = SynthConfig::load(a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.no_jpeg) cfg.jpeg_enabled = false;
    const fs::path manifest = write_dataset(cfg, a.count, a.out, a.workers);
    out << manifest.string() << '\n';
    return 0;
  });
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, "train", [&] {
    TrainConfig cfg = TrainConfig::load(a.config);
    const fs::path base = a.config.parent_path();
    for (fs::path* p : {&cfg.dataset, &cfg.checkpoint_dir, &cfg.log_path, &cfg.vgg_weights}) {
      if (!p->empty() && p->is_relative()) *p = base / *p;
    }
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.fresh) cfg.resume = false;
    if (!fs::exists(cfg.dataset / "manifest.json")) {
      throw Error(ErrorKind::kFileNotFound, "dataset manifest " + (cfg.dataset / "manifest.json").string());
    }
    Trainer trainer(cfg);
    trainer.set_log_stream(&err);
    const fs::path last = trainer.fit();
    out << last.string() << '\n';
    return 0;
  });
}

int cmd_erase(const EraseArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, "erase", [&] {
    if (!fs::is_regular_file(a.input)) throw Error(ErrorKind::kFileNotFound, a.input.string());
    const ImageBuffer image = load_image(a.input);
    const std::vector<TextRegion> regions = load_regions(a.regions);
    std::optional<EraseNet<float>> net;
    CropEraser eraser;
    EraseOptions opt;
    opt.parallel = a.parallel;
    opt.expand_factor = a.expand;
    if (a.identity) {
      eraser = identity_eraser();
    } else {
      if (a.weights.empty()) throw Error(ErrorKind::kInvalidArgument, "--weights is required");
      net.emplace(load_network<float>(a.weights));
      opt.network_size = {net->config().input_height, net->config().input_width};
      eraser = network_eraser(*net);
    }
    const EraseResult res = erase_regions(image, regions, eraser, opt);
    for (const std::string& w : res.warnings) err << "warning: " << w << '\n';
    if (a.output.has_parent_path()) fs::create_directories(a.output.parent_path());
    // Nothing changed: keep the input bytes rather than re-encoding.
    if (res.erased == 0 && format_for(a.output) == format_for(a.input)) {
      if (fs::weakly_canonical(a.input) != fs::weakly_canonical(a.output)) {
        fs::copy_file(a.input, a.output, fs::copy_options::overwrite_existing);
      }
    } else {
      save_image(res.image, a.output, format_for(a.output));
    }
    if (!a.mask_out.empty()) save_mask(res.mask, a.mask_out);
    out << res.erased << " of " << regions.size() << " regions erased\n";
    return 0;
  });
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, "eval", [&] {
    const EvalReport r = evaluate_dirs(a.pred, a.gt, a.threads);
    if (!a.json_out.empty()) std::ofstream(a.json_out) << r.to_json() << '\n';
    if (!a.csv_out.empty()) std::ofstream(a.csv_out) << r.to_csv();
    out << "images " << r.images.size() << "  psnr " << r.mean_psnr << "  ssim " << r.mean_ssim << "  mse "
        << r.mean_mse << '\n';
    return 0;
  });
}

int run(int argc, char** argv) {
  CLI::App app{"Stroke-based scene text erasing: synthesis, training, erasing and evaluation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic training set");
  s->add_option("--config", synth.config, "Synthesis config JSON")->required()->check(CLI::ExistingFile);
  s->add_option("--count", synth.count, "Number of samples")->required();
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Override the config seed");
  s->add_flag("--no-jpeg", synth.no_jpeg, "Store inputs losslessly");
  s->add_option("--workers", synth.workers, "Parallel workers")->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the network");
  t->add_option("--config", train.config, "Training config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--epochs", train.epochs, "Override the number of epochs");
  t->add_flag("--fresh", train.fresh, "Ignore existing checkpoints");

  EraseArgs erase;
  auto* e = app.add_subcommand("erase", "Erase text inside annotated regions");
  e->add_option("--input", erase.input, "Input image")->required();
  e->add_option("--regions", erase.regions, "Regions JSON")->required();
  e->add_option("--weights", erase.weights, "Network checkpoint");
  e->add_option("--output", erase.output, "Output image")->required();
  e->add_option("--mask-out", erase.mask_out, "Optional full-size stroke mask PNG");
  e->add_option("--expand", erase.expand, "Region expansion factor");
  e->add_flag("--parallel", erase.parallel, "Process regions concurrently");
  e->add_flag("--identity", erase.identity, "Pass crops through unchanged (pipeline check)");

  EvalArgs eval;
  auto* v = app.add_subcommand("eval", "Score predictions against ground truth");
  v->add_option("--pred", eval.pred, "Prediction directory")->required();
  v->add_option("--gt", eval.gt, "Ground-truth directory")->required();
  v->add_option("--json", eval.json_out, "Write the report as JSON");
  v->add_option("--csv", eval.csv_out, "Write the report as CSV");
  v->add_option("--threads", eval.threads, "Worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }
  if (s->parsed()) return cmd_synth(synth, std::cout, std::cerr);
  if (t->parsed()) return cmd_train(train, std::cout, std::cerr);
  if (e->parsed()) return cmd_erase(erase, std::cout, std::cerr);
  return cmd_eval(eval, std::cout, std::cerr);
}

}  // namespace ste::cli
