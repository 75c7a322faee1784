#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>

namespace ste::cli {

struct SynthArgs {
  std::filesystem::path config;
  std::uint64_t count = 0;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  bool no_jpeg = false;
  int workers = 1;
};

struct TrainArgs {
  std::filesystem::path config;
  std::optional<int> epochs;
  bool fresh = false;  // ignore existing checkpoints
};

struct EraseArgs {
  std::filesystem::path input;
  std::filesystem::path regions;
  std::filesystem::path weights;  // empty with `identity` set
  std::filesystem::path output;
  std::filesystem::path mask_out;
  bool identity = false;
  bool parallel = false;
  double expand = 0.15;
};

struct EvalArgs {
  std::filesystem::path pred;
  std::filesystem::path gt;
  std::filesystem::path json_out;
  std::filesystem::path csv_out;
  int threads = 0;
};

// Each returns the process exit code (0 success, 1 failure) and reports on `err`.
int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err);
int cmd_erase(const EraseArgs& a, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace ste::cli
