#pragma once

// The CLI's subcommands as library functions, so they can be driven
// in-process by tests. Each returns a process exit code.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "otkt/config.hpp"
#include "otkt/training.hpp"

namespace otkt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs body, printing any error to err and mapping it to an exit code:
// ConfigError -> kExitUsage, anything else -> kExitRuntime.
int guarded(std::ostream& err, const std::function<int()>& body);

// Writes <corpus_dir>/{train,dev,test}.
int cmd_gen_data(const RunConfig& cfg, std::ostream& out);

// Trains cfg.mode on the corpus at cfg.corpus_path(); outputs go to
// <out_dir>/<mode>/.
int cmd_train(const RunConfig& cfg, std::ostream& out);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus_dir;
  std::string split = "test";
  std::optional<std::filesystem::path> report;  // appended to when set
};

// Prints one report line. Fails without output if the checkpoint or split
// is missing, and fails if any teacher or Sinkhorn work happened.
int cmd_eval(const EvalArgs& args, std::ostream& out);

struct SinkhornArgs {
  std::filesystem::path cost_file;
  double alpha = 0.2;
  double tol = 1e-6;
  std::size_t max_iter = 1000;
};

// Cost file: one matrix row per line, whitespace-separated numbers; blank
// lines and '#' comments are ignored.
int cmd_sinkhorn(const SinkhornArgs& args, std::ostream& out);

struct AblationResult {
  std::string manifest_hash;
  std::map<train::Mode, std::vector<double>> dev_cer, test_cer;  // one entry per seed
  double median_dev(train::Mode m) const;
  double median_test(train::Mode m) const;
};

// Generates the corpus at cfg.corpus_path() and trains every mode for every
// seed in cfg.ablate_seeds on it.
AblationResult run_ablation(const RunConfig& cfg);

// Trains all four modes for every seed in cfg.ablate_seeds on one shared
// corpus and prints the median dev/test CER table.
int cmd_ablate(const RunConfig& cfg, std::ostream& out);

// Reads the cost matrix format above; ParseError names the line.
Array2 read_cost_matrix(std::istream& in);

}  // namespace otkt::cli
