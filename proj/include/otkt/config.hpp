#pragma once

// Flat key=value run configuration shared by every CLI command. One file
// describes the corpus, the model, the optimizer and where outputs go.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "otkt/encoders.hpp"
#include "otkt/synthdata.hpp"
#include "otkt/training.hpp"

namespace otkt::cli {

struct RunConfig {
  synth::CorpusConfig corpus;
  enc::EncoderConfig encoder;  // input_dim and vocab follow the corpus
  train::HyperParams hp;
  train::Mode mode = train::Mode::kTransfer;
  std::filesystem::path out_dir = "runs";
  std::optional<std::filesystem::path> corpus_dir;  // default <out_dir>/corpus
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};

  std::filesystem::path corpus_path() const { return corpus_dir.value_or(out_dir / "corpus"); }

  // Cross-field checks plus every component's own validate().
  void validate() const;
};

// Command-line values that take precedence over the file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<double> lambda;
  std::optional<std::string> mode;
  std::optional<std::filesystem::path> out_dir;
};

// Throws ConfigError naming the line for syntax errors, duplicate or unknown
// keys and bad values, and listing any required key that is absent.
RunConfig parse_config(std::istream& in, const Overrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

// Every accepted key, in documentation order.
std::vector<std::string> config_keys();

// Canonical text form; parse_config(render_config(c)) reproduces c.
std::string render_config(const RunConfig& cfg);

}  // namespace otkt::cli
