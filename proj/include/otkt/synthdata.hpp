#pragma once

// Deterministic paired (features, text) corpus. Every token id owns a fixed
// prototype vector; an utterance repeats each token's prototype for a random
// number of frames and adds Gaussian noise. Repeated characters are split by
// a short pause of blank-prototype frames.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "otkt/array2.hpp"
#include "otkt/tokens.hpp"

namespace otkt::synth {

// Character <-> id bijection; ids start after the reserved ones.
class Tokenizer {
 public:
  explicit Tokenizer(std::size_t vocab_chars);

  // Throws InvalidInput naming the position of the first unknown character.
  TokenSequence tokenize(std::string_view text) const;
  std::string detokenize(const TokenSequence& tokens) const;

  std::size_t vocab_chars() const { return alphabet_.size(); }
  // Total id space including reserved ids.
  std::size_t vocab_size() const { return alphabet_.size() + kNumReserved; }
  const std::string& alphabet() const { return alphabet_; }

  static constexpr std::size_t kMaxChars = 62;

 private:
  std::string alphabet_;
};

struct CorpusConfig {
  std::size_t vocab_chars = 27;
  std::size_t train_utts = 200;
  std::size_t dev_utts = 50;
  std::size_t test_utts = 50;
  std::size_t min_text_len = 4;
  std::size_t max_text_len = 10;
  std::size_t min_frames_per_token = 8;
  std::size_t max_frames_per_token = 12;
  std::size_t feature_dim = 16;
  double noise_std = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Utterance {
  std::string id;
  Array2 features;  // T x feature_dim
  std::string text;
  TokenSequence tokens;
};

struct Corpus {
  std::vector<Utterance> train, dev, test;

  const std::vector<Utterance>& split(std::string_view name) const;
};

// Prototype matrix (row per token id) shared by all splits.
Array2 token_prototypes(const CorpusConfig& cfg);

Corpus gen_corpus(const CorpusConfig& cfg);

// <dir>/<split>/manifest.txt holds "id<TAB>text" lines; features go to
// <dir>/<split>/<id>.arr in the named-array format.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir, const Tokenizer& tokenizer);

// FNV-1a over the three manifests in split order; identifies a corpus.
std::string manifest_hash(const std::filesystem::path& dir);

inline constexpr std::string_view kSplitNames[] = {"train", "dev", "test"};

}  // namespace otkt::synth
