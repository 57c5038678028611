#include "otkt/synthdata.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <utility>

#include "otkt/array_io.hpp"
#include "otkt/ctc.hpp"
#include "otkt/encoders.hpp"
#include "otkt/error.hpp"

namespace otkt::synth {
namespace {

constexpr std::string_view kAlphabet =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
static_assert(kAlphabet.size() == Tokenizer::kMaxChars);

std::uint64_t split_seed(std::uint64_t seed, std::size_t split) {
  // splitmix64 step keeps the three streams unrelated
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (split + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<Utterance> gen_split(const CorpusConfig& cfg, const Tokenizer& tok,
                                 const Array2& prototypes, std::size_t split, std::size_t count) {
  std::mt19937_64 rng(split_seed(cfg.seed, split));
  std::uniform_int_distribution<std::size_t> len_dist(cfg.min_text_len, cfg.max_text_len);
  std::uniform_int_distribution<std::size_t> char_dist(0, cfg.vocab_chars - 1);
  std::uniform_int_distribution<std::size_t> frames_dist(cfg.min_frames_per_token,
                                                         cfg.max_frames_per_token);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t u = 0; u < count; ++u) {
    Utterance utt;
    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "%s-%05zu", kSplitNames[split].data(), u);
    utt.id = id_buf;
    const std::size_t len = len_dist(rng);
    for (std::size_t k = 0; k < len; ++k) utt.text.push_back(tok.alphabet()[char_dist(rng)]);
    utt.tokens = tok.tokenize(utt.text);

    // (prototype row, frame count); a repeated character is separated from
    // its twin by a short pause so the repeat is audible
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t frames = 0;
    for (std::size_t k = 0; k < len; ++k) {
      if (k > 0 && utt.tokens[k] == utt.tokens[k - 1]) {
        const std::size_t gap = std::max<std::size_t>(4, cfg.min_frames_per_token / 2);
        spans.emplace_back(kBlank, gap);
        frames += gap;
      }
      const std::size_t n = frames_dist(rng);
      spans.emplace_back(static_cast<std::size_t>(utt.tokens[k]), n);
      frames += n;
    }
    // stretch the last span until the encoder and CTC can both consume it
    const std::size_t need = ctc::min_frames(utt.tokens);
    while (frames < enc::kMinInputFrames || enc::subsampled_length(frames) < need) {
      if (spans.empty()) spans.emplace_back(kBlank, 0);
      ++spans.back().second;
      ++frames;
    }

    utt.features = Array2(frames, cfg.feature_dim);
    std::size_t t = 0;
    for (const auto& [proto_row, count] : spans) {
      for (std::size_t f = 0; f < count; ++f, ++t) {
        for (std::size_t c = 0; c < cfg.feature_dim; ++c) {
          const double n = cfg.noise_std > 0.0 ? cfg.noise_std * noise(rng) : 0.0;
          utt.features(t, c) = prototypes(proto_row, c) + n;
        }
      }
    }
    out.push_back(std::move(utt));
  }
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Tokenizer::Tokenizer(std::size_t vocab_chars) {
  if (vocab_chars == 0 || vocab_chars > kMaxChars) {
    throw InvalidInput("tokenizer: vocab_chars must be in [1, " + std::to_string(kMaxChars) + "]");
  }
  alphabet_ = std::string(kAlphabet.substr(0, vocab_chars));
}

TokenSequence Tokenizer::tokenize(std::string_view text) const {
  TokenSequence out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto pos = alphabet_.find(text[i]);
    if (pos == std::string::npos) {
      throw InvalidInput("tokenize: unknown character '" + std::string(1, text[i]) +
                         "' at position " + std::to_string(i));
    }
    out.push_back(static_cast<int>(pos) + kNumReserved);
  }
  return out;
}

std::string Tokenizer::detokenize(const TokenSequence& tokens) const {
  std::string out;
  for (int id : tokens) {
    const int idx = id - kNumReserved;
    if (idx < 0 || static_cast<std::size_t>(idx) >= alphabet_.size()) {
      throw InvalidInput("detokenize: id " + std::to_string(id) + " is not a character");
    }
    out.push_back(alphabet_[static_cast<std::size_t>(idx)]);
  }
  return out;
}

void CorpusConfig::validate() const {
  if (vocab_chars == 0 || vocab_chars > Tokenizer::kMaxChars) {
    throw InvalidInput("corpus config: vocab_chars must be in [1, 62]");
  }
  if (min_text_len > max_text_len) throw InvalidInput("corpus config: min_text_len > max_text_len");
  if (min_frames_per_token == 0 || min_frames_per_token > max_frames_per_token) {
    throw InvalidInput("corpus config: need 0 < min_frames_per_token <= max_frames_per_token");
  }
  if (feature_dim == 0) throw InvalidInput("corpus config: feature_dim must be positive");
  if (!(noise_std >= 0.0)) throw InvalidInput("corpus config: noise_std must be >= 0");
}

const std::vector<Utterance>& Corpus::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw InvalidInput("unknown split '" + std::string(name) + "' (expected train, dev or test)");
}

Array2 token_prototypes(const CorpusConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Array2 protos(cfg.vocab_chars + kNumReserved, cfg.feature_dim);
  for (double& v : protos.flat()) v = dist(rng);
  return protos;
}

Corpus gen_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  const Tokenizer tok(cfg.vocab_chars);
  const Array2 protos = token_prototypes(cfg);
  Corpus c;
  c.train = gen_split(cfg, tok, protos, 0, cfg.train_utts);
  c.dev = gen_split(cfg, tok, protos, 1, cfg.dev_utts);
  c.test = gen_split(cfg, tok, protos, 2, cfg.test_utts);
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  for (std::size_t s = 0; s < 3; ++s) {
    const auto split_dir = dir / kSplitNames[s];
    std::filesystem::create_directories(split_dir);
    std::ofstream manifest(split_dir / "manifest.txt", std::ios::binary);
    if (!manifest) throw Error("cannot write manifest in '" + split_dir.string() + "'");
    for (const Utterance& u : corpus.split(kSplitNames[s])) {
      manifest << u.id << '\t' << u.text << '\n';
      save_arrays(split_dir / (u.id + ".arr"), {{"features", u.features}});
    }
  }
}

Corpus load_corpus(const std::filesystem::path& dir, const Tokenizer& tokenizer) {
  Corpus c;
  std::vector<Utterance>* targets[] = {&c.train, &c.dev, &c.test};
  for (std::size_t s = 0; s < 3; ++s) {
    const auto split_dir = dir / kSplitNames[s];
    std::ifstream manifest(split_dir / "manifest.txt");
    if (!manifest) throw Error("corpus split '" + split_dir.string() + "' has no manifest.txt");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(manifest, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw ParseError(split_dir.string() + "/manifest.txt:" + std::to_string(line_no) +
                         ": expected id<TAB>text");
      }
      Utterance u;
      u.id = line.substr(0, tab);
      u.text = line.substr(tab + 1);
      u.tokens = tokenizer.tokenize(u.text);
      const auto arrays = load_arrays(split_dir / (u.id + ".arr"));
      if (arrays.size() != 1 || arrays[0].name != "features") {
        throw ParseError("corpus: " + u.id + ".arr must hold exactly one 'features' array");
      }
      u.features = arrays[0].value;
      targets[s]->push_back(std::move(u));
    }
  }
  return c;
}

std::string manifest_hash(const std::filesystem::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::string_view split : kSplitNames) {
    for (unsigned char ch : read_file(dir / split / "manifest.txt")) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

}  // namespace otkt::synth
