#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "otkt/ctc.hpp"
#include "otkt/encoders.hpp"
#include "otkt/error.hpp"
#include "otkt/synthdata.hpp"

using namespace otkt;
using synth::CorpusConfig;
using synth::Tokenizer;

namespace {

std::string random_text(std::mt19937_64& rng, const std::string& alphabet, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s(len(rng), ' ');
  for (char& c : s) c = alphabet[pick(rng)];
  return s;
}

bool rows_equal(const Array2& a, std::size_t r, const Array2& b, std::size_t s) {
  for (std::size_t c = 0; c < a.cols(); ++c)
    if (a(r, c) != b(s, c)) return false;
  return true;
}

}  // namespace

TEST_CASE("tokenizer examples") {
  const Tokenizer tok(27);
  CHECK(tok.tokenize("").empty());
  CHECK(tok.vocab_size() == 30);
  const TokenSequence ids = tok.tokenize("abz");
  CHECK(ids == TokenSequence{3, 4, 28});
  CHECK(tok.detokenize(ids) == "abz");
  CHECK_THROWS_AS(Tokenizer(0), InvalidInput);
  CHECK_THROWS_AS(Tokenizer(63), InvalidInput);
}

TEST_CASE("tokenizer reports the position of an unknown character") {
  const Tokenizer tok(5);
  try {
    (void)tok.tokenize("abcz");
    FAIL("expected InvalidInput");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("position 3") != std::string::npos);
  }
  CHECK_THROWS_AS(tok.detokenize({kBlank}), InvalidInput);
}

TEST_CASE("tokenize is injective and round trips") {
  const Tokenizer tok(62);
  std::mt19937_64 rng(1);
  std::set<TokenSequence> seen_ids;
  std::set<std::string> seen_text;
  for (int i = 0; i < 2000; ++i) {
    const std::string s = random_text(rng, tok.alphabet(), 6);
    const TokenSequence ids = tok.tokenize(s);
    for (int id : ids) {
      CHECK(id >= kNumReserved);
      CHECK(id < static_cast<int>(tok.vocab_size()));
    }
    CHECK(tok.detokenize(ids) == s);
    CHECK(seen_ids.insert(ids).second == seen_text.insert(s).second);
  }
}

TEST_CASE("corpus config validation") {
  CorpusConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.min_text_len = 11;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = {};
  cfg.noise_std = -0.1;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = {};
  cfg.min_frames_per_token = 13;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("noise-free frames within one span are identical prototype copies") {
  CorpusConfig cfg;
  cfg.train_utts = 100;
  cfg.vocab_chars = 3;  // small alphabet so repeated characters are common
  const auto corpus = synth::gen_corpus(cfg);
  const Array2 protos = synth::token_prototypes(cfg);
  std::size_t with_repeats = 0;
  for (const auto& u : corpus.train) {
    const Array2& x = u.features;
    // collapse runs of identical frames
    std::vector<std::size_t> run_starts{0};
    for (std::size_t t = 1; t < x.rows(); ++t)
      if (!rows_equal(x, t, x, t - 1)) run_starts.push_back(t);
    std::vector<int> expected;
    for (std::size_t k = 0; k < u.tokens.size(); ++k) {
      if (k > 0 && u.tokens[k] == u.tokens[k - 1]) expected.push_back(kBlank);
      expected.push_back(u.tokens[k]);
    }
    with_repeats += expected.size() > u.tokens.size();
    REQUIRE(run_starts.size() == expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
      CHECK(rows_equal(x, run_starts[k], protos, static_cast<std::size_t>(expected[k])));
      const std::size_t end = k + 1 < run_starts.size() ? run_starts[k + 1] : x.rows();
      if (expected[k] != kBlank && k + 1 < expected.size()) {
        CHECK(end - run_starts[k] >= cfg.min_frames_per_token);
        CHECK(end - run_starts[k] <= cfg.max_frames_per_token);
      }
    }
  }
  CHECK(with_repeats > 0);
}

TEST_CASE("every generated utterance fits the encoder and CTC") {
  CorpusConfig cfg;
  cfg.min_text_len = 1;
  cfg.max_text_len = 12;
  cfg.min_frames_per_token = 1;
  cfg.max_frames_per_token = 3;
  cfg.noise_std = 0.5;
  const auto corpus = synth::gen_corpus(cfg);
  for (auto split : synth::kSplitNames) {
    for (const auto& u : corpus.split(split)) {
      CHECK(u.features.rows() >= enc::kMinInputFrames);
      CHECK(enc::subsampled_length(u.features.rows()) >= ctc::min_frames(u.tokens));
      CHECK(u.features.cols() == cfg.feature_dim);
      CHECK(u.tokens == Tokenizer(cfg.vocab_chars).tokenize(u.text));
    }
  }
  CHECK_THROWS_AS((void)corpus.split("validation"), InvalidInput);
}

TEST_CASE("same seed gives a bit-identical corpus, different seed differs") {
  CorpusConfig cfg;
  cfg.noise_std = 0.4;
  cfg.train_utts = 30;
  const auto a = synth::gen_corpus(cfg);
  const auto b = synth::gen_corpus(cfg);
  for (auto split : synth::kSplitNames) {
    REQUIRE(a.split(split).size() == b.split(split).size());
    for (std::size_t i = 0; i < a.split(split).size(); ++i) {
      CHECK(a.split(split)[i].text == b.split(split)[i].text);
      CHECK(a.split(split)[i].features == b.split(split)[i].features);
    }
  }
  cfg.seed = 2;
  const auto c = synth::gen_corpus(cfg);
  CHECK(c.train[0].features != a.train[0].features);
}

TEST_CASE("splits are disjoint by id") {
  const auto corpus = synth::gen_corpus(CorpusConfig{});
  std::set<std::string> ids;
  std::size_t total = 0;
  for (auto split : synth::kSplitNames) {
    for (const auto& u : corpus.split(split)) {
      CHECK(u.id.rfind(std::string(split) + "-", 0) == 0);
      ids.insert(u.id);
      ++total;
    }
  }
  CHECK(ids.size() == total);
  CHECK(total == 300);
}

TEST_CASE("mean text length is within 10% of the configured midpoint") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CorpusConfig cfg;
    cfg.train_utts = 1000;
    cfg.dev_utts = 0;
    cfg.test_utts = 0;
    cfg.seed = seed;
    const auto corpus = synth::gen_corpus(cfg);
    double sum = 0.0;
    for (const auto& u : corpus.train) sum += static_cast<double>(u.text.size());
    const double mid = 0.5 * static_cast<double>(cfg.min_text_len + cfg.max_text_len);
    CHECK(std::abs(sum / 1000.0 - mid) < 0.1 * mid);
  }
}

TEST_CASE("corpus save/load round trip and manifest hash") {
  const auto root = std::filesystem::temp_directory_path() / "otkt_test_corpus";
  std::filesystem::remove_all(root);
  CorpusConfig cfg;
  cfg.train_utts = 5;
  cfg.dev_utts = 3;
  cfg.test_utts = 2;
  cfg.noise_std = 0.3;
  const auto corpus = synth::gen_corpus(cfg);
  synth::save_corpus(corpus, root / "a");
  synth::save_corpus(corpus, root / "b");
  const auto loaded = synth::load_corpus(root / "a", Tokenizer(cfg.vocab_chars));
  for (auto split : synth::kSplitNames) {
    REQUIRE(loaded.split(split).size() == corpus.split(split).size());
    for (std::size_t i = 0; i < corpus.split(split).size(); ++i) {
      const auto& x = corpus.split(split)[i];
      const auto& y = loaded.split(split)[i];
      CHECK(x.id == y.id);
      CHECK(x.text == y.text);
      CHECK(x.tokens == y.tokens);
      CHECK(x.features == y.features);
    }
  }
  const std::string h = synth::manifest_hash(root / "a");
  CHECK(h.size() == 16);
  CHECK(h == synth::manifest_hash(root / "b"));

  cfg.seed = 5;
  synth::save_corpus(synth::gen_corpus(cfg), root / "c");
  CHECK(h != synth::manifest_hash(root / "c"));

  std::ofstream(root / "a" / "dev" / "manifest.txt", std::ios::app) << "no-tab-here\n";
  CHECK_THROWS_AS(synth::load_corpus(root / "a", Tokenizer(cfg.vocab_chars)), ParseError);
  CHECK_THROWS_AS(synth::load_corpus(root / "missing", Tokenizer(cfg.vocab_chars)), Error);
  std::filesystem::remove_all(root);
}
