#include "otkt/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "otkt/error.hpp"

namespace otkt::cli {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return value;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  return parse_number<std::size_t>(key, text);
}

double parse_real(const std::string& key, const std::string& text) {
  return parse_number<double>(key, text);
}

std::string render_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

train::Mode parse_mode_or_throw(const std::string& text) {
  if (const auto mode = train::parse_mode(text)) return *mode;
  throw ConfigError("invalid mode '" + text + "'; valid modes: " + train::valid_mode_list());
}

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::uint64_t>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "' needs at least one seed");
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define OTKT_COUNT(key, field)                                                              \
  Key {                                                                                     \
    key, [](RunConfig& c, const std::string& v) { c.field = parse_count(key, v); },         \
        [](const RunConfig& c) { return std::to_string(c.field); }                           \
  }
#define OTKT_REAL(key, field)                                                              \
  Key {                                                                                    \
    key, [](RunConfig& c, const std::string& v) { c.field = parse_real(key, v); },         \
        [](const RunConfig& c) { return render_real(c.field); }                             \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"seed",
          [](RunConfig& c, const std::string& v) {
            const auto s = parse_number<std::uint64_t>("seed", v);
            c.corpus.seed = c.hp.seed = c.encoder.seed = s;
          },
          [](const RunConfig& c) { return std::to_string(c.hp.seed); }},
      Key{"mode", [](RunConfig& c, const std::string& v) { c.mode = parse_mode_or_throw(v); },
          [](const RunConfig& c) { return std::string(train::mode_name(c.mode)); }},
      Key{"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
          [](const RunConfig& c) { return c.out_dir.string(); }},
      Key{"corpus_dir", [](RunConfig& c, const std::string& v) { c.corpus_dir = v; },
          [](const RunConfig& c) { return c.corpus_path().string(); }},
      Key{"ablate_seeds",
          [](RunConfig& c, const std::string& v) { c.ablate_seeds = parse_seed_list("ablate_seeds", v); },
          [](const RunConfig& c) {
            std::string out;
            for (auto s : c.ablate_seeds) out += (out.empty() ? "" : ",") + std::to_string(s);
            return out;
          }},
      // corpus
      OTKT_COUNT("vocab_chars", corpus.vocab_chars),
      OTKT_COUNT("train_utts", corpus.train_utts),
      OTKT_COUNT("dev_utts", corpus.dev_utts),
      OTKT_COUNT("test_utts", corpus.test_utts),
      OTKT_COUNT("min_text_len", corpus.min_text_len),
      OTKT_COUNT("max_text_len", corpus.max_text_len),
      OTKT_COUNT("min_frames_per_token", corpus.min_frames_per_token),
      OTKT_COUNT("max_frames_per_token", corpus.max_frames_per_token),
      OTKT_COUNT("feature_dim", corpus.feature_dim),
      OTKT_REAL("noise_std", corpus.noise_std),
      // encoder
      OTKT_COUNT("num_blocks", encoder.num_blocks),
      OTKT_COUNT("model_dim", encoder.model_dim),
      OTKT_COUNT("ffn_dim", encoder.ffn_dim),
      OTKT_COUNT("conv_kernel", encoder.conv_kernel),
      OTKT_COUNT("teacher_dim", encoder.teacher_dim),
      OTKT_COUNT("teacher_layers", encoder.teacher_layers),
      OTKT_COUNT("teacher_ffn_dim", encoder.teacher_ffn_dim),
      // training
      OTKT_REAL("alpha", hp.alpha),
      OTKT_REAL("lambda", hp.lambda),
      OTKT_REAL("w", hp.w),
      OTKT_REAL("s", hp.s),
      OTKT_REAL("base_lr", hp.base_lr),
      OTKT_COUNT("warmup_steps", hp.warmup_steps),
      OTKT_COUNT("epochs", hp.epochs),
      OTKT_COUNT("average_last", hp.average_last),
      OTKT_COUNT("batch_size", hp.batch_size),
      OTKT_REAL("grad_clip", hp.grad_clip),
      OTKT_COUNT("sinkhorn_max_iter", hp.sinkhorn_max_iter),
      OTKT_REAL("sinkhorn_tol", hp.sinkhorn_tol),
  };
  return table;
}

#undef OTKT_COUNT
#undef OTKT_REAL

const std::set<std::string> kRequired = {"seed"};

}  // namespace

void RunConfig::validate() const {
  try {
    corpus.validate();
    encoder.validate();
    hp.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (encoder.input_dim != corpus.feature_dim) {
    throw ConfigError("config: encoder input_dim does not match feature_dim");
  }
  if (encoder.vocab != corpus.vocab_chars + kNumReserved) {
    throw ConfigError("config: encoder vocabulary does not match vocab_chars");
  }
  if (ablate_seeds.empty()) throw ConfigError("config: ablate_seeds is empty");
}

RunConfig parse_config(std::istream& in, const Overrides& overrides) {
  std::map<std::string, const Key*> by_name;
  for (const Key& k : keys()) by_name[k.name] = &k;

  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    if (value.empty()) throw ConfigError(where + ": key '" + key + "' has no value");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  std::vector<std::string> missing;
  for (const auto& k : kRequired)
    if (!seen.count(k) && !(k == "seed" && overrides.seed)) missing.push_back(k);
  if (!missing.empty()) {
    std::string list;
    for (const auto& k : missing) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("config is missing required key(s): " + list);
  }

  if (overrides.seed) cfg.corpus.seed = cfg.hp.seed = cfg.encoder.seed = *overrides.seed;
  if (overrides.alpha) cfg.hp.alpha = *overrides.alpha;
  if (overrides.lambda) cfg.hp.lambda = *overrides.lambda;
  if (overrides.mode) cfg.mode = parse_mode_or_throw(*overrides.mode);
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;

  cfg.encoder.input_dim = cfg.corpus.feature_dim;
  cfg.encoder.vocab = cfg.corpus.vocab_chars + kNumReserved;
  cfg.encoder.adapter_scale = cfg.hp.s;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  return parse_config(in, overrides);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const Key& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace otkt::cli
