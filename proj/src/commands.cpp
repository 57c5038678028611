#include "otkt/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "otkt/error.hpp"
#include "otkt/ot_align.hpp"
#include "otkt/training.hpp"

namespace otkt::cli {
namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

synth::Corpus load_corpus_for(const RunConfig& cfg) {
  const auto dir = cfg.corpus_path();
  if (!std::filesystem::is_directory(dir)) {
    throw Error("corpus directory '" + dir.string() + "' not found; run gen-data first");
  }
  synth::Corpus corpus = synth::load_corpus(dir, synth::Tokenizer(cfg.corpus.vocab_chars));
  for (auto split : synth::kSplitNames) {
    for (const auto& u : corpus.split(split)) {
      if (u.features.cols() != cfg.corpus.feature_dim) {
        throw Error("corpus utterance " + u.id + " has " + std::to_string(u.features.cols()) +
                    " feature columns but the config says feature_dim = " +
                    std::to_string(cfg.corpus.feature_dim));
      }
    }
  }
  return corpus;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << text;
}

}  // namespace

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const auto dir = cfg.corpus_path();
  const synth::Corpus corpus = synth::gen_corpus(cfg.corpus);
  synth::save_corpus(corpus, dir);
  out << "corpus " << dir.string() << " train=" << corpus.train.size()
      << " dev=" << corpus.dev.size() << " test=" << corpus.test.size()
      << " manifest_hash=" << synth::manifest_hash(dir) << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const synth::Corpus corpus = load_corpus_for(cfg);
  const auto run_dir = cfg.out_dir / std::string(train::mode_name(cfg.mode));
  std::filesystem::create_directories(run_dir);
  write_file(run_dir / "config.txt", render_config(cfg));

  train::TrainOptions opts;
  opts.out_dir = run_dir;
  out << train::metrics_header() << '\n';
  opts.on_epoch = [&](const train::EpochMetrics& m) { out << train::format_metrics(m) << '\n' << std::flush; };
  const auto result = train::train(corpus, cfg.encoder, cfg.hp, cfg.mode, opts);
  if (result.skipped > 0) {
    out << "warning: skipped " << result.skipped << " infeasible utterance visits\n";
  }
  out << "final checkpoint " << (run_dir / "final.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const train::LoadedModel model = train::load_model(args.checkpoint);
  const std::size_t chars = model.student.config().vocab - kNumReserved;
  const synth::Corpus corpus = synth::load_corpus(args.corpus_dir, synth::Tokenizer(chars));
  const auto& utts = corpus.split(args.split);

  ot::reset_sinkhorn_counters();
  enc::reset_teacher_forward_count();
  const train::CerReport r = train::evaluate(model.student, model.use_adapter, utts);
  const auto sinkhorn_iters = ot::sinkhorn_counters().iterations;
  const auto teacher_calls = enc::teacher_forward_count();
  if (sinkhorn_iters != 0 || teacher_calls != 0) {
    throw Error("inference touched training-only code: " + std::to_string(sinkhorn_iters) +
                " Sinkhorn iterations, " + std::to_string(teacher_calls) + " teacher passes");
  }

  const std::string line = "eval\tsplit=" + args.split + "\tcer=" + fixed(r.cer, 6) +
                           "\tedits=" + std::to_string(r.edits) +
                           "\tref_tokens=" + std::to_string(r.ref_tokens) +
                           "\tutterances=" + std::to_string(r.utterances) +
                           "\tsinkhorn_iterations=" + std::to_string(sinkhorn_iters) +
                           "\tteacher_forwards=" + std::to_string(teacher_calls) +
                           "\tcheckpoint=" + args.checkpoint.string();
  if (args.report) {
    std::ofstream f(*args.report, std::ios::app | std::ios::binary);
    if (!f) throw Error("cannot append to report '" + args.report->string() + "'");
    f << line << '\n';
  }
  out << line << '\n';
  return kExitOk;
}

Array2 read_cost_matrix(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = line.substr(0, line.find('#'));
    std::istringstream fields(body);
    std::vector<double> row;
    std::string tok;
    while (fields >> tok) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ParseError("cost line " + std::to_string(line_no) + ": cannot parse '" + tok +
                         "' as a number");
      }
      row.push_back(v);
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("cost line " + std::to_string(line_no) + ": expected " +
                       std::to_string(rows.front().size()) + " values, found " +
                       std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("cost file has no rows");
  Array2 cost(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), cost.row(i).begin());
  return cost;
}

int cmd_sinkhorn(const SinkhornArgs& args, std::ostream& out) {
  std::ifstream in(args.cost_file);
  if (!in) throw Error("cannot open cost file '" + args.cost_file.string() + "'");
  const Array2 cost = read_cost_matrix(in);
  if (!(args.alpha > 0.0)) throw ConfigError("--alpha must be > 0");
  if (!(args.tol > 0.0)) throw ConfigError("--tol must be > 0");
  const ot::EotResult r = ot::sinkhorn(cost, {args.alpha, args.max_iter, args.tol});

  out << "gamma " << cost.rows() << ' ' << cost.cols() << '\n';
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    for (std::size_t j = 0; j < cost.cols(); ++j)
      out << (j ? " " : "") << general(r.coupling.gamma(i, j));
    out << '\n';
  }
  out << "transport_cost " << general(r.transport_cost) << '\n'
      << "entropy " << general(r.entropy) << '\n'
      << "eot_loss " << general(r.eot_loss) << '\n'
      << "iterations " << r.iterations_used << '\n'
      << "converged " << (r.converged ? "true" : "false") << '\n';
  return kExitOk;
}

double AblationResult::median_dev(train::Mode m) const { return median(dev_cer.at(m)); }
double AblationResult::median_test(train::Mode m) const { return median(test_cer.at(m)); }

AblationResult run_ablation(const RunConfig& cfg) {
  const auto corpus_dir = cfg.corpus_path();
  const synth::Corpus corpus = synth::gen_corpus(cfg.corpus);
  synth::save_corpus(corpus, corpus_dir);
  AblationResult res;
  res.manifest_hash = synth::manifest_hash(corpus_dir);
  for (std::uint64_t seed : cfg.ablate_seeds) {
    for (train::Mode mode : train::kAllModes) {
      train::HyperParams hp = cfg.hp;
      hp.seed = seed;
      train::TrainOptions opts;
      opts.out_dir = cfg.out_dir / "ablate" / ("seed" + std::to_string(seed)) /
                     std::string(train::mode_name(mode));
      const auto result = train::train(corpus, cfg.encoder, hp, mode, opts);
      const bool adapter = train::uses_adapter(mode);
      res.dev_cer[mode].push_back(train::evaluate(result.model, adapter, corpus.dev).cer);
      res.test_cer[mode].push_back(train::evaluate(result.model, adapter, corpus.test).cer);
    }
  }
  return res;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const AblationResult res = run_ablation(cfg);

  std::string runs = "seed\tmode\tdev_cer\ttest_cer\n";
  for (std::size_t k = 0; k < cfg.ablate_seeds.size(); ++k)
    for (train::Mode mode : train::kAllModes)
      runs += std::to_string(cfg.ablate_seeds[k]) + "\t" + std::string(train::mode_name(mode)) +
              "\t" + fixed(res.dev_cer.at(mode)[k], 6) + "\t" + fixed(res.test_cer.at(mode)[k], 6) + "\n";

  std::string seeds;
  for (auto s : cfg.ablate_seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  std::string table = train::timestamp_line() + "\n";
  table += "# corpus " + cfg.corpus_path().string() + " manifest_hash " + res.manifest_hash +
           " seeds " + seeds + " noise_std " + general(cfg.corpus.noise_std) + "\n";
  table += "system\tdev_cer\ttest_cer\n";
  for (train::Mode mode : train::kAllModes) {
    table += std::string(train::mode_label(mode)) + "\t" + fixed(100.0 * res.median_dev(mode), 2) +
             "\t" + fixed(100.0 * res.median_test(mode), 2) + "\n";
  }
  std::filesystem::create_directories(cfg.out_dir);
  write_file(cfg.out_dir / "ablation.tsv", table);
  write_file(cfg.out_dir / "ablation_runs.tsv", runs);
  out << table;
  return kExitOk;
}

}  // namespace otkt::cli
