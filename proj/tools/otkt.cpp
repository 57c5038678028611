#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "otkt/commands.hpp"
#include "otkt/training.hpp"

using namespace otkt;

namespace {

struct Common {
  std::string config;
  cli::Overrides overrides;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  double lambda = 0.0;
  std::string mode;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_mode) {
  cmd->add_option("--config", c.config, "run configuration file (key = value lines)")->required();
  cmd->add_option("--out", c.out, "output directory (overrides out_dir)");
  cmd->add_option("--seed-override", c.seed, "replace the config seed");
  cmd->add_option("--alpha", c.alpha, "entropic regularizer override");
  cmd->add_option("--lambda", c.lambda, "CTC weight override");
  if (with_mode) {
    cmd->add_option("--mode", c.mode, "one of: " + train::valid_mode_list());
  }
}

cli::RunConfig load(const CLI::App* cmd, Common& c) {
  if (cmd->count("--seed-override")) c.overrides.seed = c.seed;
  if (cmd->count("--alpha")) c.overrides.alpha = c.alpha;
  if (cmd->count("--lambda")) c.overrides.lambda = c.lambda;
  if (cmd->get_option_no_throw("--mode") && cmd->count("--mode")) c.overrides.mode = c.mode;
  if (cmd->count("--out")) c.overrides.out_dir = c.out;
  return cli::load_config(c.config, c.overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal-transport knowledge transfer for CTC speech recognition (desk scale)"};
  app.require_subcommand(1);

  Common gen_c, train_c, ablate_c;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_common(gen, gen_c, false);
  auto* trn = app.add_subcommand("train", "train one system and write checkpoints and metrics");
  add_common(trn, train_c, true);
  auto* abl = app.add_subcommand("ablate", "train all four systems over several seeds");
  add_common(abl, ablate_c, false);

  cli::EvalArgs eval_args;
  std::string eval_ckpt, eval_corpus, eval_report;
  auto* ev = app.add_subcommand("eval", "greedy-decode a split and report CER");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--corpus", eval_corpus, "corpus directory")->required();
  ev->add_option("--split", eval_args.split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  ev->add_option("--report", eval_report, "append the report line to this file");

  cli::SinkhornArgs sk_args;
  std::string cost_file;
  auto* sk = app.add_subcommand("sinkhorn", "solve entropic OT for a cost matrix file");
  sk->add_option("cost", cost_file, "cost file: one row per line")->required();
  sk->add_option("--alpha", sk_args.alpha, "entropic regularizer");
  sk->add_option("--tol", sk_args.tol, "marginal tolerance");
  sk->add_option("--max-iter", sk_args.max_iter, "iteration budget");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  return cli::guarded(std::cerr, [&]() -> int {
    if (gen->parsed()) return cli::cmd_gen_data(load(gen, gen_c), std::cout);
    if (trn->parsed()) return cli::cmd_train(load(trn, train_c), std::cout);
    if (abl->parsed()) return cli::cmd_ablate(load(abl, ablate_c), std::cout);
    if (ev->parsed()) {
      eval_args.checkpoint = eval_ckpt;
      eval_args.corpus_dir = eval_corpus;
      if (!eval_report.empty()) eval_args.report = eval_report;
      return cli::cmd_eval(eval_args, std::cout);
    }
    sk_args.cost_file = cost_file;
    return cli::cmd_sinkhorn(sk_args, std::cout);
  });
}
