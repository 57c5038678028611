#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "otkt/array_io.hpp"
#include "otkt/error.hpp"
#include "otkt/training.hpp"
#include "test_util.hpp"

using namespace otkt;
using train::HyperParams;
using train::Mode;

namespace {

enc::EncoderConfig tiny_encoder() {
  enc::EncoderConfig cfg;
  cfg.num_blocks = 2;
  cfg.model_dim = 16;
  cfg.ffn_dim = 32;
  cfg.teacher_dim = 24;
  cfg.seed = 11;
  return cfg;
}

synth::Corpus small_corpus(std::size_t train_utts, std::uint64_t seed, double noise = 0.0) {
  synth::CorpusConfig cc;
  cc.train_utts = train_utts;
  cc.dev_utts = 2;
  cc.test_utts = 2;
  cc.min_text_len = 3;
  cc.max_text_len = 4;
  cc.noise_std = noise;
  cc.seed = seed;
  return synth::gen_corpus(cc);
}

std::vector<const synth::Utterance*> pointers(const std::vector<synth::Utterance>& utts) {
  std::vector<const synth::Utterance*> out;
  for (const auto& u : utts) out.push_back(&u);
  return out;
}

bool identity_holds(const train::LossBreakdown& b, const HyperParams& hp, Mode mode) {
  const double lambda = train::effective_lambda(hp, mode);
  const double expect = lambda * b.ctc + (1.0 - lambda) * hp.w * (b.align + b.eot);
  return std::abs(b.total - expect) <= 1e-12;
}

}  // namespace

TEST_CASE("combine examples") {
  HyperParams hp;
  hp.lambda = 1.0;
  CHECK(train::combine(2.0, 7.0, 3.0, hp, Mode::kTransfer).total == 2.0);

  hp.lambda = 0.3;
  hp.w = 1.0;
  CHECK(train::combine(2.0, 0.5, 0.1, hp, Mode::kTransfer).total == doctest::Approx(1.02).epsilon(1e-14));
  CHECK(train::combine(2.0, 0.0, 0.1, hp, Mode::kTransfer).total ==
        doctest::Approx(0.3 * 2.0 + 0.7 * 0.1).epsilon(1e-14));

  const auto base = train::combine(2.0, 0.5, 0.1, hp, Mode::kBaseline);
  CHECK(base.align == 0.0);
  CHECK(base.eot == 0.0);
  CHECK(base.total == 2.0);
}

TEST_CASE("perfect alignment gives zero align loss") {
  std::mt19937_64 rng(2);
  const Array2 z = testing::random_array(rng, 5, 4);
  ad::Graph g;
  CHECK(ot::alignment_loss(g.constant(z), g.constant(z)).item() == 0.0);
}

TEST_CASE("mode names round trip") {
  for (Mode m : train::kAllModes) CHECK(train::parse_mode(train::mode_name(m)) == m);
  CHECK(train::parse_mode("ctc_only") == Mode::kBaseline);
  CHECK_FALSE(train::parse_mode("bogus").has_value());
  CHECK(train::valid_mode_list() == "baseline, adapter_only, no_adapter, transfer");
  CHECK(train::mode_label(Mode::kTransfer) == "ConformerAdpt+CTC-OT-BERT");
}

TEST_CASE("hyperparameter validation") {
  HyperParams hp;
  CHECK_NOTHROW(hp.validate());
  hp.alpha = 0.0;
  CHECK_THROWS_AS(hp.validate(), InvalidInput);
  hp = {};
  hp.lambda = 1.5;
  CHECK_THROWS_AS(hp.validate(), InvalidInput);
  hp = {};
  hp.warmup_steps = 0;
  CHECK_THROWS_AS(hp.validate(), InvalidInput);
}

TEST_CASE("learning rate schedule examples") {
  HyperParams hp;
  hp.base_lr = 1e-3;
  hp.warmup_steps = 200;
  CHECK(train::lr_schedule(200, hp) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(train::lr_schedule(100, hp) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(train::lr_schedule(800, hp) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK_THROWS_AS(train::lr_schedule(0, hp), InvalidInput);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged and decays moments") {
  ParamSet ps;
  ps.add("w", Array2{{1.0, -2.0}});
  train::AdamState st;
  train::adam_step(ps, {Array2{{0.5, -0.5}}}, st, 0.1);
  const Array2 after_first = ps.value(0);
  const Array2 m1 = st.m[0];
  const Array2 v1 = st.v[0];
  train::adam_step(ps, {Array2(1, 2)}, st, 0.0);
  CHECK(ps.value(0) == after_first);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(st.m[0].flat()[i] == doctest::Approx(0.9 * m1.flat()[i]));
    CHECK(st.v[0].flat()[i] == doctest::Approx(0.999 * v1.flat()[i]));
  }
}

TEST_CASE("adam: first step moves by -sign(g) * lr") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet ps;
    const Array2 p0 = testing::random_array(rng, 3, 4);
    Array2 g = testing::random_array(rng, 3, 4, 0.1, 2.0);
    for (std::size_t i = 0; i < g.size(); i += 2) g.flat()[i] = -g.flat()[i];
    ps.add("w", p0);
    train::AdamState st;
    const double lr = 0.01;
    train::adam_step(ps, {g}, st, lr);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double step = ps.value(0).flat()[i] - p0.flat()[i];
      const double expect = g.flat()[i] > 0 ? -lr : lr;
      CHECK(std::abs(step - expect) < lr * 1e-6);
    }
  }
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  ParamSet ps;
  ps.add("first", Array2(1, 1));
  ps.add("block0.ffn1.up.weight", Array2(1, 2));
  train::AdamState st;
  try {
    train::adam_step(ps, {Array2(1, 1), Array2{{0.0, std::nan("")}}}, st, 0.1);
    FAIL("expected InvalidInput");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("block0.ffn1.up.weight") != std::string::npos);
  }
  CHECK_THROWS_AS(train::adam_step(ps, {Array2(1, 1)}, st, 0.1), ShapeError);
}

TEST_CASE("adam: identical inputs give identical trajectories") {
  std::mt19937_64 rng(4);
  const Array2 g1 = testing::random_array(rng, 2, 2);
  const Array2 g2 = testing::random_array(rng, 2, 2);
  auto run = [&](const Array2& a, const Array2& b) {
    ParamSet ps;
    ps.add("w", Array2(2, 2, 0.5));
    train::AdamState st;
    train::adam_step(ps, {a}, st, 0.01);
    train::adam_step(ps, {b}, st, 0.01);
    return ps.value(0);
  };
  CHECK(run(g1, g1) == run(g1, g1));
  CHECK(run(g1, g2) != run(g2, g1));
}

TEST_CASE("global norm clipping") {
  std::vector<Array2> g{Array2{{3.0}}, Array2{{0.0, 4.0}}};
  CHECK(train::clip_global_norm(g, 10.0) == doctest::Approx(5.0));
  CHECK(g[1](0, 1) == 4.0);
  CHECK(train::clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0](0, 0) == doctest::Approx(0.6));
  CHECK(g[1](0, 1) == doctest::Approx(0.8));
}

TEST_CASE("checkpoint averaging examples") {
  std::mt19937_64 rng(5);
  const std::vector<NamedArray> p{{"a", testing::random_array(rng, 2, 3)},
                                  {"b", testing::random_array(rng, 1, 4)}};
  CHECK(train::average_arrays({p}) == p);

  std::vector<NamedArray> neg = p;
  for (auto& a : neg)
    for (double& v : a.value.flat()) v = -v;
  for (const auto& a : train::average_arrays({p, neg}))
    for (double v : a.value.flat()) CHECK(v == 0.0);

  for (std::size_t k = 2; k <= 5; ++k) {
    const auto avg = train::average_arrays(std::vector(k, p));
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(max_abs_diff(avg[i].value, p[i].value) < 1e-15);
  }

  std::vector<NamedArray> bad = p;
  bad[1].value = Array2(2, 2);
  CHECK_THROWS_AS(train::average_arrays({p, bad}), ShapeError);
  CHECK_THROWS_AS(train::average_arrays({}), InvalidInput);
}

TEST_CASE("average_checkpoints reads files and rebuilds a student") {
  const auto dir = std::filesystem::temp_directory_path() / "otkt_test_avg";
  std::filesystem::create_directories(dir);
  const enc::Student s(tiny_encoder());
  const auto path = dir / "a.ckpt";
  save_arrays(path, train::model_checkpoint(s, Mode::kTransfer));
  const enc::Student one = train::average_checkpoints({path});
  CHECK(one.params().entries() == s.params().entries());
  const auto loaded = train::load_model(path);
  CHECK(loaded.use_adapter);
  CHECK_THROWS_AS(train::load_model(dir / "missing.ckpt"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero epochs returns the initial model") {
  const auto corpus = small_corpus(2, 1);
  HyperParams hp;
  hp.epochs = 0;
  hp.seed = 7;
  auto cfg = tiny_encoder();
  const auto result = train::train(corpus, cfg, hp, Mode::kTransfer);
  cfg.seed = 7;
  CHECK(result.model.params().entries() == enc::Student(cfg).params().entries());
  CHECK(result.history.empty());
}

TEST_CASE("effective lambda") {
  HyperParams hp;
  CHECK(train::effective_lambda(hp, Mode::kBaseline) == 1.0);
  CHECK(train::effective_lambda(hp, Mode::kAdapterOnly) == 1.0);
  CHECK(train::effective_lambda(hp, Mode::kNoAdapter) == 0.3);
  CHECK(train::effective_lambda(hp, Mode::kTransfer) == 0.3);
}

TEST_CASE("baseline mode never runs the teacher or Sinkhorn") {
  const auto corpus = small_corpus(4, 2);
  HyperParams hp;
  hp.epochs = 2;
  hp.batch_size = 2;
  ot::reset_sinkhorn_counters();
  enc::reset_teacher_forward_count();
  const auto result = train::train(corpus, tiny_encoder(), hp, Mode::kBaseline);
  CHECK(ot::sinkhorn_counters().calls == 0);
  CHECK(enc::teacher_forward_count() == 0);
  for (const auto& m : result.history) {
    CHECK(m.train.align == 0.0);
    CHECK(m.train.eot == 0.0);
  }
  hp.epochs = 1;
  (void)train::train(corpus, tiny_encoder(), hp, Mode::kTransfer);
  CHECK(ot::sinkhorn_counters().calls == 4);
  CHECK(enc::teacher_forward_count() == 4);
}

TEST_CASE("every logged breakdown satisfies the loss identity and the teacher stays frozen") {
  const auto corpus = small_corpus(6, 3, 0.3);
  HyperParams hp;
  hp.epochs = 2;
  hp.batch_size = 3;
  const enc::TextTeacher before(tiny_encoder());
  for (Mode mode : train::kAllModes) {
    std::size_t steps = 0;
    train::TrainOptions opts;
    opts.on_step = [&](const train::LossBreakdown& b) {
      ++steps;
      CHECK(identity_holds(b, hp, mode));
      if (train::uses_ot(mode)) {
        CHECK(b.align > 0.0);
      } else {
        CHECK(b.align == 0.0);
        CHECK(b.eot == 0.0);
      }
    };
    const auto result = train::train(corpus, tiny_encoder(), hp, mode, opts);
    CHECK(steps == 4);
    for (const auto& m : result.history) CHECK(identity_holds(m.train, hp, mode));
    const enc::TextTeacher after(tiny_encoder());
    CHECK(after.params().entries() == before.params().entries());
  }
}

TEST_CASE("teacher parameters receive no gradient") {
  const auto corpus = small_corpus(1, 4);
  const enc::Student student(tiny_encoder());
  const enc::TextTeacher teacher(tiny_encoder());
  const auto& u = corpus.train[0];
  ad::Graph g;
  Binding student_bind(g, student.params());
  Binding teacher_bind(g, teacher.params());
  const auto obj = train::utterance_objective(student_bind, student, teacher, u.features, u.tokens,
                                              HyperParams{}, Mode::kTransfer);
  for (const Array2& gr : teacher_bind.gradients(g.backward(obj.total)))
    for (double v : gr.flat()) CHECK(v == 0.0);
}

TEST_CASE("infeasible utterances are skipped and counted") {
  auto corpus = small_corpus(3, 5);
  // too few frames for the target once subsampled
  corpus.train[1].features = Array2(9, corpus.train[1].features.cols());
  const enc::Student student(tiny_encoder());
  const enc::TextTeacher teacher(tiny_encoder());
  const auto br = train::batch_objective(pointers(corpus.train), student, teacher, HyperParams{},
                                         Mode::kTransfer);
  CHECK(br.used == 2);
  CHECK(br.skipped == 1);

  HyperParams hp;
  hp.epochs = 2;
  const auto result = train::train(corpus, tiny_encoder(), hp, Mode::kBaseline);
  CHECK(result.skipped == 2);
  CHECK(result.history[0].skipped == 1);
}

TEST_CASE("batch gradient is the mean of utterance gradients") {
  const auto corpus = small_corpus(2, 6, 0.2);
  const enc::Student student(tiny_encoder());
  const enc::TextTeacher teacher(tiny_encoder());
  const HyperParams hp;
  const auto both = train::batch_objective(pointers(corpus.train), student, teacher, hp, Mode::kTransfer);
  const auto a = train::batch_objective({&corpus.train[0]}, student, teacher, hp, Mode::kTransfer);
  const auto b = train::batch_objective({&corpus.train[1]}, student, teacher, hp, Mode::kTransfer);
  CHECK(both.loss.total == doctest::Approx(0.5 * (a.loss.total + b.loss.total)).epsilon(1e-12));
  for (std::size_t i = 0; i < both.grads.size(); ++i)
    for (std::size_t k = 0; k < both.grads[i].size(); ++k)
      CHECK(both.grads[i].flat()[k] ==
            doctest::Approx(0.5 * (a.grads[i].flat()[k] + b.grads[i].flat()[k])).epsilon(1e-10));
  CHECK(train::total_loss(pointers(corpus.train), student, teacher, hp, Mode::kTransfer).total ==
        both.loss.total);
  CHECK_THROWS_AS(train::total_loss({}, student, teacher, hp, Mode::kTransfer), InvalidInput);
}

// The coupling is a constant of the graph, so the reference function holds
// it at its value for the unperturbed parameters.
TEST_CASE("end-to-end gradients match finite differences on sampled coordinates") {
  std::mt19937_64 data_rng(9);
  synth::Utterance u;
  u.features = testing::random_array(data_rng, 16, 16);
  u.tokens = {5, 9};

  enc::Student student(tiny_encoder());
  // a nonzero adapter gain so the adapter's inner parameters carry gradient
  for (std::size_t i = 0; i < student.params().size(); ++i)
    if (student.params()[i].name == "adapter.norm_out.gain")
      for (double& v : student.params().value(i).flat()) v = 0.5;
  const enc::TextTeacher teacher(tiny_encoder());
  HyperParams hp;
  hp.sinkhorn_tol = 1e-13;
  hp.sinkhorn_max_iter = 100000;

  ad::Graph g;
  Binding bind(g, student.params());
  const auto obj =
      train::utterance_objective(bind, student, teacher, u.features, u.tokens, hp, Mode::kTransfer);
  REQUIRE(obj.coupling.has_value());
  REQUIRE(obj.coupling->converged);
  auto loss_at = [&]() {
    ad::Graph g2;
    Binding b2(g2, student.params());
    return train::utterance_objective(b2, student, teacher, u.features, u.tokens, hp,
                                      Mode::kTransfer, &*obj.coupling).total.item();
  };
  const auto grads = bind.gradients(g.backward(obj.total));

  std::mt19937_64 rng(10);
  std::size_t checked = 0;
  std::size_t failed = 0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < student.params().size(); ++i) {
    auto vals = student.params().value(i).flat();
    const std::size_t picks = std::max<std::size_t>(1, vals.size() / 100);
    std::uniform_int_distribution<std::size_t> pick(0, vals.size() - 1);
    for (std::size_t k = 0; k < picks; ++k) {
      const std::size_t j = pick(rng);
      const double orig = vals[j];
      vals[j] = orig + h;
      const double up = loss_at();
      vals[j] = orig - h;
      const double down = loss_at();
      vals[j] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[i].flat()[j];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      ++checked;
      if (rel > 1e-3) {
        ++failed;
        MESSAGE(student.params()[i].name << "[" << j << "] analytic " << analytic << " numeric "
                                         << numeric);
      }
    }
  }
  CHECK(checked > 0);
  CHECK(static_cast<double>(failed) <= 0.01 * static_cast<double>(checked));
}

TEST_CASE("single-utterance overfit in baseline mode") {
  const auto corpus = small_corpus(1, 12);
  synth::Corpus one = corpus;
  one.dev = one.train;
  HyperParams hp;
  hp.base_lr = 3e-3;
  hp.warmup_steps = 10;
  hp.epochs = 300;
  hp.average_last = 1;
  std::vector<double> ctc;
  train::TrainOptions opts;
  opts.on_step = [&](const train::LossBreakdown& b) { ctc.push_back(b.ctc); };
  const auto result = train::train(one, tiny_encoder(), hp, Mode::kBaseline, opts);
  REQUIRE(ctc.size() == 300);
  CHECK(ctc[49] < ctc[0]);
  CHECK(*std::min_element(ctc.begin(), ctc.end()) < 0.1);
  CHECK(train::evaluate(result.model, false, one.train).cer == 0.0);
}

TEST_CASE("same seed gives identical history and metrics file") {
  const auto corpus = small_corpus(6, 13, 0.5);
  HyperParams hp;
  hp.epochs = 3;
  hp.batch_size = 2;
  hp.average_last = 2;
  const auto root = std::filesystem::temp_directory_path() / "otkt_test_det";
  std::filesystem::remove_all(root);
  auto run = [&](const std::string& name) {
    train::TrainOptions opts;
    opts.out_dir = root / name;
    return train::train(corpus, tiny_encoder(), hp, Mode::kTransfer, opts);
  };
  const auto a = run("a");
  const auto b = run("b");
  REQUIRE(a.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) CHECK(train::format_metrics(a.history[e]) == train::format_metrics(b.history[e]));
  CHECK(a.model.params().entries() == b.model.params().entries());

  auto body = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::string first;
    std::getline(in, first);
    CHECK(first.rfind("# created ", 0) == 0);
    std::stringstream rest;
    rest << in.rdbuf();
    return rest.str();
  };
  CHECK(body(root / "a" / "metrics.tsv") == body(root / "b" / "metrics.tsv"));
  CHECK(std::filesystem::exists(root / "a" / "final.ckpt"));
  CHECK(std::filesystem::exists(root / "a" / "checkpoints" / "epoch_0003.ckpt"));
  CHECK_FALSE(std::filesystem::exists(root / "a" / "checkpoints" / "epoch_0001.ckpt"));

  // the final model is the mean of the kept epoch checkpoints
  const enc::Student avg = train::average_checkpoints(
      {root / "a" / "checkpoints" / "epoch_0002.ckpt", root / "a" / "checkpoints" / "epoch_0003.ckpt"});
  CHECK(avg.params().entries() == a.model.params().entries());
  CHECK(train::load_model(root / "a" / "final.ckpt").student.params().entries() ==
        a.model.params().entries());

  hp.seed = 2;
  const auto c = train::train(corpus, tiny_encoder(), hp, Mode::kTransfer);
  CHECK(train::format_metrics(c.history[0]) != train::format_metrics(a.history[0]));
  std::filesystem::remove_all(root);
}
