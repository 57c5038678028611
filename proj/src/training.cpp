#include "otkt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "otkt/array_io.hpp"
#include "otkt/ctc.hpp"
#include "otkt/error.hpp"
#include "otkt/simd/kernels.hpp"

namespace otkt::train {

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kBaseline:
      return "baseline";
    case Mode::kAdapterOnly:
      return "adapter_only";
    case Mode::kNoAdapter:
      return "no_adapter";
    case Mode::kTransfer:
      return "transfer";
  }
  return "?";
}

std::string_view mode_label(Mode mode) {
  switch (mode) {
    case Mode::kBaseline:
      return "Conformer+CTC";
    case Mode::kAdapterOnly:
      return "ConformerAdpt+CTC";
    case Mode::kNoAdapter:
      return "Conformer+CTC-OT-BERT";
    case Mode::kTransfer:
      return "ConformerAdpt+CTC-OT-BERT";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view text) {
  if (text == "ctc_only") return Mode::kBaseline;
  for (Mode m : kAllModes)
    if (mode_name(m) == text) return m;
  return std::nullopt;
}

std::string valid_mode_list() {
  std::string out;
  for (Mode m : kAllModes) {
    if (!out.empty()) out += ", ";
    out += mode_name(m);
  }
  return out;
}

bool uses_adapter(Mode mode) { return mode == Mode::kAdapterOnly || mode == Mode::kTransfer; }
bool uses_ot(Mode mode) { return mode == Mode::kNoAdapter || mode == Mode::kTransfer; }

void HyperParams::validate() const {
  if (!(alpha > 0.0)) throw InvalidInput("hyperparams: alpha must be > 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("hyperparams: lambda must be in [0, 1]");
  if (!(w >= 0.0)) throw InvalidInput("hyperparams: w must be >= 0");
  if (!(s >= 0.0)) throw InvalidInput("hyperparams: s must be >= 0");
  if (!(base_lr > 0.0)) throw InvalidInput("hyperparams: base_lr must be > 0");
  if (warmup_steps < 1) throw InvalidInput("hyperparams: warmup_steps must be >= 1");
  if (batch_size < 1) throw InvalidInput("hyperparams: batch_size must be >= 1");
  if (!(grad_clip > 0.0)) throw InvalidInput("hyperparams: grad_clip must be > 0");
  if (!(sinkhorn_tol > 0.0)) throw InvalidInput("hyperparams: sinkhorn_tol must be > 0");
  if (sinkhorn_max_iter < 1) throw InvalidInput("hyperparams: sinkhorn_max_iter must be >= 1");
}

double effective_lambda(const HyperParams& hp, Mode mode) { return uses_ot(mode) ? hp.lambda : 1.0; }

LossBreakdown combine(double ctc, double align, double eot, const HyperParams& hp, Mode mode) {
  if (!uses_ot(mode)) return {ctc, 0.0, 0.0, ctc};
  return {ctc, align, eot, hp.lambda * ctc + (1.0 - hp.lambda) * hp.w * (align + eot)};
}

UtteranceObjective utterance_objective(Binding& bind, const enc::Student& student,
                                       const enc::TextTeacher& teacher, const Array2& features,
                                       const TokenSequence& tokens, const HyperParams& hp,
                                       Mode mode, const ot::EotResult* frozen) {
  if (uses_ot(mode) && tokens.empty()) {
    throw InvalidInput("utterance has no tokens; alignment needs an interior text position");
  }
  ad::Graph& g = bind.graph();
  const enc::AcousticEncoding e = student.encode_acoustic(bind, g.constant(features));
  if (e.h_tilde.rows() < ctc::min_frames(tokens)) {
    throw InvalidInput("utterance infeasible for CTC: T_a=" + std::to_string(e.h_tilde.rows()) +
                       ", need " + std::to_string(ctc::min_frames(tokens)));
  }

  const ad::Var fused = uses_adapter(mode) ? student.adapter_fuse(bind, e.h_tilde, e.h, hp.s)
                                           : e.h_tilde;
  const double norm = static_cast<double>(std::max<std::size_t>(tokens.size(), 1));
  const ad::Var ctc_term = ad::scale(ctc::ctc_loss(student.predict(bind, fused), tokens), 1.0 / norm);

  if (!uses_ot(mode)) {
    const LossBreakdown parts = combine(ctc_term.item(), 0.0, 0.0, hp, mode);
    return {ctc_term, parts, std::nullopt};
  }

  const ad::Var z = g.constant(teacher.encode(tokens));
  const ad::Var cost = ot::cosine_cost(z, e.h);
  const ot::EotResult solved =
      frozen ? *frozen
             : ot::sinkhorn(cost.value(), {hp.alpha, hp.sinkhorn_max_iter, hp.sinkhorn_tol});
  // every term is per target token, so the lambda trade-off does not drift
  // with utterance length
  const ad::Var align =
      ad::scale(ot::alignment_loss(z, ot::project(solved.coupling, e.h)), 1.0 / norm);
  const ad::Var eot = ad::scale(ot::eot_loss(cost, solved), 1.0 / norm);

  const ad::Var total = ad::add(ad::scale(ctc_term, hp.lambda),
                                ad::scale(ad::add(align, eot), (1.0 - hp.lambda) * hp.w));
  const LossBreakdown parts = combine(ctc_term.item(), align.item(), eot.item(), hp, mode);
  return {total, parts, solved};
}

BatchResult batch_objective(const std::vector<const synth::Utterance*>& batch,
                            const enc::Student& student, const enc::TextTeacher& teacher,
                            const HyperParams& hp, Mode mode) {
  BatchResult out;
  for (const NamedArray& p : student.params().entries())
    out.grads.emplace_back(p.value.rows(), p.value.cols());
  for (const synth::Utterance* utt : batch) {
    ad::Graph g;
    Binding bind(g, student.params());
    UtteranceObjective obj;
    try {
      obj = utterance_objective(bind, student, teacher, utt->features, utt->tokens, hp, mode);
    } catch (const InvalidInput&) {
      ++out.skipped;
      continue;
    }
    ++out.used;
    out.loss.ctc += obj.parts.ctc;
    out.loss.align += obj.parts.align;
    out.loss.eot += obj.parts.eot;
    const std::vector<Array2> grads = bind.gradients(g.backward(obj.total));
    for (std::size_t i = 0; i < grads.size(); ++i)
      simd::active().axpy(1.0, grads[i].data(), out.grads[i].data(), grads[i].size());
  }
  if (out.used > 0) {
    const double inv = 1.0 / static_cast<double>(out.used);
    out.loss = combine(out.loss.ctc * inv, out.loss.align * inv, out.loss.eot * inv, hp, mode);
    for (Array2& gr : out.grads)
      for (double& v : gr.flat()) v *= inv;
  }
  return out;
}

LossBreakdown total_loss(const std::vector<const synth::Utterance*>& batch,
                         const enc::Student& student, const enc::TextTeacher& teacher,
                         const HyperParams& hp, Mode mode) {
  if (batch.empty()) throw InvalidInput("total_loss: empty batch");
  return batch_objective(batch, student, teacher, hp, mode).loss;
}

double lr_schedule(std::size_t step, const HyperParams& hp) {
  if (step < 1) throw InvalidInput("lr_schedule: step must be >= 1");
  const double s = static_cast<double>(step);
  const double warm = static_cast<double>(hp.warmup_steps);
  return hp.base_lr * std::min(s / warm, std::sqrt(warm / s));
}

void adam_step(ParamSet& params, const std::vector<Array2>& grads, AdamState& state, double lr) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(params.value(i))) {
      throw ShapeError("adam_step: gradient " + grads[i].shape_string() + " for parameter '" +
                       params[i].name + "' " + params.value(i).shape_string());
    }
    if (!grads[i].all_finite()) {
      throw InvalidInput("adam_step: non-finite gradient for parameter '" + params[i].name + "'");
    }
  }
  if (state.m.empty()) {
    for (const NamedArray& p : params.entries()) {
      state.m.emplace_back(p.value.rows(), p.value.cols());
      state.v.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(kAdamBeta1, t);
  const double corr2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto p = params.value(i).flat();
    auto m = state.m[i].flat();
    auto v = state.v[i].flat();
    const auto g = grads[i].flat();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
      v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
      const double m_hat = m[k] / corr1;
      const double v_hat = v[k] / corr2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
    }
  }
}

double clip_global_norm(std::vector<Array2>& grads, double cap) {
  double sq = 0.0;
  for (const Array2& g : grads) sq += simd::active().dot(g.data(), g.data(), g.size());
  const double norm = std::sqrt(sq);
  if (norm > cap) {
    const double f = cap / norm;
    for (Array2& g : grads)
      for (double& v : g.flat()) v *= f;
  }
  return norm;
}

std::vector<NamedArray> average_arrays(const std::vector<std::vector<NamedArray>>& sets) {
  if (sets.empty()) throw InvalidInput("average_checkpoints: no checkpoints given");
  std::vector<NamedArray> out = sets.front();
  for (std::size_t k = 1; k < sets.size(); ++k) {
    if (sets[k].size() != out.size()) {
      throw ShapeError("average_checkpoints: checkpoint " + std::to_string(k) + " has " +
                       std::to_string(sets[k].size()) + " arrays, expected " +
                       std::to_string(out.size()));
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (sets[k][i].name != out[i].name || !sets[k][i].value.same_shape(out[i].value)) {
        throw ShapeError("average_checkpoints: '" + sets[k][i].name + "' " +
                         sets[k][i].value.shape_string() + " does not match '" + out[i].name +
                         "' " + out[i].value.shape_string());
      }
      simd::active().axpy(1.0, sets[k][i].value.data(), out[i].value.data(), out[i].value.size());
    }
  }
  const double inv = 1.0 / static_cast<double>(sets.size());
  for (NamedArray& a : out)
    for (double& v : a.value.flat()) v *= inv;
  return out;
}

enc::Student average_checkpoints(const std::vector<std::filesystem::path>& paths) {
  std::vector<std::vector<NamedArray>> sets;
  for (const auto& p : paths) sets.push_back(load_arrays(p));
  return enc::from_checkpoint(average_arrays(sets));
}

std::vector<NamedArray> model_checkpoint(const enc::Student& student, Mode mode) {
  std::vector<NamedArray> arrays = enc::to_checkpoint(student);
  arrays.insert(arrays.begin(), {"meta.use_adapter", Array2(1, 1, uses_adapter(mode) ? 1.0 : 0.0)});
  return arrays;
}

LoadedModel load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("checkpoint '" + path.string() + "' not found");
  const std::vector<NamedArray> arrays = load_arrays(path);
  bool use_adapter = false;
  for (const NamedArray& a : arrays)
    if (a.name == "meta.use_adapter" && a.value.size() == 1) use_adapter = a.value.flat()[0] > 0.5;
  return {enc::from_checkpoint(arrays), use_adapter};
}

CerReport evaluate(const enc::Student& student, bool use_adapter,
                   const std::vector<synth::Utterance>& utts) {
  CerReport r;
  for (const synth::Utterance& u : utts) {
    if (u.tokens.empty() || u.features.rows() < enc::kMinInputFrames) continue;
    const TokenSequence hyp = ctc::greedy_decode(student.infer_log_probs(u.features, use_adapter));
    r.edits += ctc::edit_distance(hyp, u.tokens);
    r.ref_tokens += u.tokens.size();
    ++r.utterances;
  }
  r.cer = r.ref_tokens == 0 ? 0.0 : static_cast<double>(r.edits) / static_cast<double>(r.ref_tokens);
  return r;
}

std::string timestamp_line() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return std::string("# created ") + buf;
}

std::string metrics_header() {
  return "epoch\tmode\tctc\talign\teot\ttotal\tdev_cer\tlr\tskipped";
}

std::string format_metrics(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%s\t%.9f\t%.9f\t%.9f\t%.9f\t%.6f\t%.9g\t%zu", m.epoch,
                std::string(mode_name(m.mode)).c_str(), m.train.ctc, m.train.align, m.train.eot,
                m.train.total, m.dev_cer, m.lr, m.skipped);
  return buf;
}

namespace {


// Length-bucketed batches: sort by frame count, cut into consecutive runs.
std::vector<std::vector<const synth::Utterance*>> make_batches(
    const std::vector<synth::Utterance>& utts, std::size_t batch_size) {
  std::vector<const synth::Utterance*> order;
  for (const auto& u : utts) order.push_back(&u);
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->features.rows() < b->features.rows();
  });
  std::vector<std::vector<const synth::Utterance*>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, order.size())));
  }
  return batches;
}

}  // namespace

TrainResult train(const synth::Corpus& corpus, const enc::EncoderConfig& enc_cfg,
                  const HyperParams& hp, Mode mode, const TrainOptions& opts) {
  hp.validate();
  enc::EncoderConfig cfg = enc_cfg;
  cfg.adapter_scale = hp.s;
  cfg.seed = hp.seed;
  TrainResult result{enc::Student(cfg), {}, 0, 0};
  if (hp.epochs == 0) return result;
  const enc::TextTeacher teacher(cfg);

  std::ofstream metrics;
  std::filesystem::path ckpt_dir;
  if (opts.out_dir) {
    ckpt_dir = *opts.out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    metrics.open(*opts.out_dir / "metrics.tsv", std::ios::binary);
    if (!metrics) throw Error("cannot write metrics in '" + opts.out_dir->string() + "'");
    metrics << timestamp_line() << '\n' << metrics_header() << '\n';
  }

  auto batches = make_batches(corpus.train, hp.batch_size);
  std::mt19937_64 rng(hp.seed ^ 0x5bd1e995ULL);
  AdamState adam;
  std::deque<std::vector<NamedArray>> recent;
  std::vector<std::filesystem::path> recent_paths;
  const std::size_t keep = std::max<std::size_t>(1, std::min(hp.average_last, hp.epochs));

  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::shuffle(batches.begin(), batches.end(), rng);
    LossBreakdown sum;
    std::size_t counted = 0;
    std::size_t skipped = 0;
    double lr = 0.0;
    for (const auto& batch : batches) {
      BatchResult br = batch_objective(batch, result.model, teacher, hp, mode);
      skipped += br.skipped;
      if (br.used == 0) continue;
      clip_global_norm(br.grads, hp.grad_clip);
      lr = lr_schedule(++result.steps, hp);
      adam_step(result.model.params(), br.grads, adam, lr);
      if (opts.on_step) opts.on_step(br.loss);
      sum.ctc += br.loss.ctc;
      sum.align += br.loss.align;
      sum.eot += br.loss.eot;
      ++counted;
    }
    result.skipped += skipped;
    const double inv = counted == 0 ? 0.0 : 1.0 / static_cast<double>(counted);
    EpochMetrics em;
    em.epoch = epoch;
    em.mode = mode;
    em.train = combine(sum.ctc * inv, sum.align * inv, sum.eot * inv, hp, mode);
    em.dev_cer = evaluate(result.model, uses_adapter(mode), corpus.dev).cer;
    em.lr = lr;
    em.skipped = skipped;
    result.history.push_back(em);
    if (metrics) metrics << format_metrics(em) << '\n' << std::flush;
    if (opts.on_epoch) opts.on_epoch(em);

    if (epoch + keep > hp.epochs) {
      std::vector<NamedArray> snap = model_checkpoint(result.model, mode);
      if (opts.out_dir) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
        recent_paths.push_back(ckpt_dir / name);
        save_arrays(recent_paths.back(), snap);
      }
      recent.push_back(std::move(snap));
    }
  }

  if (opts.out_dir) {
    result.model = average_checkpoints(recent_paths);
    save_arrays(*opts.out_dir / "final.ckpt", model_checkpoint(result.model, mode));
  } else {
    result.model = enc::from_checkpoint(average_arrays({recent.begin(), recent.end()}));
  }
  return result;
}

}  // namespace otkt::train
