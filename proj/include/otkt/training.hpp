#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "otkt/encoders.hpp"
#include "otkt/ot_align.hpp"
#include "otkt/synthdata.hpp"

namespace otkt::train {

// The four systems compared in the ablation, in report order.
enum class Mode {
  kBaseline,     // CTC on the plain head
  kAdapterOnly,  // CTC on adapter-fused features, no OT terms
  kNoAdapter,    // CTC on the plain head + OT alignment terms
  kTransfer,     // CTC on adapter-fused features + OT alignment terms
};

inline constexpr Mode kAllModes[] = {Mode::kBaseline, Mode::kAdapterOnly, Mode::kNoAdapter,
                                     Mode::kTransfer};

std::string_view mode_name(Mode mode);
// Row label used in ablation tables.
std::string_view mode_label(Mode mode);
// Accepts mode_name() spellings plus "ctc_only" for the baseline.
std::optional<Mode> parse_mode(std::string_view text);
std::string valid_mode_list();

bool uses_adapter(Mode mode);
bool uses_ot(Mode mode);

struct HyperParams {
  double alpha = 0.2;   // entropic regularizer
  double lambda = 0.3;  // CTC weight
  double w = 1.0;       // alignment weight
  double s = 1.0;       // adapter residual scale
  double base_lr = 1e-3;
  std::size_t warmup_steps = 200;
  std::size_t epochs = 40;
  std::size_t average_last = 5;
  std::size_t batch_size = 8;
  double grad_clip = 5.0;
  std::size_t sinkhorn_max_iter = 1000;
  double sinkhorn_tol = 1e-6;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossBreakdown {
  double ctc = 0.0;
  double align = 0.0;
  double eot = 0.0;
  double total = 0.0;
};

// lambda for OT modes; 1 for the CTC-only modes.
double effective_lambda(const HyperParams& hp, Mode mode);

// total = lambda*ctc + (1-lambda)*w*(align+eot) with the effective lambda.
LossBreakdown combine(double ctc, double align, double eot, const HyperParams& hp, Mode mode);

// One utterance's objective on an open graph.
struct UtteranceObjective {
  ad::Var total;
  LossBreakdown parts;
  std::optional<ot::EotResult> coupling;  // OT modes only
};

// CTC is divided by the target length. Throws InvalidInput when the
// utterance is infeasible for the mode. The coupling is a constant of the
// graph; pass `frozen` to reuse one instead of solving for it.
UtteranceObjective utterance_objective(Binding& bind, const enc::Student& student,
                                       const enc::TextTeacher& teacher, const Array2& features,
                                       const TokenSequence& tokens, const HyperParams& hp,
                                       Mode mode, const ot::EotResult* frozen = nullptr);

struct BatchResult {
  LossBreakdown loss;        // mean over used utterances
  std::vector<Array2> grads;  // d(mean total)/d(param), aligned with student.params()
  std::size_t used = 0;
  std::size_t skipped = 0;
};

BatchResult batch_objective(const std::vector<const synth::Utterance*>& batch,
                            const enc::Student& student, const enc::TextTeacher& teacher,
                            const HyperParams& hp, Mode mode);

LossBreakdown total_loss(const std::vector<const synth::Utterance*>& batch,
                         const enc::Student& student, const enc::TextTeacher& teacher,
                         const HyperParams& hp, Mode mode);

// Linear warm-up to base_lr, then inverse square-root decay. step >= 1.
double lr_schedule(std::size_t step, const HyperParams& hp);

struct AdamState {
  std::vector<Array2> m, v;
  std::size_t step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Throws InvalidInput naming the parameter on a non-finite gradient.
void adam_step(ParamSet& params, const std::vector<Array2>& grads, AdamState& state, double lr);

// Scales grads in place so their global L2 norm is at most cap; returns the
// norm before scaling.
double clip_global_norm(std::vector<Array2>& grads, double cap);

// Elementwise mean of checkpoint files with identical names and shapes.
std::vector<NamedArray> average_arrays(const std::vector<std::vector<NamedArray>>& sets);
enc::Student average_checkpoints(const std::vector<std::filesystem::path>& paths);

// Checkpoint = student arrays + "meta.use_adapter".
std::vector<NamedArray> model_checkpoint(const enc::Student& student, Mode mode);
struct LoadedModel {
  enc::Student student;
  bool use_adapter;
};
LoadedModel load_model(const std::filesystem::path& path);

struct CerReport {
  double cer = 0.0;  // total edits / total reference length
  std::size_t edits = 0;
  std::size_t ref_tokens = 0;
  std::size_t utterances = 0;
};

// Greedy decoding through the inference path only.
CerReport evaluate(const enc::Student& student, bool use_adapter,
                   const std::vector<synth::Utterance>& utts);

struct EpochMetrics {
  std::size_t epoch = 0;
  Mode mode = Mode::kBaseline;
  LossBreakdown train;
  double dev_cer = 0.0;
  double lr = 0.0;
  std::size_t skipped = 0;
};

// "# created <UTC time>": the first line of every output file and the only
// line that differs between identical runs.
std::string timestamp_line();

// Fixed column order; see docs/formats.md.
std::string metrics_header();
std::string format_metrics(const EpochMetrics& m);

struct TrainOptions {
  // When set, epoch checkpoints, final.ckpt and metrics.tsv go here.
  std::optional<std::filesystem::path> out_dir;
  // Called after every optimizer step with that step's breakdown.
  std::function<void(const LossBreakdown&)> on_step;
  // Called after every epoch's dev evaluation.
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  enc::Student model;
  std::vector<EpochMetrics> history;
  std::size_t skipped = 0;
  std::size_t steps = 0;
};

TrainResult train(const synth::Corpus& corpus, const enc::EncoderConfig& enc_cfg,
                  const HyperParams& hp, Mode mode, const TrainOptions& opts = {});

}  // namespace otkt::train
