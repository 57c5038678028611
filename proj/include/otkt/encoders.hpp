#pragma once

// Student acoustic encoder (subsampling, conformer blocks, FC1/FC2 heads,
// FC3 adapter) and the frozen text teacher it is aligned to.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "otkt/array2.hpp"
#include "otkt/autodiff.hpp"
#include "otkt/params.hpp"
#include "otkt/tokens.hpp"

namespace otkt::enc {

struct EncoderConfig {
  std::size_t input_dim = 16;   // raw feature dimension d
  std::size_t num_blocks = 2;   // L
  std::size_t model_dim = 16;   // d_a
  std::size_t ffn_dim = 32;
  std::size_t conv_kernel = 5;  // odd
  std::size_t teacher_dim = 24;  // d_t
  std::size_t teacher_layers = 2;  // M
  std::size_t teacher_ffn_dim = 48;
  std::size_t vocab = 30;  // V, including the reserved ids
  double adapter_scale = 1.0;  // s
  std::uint64_t seed = 1;

  // Throws InvalidInput describing the first violated constraint.
  void validate() const;
};

inline constexpr std::size_t kMinInputFrames = 8;

// Frames left after the two kernel-3 stride-2 convolutions.
std::size_t subsampled_length(std::size_t frames);

// Fixed sinusoidal table, rows = positions.
Array2 sinusoidal_encoding(std::size_t length, std::size_t dim);

struct Linear {
  std::size_t weight;  // in x out
  std::size_t bias;    // 1 x out
};

struct Norm {
  std::size_t gain;
  std::size_t bias;
};

struct FeedForward {
  Norm norm;
  Linear up;
  Linear down;
};

struct SelfAttention {
  Norm norm;
  Linear query, key, value, out;
};

struct ConvModule {
  Norm norm;
  Linear pointwise_in;  // d -> 2d, gated
  std::size_t depthwise;  // K x d
  Norm mid_norm;
  Linear pointwise_out;
};

struct ConformerParams {
  FeedForward ffn1;
  SelfAttention attention;
  ConvModule conv;
  FeedForward ffn2;
  Norm out_norm;
};

struct AcousticEncoding {
  ad::Var h_tilde;  // T_a x d_a, conformer output
  ad::Var h;        // T_a x d_t, FC2 image in teacher space
};

// Intermediate residual states of one conformer block.
struct BlockTrace {
  Array2 h1, h2, h3, h4, out;
};

class Student {
 public:
  explicit Student(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // Conv + linear + positional encoding. Throws InvalidInput below
  // kMinInputFrames.
  ad::Var subsample(Binding& bind, const ad::Var& x) const;
  ad::Var conformer_block(Binding& bind, std::size_t index, const ad::Var& h_in,
                          BlockTrace* trace = nullptr) const;
  AcousticEncoding encode_acoustic(Binding& bind, const ad::Var& x) const;
  // H_tilde + s * LN(FC3(LN(H)))
  ad::Var adapter_fuse(Binding& bind, const ad::Var& h_tilde, const ad::Var& h, double s) const;
  // log-softmax(FC1(features))
  ad::Var predict(Binding& bind, const ad::Var& features) const;

  // Inference path: conformer, optional adapter, FC1. Never touches the
  // teacher or the OT solver.
  Array2 infer_log_probs(const Array2& x, bool use_adapter) const;

  const ConformerParams& block(std::size_t i) const { return blocks_.at(i); }
  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }
  const Linear& fc3() const { return fc3_; }

 private:
  EncoderConfig cfg_;
  ParamSet params_;
  Linear conv1_, conv2_, sub_proj_;
  std::vector<ConformerParams> blocks_;
  Linear fc1_, fc2_, fc3_;
  Norm adapter_in_norm_, adapter_out_norm_;
};

// Frozen text encoder: embedding plus M post-norm self-attention layers.
// Parameters are drawn once from the config seed and never updated.
class TextTeacher {
 public:
  explicit TextTeacher(const EncoderConfig& cfg);

  // Wraps tokens with CLS/SEP and encodes them: (len + 2) x d_t. Throws
  // InvalidInput on reserved or out-of-vocabulary ids.
  Array2 encode(const TokenSequence& tokens) const;

  const ParamSet& params() const { return params_; }

 private:
  struct Layer {
    SelfAttention attention;  // norm unused; post-norm below
    Norm attn_norm;
    Linear up, down;
    Norm ffn_norm;
  };
  EncoderConfig cfg_;
  ParamSet params_;
  std::size_t embedding_;
  std::vector<Layer> layers_;
};

// Counts TextTeacher::encode calls process-wide.
std::uint64_t teacher_forward_count();
void reset_teacher_forward_count();

// Checkpoint round trip. Config dimensions are stored alongside the
// parameters as 1x1 "config.*" arrays.
std::vector<NamedArray> to_checkpoint(const Student& student);
Student from_checkpoint(const std::vector<NamedArray>& arrays);

}  // namespace otkt::enc
