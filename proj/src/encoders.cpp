#include "otkt/encoders.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "otkt/error.hpp"

namespace otkt::enc {
namespace {

std::atomic<std::uint64_t> g_teacher_forwards{0};

class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Array2 xavier(std::size_t in, std::size_t out, double gain = 1.0) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Array2 w(in, out);
    for (double& v : w.flat()) v = dist(rng_);
    return w;
  }

  Array2 normal(std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Array2 w(rows, cols);
    for (double& v : w.flat()) v = dist(rng_);
    return w;
  }

 private:
  std::mt19937_64 rng_;
};

Linear make_linear(ParamSet& p, Init& init, const std::string& name, std::size_t in,
                   std::size_t out, double gain = 1.0) {
  return {p.add(name + ".weight", init.xavier(in, out, gain)), p.add(name + ".bias", Array2(1, out))};
}

Norm make_norm(ParamSet& p, const std::string& name, std::size_t dim) {
  return {p.add(name + ".gain", Array2(1, dim, 1.0)), p.add(name + ".bias", Array2(1, dim))};
}

ad::Var linear(Binding& b, const Linear& l, const ad::Var& x) {
  return ad::add_row(ad::matmul(x, b[l.weight]), b[l.bias]);
}

ad::Var norm(Binding& b, const Norm& n, const ad::Var& x) {
  return ad::layer_norm(x, b[n.gain], b[n.bias]);
}

// Single-head scaled dot-product attention on already-normalized input.
ad::Var attend(Binding& b, const SelfAttention& a, const ad::Var& x) {
  const ad::Var q = linear(b, a.query, x);
  const ad::Var k = linear(b, a.key, x);
  const ad::Var v = linear(b, a.value, x);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const ad::Var weights = ad::row_softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
  return linear(b, a.out, ad::matmul(weights, v));
}

ad::Var feed_forward(Binding& b, const FeedForward& f, const ad::Var& x) {
  return linear(b, f.down, ad::swish(linear(b, f.up, norm(b, f.norm, x))));
}

ad::Var conv_module(Binding& b, const ConvModule& c, const ad::Var& x) {
  const std::size_t d = x.cols();
  const ad::Var both = linear(b, c.pointwise_in, norm(b, c.norm, x));
  std::vector<std::size_t> first(d), second(d);
  std::iota(first.begin(), first.end(), 0);
  std::iota(second.begin(), second.end(), d);
  const ad::Var gated = ad::mul(ad::gather_cols(both, first), ad::sigmoid(ad::gather_cols(both, second)));
  const ad::Var conv = ad::depthwise_conv_time(gated, b[c.depthwise]);
  return linear(b, c.pointwise_out, ad::swish(norm(b, c.mid_norm, conv)));
}

FeedForward make_ffn(ParamSet& p, Init& init, const std::string& name, std::size_t d,
                     std::size_t hidden) {
  return {make_norm(p, name + ".norm", d), make_linear(p, init, name + ".up", d, hidden),
          make_linear(p, init, name + ".down", hidden, d)};
}

SelfAttention make_attention(ParamSet& p, Init& init, const std::string& name, std::size_t d) {
  return {make_norm(p, name + ".norm", d), make_linear(p, init, name + ".query", d, d),
          make_linear(p, init, name + ".key", d, d), make_linear(p, init, name + ".value", d, d),
          make_linear(p, init, name + ".out", d, d)};
}

}  // namespace

void EncoderConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw InvalidInput(std::string("encoder config: ") + name + " must be positive");
  };
  positive(input_dim, "input_dim");
  positive(num_blocks, "num_blocks");
  positive(model_dim, "model_dim");
  positive(ffn_dim, "ffn_dim");
  positive(teacher_dim, "teacher_dim");
  positive(teacher_layers, "teacher_layers");
  positive(teacher_ffn_dim, "teacher_ffn_dim");
  if (conv_kernel % 2 == 0) throw InvalidInput("encoder config: conv_kernel must be odd");
  if (vocab <= static_cast<std::size_t>(kNumReserved)) {
    throw InvalidInput("encoder config: vocab must exceed the " + std::to_string(kNumReserved) +
                       " reserved ids");
  }
  if (!(adapter_scale >= 0.0)) throw InvalidInput("encoder config: adapter_scale must be >= 0");
}

std::size_t subsampled_length(std::size_t frames) {
  if (frames < kMinInputFrames) return 0;
  const std::size_t first = (frames - 1) / 2;
  return (first - 1) / 2;
}

Array2 sinusoidal_encoding(std::size_t length, std::size_t dim) {
  Array2 pe(length, dim);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      pe(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// ---- Student ---------------------------------------------------------------

Student::Student(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Init init(cfg_.seed);
  const std::size_t d = cfg_.model_dim;
  conv1_ = make_linear(params_, init, "subsample.conv1", 3 * cfg_.input_dim, d);
  conv2_ = make_linear(params_, init, "subsample.conv2", 3 * d, d);
  sub_proj_ = make_linear(params_, init, "subsample.proj", d, d);
  for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
    const std::string p = "block" + std::to_string(l);
    ConformerParams blk;
    blk.ffn1 = make_ffn(params_, init, p + ".ffn1", d, cfg_.ffn_dim);
    blk.attention = make_attention(params_, init, p + ".attn", d);
    blk.conv.norm = make_norm(params_, p + ".conv.norm", d);
    blk.conv.pointwise_in = make_linear(params_, init, p + ".conv.pw_in", d, 2 * d);
    blk.conv.depthwise = params_.add(p + ".conv.depthwise",
                                     init.xavier(cfg_.conv_kernel, d));
    blk.conv.mid_norm = make_norm(params_, p + ".conv.mid_norm", d);
    blk.conv.pointwise_out = make_linear(params_, init, p + ".conv.pw_out", d, d);
    blk.ffn2 = make_ffn(params_, init, p + ".ffn2", d, cfg_.ffn_dim);
    blk.out_norm = make_norm(params_, p + ".out_norm", d);
    blocks_.push_back(blk);
  }
  fc1_ = make_linear(params_, init, "fc1", d, cfg_.vocab);
  fc2_ = make_linear(params_, init, "fc2", d, cfg_.teacher_dim);
  adapter_in_norm_ = make_norm(params_, "adapter.norm_in", cfg_.teacher_dim);
  fc3_ = make_linear(params_, init, "fc3", cfg_.teacher_dim, d);
  adapter_out_norm_ = make_norm(params_, "adapter.norm_out", d);
  // The adapter branch starts silent; its output gain is learned from zero.
  for (double& v : params_.value(adapter_out_norm_.gain).flat()) v = 0.0;
}

ad::Var Student::subsample(Binding& bind, const ad::Var& x) const {
  if (x.cols() != cfg_.input_dim) {
    throw ShapeError("subsample: input " + x.value().shape_string() + " but input_dim is " +
                     std::to_string(cfg_.input_dim));
  }
  if (x.rows() < kMinInputFrames) {
    throw InvalidInput("subsample: " + std::to_string(x.rows()) +
                       " frames, need at least " + std::to_string(kMinInputFrames));
  }
  const ad::Var c1 = ad::relu(linear(bind, conv1_, ad::unfold_time(x, 3, 2, 0)));
  const ad::Var c2 = ad::relu(linear(bind, conv2_, ad::unfold_time(c1, 3, 2, 0)));
  const ad::Var proj = linear(bind, sub_proj_, c2);
  return ad::add(proj, bind.graph().constant(sinusoidal_encoding(proj.rows(), proj.cols())));
}

ad::Var Student::conformer_block(Binding& bind, std::size_t index, const ad::Var& h_in,
                                 BlockTrace* trace) const {
  const ConformerParams& p = blocks_.at(index);
  const ad::Var h1 = ad::add(h_in, ad::scale(feed_forward(bind, p.ffn1, h_in), 0.5));
  const ad::Var h2 = ad::add(h1, attend(bind, p.attention, norm(bind, p.attention.norm, h1)));
  const ad::Var h3 = ad::add(h2, conv_module(bind, p.conv, h2));
  const ad::Var h4 = ad::add(h3, ad::scale(feed_forward(bind, p.ffn2, h3), 0.5));
  const ad::Var out = norm(bind, p.out_norm, h4);
  if (trace != nullptr) *trace = {h1.value(), h2.value(), h3.value(), h4.value(), out.value()};
  return out;
}

AcousticEncoding Student::encode_acoustic(Binding& bind, const ad::Var& x) const {
  ad::Var h = subsample(bind, x);
  for (std::size_t l = 0; l < blocks_.size(); ++l) h = conformer_block(bind, l, h);
  return {h, linear(bind, fc2_, h)};
}

ad::Var Student::adapter_fuse(Binding& bind, const ad::Var& h_tilde, const ad::Var& h,
                              double s) const {
  if (h_tilde.rows() != h.rows()) {
    throw ShapeError("adapter_fuse: " + h_tilde.value().shape_string() + " vs " +
                     h.value().shape_string());
  }
  const ad::Var h_hat = linear(bind, fc3_, norm(bind, adapter_in_norm_, h));
  return ad::add(h_tilde, ad::scale(norm(bind, adapter_out_norm_, h_hat), s));
}

ad::Var Student::predict(Binding& bind, const ad::Var& features) const {
  return ad::log_softmax(linear(bind, fc1_, features));
}

Array2 Student::infer_log_probs(const Array2& x, bool use_adapter) const {
  ad::Graph g;
  Binding bind(g, params_);
  const AcousticEncoding enc = encode_acoustic(bind, g.constant(x));
  const ad::Var features =
      use_adapter ? adapter_fuse(bind, enc.h_tilde, enc.h, cfg_.adapter_scale) : enc.h_tilde;
  return predict(bind, features).value();
}

// ---- TextTeacher -----------------------------------------------------------

TextTeacher::TextTeacher(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  // separate stream from the student's initializer
  Init init(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t d = cfg_.teacher_dim;
  embedding_ = params_.add("teacher.embedding", init.normal(cfg_.vocab, d, 1.0));
  for (std::size_t m = 0; m < cfg_.teacher_layers; ++m) {
    const std::string p = "teacher.layer" + std::to_string(m);
    Layer layer;
    layer.attention = make_attention(params_, init, p + ".attn", d);
    layer.attn_norm = make_norm(params_, p + ".attn_norm", d);
    layer.up = make_linear(params_, init, p + ".up", d, cfg_.teacher_ffn_dim);
    layer.down = make_linear(params_, init, p + ".down", cfg_.teacher_ffn_dim, d);
    layer.ffn_norm = make_norm(params_, p + ".ffn_norm", d);
    layers_.push_back(layer);
  }
}

Array2 TextTeacher::encode(const TokenSequence& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(kCls);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int id = tokens[i];
    if (id < kNumReserved || static_cast<std::size_t>(id) >= cfg_.vocab) {
      throw InvalidInput("encode_text: token " + std::to_string(id) + " at position " +
                         std::to_string(i) + " is reserved or outside the vocabulary");
    }
    ids.push_back(static_cast<std::size_t>(id));
  }
  ids.push_back(kSep);
  g_teacher_forwards.fetch_add(1, std::memory_order_relaxed);

  ad::Graph g;
  Binding bind(g, params_);
  ad::Var z = ad::add(ad::gather_rows(bind[embedding_], ids),
                      g.constant(sinusoidal_encoding(ids.size(), cfg_.teacher_dim)));
  for (const Layer& layer : layers_) {
    z = norm(bind, layer.attn_norm, ad::add(z, attend(bind, layer.attention, z)));
    const ad::Var ffn = linear(bind, layer.down, ad::relu(linear(bind, layer.up, z)));
    z = norm(bind, layer.ffn_norm, ad::add(z, ffn));
  }
  return z.value();
}

std::uint64_t teacher_forward_count() { return g_teacher_forwards.load(std::memory_order_relaxed); }
void reset_teacher_forward_count() { g_teacher_forwards.store(0, std::memory_order_relaxed); }

// ---- checkpoints -----------------------------------------------------------

namespace {

struct ConfigField {
  const char* name;
  double (*get)(const EncoderConfig&);
  void (*set)(EncoderConfig&, double);
};

#define OTKT_SIZE_FIELD(f)                                                 \
  ConfigField{"config." #f, [](const EncoderConfig& c) { return static_cast<double>(c.f); }, \
              [](EncoderConfig& c, double v) { c.f = static_cast<std::size_t>(v); }}

const ConfigField kFields[] = {
    OTKT_SIZE_FIELD(input_dim),     OTKT_SIZE_FIELD(num_blocks),     OTKT_SIZE_FIELD(model_dim),
    OTKT_SIZE_FIELD(ffn_dim),       OTKT_SIZE_FIELD(conv_kernel),    OTKT_SIZE_FIELD(teacher_dim),
    OTKT_SIZE_FIELD(teacher_layers), OTKT_SIZE_FIELD(teacher_ffn_dim), OTKT_SIZE_FIELD(vocab),
    ConfigField{"config.adapter_scale", [](const EncoderConfig& c) { return c.adapter_scale; },
                [](EncoderConfig& c, double v) { c.adapter_scale = v; }},
};

#undef OTKT_SIZE_FIELD

}  // namespace

std::vector<NamedArray> to_checkpoint(const Student& student) {
  std::vector<NamedArray> out;
  for (const ConfigField& f : kFields) out.push_back({f.name, Array2(1, 1, f.get(student.config()))});
  for (const NamedArray& p : student.params().entries()) out.push_back(p);
  return out;
}

Student from_checkpoint(const std::vector<NamedArray>& arrays) {
  auto lookup = [&](const std::string& name) -> const Array2* {
    for (const NamedArray& a : arrays)
      if (a.name == name) return &a.value;
    return nullptr;
  };
  EncoderConfig cfg;
  for (const ConfigField& f : kFields) {
    const Array2* v = lookup(f.name);
    if (v == nullptr || v->size() != 1) {
      throw ParseError(std::string("checkpoint: missing scalar '") + f.name + "'");
    }
    f.set(cfg, v->flat()[0]);
  }
  Student student(cfg);
  for (std::size_t i = 0; i < student.params().size(); ++i) {
    const std::string& name = student.params()[i].name;
    const Array2* v = lookup(name);
    if (v == nullptr) throw ParseError("checkpoint: missing parameter '" + name + "'");
    if (!v->same_shape(student.params().value(i))) {
      throw ShapeError("checkpoint: parameter '" + name + "' is " + v->shape_string() +
                       ", model expects " + student.params().value(i).shape_string());
    }
    student.params().value(i) = *v;
  }
  return student;
}

}  // namespace otkt::enc
