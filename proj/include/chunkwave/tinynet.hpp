#pragma once

// Minimal reverse-mode building blocks for 1-D sequence models: dilated
// same-padded convolution, per-timestep affine maps, leaky ReLU and tanh,
// residual generator blocks, and the AdamW optimizer. Activations are
// (channels x time) matrices. Layers cache what their backward pass needs
// during forward(); apply() is the cache-free, const inference path.

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "chunkwave/error.hpp"
#include "chunkwave/receptive.hpp"

namespace chunkwave::tinynet {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// A trainable array and its gradient accumulator (same shape once
// zero_grad() has run).
template <typename T>
struct Tensor {
  Mat<T> data;
  Mat<T> grad;

  Tensor() = default;
  explicit Tensor(Mat<T> d) : data(std::move(d)), grad(Mat<T>::Zero(data.rows(), data.cols())) {}

  void zero_grad() { grad.setZero(data.rows(), data.cols()); }
  Eigen::Index size() const { return data.size(); }
};

// Uniform in +-1/sqrt(fan_in).
template <typename T>
Mat<T> uniform_init(Eigen::Index rows, Eigen::Index cols, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat<T> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<T>(dist(rng));
  }
  return m;
}

// --- ops --------------------------------------------------------------------

namespace detail {
// Output columns [first, first + len) read input columns shifted by `offset`.
struct TapRange {
  Eigen::Index first = 0;
  Eigen::Index len = 0;
};

inline TapRange tap_range(Eigen::Index time, Eigen::Index offset) {
  const Eigen::Index first = std::max<Eigen::Index>(0, -offset);
  const Eigen::Index last = std::min<Eigen::Index>(time, time - offset);
  return {first, std::max<Eigen::Index>(0, last - first)};
}

inline void check_kernel(int kernel, int dilation) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ParameterError("conv1d kernel must be odd and positive, got " + std::to_string(kernel));
  }
  if (dilation < 1) throw ParameterError("conv1d dilation must be >= 1");
}
}  // namespace detail

// Zero-padded dilated cross-correlation; output length equals input length.
// `weight` is (out x kernel*in), tap k occupying columns [k*in, (k+1)*in)
// and reading input offset (k - kernel/2) * dilation.
template <typename T>
Mat<T> conv1d(const Mat<T>& x, const Mat<T>& weight, const Vec<T>& bias, int kernel, int dilation) {
  detail::check_kernel(kernel, dilation);
  const Eigen::Index in = x.rows();
  if (weight.cols() != kernel * in || weight.rows() != bias.size()) {
    throw ParameterError("conv1d weight shape does not match input channels / kernel");
  }
  const Eigen::Index time = x.cols();
  Mat<T> y = bias.replicate(1, time);
  for (int k = 0; k < kernel; ++k) {
    const Eigen::Index offset = static_cast<Eigen::Index>(k - kernel / 2) * dilation;
    const auto r = detail::tap_range(time, offset);
    if (r.len == 0) continue;
    y.middleCols(r.first, r.len).noalias() +=
        weight.middleCols(k * in, in) * x.middleCols(r.first + offset, r.len);
  }
  return y;
}

template <typename T>
struct Conv1dGrads {
  Mat<T> input;
  Mat<T> weight;
  Vec<T> bias;
};

template <typename T>
Conv1dGrads<T> conv1d_backward(const Mat<T>& x, const Mat<T>& weight, int kernel, int dilation,
                               const Mat<T>& dy) {
  detail::check_kernel(kernel, dilation);
  const Eigen::Index in = x.rows(), time = x.cols();
  Conv1dGrads<T> g;
  g.input = Mat<T>::Zero(in, time);
  g.weight = Mat<T>::Zero(weight.rows(), weight.cols());
  g.bias = dy.rowwise().sum();
  for (int k = 0; k < kernel; ++k) {
    const Eigen::Index offset = static_cast<Eigen::Index>(k - kernel / 2) * dilation;
    const auto r = detail::tap_range(time, offset);
    if (r.len == 0) continue;
    g.weight.middleCols(k * in, in).noalias() +=
        dy.middleCols(r.first, r.len) * x.middleCols(r.first + offset, r.len).transpose();
    g.input.middleCols(r.first + offset, r.len).noalias() +=
        weight.middleCols(k * in, in).transpose() * dy.middleCols(r.first, r.len);
  }
  return g;
}

inline constexpr double kLeakySlope = 0.1;

template <typename T>
Mat<T> leaky_relu(const Mat<T>& x, double slope = kLeakySlope) {
  const T s = static_cast<T>(slope);
  return x.unaryExpr([s](T v) { return v > T(0) ? v : s * v; });
}

template <typename T>
Mat<T> leaky_relu_backward(const Mat<T>& x, const Mat<T>& dy, double slope = kLeakySlope) {
  const T s = static_cast<T>(slope);
  return dy.binaryExpr(x, [s](T g, T v) { return v > T(0) ? g : s * g; });
}

template <typename T>
Mat<T> tanh(const Mat<T>& x) {
  return x.array().tanh().matrix();
}

// Gradient through tanh given its output `y`.
template <typename T>
Mat<T> tanh_backward(const Mat<T>& y, const Mat<T>& dy) {
  return (dy.array() * (T(1) - y.array().square())).matrix();
}

// Per-timestep affine map W * x[:, t] + b.
template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& weight, const Vec<T>& bias) {
  if (weight.cols() != x.rows() || weight.rows() != bias.size()) {
    throw ParameterError("linear weight shape mismatch: " + std::to_string(weight.rows()) + "x" +
                         std::to_string(weight.cols()) + " applied to " + std::to_string(x.rows()) +
                         " channels");
  }
  Mat<T> y = weight * x;
  y.colwise() += bias;
  return y;
}

template <typename T>
struct LinearGrads {
  Mat<T> input;
  Mat<T> weight;
  Vec<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Mat<T>& x, const Mat<T>& weight, const Mat<T>& dy) {
  return {weight.transpose() * dy, dy * x.transpose(), dy.rowwise().sum()};
}

// --- layers -----------------------------------------------------------------

template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(int in, int out, int kernel, int dilation, std::mt19937_64& rng)
      : kernel_(kernel), dilation_(dilation) {
    detail::check_kernel(kernel, dilation);
    weight = Tensor<T>(uniform_init<T>(out, static_cast<Eigen::Index>(kernel) * in, in * kernel, rng));
    bias = Tensor<T>(uniform_init<T>(out, 1, in * kernel, rng));
  }

  Mat<T> apply(const Mat<T>& x) const {
    return conv1d<T>(x, weight.data, bias.data.col(0), kernel_, dilation_);
  }

  Mat<T> forward(const Mat<T>& x) {
    input_ = x;
    return apply(x);
  }

  Mat<T> backward(const Mat<T>& dy) {
    Conv1dGrads<T> g = conv1d_backward<T>(input_, weight.data, kernel_, dilation_, dy);
    weight.grad += g.weight;
    bias.grad += g.bias;
    return std::move(g.input);
  }

  void collect(std::vector<Tensor<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  LayerSpec spec() const { return LayerSpec::conv(kernel_, dilation_); }
  int kernel() const { return kernel_; }
  int dilation() const { return dilation_; }

  Tensor<T> weight;
  Tensor<T> bias;

 private:
  int kernel_ = 1;
  int dilation_ = 1;
  Mat<T> input_;
};

template <typename T>
class LeakyReLU {
 public:
  Mat<T> apply(const Mat<T>& x) const { return leaky_relu<T>(x); }
  Mat<T> forward(const Mat<T>& x) {
    input_ = x;
    return apply(x);
  }
  Mat<T> backward(const Mat<T>& dy) const { return leaky_relu_backward<T>(input_, dy); }

 private:
  Mat<T> input_;
};

// Residual block of four dilated convolutions:
//   h   = conv_b(act(conv_a(act(x)))) + skip(x)      dilations 1, 3
//   out = h + conv_d(act(conv_c(act(h))))            dilations 9, 27
// where skip is a 1x1 convolution.
template <typename T>
class GBlock {
 public:
  GBlock() = default;
  GBlock(int in, int channels, int kernel, std::mt19937_64& rng)
      : a_(in, channels, kernel, kBlockDilations[0], rng),
        b_(channels, channels, kernel, kBlockDilations[1], rng),
        c_(channels, channels, kernel, kBlockDilations[2], rng),
        d_(channels, channels, kernel, kBlockDilations[3], rng),
        skip_(in, channels, 1, 1, rng) {}

  Mat<T> apply(const Mat<T>& x) const {
    const Mat<T> h = b_.apply(act_.apply(a_.apply(act_.apply(x)))) + skip_.apply(x);
    return h + d_.apply(act_.apply(c_.apply(act_.apply(h))));
  }

  Mat<T> forward(const Mat<T>& x) {
    const Mat<T> h = b_.forward(act2_.forward(a_.forward(act1_.forward(x)))) + skip_.forward(x);
    return h + d_.forward(act4_.forward(c_.forward(act3_.forward(h))));
  }

  Mat<T> backward(const Mat<T>& dy) {
    const Mat<T> dh = dy + act3_.backward(c_.backward(act4_.backward(d_.backward(dy))));
    return act1_.backward(a_.backward(act2_.backward(b_.backward(dh)))) + skip_.backward(dh);
  }

  void collect(std::vector<Tensor<T>*>& out) {
    for (Conv1d<T>* c : {&a_, &b_, &c_, &d_, &skip_}) c->collect(out);
  }

  // The skip path is 1x1 and never widens the field.
  void append_spec(NetworkSpec& net) const {
    for (const Conv1d<T>* c : {&a_, &b_, &c_, &d_}) net.layers.push_back(c->spec());
  }

 private:
  Conv1d<T> a_, b_, c_, d_, skip_;
  LeakyReLU<T> act_, act1_, act2_, act3_, act4_;
};

struct GeneratorConfig {
  int in_channels = 1;
  int channels = 16;
  int blocks = 1;
  int block_kernel = 3;
  int out_channels = 1;
  bool tanh_output = false;
};

// 1x1 input conv -> GBlocks -> kernel-3 output conv (optionally tanh).
template <typename T>
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg), in_(cfg.in_channels, cfg.channels, 1, 1, rng) {
    for (int b = 0; b < cfg.blocks; ++b) blocks_.emplace_back(cfg.channels, cfg.channels, cfg.block_kernel, rng);
    out_ = Conv1d<T>(cfg.channels, cfg.out_channels, 3, 1, rng);
  }

  Mat<T> apply(const Mat<T>& x) const {
    Mat<T> h = in_.apply(x);
    for (const auto& b : blocks_) h = b.apply(h);
    h = out_.apply(h);
    return cfg_.tanh_output ? tanh<T>(h) : h;
  }

  Mat<T> forward(const Mat<T>& x) {
    Mat<T> h = in_.forward(x);
    for (auto& b : blocks_) h = b.forward(h);
    h = out_.forward(h);
    if (cfg_.tanh_output) {
      output_ = tanh<T>(h);
      return output_;
    }
    return h;
  }

  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> g = cfg_.tanh_output ? tanh_backward<T>(output_, dy) : dy;
    g = out_.backward(g);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
    return in_.backward(g);
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    in_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    out_.collect(out);
    return out;
  }

  NetworkSpec spec() const {
    NetworkSpec net;
    net.layers.push_back(in_.spec());
    for (const auto& b : blocks_) b.append_spec(net);
    net.layers.push_back(out_.spec());
    return net;
  }

  const GeneratorConfig& config() const { return cfg_; }

 private:
  GeneratorConfig cfg_;
  Conv1d<T> in_;
  std::vector<GBlock<T>> blocks_;
  Conv1d<T> out_;
  Mat<T> output_;
};

// Plain stack of same-padded convs separated by leaky ReLUs; used to
// cross-check measured receptive fields against the layer calculus.
template <typename T>
class ConvStack {
 public:
  ConvStack(const NetworkSpec& net, int channels, std::mt19937_64& rng) {
    for (const LayerSpec& l : net.layers) {
      if (l.kind != LayerKind::conv) throw ParameterError("ConvStack accepts conv layers only");
      convs_.emplace_back(channels, channels, l.kernel, l.dilation, rng);
    }
    acts_.resize(convs_.size());
  }

  Mat<T> forward(const Mat<T>& x) {
    Mat<T> h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i].forward(h);
      if (i + 1 < convs_.size()) h = acts_[i].forward(h);
    }
    return h;
  }

  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> g = dy;
    for (std::size_t i = convs_.size(); i-- > 0;) {
      if (i + 1 < convs_.size()) g = acts_[i].backward(g);
      g = convs_[i].backward(g);
    }
    return g;
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& c : convs_) c.collect(out);
    return out;
  }

 private:
  std::vector<Conv1d<T>> convs_;
  std::vector<LeakyReLU<T>> acts_;
};

// Receptive field read off the gradient: backpropagates a unit impulse at
// one output sample and returns how far into the past the input gradient
// reaches (inclusive of the current sample). `length` must leave room for
// the field on both sides of the probe at length / 2.
template <typename T, typename Module>
std::int64_t measured_causal_receptive_field(Module& module, int in_channels, int length,
                                             std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Mat<T> x(in_channels, length);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<T>(dist(rng));
  const Mat<T> y = module.forward(x);
  const Eigen::Index probe = length / 2;
  Mat<T> dy = Mat<T>::Zero(y.rows(), y.cols());
  dy(0, probe) = T(1);
  const Mat<T> dx = module.backward(dy);
  Eigen::Index earliest = probe;
  for (Eigen::Index t = 0; t <= probe; ++t) {
    if ((dx.col(t).array() != T(0)).any()) {
      earliest = t;
      break;
    }
  }
  return static_cast<std::int64_t>(probe - earliest + 1);
}

// --- optimizer --------------------------------------------------------------

struct OptimizerConfig {
  double lr = 2e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double lr_decay_per_epoch = 0.999;

  void validate() const {
    if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ParameterError("Adam betas must lie in [0, 1)");
    }
    if (weight_decay < 0.0) throw ParameterError("weight decay must be non-negative");
  }

  // Exponential schedule: lr * decay^epoch.
  double lr_at_epoch(long epoch) const {
    return lr * std::pow(lr_decay_per_epoch, static_cast<double>(epoch));
  }
};

template <typename T>
struct AdamState {
  Mat<T> m;
  Mat<T> v;
  long step = 0;
};

// One AdamW update with decoupled weight decay and bias correction.
// `lr` overrides cfg.lr so callers can apply a schedule.
template <typename T>
void adamw_step(Mat<T>& param, const Mat<T>& grad, AdamState<T>& state, const OptimizerConfig& cfg,
                double lr) {
  if (state.m.size() == 0) {
    state.m = Mat<T>::Zero(param.rows(), param.cols());
    state.v = Mat<T>::Zero(param.rows(), param.cols());
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  if (cfg.weight_decay != 0.0) param *= static_cast<T>(1.0 - lr * cfg.weight_decay);
  state.m = b1 * state.m + (T(1) - b1) * grad;
  state.v = b2 * state.v + (T(1) - b2) * grad.cwiseProduct(grad);
  const T step_size = static_cast<T>(lr / bc1);
  const T root_bc2 = static_cast<T>(std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.eps);
  param.array() -= step_size * state.m.array() / (state.v.array().sqrt() / root_bc2 + eps);
}

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>*> params, OptimizerConfig cfg)
      : params_(std::move(params)), cfg_(cfg), states_(params_.size()) {
    cfg_.validate();
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      adamw_step<T>(params_[i]->data, params_[i]->grad, states_[i], cfg_, lr);
    }
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor<T>*> params_;
  OptimizerConfig cfg_;
  std::vector<AdamState<T>> states_;
};

// --- checkpoints ------------------------------------------------------------
// "TNCK" | u32 header_bytes | JSON header | little-endian f32 payload of all
// parameters in parameters() order, each column-major.

inline constexpr char kCheckpointMagic[4] = {'T', 'N', 'C', 'K'};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const nlohmann::ordered_json& header,
                     const std::vector<Tensor<T>*>& params) {
  nlohmann::ordered_json h = header;
  nlohmann::ordered_json shapes = nlohmann::ordered_json::array();
  for (const auto* p : params) shapes.push_back({p->data.rows(), p->data.cols()});
  h["shapes"] = shapes;
  const std::string text = h.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out.write(kCheckpointMagic, 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : params) {
    for (Eigen::Index i = 0; i < p->data.size(); ++i) {
      const float v = static_cast<float>(p->data.data()[i]);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

// Fills `params` (shapes must match) and returns the stored header.
template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& path, const std::vector<Tensor<T>*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  char magic[4];
  std::uint32_t len = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad checkpoint magic");
  }
  if (!in.read(reinterpret_cast<char*>(&len), 4)) throw FormatError(path.string() + ": truncated header");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto& shapes = header.at("shapes");
  if (shapes.size() != params.size()) throw FormatError(path.string() + ": parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    if (shapes[k][0].get<Eigen::Index>() != p->data.rows() || shapes[k][1].get<Eigen::Index>() != p->data.cols()) {
      throw FormatError(path.string() + ": shape mismatch for parameter " + std::to_string(k));
    }
    for (Eigen::Index i = 0; i < p->data.size(); ++i) {
      float v;
      if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError(path.string() + ": truncated payload");
      p->data.data()[i] = static_cast<T>(v);
    }
  }
  return header;
}

}  // namespace chunkwave::tinynet
