#pragma once

// Receptive-field calculus for 1-D layer stacks and the linear-layer
// construction of an exact prefix sum. A convolutional stack can represent
// a cumulative sum as long as its causal receptive field; a fully-connected
// layer over l samples can represent one of length l.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "chunkwave/error.hpp"

namespace chunkwave {

enum class LayerKind { conv, linear, upsample };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int kernel = 1;    // conv: odd, same-padded
  int dilation = 1;  // conv
  int channels = 1;  // linear: width l
  int factor = 1;    // upsample

  static LayerSpec conv(int kernel, int dilation = 1) {
    return {LayerKind::conv, kernel, dilation, 1, 1};
  }
  static LayerSpec linear(int channels) { return {LayerKind::linear, 1, 1, channels, 1}; }
  static LayerSpec upsample(int factor) { return {LayerKind::upsample, 1, 1, 1, factor}; }

  void validate() const {
    switch (kind) {
      case LayerKind::conv:
        if (kernel < 1 || kernel % 2 == 0) {
          throw ParameterError("conv kernel must be odd and positive, got " + std::to_string(kernel));
        }
        if (dilation < 1) throw ParameterError("conv dilation must be >= 1");
        break;
      case LayerKind::linear:
        if (channels < 1) throw ParameterError("linear channels must be >= 1");
        break;
      case LayerKind::upsample:
        if (factor < 1) throw ParameterError("upsample factor must be >= 1");
        break;
    }
  }

  // Past samples reachable through this layer alone.
  std::int64_t causal_reach() const {
    return kind == LayerKind::conv ? static_cast<std::int64_t>(dilation) * (kernel - 1) / 2 : 0;
  }
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;

  NetworkSpec& append(const NetworkSpec& other) {
    layers.insert(layers.end(), other.layers.begin(), other.layers.end());
    return *this;
  }
};

// Samples (current plus past) that can influence one output sample:
// 1 + sum of dilation * (kernel - 1) / 2 over conv layers. Per-timestep
// linear layers add nothing. When `allow_upsample` is set, each conv's reach
// after upsampling is divided (floor) by the cumulative factor so the result
// is measured at the input rate.
inline std::int64_t causal_receptive_field(const NetworkSpec& net, bool allow_upsample = false) {
  if (net.layers.empty()) throw ParameterError("network has no layers");
  std::int64_t rf = 1;
  std::int64_t rate = 1;
  for (const LayerSpec& layer : net.layers) {
    layer.validate();
    if (layer.kind == LayerKind::upsample) {
      if (!allow_upsample) {
        throw ParameterError("upsampling layers present; analysis is defined for upsample-free stacks");
      }
      rate *= layer.factor;
      continue;
    }
    rf += layer.causal_reach() / rate;
  }
  return rf;
}

// Longest cumulative sum the architecture can represent: the width of a
// purely fully-connected stack (its narrowest layer), otherwise the causal
// receptive field.
inline std::int64_t max_learnable_cumsum(const NetworkSpec& net, bool allow_upsample = false) {
  if (net.layers.empty()) throw ParameterError("network has no layers");
  const bool all_linear = std::all_of(net.layers.begin(), net.layers.end(),
                                      [](const LayerSpec& l) { return l.kind == LayerKind::linear; });
  if (all_linear) {
    std::int64_t width = net.layers.front().channels;
    for (const LayerSpec& l : net.layers) {
      l.validate();
      width = std::min<std::int64_t>(width, l.channels);
    }
    return width;
  }
  return causal_receptive_field(net, allow_upsample);
}

// W(i, j) = 1 for j <= i, so (W * x)[i] = x[0] + ... + x[i]. This is the
// all-ones triangular matrix acting on column vectors.
inline Eigen::MatrixXd exact_cumsum_weights(int n) {
  if (n < 1) throw ParameterError("cumsum size must be >= 1");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) w(i, j) = 1.0;
  }
  return w;
}

// y = W x with each output accumulated left to right over the columns, so a
// row of ones followed by zeros reproduces a running sum bit for bit.
inline std::vector<double> linear_apply(const Eigen::MatrixXd& w, std::span<const double> x) {
  if (static_cast<std::size_t>(w.cols()) != x.size()) {
    throw ParameterError("linear_apply: " + std::to_string(w.cols()) + " columns, input of " +
                         std::to_string(x.size()));
  }
  std::vector<double> y(static_cast<std::size_t>(w.rows()), 0.0);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

// Dilation pattern of the four convolutions inside one generator block.
inline constexpr int kBlockDilations[4] = {1, 3, 9, 27};

// Upsample-free generator: 1x1 input conv, `blocks` residual blocks of four
// dilated convs (the block's 1x1 residual conv does not widen the field),
// kernel-3 output conv. `block_kernel` applies to the block convs only.
inline NetworkSpec generator_spec(int blocks = 10, int block_kernel = 3) {
  NetworkSpec net;
  net.layers.push_back(LayerSpec::conv(1));
  for (int b = 0; b < blocks; ++b) {
    for (int d : kBlockDilations) net.layers.push_back(LayerSpec::conv(block_kernel, d));
  }
  net.layers.push_back(LayerSpec::conv(3));
  return net;
}

// Published causal receptive field of the non-autoregressive baseline
// generator (layer list not reconstructed here).
inline constexpr std::int64_t kBaselineGeneratorReceptiveField = 245;

// --- JSON -----------------------------------------------------------------
// Either a bare array of layers or {"layers": [...]}; each layer is
// {"kind": "conv", "kernel": 3, "dilation": 1} | {"kind": "linear",
// "channels": 256} | {"kind": "upsample", "factor": 4}.

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind")) throw FormatError("layer entry needs a \"kind\"");
  const std::string kind = j.at("kind").get<std::string>();
  LayerSpec l;
  if (kind == "conv") {
    l = LayerSpec::conv(j.value("kernel", 1), j.value("dilation", 1));
  } else if (kind == "linear") {
    l = LayerSpec::linear(j.value("channels", 0));
  } else if (kind == "upsample") {
    l = LayerSpec::upsample(j.value("factor", 0));
  } else {
    throw FormatError("unknown layer kind '" + kind + "'");
  }
  return l;
}

inline NetworkSpec network_from_json(const nlohmann::json& j) {
  const nlohmann::json& arr = j.is_object() && j.contains("layers") ? j.at("layers") : j;
  if (!arr.is_array()) throw FormatError("network JSON must be an array of layers");
  NetworkSpec net;
  try {
    for (const auto& item : arr) net.layers.push_back(layer_from_json(item));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed layer: ") + e.what());
  }
  if (net.layers.empty()) throw FormatError("network JSON has no layers");
  return net;
}

inline NetworkSpec read_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  try {
    return network_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline nlohmann::ordered_json to_json(const LayerSpec& l) {
  nlohmann::ordered_json j;
  switch (l.kind) {
    case LayerKind::conv:
      j["kind"] = "conv";
      j["kernel"] = l.kernel;
      j["dilation"] = l.dilation;
      break;
    case LayerKind::linear:
      j["kind"] = "linear";
      j["channels"] = l.channels;
      break;
    case LayerKind::upsample:
      j["kind"] = "upsample";
      j["factor"] = l.factor;
      break;
  }
  return j;
}

inline nlohmann::ordered_json to_json(const NetworkSpec& net) {
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& l : net.layers) layers.push_back(to_json(l));
  return {{"layers", layers}};
}

}  // namespace chunkwave
