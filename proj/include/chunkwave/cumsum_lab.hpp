#pragma once

// Synthetic cumulative-sum experiment. Inputs are uniform noise normalized
// by their own sum and targets are their running sums (ending at 1). A
// non-autoregressive convolutional model is trained on windows whose running
// total is reset to zero; an autoregressive one is trained chunk by chunk with
// the previous target samples as context and evaluated by feeding its own
// predictions back through the chunked generation loop.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "chunkwave/chunked_ar.hpp"
#include "chunkwave/error.hpp"
#include "chunkwave/parallel.hpp"
#include "chunkwave/receptive.hpp"
#include "chunkwave/tinynet.hpp"

namespace chunkwave::cumsum {

// Eval-length sentinel for "the whole example".
inline constexpr int kFullLength = 0;

struct CumsumExample {
  std::vector<double> input;
  std::vector<double> target;

  std::size_t size() const { return input.size(); }
};

// Divides by the sum and accumulates, so target.back() is 1 up to rounding.
inline CumsumExample normalize_example(std::span<const double> raw) {
  if (raw.empty()) throw ParameterError("cumsum example needs at least one sample");
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  if (!(total > 0.0)) throw DomainError("cumsum example must have a positive sum");
  CumsumExample ex;
  ex.input.resize(raw.size());
  ex.target.resize(raw.size());
  double run = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    ex.input[i] = raw[i] / total;
    run += ex.input[i];
    ex.target[i] = run;
  }
  return ex;
}

// Independent seed per (base, stream, index) triple.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint32_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32), stream,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

inline std::vector<double> uniform_sequence(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline std::vector<CumsumExample> make_dataset(std::span<const int> lengths, std::uint64_t seed) {
  std::vector<CumsumExample> out;
  out.reserve(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1) throw ParameterError("example lengths must be >= 1");
    out.push_back(normalize_example(uniform_sequence(static_cast<std::size_t>(lengths[i]), derive_seed(seed, 0, i))));
  }
  return out;
}

// --- model ------------------------------------------------------------------

enum class Regime { nonautoregressive, autoregressive };

inline std::string regime_name(Regime r) { return r == Regime::autoregressive ? "ar" : "nonar"; }

struct ModelConfig {
  Regime regime = Regime::autoregressive;
  int channels = 8;
  int blocks = 10;
  int kernel = 3;
  int context_size = 512;
  int context_features = 8;
};

// Generator stack over the input channel. The autoregressive variant adds a
// linear context encoder whose features are repeated along time and stacked
// under the input as extra channels.
class CumsumModel {
 public:
  using Mat = tinynet::Mat<float>;

  CumsumModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    std::mt19937_64 rng(seed);
    const bool ar = autoregressive();
    if (ar && (cfg.context_size < 1 || cfg.context_features < 1)) {
      throw ParameterError("autoregressive model needs a context size and context features");
    }
    tinynet::GeneratorConfig g;
    g.in_channels = 1 + (ar ? cfg.context_features : 0);
    g.channels = cfg.channels;
    g.blocks = cfg.blocks;
    g.block_kernel = cfg.kernel;
    gen_ = tinynet::Generator<float>(g, rng);
    if (ar) {
      enc_w_ = tinynet::Tensor<float>(tinynet::uniform_init<float>(cfg.context_features, cfg.context_size,
                                                                   cfg.context_size, rng));
      enc_b_ = tinynet::Tensor<float>(tinynet::uniform_init<float>(cfg.context_features, 1, cfg.context_size, rng));
    }
  }

  bool autoregressive() const { return cfg_.regime == Regime::autoregressive; }
  const ModelConfig& config() const { return cfg_; }
  NetworkSpec spec() const { return gen_.spec(); }

  // Training path; `x` is (1 x T), `context` holds context_size samples
  // (ignored by the non-autoregressive model).
  Mat forward(const Mat& x, std::span<const double> context) {
    if (autoregressive()) context_ = to_column(context);
    return gen_.forward(assemble(x, context_));
  }

  // Accumulates parameter gradients and returns the gradient with respect to
  // the signal input row.
  Mat backward(const Mat& dy) {
    const Mat dx = gen_.backward(dy);
    if (autoregressive()) {
      const tinynet::Vec<float> dfeat = dx.bottomRows(cfg_.context_features).rowwise().sum();
      enc_w_.grad.noalias() += dfeat * context_.transpose();
      enc_b_.grad += dfeat;
    }
    return dx.topRows(1);
  }

  std::vector<double> predict(std::span<const double> input) const {
    if (autoregressive()) throw ParameterError("autoregressive model needs a context; use predict_chunk");
    return to_vector(gen_.apply(to_row(input)));
  }

  std::vector<double> predict_chunk(std::span<const double> context, std::span<const double> input) const {
    if (!autoregressive()) return predict(input);
    return to_vector(gen_.apply(assemble(to_row(input), to_column(context))));
  }

  std::vector<tinynet::Tensor<float>*> parameters() {
    auto p = gen_.parameters();
    if (autoregressive()) {
      p.push_back(&enc_w_);
      p.push_back(&enc_b_);
    }
    return p;
  }

 private:
  static Mat to_row(std::span<const double> v) {
    Mat m(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = static_cast<float>(v[i]);
    return m;
  }

  Mat to_column(std::span<const double> v) const {
    if (static_cast<int>(v.size()) != cfg_.context_size) {
      throw ParameterError("context must hold " + std::to_string(cfg_.context_size) + " samples");
    }
    Mat m(cfg_.context_size, 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = static_cast<float>(v[i]);
    return m;
  }

  static std::vector<double> to_vector(const Mat& y) {
    std::vector<double> out(static_cast<std::size_t>(y.cols()));
    for (Eigen::Index t = 0; t < y.cols(); ++t) out[static_cast<std::size_t>(t)] = y(0, t);
    return out;
  }

  Mat assemble(const Mat& x, const Mat& context) const {
    if (!autoregressive()) return x;
    const tinynet::Vec<float> feat = enc_w_.data * context + enc_b_.data;
    Mat in(1 + cfg_.context_features, x.cols());
    in.topRows(1) = x;
    in.bottomRows(cfg_.context_features) = feat.replicate(1, x.cols());
    return in;
  }

  ModelConfig cfg_;
  tinynet::Generator<float> gen_;
  tinynet::Tensor<float> enc_w_;
  tinynet::Tensor<float> enc_b_;
  Mat context_;
};

// --- evaluation ---------------------------------------------------------------

template <typename M>
concept WholeSequenceModel = requires(const M& m, std::span<const double> s) {
  { m.predict(s) } -> std::convertible_to<std::vector<double>>;
};

template <typename M>
concept ChunkedSequenceModel = requires(const M& m, std::span<const double> s) {
  { m.predict_chunk(s, s) } -> std::convertible_to<std::vector<double>>;
};

struct EvalOptions {
  int chunk_size = 2048;
  int context_size = 512;
  // Per-example prediction spread is measured on the full-length pass from
  // this sample on (0 disables).
  int horizon = 0;
};

struct LengthL1 {
  int length = 0;  // kFullLength for the whole example
  double l1 = 0.0;
};

struct CumsumEvaluation {
  std::vector<LengthL1> l1;
  std::vector<double> chunk_l1;      // chunked full-length pass, mean over examples
  std::vector<double> horizon_std;   // one per example
};

// Chunked prediction of one sequence through the shared generation loop; the
// trailing partial chunk's input is zero-padded to a full chunk.
template <ChunkedSequenceModel M>
std::vector<double> generate_chunked(const M& model, std::span<const double> input, int chunk_size,
                                     int context_size) {
  ChunkPlan plan;
  plan.chunk_size = chunk_size;
  plan.context_size = context_size;
  plan.total_length = static_cast<std::int64_t>(input.size());
  Eigen::MatrixXd cond(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < input.size(); ++i) cond(0, static_cast<Eigen::Index>(i)) = input[i];
  auto gen = [&](std::span<const double> context, const Eigen::MatrixXd& frames) {
    std::vector<double> chunk(static_cast<std::size_t>(chunk_size), 0.0);
    for (Eigen::Index i = 0; i < frames.cols(); ++i) chunk[static_cast<std::size_t>(i)] = frames(0, i);
    return model.predict_chunk(context, chunk);
  };
  return generate(plan, gen, cond);
}

inline double mean_abs_error(std::span<const double> a, std::span<const double> b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(n);
}

// Mean L1 per eval length over the examples, each length scored on the
// example's prefix (targets are not renormalized).
template <typename M>
CumsumEvaluation evaluate_cumsum(const M& model, const std::vector<CumsumExample>& examples,
                                 std::span<const int> eval_lengths, bool chunked,
                                 const EvalOptions& opts = {}) {
  if (examples.empty()) throw ParameterError("evaluation needs at least one example");
  auto run = [&](std::span<const double> input) -> std::vector<double> {
    if (chunked) {
      if constexpr (ChunkedSequenceModel<M>) {
        return generate_chunked(model, input, opts.chunk_size, opts.context_size);
      } else {
        throw ParameterError("model does not support chunked generation");
      }
    } else {
      if constexpr (WholeSequenceModel<M>) {
        return model.predict(input);
      } else {
        throw ParameterError("model does not support whole-sequence prediction");
      }
    }
  };

  CumsumEvaluation result;
  std::vector<std::vector<double>> per_chunk(examples.size());
  result.horizon_std.assign(examples.size(), 0.0);
  for (int requested : eval_lengths) {
    std::vector<double> l1(examples.size(), 0.0);
    parallel_for(examples.size(), [&](std::size_t e) {
      const CumsumExample& ex = examples[e];
      const std::size_t len = requested == kFullLength ? ex.size() : static_cast<std::size_t>(requested);
      if (requested < 0 || len > ex.size()) {
        throw ParameterError("eval length " + std::to_string(requested) + " exceeds example length " +
                             std::to_string(ex.size()));
      }
      const std::vector<double> pred = run(std::span<const double>(ex.input).first(len));
      if (pred.size() != len) throw ContractError("model returned a sequence of the wrong length");
      l1[e] = mean_abs_error(pred, ex.target, len);
      if (requested != kFullLength) return;
      if (chunked) {
        const auto k = static_cast<std::size_t>(opts.chunk_size);
        for (std::size_t s = 0; s < len; s += k) {
          const std::size_t n = std::min(k, len - s);
          per_chunk[e].push_back(mean_abs_error(std::span(pred).subspan(s), std::span(ex.target).subspan(s), n));
        }
      }
      if (opts.horizon > 0 && static_cast<std::size_t>(opts.horizon) < len) {
        const auto tail = std::span(pred).subspan(static_cast<std::size_t>(opts.horizon));
        const double mean = std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(tail.size());
        double var = 0.0;
        for (double v : tail) var += (v - mean) * (v - mean);
        result.horizon_std[e] = std::sqrt(var / static_cast<double>(tail.size()));
      }
    });
    result.l1.push_back({requested, std::accumulate(l1.begin(), l1.end(), 0.0) / static_cast<double>(l1.size())});
  }
  if (chunked && !per_chunk.front().empty()) {
    std::size_t n_chunks = per_chunk.front().size();
    for (const auto& c : per_chunk) n_chunks = std::min(n_chunks, c.size());
    result.chunk_l1.assign(n_chunks, 0.0);
    for (const auto& c : per_chunk) {
      for (std::size_t i = 0; i < n_chunks; ++i) result.chunk_l1[i] += c[i] / static_cast<double>(per_chunk.size());
    }
  }
  return result;
}

// Spearman rank correlation with average ranks for ties; 0 when either side
// is constant.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ParameterError("spearman needs equal-length sequences");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return va == 0.0 || vb == 0.0 ? 0.0 : cov / std::sqrt(va * vb);
}

// --- experiment ---------------------------------------------------------------

struct ExperimentConfig {
  Regime mode = Regime::autoregressive;
  int chunk_size = 2048;
  int context_size = 512;
  int train_length = 8192;
  int full_length = 32768;
  std::vector<int> eval_lengths = {1024, 2048, 4096, 8192, kFullLength};
  int kernel = 3;
  int blocks = 10;
  int channels = 8;
  int context_features = 8;
  long steps = 1000;
  int batch = 8;
  long steps_per_epoch = 100;
  int n_eval_examples = 64;
  int log_every = 100;
  tinynet::OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  // Defaults are the desk-scale run (minutes on one core); large() restores
  // the long schedule.
  static ExperimentConfig desk() { return {}; }

  static ExperimentConfig large() {
    ExperimentConfig c;
    c.steps = 100000;
    c.batch = 64;
    c.channels = 128;
    c.context_features = 128;
    c.n_eval_examples = 256;
    c.steps_per_epoch = 1000;
    return c;
  }

  void validate() const {
    if (!(context_size >= 1 && context_size < chunk_size && chunk_size <= train_length)) {
      throw ParameterError("need 1 <= context_size < chunk_size <= train_length");
    }
    if (full_length < train_length) throw ParameterError("full length must be >= train length");
    if (kernel < 1 || kernel % 2 == 0) throw ParameterError("kernel must be odd and positive");
    if (blocks < 0 || channels < 1 || context_features < 1) throw ParameterError("bad model size");
    if (steps < 0 || batch < 1 || steps_per_epoch < 1 || n_eval_examples < 1 || log_every < 1) {
      throw ParameterError("steps, batch, epoch size, eval count and log interval must be positive");
    }
    for (int l : eval_lengths) {
      if (l != kFullLength && (l < 1 || l > full_length)) {
        throw ParameterError("eval length " + std::to_string(l) + " outside [1, full length]");
      }
    }
    optimizer.validate();
  }

  ModelConfig model() const { return {mode, channels, blocks, kernel, context_size, context_features}; }
};

inline constexpr std::uint32_t kInitStream = 1;
inline constexpr std::uint32_t kTrainStream = 2;
inline constexpr std::uint32_t kWindowStream = 3;
inline constexpr std::uint32_t kEvalStream = 4;

struct TrainingRun {
  CumsumModel model;
  std::vector<double> losses;  // one per step
};

namespace detail {

// One training window: input samples, targets and (for the autoregressive
// regime) the ground-truth context preceding it.
struct Window {
  tinynet::Mat<float> x;
  tinynet::Mat<float> y;
  std::vector<double> context;
};

inline Window sample_window(const ExperimentConfig& cfg, std::uint64_t example_seed, std::mt19937_64& rng) {
  const CumsumExample ex = normalize_example(uniform_sequence(static_cast<std::size_t>(cfg.full_length), example_seed));
  const bool ar = cfg.mode == Regime::autoregressive;
  const int len = ar ? cfg.chunk_size : cfg.train_length;
  std::uniform_int_distribution<int> pick(0, cfg.full_length - len);
  const int start = pick(rng);
  Window w;
  w.x.resize(1, len);
  w.y.resize(1, len);
  // Non-autoregressive targets restart from zero at the window start.
  const double offset = !ar && start > 0 ? ex.target[static_cast<std::size_t>(start - 1)] : 0.0;
  for (int i = 0; i < len; ++i) {
    w.x(0, i) = static_cast<float>(ex.input[static_cast<std::size_t>(start + i)]);
    w.y(0, i) = static_cast<float>(ex.target[static_cast<std::size_t>(start + i)] - offset);
  }
  if (ar) {
    w.context.assign(static_cast<std::size_t>(cfg.context_size), 0.0);
    for (int i = 0; i < cfg.context_size; ++i) {
      const int src = start - cfg.context_size + i;
      if (src >= 0) w.context[static_cast<std::size_t>(i)] = ex.target[static_cast<std::size_t>(src)];
    }
  }
  return w;
}

inline TrainingRun train(const ExperimentConfig& cfg, const std::function<void(long, double)>& on_log) {
  cfg.validate();
  TrainingRun run{CumsumModel(cfg.model(), derive_seed(cfg.seed, kInitStream, 0)), {}};
  tinynet::AdamW<float> opt(run.model.parameters(), cfg.optimizer);
  std::mt19937_64 window_rng(derive_seed(cfg.seed, kWindowStream, 0));
  run.losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (long step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    double loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto index = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(cfg.batch) + static_cast<std::uint64_t>(b);
      const Window w = sample_window(cfg, derive_seed(cfg.seed, kTrainStream, index), window_rng);
      const tinynet::Mat<float> pred = run.model.forward(w.x, w.context);
      const tinynet::Mat<float> diff = pred - w.y;
      const auto scale = static_cast<float>(1.0 / (static_cast<double>(cfg.batch) * static_cast<double>(diff.cols())));
      loss += diff.cwiseAbs().template cast<double>().sum();
      run.model.backward(diff.unaryExpr([scale](float d) { return d > 0.f ? scale : (d < 0.f ? -scale : 0.f); }));
    }
    loss /= static_cast<double>(cfg.batch) * (cfg.mode == Regime::autoregressive ? cfg.chunk_size : cfg.train_length);
    if (!std::isfinite(loss)) throw TrainingError("training loss diverged", step);
    run.losses.push_back(loss);
    opt.step(cfg.optimizer.lr_at_epoch(step / cfg.steps_per_epoch));
    if (on_log && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps)) on_log(step + 1, loss);
  }
  return run;
}

}  // namespace detail

inline TrainingRun train_nonautoregressive(ExperimentConfig cfg, const std::function<void(long, double)>& on_log = {}) {
  cfg.mode = Regime::nonautoregressive;
  return detail::train(cfg, on_log);
}

inline TrainingRun train_autoregressive(ExperimentConfig cfg, const std::function<void(long, double)>& on_log = {}) {
  cfg.mode = Regime::autoregressive;
  return detail::train(cfg, on_log);
}

inline std::vector<CumsumExample> held_out_examples(const ExperimentConfig& cfg) {
  const std::vector<int> lengths(static_cast<std::size_t>(cfg.n_eval_examples), cfg.full_length);
  return make_dataset(lengths, derive_seed(cfg.seed, kEvalStream, 0));
}

struct ExperimentReport {
  ExperimentConfig config;
  std::int64_t receptive_field = 0;
  std::vector<double> losses;
  CumsumEvaluation eval;

  double l1_at(int length) const {
    for (const auto& e : eval.l1) {
      if (e.length == length) return e.l1;
    }
    throw ParameterError("length " + std::to_string(length) + " was not evaluated");
  }

  double chunk_spearman() const {
    std::vector<double> idx(eval.chunk_l1.size());
    std::iota(idx.begin(), idx.end(), 0.0);
    return spearman(idx, eval.chunk_l1);
  }

  double max_horizon_std() const {
    return eval.horizon_std.empty() ? 0.0 : *std::max_element(eval.horizon_std.begin(), eval.horizon_std.end());
  }

  // Mean loss over the last log interval.
  double final_loss() const {
    const std::size_t n = std::min<std::size_t>(losses.size(), static_cast<std::size_t>(config.log_every));
    if (n == 0) return 0.0;
    return std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(n), losses.end(), 0.0) / static_cast<double>(n);
  }
};

inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       const std::function<void(long, double)>& on_log = {}) {
  TrainingRun run = detail::train(cfg, on_log);
  ExperimentReport report;
  report.config = cfg;
  report.receptive_field = causal_receptive_field(run.model.spec());
  report.losses = std::move(run.losses);
  EvalOptions opts;
  opts.chunk_size = cfg.chunk_size;
  opts.context_size = cfg.context_size;
  opts.horizon = cfg.mode == Regime::nonautoregressive ? cfg.train_length : 0;
  report.eval = evaluate_cumsum(run.model, held_out_examples(cfg), cfg.eval_lengths,
                                cfg.mode == Regime::autoregressive, opts);
  return report;
}

inline std::string length_label(int length) { return length == kFullLength ? "Full" : std::to_string(length); }

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  const ExperimentConfig& c = r.config;
  nlohmann::ordered_json j;
  j["mode"] = regime_name(c.mode);
  j["kernel"] = c.kernel;
  j["causal_receptive_field"] = r.receptive_field;
  j["seed"] = c.seed;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["channels"] = c.channels;
  j["blocks"] = c.blocks;
  j["chunk_size"] = c.chunk_size;
  j["context_size"] = c.context_size;
  j["train_length"] = c.train_length;
  j["full_length"] = c.full_length;
  j["n_eval_examples"] = c.n_eval_examples;
  nlohmann::ordered_json l1;
  for (const auto& e : r.eval.l1) l1[length_label(e.length)] = e.l1;
  j["l1"] = l1;
  j["final_loss"] = r.final_loss();
  nlohmann::ordered_json curve = nlohmann::ordered_json::array();
  for (std::size_t i = static_cast<std::size_t>(c.log_every); i <= r.losses.size(); i += static_cast<std::size_t>(c.log_every)) {
    curve.push_back({{"step", i}, {"loss", r.losses[i - 1]}});
  }
  j["loss_curve"] = curve;
  if (c.mode == Regime::autoregressive) {
    j["chunk_l1"] = r.eval.chunk_l1;
    j["chunk_spearman"] = r.chunk_spearman();
  } else {
    j["horizon_std_max"] = r.max_horizon_std();
  }
  return j;
}

}  // namespace chunkwave::cumsum
