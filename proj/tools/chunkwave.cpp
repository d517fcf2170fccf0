// chunkwave: pitch extraction, vocoder evaluation, receptive-field analysis,
// mel features and the cumulative-sum experiment from the command line.
//
// Exit codes: 0 success, 1 internal or numeric failure, 2 bad input.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "chunkwave/chunkwave.hpp"

namespace fs = std::filesystem;
using namespace chunkwave;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitInput = 2;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw InputError("failed writing '" + path.string() + "'");
}

// Output files may be new, but their directory has to exist.
void check_output_path(const fs::path& path) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!fs::is_directory(dir)) throw InputError("output directory '" + dir.string() + "' does not exist");
}

struct PitchFlags {
  std::string audio;
  std::string posteriorgram;
  std::string out;
  PitchConfig pitch;
  int bins = DspPitchConfig{}.n_bins;
};

void add_pitch_options(CLI::App& cmd, PitchConfig& cfg) {
  cmd.add_option("--hop", cfg.hop, "Frame hop in samples")->capture_default_str();
  cmd.add_option("--window", cfg.window, "Analysis window in samples")->capture_default_str();
  cmd.add_option("--fmin", cfg.fmin, "Lowest pitch in Hz")->capture_default_str();
  cmd.add_option("--fmax", cfg.fmax, "Highest pitch in Hz")->capture_default_str();
  cmd.add_option("--gate-db", cfg.gate_db, "A-weighted loudness below which periodicity is zeroed")
      ->capture_default_str();
  cmd.add_option("--threshold", cfg.voicing_threshold, "Voicing threshold on periodicity")
      ->capture_default_str();
  cmd.add_option("--min-frames", cfg.voicing_min_frames, "Minimum run length for a voicing change")
      ->capture_default_str();
}

DspPosteriorgramSource dsp_source(const PitchConfig& cfg, int bins) {
  DspPosteriorgramSource src;
  src.config.n_bins = bins;
  src.config.hop = cfg.hop;
  src.config.window = cfg.window;
  src.config.fmin = cfg.fmin;
  src.config.fmax = cfg.fmax;
  return src;
}

int run_pitch(const PitchFlags& f) {
  check_output_path(f.out);
  const AudioBuffer audio = load_wav(f.audio);
  PitchTrack track;
  if (f.posteriorgram.empty()) {
    track = extract_pitch(audio, dsp_source(f.pitch, f.bins), f.pitch);
  } else {
    track = extract_pitch(audio, StoredPosteriorgramSource{read_posteriorgram(f.posteriorgram)}, f.pitch);
  }
  std::ostringstream csv;
  write_pitch_csv(track, csv);
  write_text(f.out, csv.str());
  return 0;
}

struct EvaluateFlags {
  std::string ref;
  std::string est;
  std::string out;
  PitchConfig pitch;
  int bins = DspPitchConfig{}.n_bins;
  int n_mels = 80;
};

// Relative path -> absolute path for every .wav under `root` (or the file
// itself, keyed by its name).
std::map<std::string, fs::path> collect_wavs(const fs::path& root) {
  std::map<std::string, fs::path> out;
  if (fs::is_regular_file(root)) {
    out.emplace(root.filename().string(), root);
    return out;
  }
  if (!fs::is_directory(root)) throw InputError("'" + root.string() + "' is neither a file nor a directory");
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".wav") continue;
    out.emplace(fs::relative(entry.path(), root).generic_string(), entry.path());
  }
  return out;
}

int run_evaluate(const EvaluateFlags& f) {
  check_output_path(f.out);
  const auto refs = collect_wavs(f.ref);
  const auto ests = collect_wavs(f.est);
  // A single file on each side is one pair even if the names differ.
  const bool single = fs::is_regular_file(f.ref) && fs::is_regular_file(f.est);

  struct Pair {
    std::string name;
    fs::path ref, est;
  };
  std::vector<Pair> pairs;
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  if (single) {
    pairs.push_back({refs.begin()->first, refs.begin()->second, ests.begin()->second});
  } else {
    std::map<std::string, std::string> unmatched;
    for (const auto& [name, path] : refs) {
      const auto it = ests.find(name);
      if (it == ests.end()) {
        unmatched.emplace(name, "no estimate");
      } else {
        pairs.push_back({name, path, it->second});
      }
    }
    for (const auto& [name, path] : ests) {
      if (!refs.contains(name)) unmatched.emplace(name, "no reference");
    }
    for (const auto& [name, reason] : unmatched) skipped.push_back({{"name", name}, {"reason", reason}});
  }

  EvalConfig cfg;
  cfg.pitch = f.pitch;
  cfg.n_mels = f.n_mels;
  const DspPosteriorgramSource source = dsp_source(f.pitch, f.bins);
  std::vector<std::optional<PairEvaluation>> results(pairs.size());
  std::vector<std::string> failures(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    try {
      results[i] = evaluate_pair_detail(load_wav(pairs[i].ref), load_wav(pairs[i].est), source, cfg);
    } catch (const FormatError& e) {
      failures[i] = e.what();
    } catch (const InputError& e) {
      failures[i] = e.what();
    }
  });

  PairEvaluation pooled;
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  std::size_t evaluated = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!results[i]) {
      skipped.push_back({{"name", pairs[i].name}, {"reason", failures[i]}});
      continue;
    }
    files[pairs[i].name] = to_json(results[i]->report());
    pooled.merge(*results[i]);
    ++evaluated;
  }
  if (evaluated == 0) throw InputError("no file pair could be evaluated");

  nlohmann::ordered_json report;
  report["files"] = files;
  report["pooled"] = to_json(pooled.report());
  report["skipped"] = skipped;
  write_text(f.out, report.dump(2) + "\n");
  return 0;
}

int run_rf(const std::string& net_path, bool allow_upsample) {
  const NetworkSpec net = read_network(net_path);
  std::printf("receptive_field=%lld\n", static_cast<long long>(causal_receptive_field(net, allow_upsample)));
  std::printf("max_cumsum_length=%lld\n", static_cast<long long>(max_learnable_cumsum(net, allow_upsample)));
  return 0;
}

struct MelFlags {
  std::string audio;
  std::string out;
  int n_mels = 80;
  StftConfig stft;
};

int run_mels(const MelFlags& f) {
  check_output_path(f.out);
  f.stft.validate();
  const MelSpectrogram mel = mel_spectrogram(load_wav(f.audio), f.n_mels, f.stft);
  nlohmann::ordered_json j;
  j["sample_rate"] = mel.sample_rate;
  j["hop"] = mel.hop;
  j["n_mels"] = mel.n_mels;
  j["n_frames"] = mel.n_frames();
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (Eigen::Index t = 0; t < mel.n_frames(); ++t) {
    std::vector<double> col(mel.frames.col(t).data(), mel.frames.col(t).data() + mel.n_mels);
    frames.push_back(col);
  }
  j["frames"] = frames;
  write_text(f.out, j.dump() + "\n");
  return 0;
}

struct CumsumFlags {
  std::string mode = "ar";
  std::string preset = "desk";
  std::string out;
  bool quiet = false;
  cumsum::ExperimentConfig cfg;
  // Flags left unset keep the preset's value.
  std::optional<long> steps;
  std::optional<int> batch, channels, blocks, context_features, eval_examples;
};

int run_cumsum(CumsumFlags f) {
  check_output_path(f.out);
  cumsum::ExperimentConfig cfg = f.preset == "large" ? cumsum::ExperimentConfig::large() : cumsum::ExperimentConfig::desk();
  cfg.mode = f.mode == "ar" ? cumsum::Regime::autoregressive : cumsum::Regime::nonautoregressive;
  cfg.kernel = f.cfg.kernel;
  cfg.seed = f.cfg.seed;
  cfg.chunk_size = f.cfg.chunk_size;
  cfg.context_size = f.cfg.context_size;
  cfg.train_length = f.cfg.train_length;
  cfg.full_length = f.cfg.full_length;
  cfg.optimizer = f.cfg.optimizer;
  if (f.steps) cfg.steps = *f.steps;
  if (f.batch) cfg.batch = *f.batch;
  if (f.channels) cfg.channels = *f.channels;
  if (f.blocks) cfg.blocks = *f.blocks;
  if (f.context_features) cfg.context_features = *f.context_features;
  if (f.eval_examples) cfg.n_eval_examples = *f.eval_examples;
  // Prefix lengths beyond a shortened example are dropped; Full always stays.
  std::erase_if(cfg.eval_lengths, [&](int l) { return l != cumsum::kFullLength && l > cfg.full_length; });
  cfg.validate();
  auto log = [&](long step, double loss) {
    if (!f.quiet) std::fprintf(stderr, "step %ld  loss %.6f\n", step, loss);
  };
  const cumsum::ExperimentReport report = cumsum::run_experiment(cfg, log);
  write_text(f.out, cumsum::to_json(report).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pitch, periodicity and waveform analysis for chunked autoregressive vocoders"};
  app.require_subcommand(1);

  PitchFlags pitch;
  auto* pitch_cmd = app.add_subcommand("pitch", "Write a pitch/periodicity/voicing CSV for a WAV file");
  pitch_cmd->add_option("audio", pitch.audio, "Input WAV")->required()->check(CLI::ExistingFile);
  pitch_cmd->add_option("--posteriorgram", pitch.posteriorgram, "Use a stored .fpg posteriorgram")
      ->check(CLI::ExistingFile);
  pitch_cmd->add_option("--out", pitch.out, "Output CSV")->required();
  pitch_cmd->add_option("--bins", pitch.bins, "Pitch bins of the built-in estimator")->capture_default_str();
  add_pitch_options(*pitch_cmd, pitch.pitch);

  EvaluateFlags eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare estimated audio against references");
  eval_cmd->add_option("--ref", eval.ref, "Reference WAV file or directory")->required()->check(CLI::ExistingPath);
  eval_cmd->add_option("--est", eval.est, "Estimated WAV file or directory")->required()->check(CLI::ExistingPath);
  eval_cmd->add_option("--out", eval.out, "Output JSON report")->required();
  eval_cmd->add_option("--bins", eval.bins, "Pitch bins of the built-in estimator")->capture_default_str();
  eval_cmd->add_option("--n-mels", eval.n_mels, "Mel bands for mel L1")->capture_default_str();
  add_pitch_options(*eval_cmd, eval.pitch);

  std::string net_path;
  bool allow_upsample = false;
  auto* rf_cmd = app.add_subcommand("rf", "Print causal receptive field and longest learnable cumulative sum");
  rf_cmd->add_option("--net", net_path, "Layer list JSON")->required()->check(CLI::ExistingFile);
  rf_cmd->add_flag("--allow-upsample", allow_upsample, "Measure through upsampling layers at the input rate");

  MelFlags mels;
  auto* mels_cmd = app.add_subcommand("mels", "Write a log-mel spectrogram as JSON");
  mels_cmd->add_option("audio", mels.audio, "Input WAV")->required()->check(CLI::ExistingFile);
  mels_cmd->add_option("--out", mels.out, "Output JSON")->required();
  mels_cmd->add_option("--n-mels", mels.n_mels, "Mel bands")->capture_default_str();
  mels_cmd->add_option("--n-fft", mels.stft.n_fft, "FFT size")->capture_default_str();
  mels_cmd->add_option("--window", mels.stft.window, "Window length")->capture_default_str();
  mels_cmd->add_option("--hop", mels.stft.hop, "Hop length")->capture_default_str();

  CumsumFlags cs;
  auto* cs_cmd = app.add_subcommand("cumsum-experiment", "Train and evaluate a cumulative-sum model");
  cs_cmd->add_option("--mode", cs.mode, "ar or nonar")->check(CLI::IsMember({"ar", "nonar"}))->capture_default_str();
  cs_cmd->add_option("--kernel", cs.cfg.kernel, "Kernel size of the block convolutions")
      ->check(CLI::IsMember({3, 15}))
      ->capture_default_str();
  cs_cmd->add_option("--preset", cs.preset, "desk or large schedule")
      ->check(CLI::IsMember({"desk", "large"}))
      ->capture_default_str();
  cs_cmd->add_option("--steps", cs.steps, "Training steps (default: preset; desk 1000, large 100000)");
  cs_cmd->add_option("--batch", cs.batch, "Windows per step (default: preset; desk 8, large 64)");
  cs_cmd->add_option("--channels", cs.channels, "Generator channels (default: preset; desk 8)");
  cs_cmd->add_option("--blocks", cs.blocks, "Residual blocks (default: preset; 10)");
  cs_cmd->add_option("--context-features", cs.context_features, "Context encoder width (default: preset; desk 8)");
  cs_cmd->add_option("--eval-examples", cs.eval_examples, "Held-out examples (default: preset; desk 64, large 256)");
  cs_cmd->add_option("--seed", cs.cfg.seed, "Random seed")->capture_default_str();
  cs_cmd->add_option("--chunk-size", cs.cfg.chunk_size, "Samples per generated chunk")->capture_default_str();
  cs_cmd->add_option("--context-size", cs.cfg.context_size, "Previous samples used as context")->capture_default_str();
  cs_cmd->add_option("--train-length", cs.cfg.train_length, "Non-autoregressive training window")->capture_default_str();
  cs_cmd->add_option("--full-length", cs.cfg.full_length, "Length of each example (the Full row)")->capture_default_str();
  cs_cmd->add_option("--lr", cs.cfg.optimizer.lr, "AdamW learning rate")->capture_default_str();
  cs_cmd->add_option("--beta1", cs.cfg.optimizer.beta1, "AdamW beta1")->capture_default_str();
  cs_cmd->add_option("--beta2", cs.cfg.optimizer.beta2, "AdamW beta2")->capture_default_str();
  cs_cmd->add_option("--weight-decay", cs.cfg.optimizer.weight_decay, "AdamW decoupled weight decay")
      ->capture_default_str();
  cs_cmd->add_option("--lr-decay", cs.cfg.optimizer.lr_decay_per_epoch, "Learning-rate factor per epoch")
      ->capture_default_str();
  cs_cmd->add_option("--out", cs.out, "Output JSON report")->required();
  cs_cmd->add_flag("--quiet", cs.quiet, "Suppress per-interval loss logging");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*pitch_cmd) return run_pitch(pitch);
    if (*eval_cmd) return run_evaluate(eval);
    if (*rf_cmd) return run_rf(net_path, allow_upsample);
    if (*mels_cmd) return run_mels(mels);
    if (*cs_cmd) return run_cumsum(cs);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const ParameterError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "error: %s (step %ld)\n", e.what(), e.step());
    return kExitInternal;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
