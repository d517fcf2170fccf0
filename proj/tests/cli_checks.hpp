#pragma once

// Runs every CLI subcommand twice on generated inputs and compares the
// output bytes.

#include <map>
#include <string>

#include "chunkwave/signal.hpp"
#include "support.hpp"

namespace testing {

inline std::map<std::string, bool> cli_reproducibility(const TempDir& dir) {
  const std::string cli = CLI_PATH;
  save_wav(dir / "tone.wav", sine(220.0, 1.0, 22050, 0.5));
  save_wav(dir / "tone_sharp.wav", sine(224.0, 1.0, 22050, 0.5));
  const std::string tone = quote(dir / "tone.wav");
  const std::string fixtures = FIXTURE_DIR;

  std::map<std::string, std::string> commands = {
      {"pitch", cli + " pitch " + tone + " --out "},
      {"pitch --posteriorgram", cli + " pitch " + tone + " --posteriorgram " + fixtures + "/peak220.fpg --out "},
      {"evaluate", cli + " evaluate --ref " + tone + " --est " + quote(dir / "tone_sharp.wav") + " --out "},
      {"mels", cli + " mels " + tone + " --out "},
      {"cumsum-experiment ar",
       cli + " cumsum-experiment --mode ar --steps 4 --batch 2 --channels 2 --blocks 1 --context-features 2"
             " --eval-examples 2 --chunk-size 128 --context-size 32 --train-length 512 --full-length 1024"
             " --seed 3 --quiet --out "},
      {"cumsum-experiment nonar",
       cli + " cumsum-experiment --mode nonar --steps 4 --batch 2 --channels 2 --blocks 1"
             " --eval-examples 2 --chunk-size 128 --context-size 32 --train-length 512 --full-length 1024"
             " --seed 3 --quiet --out "},
  };
  std::map<std::string, bool> result;
  int i = 0;
  for (const auto& [name, cmd] : commands) {
    const auto a = dir / ("a" + std::to_string(i));
    const auto b = dir / ("b" + std::to_string(i++));
    const bool ok = run(cmd + quote(a)) == 0 && run(cmd + quote(b)) == 0;
    result[name] = ok && slurp(a) == slurp(b) && !slurp(a).empty();
  }
  // rf writes to stdout.
  const std::string rf = cli + " rf --net " + fixtures + "/gantts.json > ";
  const bool ok = run(rf + quote(dir / "rf_a")) == 0 && run(rf + quote(dir / "rf_b")) == 0;
  result["rf"] = ok && slurp(dir / "rf_a") == slurp(dir / "rf_b") && !slurp(dir / "rf_a").empty();
  return result;
}

}  // namespace testing
