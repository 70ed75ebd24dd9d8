#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cardiomt/phantom.hpp"
#include "cardiomt/preprocess.hpp"
#include "cardiomt/training.hpp"

namespace cardiomt {

struct SplitConfig {
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
};

struct PathsConfig {
  /// ACDC-layout dataset read by `prepare` when no phantom count is given.
  std::string dataset_dir;
  /// Preprocessed cache written by `prepare` and read by `train`/`sweep`.
  std::string prepared_dir = "prepared";
};

/// Everything a command needs, loaded from a sectioned key = value file.
struct ExperimentConfig {
  PreprocConfig preproc;
  PhantomConfig phantom;
  /// Phantom studies generated by `prepare` when no dataset is given; 0
  /// means read paths.dataset_dir instead.
  int phantom_count = 0;
  SplitConfig split;
  SweepConfig sweep;  // sweep.base holds loss, model and train settings
  PathsConfig paths;

  TrainConfig& train() { return sweep.base; }
  const TrainConfig& train() const { return sweep.base; }

  /// Syncs the model input to the preprocessing and validates every part.
  void finalize();
};

/// Parses INI text. Unknown sections or keys and malformed values throw
/// ConfigError naming the offending entry.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved config with every key and a comment per key; parsing the
/// result yields the same config.
std::string render_config(const ExperimentConfig& config);
void write_resolved_config(const ExperimentConfig& config, const std::filesystem::path& dir);

inline constexpr const char* kResolvedConfigName = "resolved_config.ini";

}  // namespace cardiomt
