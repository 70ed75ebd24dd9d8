#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardiomt/config.hpp"
#include "cardiomt/evaluate.hpp"
#include "cardiomt/report.hpp"
#include "cardiomt/training.hpp"

namespace cardiomt {

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kSummaryName = "summary.json";
inline constexpr const char* kEventsName = "events.jsonl";
inline constexpr const char* kCheckpointName = "best.ckpt";

struct PrepareResult {
  int prepared = 0;
  /// "patient: reason" for every study that could not be ingested.
  std::vector<std::string> failures;
  nlohmann::json manifest;
};

/// Preprocesses phantoms (config.phantom_count > 0) or the ACDC-layout
/// dataset at config.paths.dataset_dir into `out_dir`, then writes a
/// stratified split manifest. Failing studies are skipped and listed; no
/// manifest is written when nothing could be prepared. With
/// `export_dir`, phantoms are also written there in ACDC layout.
PrepareResult cmd_prepare(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& export_dir = std::nullopt);

struct PreparedSplit {
  std::vector<PreparedStudy> train;
  std::vector<PreparedStudy> val;
  nlohmann::json manifest;
};

/// Reads a prepared cache; throws DataError naming `prepare` when absent and
/// ConfigError when it was built with different preprocessing settings.
PreparedSplit load_prepared_split(const std::filesystem::path& prepared_dir, const PreprocConfig& expected);

/// Trains on a prepared cache; writes events.jsonl, summary.json, best.ckpt
/// and the resolved config into `out_dir`.
RunRecord cmd_train(const ExperimentConfig& config, const std::filesystem::path& prepared_dir,
                    const std::filesystem::path& out_dir);
/// Same, on an already loaded split.
RunRecord train_to_dir(const TrainConfig& config, const PreparedSplit& split, const std::filesystem::path& out_dir);

/// Runs cells `jobs` at a time. With jobs > 1 each cell is a child process
/// running `<executable> train`; otherwise cells run in this process.
std::vector<CellOutcome> cmd_sweep(const ExperimentConfig& config, const std::filesystem::path& prepared_dir,
                                   const std::filesystem::path& out_dir, int jobs,
                                   const std::filesystem::path& executable = {});

/// Writes convergence_p<p>_seed<s>.csv for every (p, seed) group that has an
/// alpha = 1 record. Returns the files written.
std::vector<std::filesystem::path> write_convergence_tables(const std::vector<RunRecord>& records,
                                                            const std::filesystem::path& out_dir);

enum class EvalSplit { All, Train, Val };

struct EvaluateResult {
  EvaluationReport report;
  /// Set when segmentation could not be scored.
  std::string notice;
};

/// Evaluates a checkpoint on a prepared cache (a directory holding
/// manifest.json; `split` selects the studies) or on an ACDC-layout
/// dataset, preprocessed with the settings stored in the checkpoint.
/// Writes evaluation.json and evaluation.csv into `out_dir`.
EvaluateResult cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                            const std::filesystem::path& out_dir, EvalSplit split = EvalSplit::All);

/// Loads every summary.json under `records_dir` and writes tables and plots.
ReportFiles cmd_report(const std::filesystem::path& records_dir, const std::filesystem::path& out_dir);

}  // namespace cardiomt
