#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cardiomt/evaluate.hpp"
#include "cardiomt/losses.hpp"
#include "cardiomt/model.hpp"
#include "cardiomt/preprocess.hpp"

namespace cardiomt {

struct TrainConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::int64_t batch_size = 4;
  std::int64_t max_iterations = 2000;
  std::int64_t eval_interval = 20;
  std::uint64_t seed = 0;
  /// Single-threaded, deterministic kernels: bit-reproducible runs.
  bool deterministic = false;
  LossConfig loss;
  ModelConfig model;
  PreprocConfig preproc;

  /// Checks ranges and that the model input matches the preprocessing
  /// (slab depth, crop size, supervised phases).
  void validate() const;
};

/// Sets model.input_shape and model.num_seg_phases from preproc.
void sync_model_to_preproc(TrainConfig& config);

struct IterationEvent {
  std::int64_t iteration = 0;
  double total = 0;
  double diagnosis = 0;
  double segmentation = 0;
  double seconds = 0;
};

struct EvalEvent {
  std::int64_t iteration = 0;
  double error = 0;
  /// dsc[phase][structure], structures in kStructures order.
  std::vector<std::array<double, 3>> dsc;
  /// Mean Hausdorff over cases where it is defined.
  std::vector<std::array<std::optional<double>, 3>> hausdorff_mm;
};

struct RunRecord {
  double alpha = 0;
  double p = 0;
  std::uint64_t seed = 0;
  std::vector<IterationEvent> iterations;
  std::vector<EvalEvent> evals;
  /// Earliest evaluated iteration with the lowest validation error; -1
  /// before the first evaluation.
  std::int64_t best_iteration = -1;
  double best_error = 1.0;
  nlohmann::json config = nlohmann::json::object();

  /// "baseline" for alpha == 1, "multi-task" otherwise.
  std::string label() const;
};

/// Raised when the loss becomes NaN or infinite.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::filesystem::path dump) : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::filesystem::path& dump_path() const { return dump_; }

 private:
  std::filesystem::path dump_;
};

struct TrainHooks {
  std::function<void(const IterationEvent&)> on_iteration;
  std::function<void(const EvalEvent&)> on_eval;
  /// Where a non-finite-loss dump is written; the working directory if empty.
  std::filesystem::path dump_dir;
};

struct TrainResult {
  /// Weights restored to the best validation iteration.
  MultiTaskNet model{nullptr};
  RunRecord record;
};

/// Adam training on random slabs; evaluates the validation set on centre
/// slabs every eval_interval iterations and after the last iteration.
TrainResult train(std::span<const PreparedStudy> train_set, std::span<const PreparedStudy> val_set,
                  const TrainConfig& config, const TrainHooks& hooks = {});

/// Loss of one batch, split into its terms.
struct BatchLoss {
  torch::Tensor total;
  torch::Tensor diagnosis;
  torch::Tensor segmentation;
};
BatchLoss batch_loss(const NetworkOutput& out, std::span<const Sample> batch, const LossConfig& config);

/// Applies the determinism settings (thread count, deterministic kernels)
/// and seeds torch's global generator.
void configure_torch(bool deterministic, std::uint64_t seed);

nlohmann::json to_json(const LossConfig& config);
nlohmann::json to_json(const PreprocConfig& config);
PreprocConfig preproc_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const IterationEvent& event);
nlohmann::json to_json(const EvalEvent& event);
EvalEvent eval_event_from_json(const nlohmann::json& j);

/// Summary document: no timings or paths, so identical runs produce
/// byte-identical files.
nlohmann::json summary_json(const RunRecord& record);
RunRecord record_from_summary(const nlohmann::json& j);
void write_summary(const RunRecord& record, const std::filesystem::path& path);
RunRecord read_summary(const std::filesystem::path& path);

/// Appends one JSON object per line.
class EventWriter {
 public:
  explicit EventWriter(const std::filesystem::path& path);
  void write(const nlohmann::json& event);

 private:
  std::filesystem::path path_;
};

struct SweepConfig {
  std::vector<double> alphas{0.05, 1.0};
  std::vector<double> ps{0.3};
  std::vector<std::uint64_t> seeds{0};
  TrainConfig base;

  void validate() const;
};

struct SweepCell {
  double alpha = 0;
  double p = 0;
  std::uint64_t seed = 0;

  /// Directory name, e.g. "alpha0.05_p0.3_seed0".
  std::string name() const;
  TrainConfig config(const TrainConfig& base) const;
};

/// Cartesian product in (alpha, p, seed) order.
std::vector<SweepCell> enumerate_cells(const SweepConfig& config);

enum class CellStatus { Completed, Skipped, Failed };

struct CellOutcome {
  SweepCell cell;
  CellStatus status = CellStatus::Completed;
  std::string error;
  std::optional<RunRecord> record;
};

/// Trains one cell, writing at least summary.json into the directory.
using CellRunner = std::function<void(const SweepCell&, const TrainConfig&, const std::filesystem::path&)>;

/// Runs every cell whose directory has no summary.json yet, at most `jobs`
/// at a time. Exceptions from the runner mark the cell failed (failed.json)
/// without stopping the others. Writes sweep_manifest.json.
std::vector<CellOutcome> run_sweep(const SweepConfig& config, const std::filesystem::path& out_dir,
                                   const CellRunner& runner, int jobs = 1);

struct ConvergenceRow {
  double alpha = 0;
  double best_error = 0;
  std::int64_t best_iteration = 0;
  /// Reference best_iteration over this row's best_iteration.
  double speedup = 1.0;
};

/// Rows ordered by alpha. Throws ConfigError when records differ in p or
/// seed, or no alpha == 1 reference exists.
std::vector<ConvergenceRow> compare_convergence(std::span<const RunRecord> records);

}  // namespace cardiomt
