#include "cardiomt/commands.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>

#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>

#include "cardiomt/checkpoint.hpp"
#include "cardiomt/errors.hpp"
#include "cardiomt/phantom.hpp"

extern char** environ;

namespace cardiomt {
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Runs `args` as a child process with output appended to `log`; throws on
/// a nonzero exit.
void run_child(const std::vector<std::string>& args, const fs::path& log) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw std::runtime_error("cannot start " + args[0] + ": " + std::strerror(rc));
  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw std::runtime_error("waitpid failed");
  }
  if (!WIFEXITED(status)) throw std::runtime_error("cell process terminated by a signal; see " + log.string());
  if (WEXITSTATUS(status) != 0) {
    throw std::runtime_error("cell process exited with code " + std::to_string(WEXITSTATUS(status)) + "; see " +
                             log.string());
  }
}

std::vector<PreparedStudy> load_ids(const fs::path& studies_dir, const nlohmann::json& ids) {
  std::vector<PreparedStudy> out;
  for (const auto& id : ids) out.push_back(load_prepared(studies_dir / id.get<std::string>()));
  return out;
}

}  // namespace

PrepareResult cmd_prepare(const ExperimentConfig& config, const fs::path& out_dir,
                          const std::optional<fs::path>& export_dir) {
  config.preproc.validate();
  PrepareResult result;
  std::vector<CineStudy> studies;
  std::string source;
  if (config.phantom_count > 0) {
    studies = generate_phantom_dataset(config.phantom_count, config.phantom);
    source = "phantom";
    if (export_dir) {
      // Record the heart box so the export stays usable with masks removed.
      for (auto s : studies) {
        if (!s.bbox && s.has_masks()) s.bbox = bbox_from_masks(std::vector<LabelVolume>{*s.ed_mask, *s.es_mask});
        export_study(s, *export_dir);
      }
    }
  } else {
    if (config.paths.dataset_dir.empty()) throw ConfigError("no dataset: set paths.dataset_dir or a phantom count");
    const auto dirs = list_study_dirs(config.paths.dataset_dir);
    if (dirs.empty()) throw DataError("no patient directories found in " + config.paths.dataset_dir);
    for (const auto& d : dirs) {
      try {
        studies.push_back(load_acdc_study(d));
      } catch (const std::exception& e) {
        result.failures.push_back(d.filename().string() + ": " + e.what());
      }
    }
    source = fs::absolute(config.paths.dataset_dir).lexically_normal().string();
  }

  const auto studies_dir = out_dir / "studies";
  fs::remove(out_dir / kManifestName);
  std::vector<std::string> ids;
  std::vector<Diagnosis> labels;
  for (const auto& s : studies) {
    try {
      const auto prepared = prepare_study(s, config.preproc);
      if (prepared.slices() < config.preproc.slab_depth) {
        throw DataError(s.patient_id + ": " + std::to_string(prepared.slices()) + " slices, fewer than slab depth " +
                        std::to_string(config.preproc.slab_depth));
      }
      if (prepared.masks.empty()) throw DataError(s.patient_id + ": no ground-truth masks; cannot be used for training");
      save_prepared(prepared, studies_dir / s.patient_id);
      ids.push_back(s.patient_id);
      labels.push_back(s.diagnosis);
    } catch (const std::exception& e) {
      result.failures.push_back(e.what());
    }
  }
  result.prepared = static_cast<int>(ids.size());
  if (ids.empty()) throw DataError("no study could be prepared");

  const auto split = stratified_split(labels, config.split.train_fraction, config.split.seed);
  nlohmann::json train = nlohmann::json::array(), val = nlohmann::json::array(), classes = nlohmann::json::object();
  for (auto i : split.train) train.push_back(ids[i]);
  for (auto i : split.val) val.push_back(ids[i]);
  for (std::size_t i = 0; i < ids.size(); ++i) classes[ids[i]] = diagnosis_name(labels[i]);
  result.manifest = {{"source", source},
                     {"split_seed", config.split.seed},
                     {"train_fraction", config.split.train_fraction},
                     {"preproc", to_json(config.preproc)},
                     {"train", train},
                     {"val", val},
                     {"diagnosis", classes},
                     {"failures", result.failures}};
  write_resolved_config(config, out_dir);
  write_json_atomic(out_dir / kManifestName, result.manifest);
  return result;
}

PreparedSplit load_prepared_split(const fs::path& prepared_dir, const PreprocConfig& expected) {
  const auto manifest_path = prepared_dir / kManifestName;
  if (!fs::exists(manifest_path)) {
    throw DataError("no prepared cache at " + prepared_dir.string() + " (missing " + kManifestName +
                    "); run `cardiomt prepare` first");
  }
  PreparedSplit split;
  split.manifest = read_json(manifest_path);
  if (split.manifest.at("preproc") != to_json(expected)) {
    throw ConfigError("prepared cache " + prepared_dir.string() +
                      " was built with different [preproc] settings; rerun `cardiomt prepare`");
  }
  split.train = load_ids(prepared_dir / "studies", split.manifest.at("train"));
  split.val = load_ids(prepared_dir / "studies", split.manifest.at("val"));
  return split;
}

RunRecord train_to_dir(const TrainConfig& config, const PreparedSplit& split, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  fs::remove(out_dir / kSummaryName);
  EventWriter events(out_dir / kEventsName);
  TrainHooks hooks;
  hooks.on_iteration = [&](const IterationEvent& e) { events.write(to_json(e)); };
  hooks.on_eval = [&](const EvalEvent& e) { events.write(to_json(e)); };
  hooks.dump_dir = out_dir;
  auto result = train(split.train, split.val, config, hooks);

  Checkpoint ckpt;
  ckpt.config = config.model;
  ckpt.model_state = snapshot_state(result.model);
  ckpt.meta = {{"label", result.record.label()},
               {"alpha", result.record.alpha},
               {"p", result.record.p},
               {"seed", result.record.seed},
               {"best_iteration", result.record.best_iteration},
               {"best_error", result.record.best_error},
               {"preproc", to_json(config.preproc)}};
  write_checkpoint(out_dir / kCheckpointName, ckpt);
  write_summary(result.record, out_dir / kSummaryName);
  return result.record;
}

RunRecord cmd_train(const ExperimentConfig& config, const fs::path& prepared_dir, const fs::path& out_dir) {
  config.train().validate();
  const auto split = load_prepared_split(prepared_dir, config.preproc);
  write_resolved_config(config, out_dir);
  return train_to_dir(config.train(), split, out_dir);
}

std::vector<CellOutcome> cmd_sweep(const ExperimentConfig& config, const fs::path& prepared_dir,
                                   const fs::path& out_dir, int jobs, const fs::path& executable) {
  config.sweep.validate();
  const auto split = load_prepared_split(prepared_dir, config.preproc);
  write_resolved_config(config, out_dir);
  if (jobs > 1 && executable.empty()) throw ConfigError("parallel sweeps need the executable path");

  CellRunner runner = [&](const SweepCell& cell, const TrainConfig& cell_config, const fs::path& dir) {
    auto resolved = config;
    resolved.sweep.base = cell_config;
    resolved.sweep.alphas = {cell.alpha};
    resolved.sweep.ps = {cell.p};
    resolved.sweep.seeds = {cell.seed};
    write_resolved_config(resolved, dir);
    if (jobs > 1) {
      run_child({executable.string(), "train", "--config", (dir / kResolvedConfigName).string(), "--prepared",
                 prepared_dir.string(), "--out", dir.string()},
                dir / "train.log");
    } else {
      train_to_dir(cell_config, split, dir);
    }
  };
  auto outcomes = run_sweep(config.sweep, out_dir, runner, jobs);

  std::vector<RunRecord> records;
  for (const auto& o : outcomes) {
    if (o.record) records.push_back(*o.record);
  }
  write_convergence_tables(records, out_dir);
  return outcomes;
}

std::vector<fs::path> write_convergence_tables(const std::vector<RunRecord>& records, const fs::path& out_dir) {
  std::map<std::pair<double, std::uint64_t>, std::vector<RunRecord>> groups;
  for (const auto& r : records) groups[{r.p, r.seed}].push_back(r);
  std::vector<fs::path> written;
  for (const auto& [key, group] : groups) {
    const bool has_reference = std::any_of(group.begin(), group.end(), [](const auto& r) { return r.alpha == 1.0; });
    if (!has_reference) continue;
    const auto rows = compare_convergence(group);
    const auto path = out_dir / ("convergence_p" + num(key.first) + "_seed" + std::to_string(key.second) + ".csv");
    std::ofstream out(path);
    out << "alpha,best_error,best_iteration,speedup\n";
    for (const auto& r : rows) {
      out << num(r.alpha) << ',' << num(r.best_error) << ',' << r.best_iteration << ',' << num(r.speedup) << '\n';
    }
    written.push_back(path);
  }
  return written;
}

EvaluateResult cmd_evaluate(const fs::path& checkpoint, const fs::path& data, const fs::path& out_dir,
                            EvalSplit split) {
  const auto ckpt = read_checkpoint(checkpoint);
  if (!ckpt.meta.contains("preproc")) throw DataError("checkpoint lacks preprocessing settings: " + checkpoint.string());
  const auto preproc = preproc_from_json(ckpt.meta.at("preproc"));
  auto model = instantiate(ckpt);
  const auto predictor = model_predictor(model);

  EvaluateResult result;
  std::vector<PreparedStudy> studies;
  if (fs::exists(data / kManifestName)) {
    const auto manifest = read_json(data / kManifestName);
    if (split != EvalSplit::Val) {
      for (auto& s : load_ids(data / "studies", manifest.at("train"))) studies.push_back(std::move(s));
    }
    if (split != EvalSplit::Train) {
      for (auto& s : load_ids(data / "studies", manifest.at("val"))) studies.push_back(std::move(s));
    }
  } else {
    const auto dirs = list_study_dirs(data);
    if (dirs.empty()) throw DataError("no studies found in " + data.string());
    std::vector<std::string> failures;
    for (const auto& d : dirs) {
      try {
        studies.push_back(prepare_study(load_acdc_study(d), preproc));
      } catch (const std::exception& e) {
        failures.push_back(e.what());
      }
    }
    if (!failures.empty()) {
      result.notice = std::to_string(failures.size()) + " studies skipped: " + failures.front();
    }
  }
  if (studies.empty()) throw DataError("no study could be evaluated");

  result.report = evaluate_all(predictor, studies, preproc.slab_depth, preproc.num_phases());
  const auto without = static_cast<int>(studies.size()) - result.report.cases_with_segmentation;
  if (without > 0) {
    if (!result.notice.empty()) result.notice += "; ";
    result.notice += std::to_string(without) + " of " + std::to_string(studies.size()) +
                     " studies have no masks: diagnosis-only for those";
  }
  auto doc = to_json(result.report);
  doc["checkpoint"] = ckpt.meta;
  if (!result.notice.empty()) doc["notice"] = result.notice;
  write_json_atomic(out_dir / "evaluation.json", doc);
  write_report_csv(result.report, out_dir / "evaluation.csv");
  return result;
}

ReportFiles cmd_report(const fs::path& records_dir, const fs::path& out_dir) {
  const auto records = load_records(records_dir);
  if (records.empty()) throw DataError("no summary.json found under " + records_dir.string());
  return write_report(records, out_dir);
}

}  // namespace cardiomt
