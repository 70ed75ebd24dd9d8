// cardiomt: prepare, train, sweep, evaluate and report.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal
// error (including an aborted training run).

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "cardiomt/commands.hpp"
#include "cardiomt/errors.hpp"

namespace fs = std::filesystem;
using namespace cardiomt;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool deterministic = false;
};

ExperimentConfig resolve(const Globals& g) {
  auto c = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) {
    c.train().seed = *g.seed;
    c.split.seed = *g.seed;
    c.sweep.seeds = {*g.seed};
  }
  if (g.deterministic) c.train().deterministic = true;
  c.finalize();
  return c;
}

fs::path require_out(const Globals& g, const char* verb) {
  if (g.out.empty()) throw ConfigError(std::string(verb) + " needs --out");
  return g.out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint cardiac segmentation and diagnosis on cine-MR volumes"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Sectioned key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Overrides train.seed, split.seed and the sweep seeds");
  app.add_option("--jobs", g.jobs, "Parallel sweep cells")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", g.deterministic, "Single-threaded deterministic numerics");

  auto* prepare = app.add_subcommand("prepare", "Preprocess a dataset or phantoms and write a split manifest");
  std::optional<int> phantom;
  std::string dataset, export_dir;
  prepare->add_option("--phantom", phantom, "Generate N phantom studies instead of reading a dataset")
      ->check(CLI::PositiveNumber);
  prepare->add_option("--dataset", dataset, "ACDC-layout dataset directory");
  prepare->add_option("--export-phantoms", export_dir, "Also write the phantoms here in ACDC layout");

  auto* train = app.add_subcommand("train", "Train one model on a prepared cache");
  std::string prepared;
  train->add_option("--prepared", prepared, "Prepared cache (defaults to paths.prepared_dir)");

  auto* sweep = app.add_subcommand("sweep", "Train every (alpha, p, seed) cell; resumable");
  sweep->add_option("--prepared", prepared, "Prepared cache (defaults to paths.prepared_dir)");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on prepared or ACDC-layout studies");
  std::string checkpoint, data, split_name = "all";
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  evaluate->add_option("--data", data, "Prepared cache or ACDC-layout dataset")->required();
  evaluate->add_option("--split", split_name, "Prepared-cache subset")->check(CLI::IsMember({"all", "train", "val"}));

  auto* report = app.add_subcommand("report", "Tables and plots from run records");
  std::string records;
  report->add_option("--records", records, "Directory searched for summary.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (prepare->parsed()) {
      auto c = resolve(g);
      if (phantom) c.phantom_count = *phantom;
      if (!dataset.empty()) {
        c.paths.dataset_dir = dataset;
        c.phantom_count = 0;
      }
      const auto out = g.out.empty() ? fs::path(c.paths.prepared_dir) : fs::path(g.out);
      const auto r = cmd_prepare(c, out, export_dir.empty() ? std::nullopt : std::optional<fs::path>(export_dir));
      std::cout << "prepared " << r.prepared << " studies into " << out.string() << " ("
                << r.manifest.at("train").size() << " train, " << r.manifest.at("val").size() << " val)\n";
      for (const auto& f : r.failures) std::cerr << "skipped " << f << '\n';
      return r.failures.empty() ? 0 : 2;
    }
    if (train->parsed()) {
      const auto c = resolve(g);
      const auto out = require_out(g, "train");
      const auto record = cmd_train(c, prepared.empty() ? fs::path(c.paths.prepared_dir) : fs::path(prepared), out);
      std::cout << record.label() << " run: best validation error " << record.best_error << " at iteration "
                << record.best_iteration << "\n";
      return 0;
    }
    if (sweep->parsed()) {
      const auto c = resolve(g);
      const auto out = require_out(g, "sweep");
      const auto outcomes = cmd_sweep(c, prepared.empty() ? fs::path(c.paths.prepared_dir) : fs::path(prepared), out,
                                      g.jobs, fs::read_symlink("/proc/self/exe"));
      int failed = 0;
      for (const auto& o : outcomes) {
        const char* status = o.status == CellStatus::Completed ? "done"
                             : o.status == CellStatus::Skipped ? "already complete"
                                                               : "FAILED";
        std::cout << o.cell.name() << ": " << status;
        if (o.status == CellStatus::Failed) {
          std::cout << " (" << o.error << ")";
          ++failed;
        }
        std::cout << '\n';
      }
      return failed == 0 ? 0 : 3;
    }
    if (evaluate->parsed()) {
      const auto out = require_out(g, "evaluate");
      const auto split = split_name == "train" ? EvalSplit::Train : split_name == "val" ? EvalSplit::Val : EvalSplit::All;
      const auto r = cmd_evaluate(checkpoint, data, out, split);
      write_resolved_config(resolve(g), out);
      std::cout << r.report.cases.size() << " cases, diagnostic error " << r.report.diagnosis.error << '\n';
      if (!r.notice.empty()) std::cerr << "notice: " << r.notice << '\n';
      return 0;
    }
    if (report->parsed()) {
      const auto out = require_out(g, "report");
      const auto files = cmd_report(records, out);
      write_resolved_config(resolve(g), out);
      for (const auto& p : files.tables) std::cout << p.string() << '\n';
      for (const auto& p : files.plots) std::cout << p.string() << '\n';
      if (!files.notice.empty()) std::cerr << "notice: " << files.notice << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 3;
}
