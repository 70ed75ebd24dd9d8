#include "cardiomt/training.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "cardiomt/checkpoint.hpp"
#include "cardiomt/errors.hpp"

namespace cardiomt {
namespace fs = std::filesystem;

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

EvalEvent eval_event(std::int64_t iteration, const EvaluationReport& report) {
  EvalEvent e;
  e.iteration = iteration;
  e.error = report.diagnosis.error;
  for (const auto& phase : report.aggregates) {
    std::array<double, 3> dsc{};
    std::array<std::optional<double>, 3> hd;
    for (std::size_t s = 0; s < 3; ++s) {
      dsc[s] = phase[s].mean_dsc;
      if (phase[s].hausdorff.defined > 0) hd[s] = phase[s].hausdorff.mean;
    }
    e.dsc.push_back(dsc);
    e.hausdorff_mm.push_back(hd);
  }
  return e;
}

fs::path write_dump(const TrainHooks& hooks, std::int64_t iteration, std::span<const Sample> batch,
                    const BatchLoss& loss) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : batch) {
    samples.push_back({{"patient_id", s.patient_id}, {"slab_start", s.slab_start}, {"diag_target", s.diag_target}});
  }
  const nlohmann::json dump{{"iteration", iteration},
                            {"samples", samples},
                            {"loss",
                             {{"total", loss.total.item<double>()},
                              {"diagnosis", loss.diagnosis.item<double>()},
                              {"segmentation", loss.segmentation.item<double>()}}}};
  const auto dir = hooks.dump_dir.empty() ? fs::current_path() : hooks.dump_dir;
  const auto path = dir / "nonfinite_dump.json";
  write_text_atomic(path, dump.dump(2) + "\n");
  return path;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (max_iterations <= 0) throw ConfigError("train.max_iterations must be positive");
  if (eval_interval <= 0) throw ConfigError("train.eval_interval must be positive");
  loss.validate();
  preproc.validate();
  model.validate();
  const Shape3 expected{preproc.slab_depth, preproc.crop_rows, preproc.crop_cols};
  if (!(model.input_shape == expected)) {
    throw ConfigError("model input " + to_string(model.input_shape) + " does not match preprocessing output " +
                      to_string(expected));
  }
  if (model.num_seg_phases != preproc.num_phases()) {
    throw ConfigError("model.num_seg_phases does not match preproc.supervision");
  }
}

void sync_model_to_preproc(TrainConfig& config) {
  config.model.input_shape = {config.preproc.slab_depth, config.preproc.crop_rows, config.preproc.crop_cols};
  config.model.num_seg_phases = config.preproc.num_phases();
}

std::string RunRecord::label() const { return alpha == 1.0 ? "baseline" : "multi-task"; }

void configure_torch(bool deterministic, std::uint64_t seed) {
  if (deterministic) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }
  torch::manual_seed(seed);
}

BatchLoss batch_loss(const NetworkOutput& out, std::span<const Sample> batch, const LossConfig& config) {
  BatchLoss loss;
  loss.diagnosis = diagnosis_loss(out.diag_logits, diagnosis_tensor(batch));
  const auto phases = static_cast<int>(batch.front().seg_labels.size());
  if (phases == 0) throw DataError("training samples need segmentation masks");
  torch::Tensor seg;
  for (int ph = 0; ph < phases; ++ph) {
    const auto probs = torch::softmax(out.phase_logits(ph), 1);
    const auto term = segmentation_loss(probs, onehot_tensor(batch, ph), config);
    seg = ph == 0 ? term : seg + term;
  }
  loss.segmentation = seg / static_cast<double>(phases);
  loss.total = combined_loss(loss.diagnosis, loss.segmentation, config.alpha);
  return loss;
}

TrainResult train(std::span<const PreparedStudy> train_set, std::span<const PreparedStudy> val_set,
                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (val_set.empty()) throw DataError("validation set is empty");
  const int phases = config.preproc.num_phases();
  for (const auto& s : train_set) {
    if (static_cast<int>(s.masks.size()) < phases) throw DataError(s.patient_id + ": training study has no masks");
  }

  configure_torch(config.deterministic, config.seed);
  std::mt19937_64 rng(config.seed);

  TrainResult result;
  result.model = build_model(config.model);
  auto& model = result.model;
  model->train();
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.learning_rate)
                                                        .betas({config.beta1, config.beta2}));

  auto& record = result.record;
  record.alpha = config.loss.alpha;
  record.p = config.loss.p;
  record.seed = config.seed;
  record.config = to_json(config);

  const auto predictor = model_predictor(model);
  std::optional<NamedTensors> best_state;
  auto evaluate = [&](std::int64_t iteration) {
    const auto report = evaluate_all(predictor, val_set, config.preproc.slab_depth, phases);
    auto event = eval_event(iteration, report);
    if (record.best_iteration < 0 || event.error < record.best_error) {
      record.best_error = event.error;
      record.best_iteration = iteration;
      best_state = snapshot_state(model);
    }
    if (hooks.on_eval) hooks.on_eval(event);
    record.evals.push_back(std::move(event));
  };

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<Sample> batch;
  for (std::int64_t it = 1; it <= config.max_iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    batch.clear();
    for (std::int64_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(sample_slab(train_set[order[cursor++]], config.preproc.slab_depth, rng, phases));
    }
    const auto out = model->forward(input_tensor(batch));
    const auto loss = batch_loss(out, batch, config.loss);
    if (!std::isfinite(loss.total.item<double>())) {
      const auto dump = write_dump(hooks, it, batch, loss);
      throw TrainingAborted("non-finite loss at iteration " + std::to_string(it) + "; batch dumped to " + dump.string(),
                            dump);
    }
    optimizer.zero_grad();
    loss.total.backward();
    optimizer.step();

    IterationEvent event{it, loss.total.item<double>(), loss.diagnosis.item<double>(), loss.segmentation.item<double>(),
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    if (hooks.on_iteration) hooks.on_iteration(event);
    record.iterations.push_back(event);

    if (it % config.eval_interval == 0 || it == config.max_iterations) evaluate(it);
  }
  if (best_state) restore_state(model, *best_state);
  return result;
}

nlohmann::json to_json(const LossConfig& c) {
  return {{"alpha", c.alpha},
          {"p", c.p},
          {"dice_smooth", c.dice_smooth},
          {"dice_clamp", c.dice_clamp},
          {"dice_denominator", c.dice_denominator == DiceDenominator::Linear ? "linear" : "squared"}};
}

nlohmann::json to_json(const PreprocConfig& c) {
  return {{"target_in_plane_spacing_mm", c.target_in_plane_spacing_mm},
          {"crop_rows", c.crop_rows},
          {"crop_cols", c.crop_cols},
          {"crop_margin_mm", c.crop_margin_mm},
          {"slab_depth", c.slab_depth},
          {"normalization_epsilon", c.normalization_epsilon},
          {"normalize", c.normalize},
          {"supervision", c.supervision == SegSupervision::EdAndEs ? "ed_es" : "ed"}};
}

PreprocConfig preproc_from_json(const nlohmann::json& j) {
  PreprocConfig c;
  c.target_in_plane_spacing_mm = j.at("target_in_plane_spacing_mm").get<double>();
  c.crop_rows = j.at("crop_rows").get<std::int64_t>();
  c.crop_cols = j.at("crop_cols").get<std::int64_t>();
  c.crop_margin_mm = j.at("crop_margin_mm").get<double>();
  c.slab_depth = j.at("slab_depth").get<std::int64_t>();
  c.normalization_epsilon = j.at("normalization_epsilon").get<double>();
  c.normalize = j.at("normalize").get<bool>();
  c.supervision = j.at("supervision").get<std::string>() == "ed" ? SegSupervision::EdOnly : SegSupervision::EdAndEs;
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"batch_size", c.batch_size},
          {"max_iterations", c.max_iterations},
          {"eval_interval", c.eval_interval},
          {"seed", c.seed},
          {"deterministic", c.deterministic},
          {"loss", to_json(c.loss)},
          {"model", to_json(c.model)},
          {"preproc", to_json(c.preproc)}};
}

nlohmann::json to_json(const IterationEvent& e) {
  return {{"event", "iteration"},
          {"iteration", e.iteration},
          {"loss", e.total},
          {"diagnosis_loss", e.diagnosis},
          {"segmentation_loss", e.segmentation},
          {"seconds", e.seconds}};
}

nlohmann::json to_json(const EvalEvent& e) {
  nlohmann::json dsc = nlohmann::json::object();
  nlohmann::json hd = nlohmann::json::object();
  for (std::size_t ph = 0; ph < e.dsc.size(); ++ph) {
    for (std::size_t s = 0; s < 3; ++s) {
      dsc[kPhaseNames[ph]][kStructureNames[s]] = e.dsc[ph][s];
      hd[kPhaseNames[ph]][kStructureNames[s]] = optional_json(e.hausdorff_mm[ph][s]);
    }
  }
  return {{"event", "eval"}, {"iteration", e.iteration}, {"error", e.error}, {"dsc", dsc}, {"hausdorff_mm", hd}};
}

EvalEvent eval_event_from_json(const nlohmann::json& j) {
  EvalEvent e;
  e.iteration = j.at("iteration").get<std::int64_t>();
  e.error = j.at("error").get<double>();
  const auto& dsc = j.at("dsc");
  const auto& hd = j.at("hausdorff_mm");
  for (const char* phase : kPhaseNames) {
    if (!dsc.contains(phase)) break;
    std::array<double, 3> d{};
    std::array<std::optional<double>, 3> h;
    for (std::size_t s = 0; s < 3; ++s) {
      d[s] = dsc.at(phase).at(kStructureNames[s]).get<double>();
      const auto& v = hd.at(phase).at(kStructureNames[s]);
      if (!v.is_null()) h[s] = v.get<double>();
    }
    e.dsc.push_back(d);
    e.hausdorff_mm.push_back(h);
  }
  return e;
}

nlohmann::json summary_json(const RunRecord& r) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : r.evals) {
    auto j = to_json(e);
    j.erase("event");
    evals.push_back(std::move(j));
  }
  nlohmann::json final_loss = nullptr;
  if (!r.iterations.empty()) {
    const auto& last = r.iterations.back();
    final_loss = {{"loss", last.total}, {"diagnosis_loss", last.diagnosis}, {"segmentation_loss", last.segmentation}};
  }
  return {{"format", "cardiomt-run-summary"},
          {"version", 1},
          {"label", r.label()},
          {"alpha", r.alpha},
          {"p", r.p},
          {"seed", r.seed},
          {"iterations_run", r.iterations.size()},
          {"best_iteration", r.best_iteration},
          {"best_error", r.best_error},
          {"final_loss", final_loss},
          {"evals", evals},
          {"config", r.config}};
}

RunRecord record_from_summary(const nlohmann::json& j) {
  if (j.value("format", "") != "cardiomt-run-summary") throw DataError("not a run summary document");
  RunRecord r;
  r.alpha = j.at("alpha").get<double>();
  r.p = j.at("p").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.best_iteration = j.at("best_iteration").get<std::int64_t>();
  r.best_error = j.at("best_error").get<double>();
  for (const auto& e : j.at("evals")) r.evals.push_back(eval_event_from_json(e));
  r.config = j.value("config", nlohmann::json::object());
  return r;
}

void write_summary(const RunRecord& record, const fs::path& path) {
  write_text_atomic(path, summary_json(record).dump(2) + "\n");
}

RunRecord read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read run summary " + path.string());
  try {
    return record_from_summary(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed run summary " + path.string() + ": " + e.what());
  }
}

EventWriter::EventWriter(const fs::path& path) : path_(path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
}

void EventWriter::write(const nlohmann::json& event) {
  std::ofstream out(path_, std::ios::app);
  out << event.dump() << '\n';
}

void SweepConfig::validate() const {
  if (alphas.empty() || ps.empty() || seeds.empty()) throw ConfigError("sweep alphas, ps and seeds must be nonempty");
  for (double a : alphas) {
    if (!(a >= 0 && a <= 1)) throw ConfigError("sweep alpha " + shortest(a) + " outside [0, 1]");
  }
  for (double p : ps) {
    if (!(p > 0)) throw ConfigError("sweep p " + shortest(p) + " must be > 0");
  }
  if (std::set<double>(alphas.begin(), alphas.end()).size() != alphas.size() ||
      std::set<double>(ps.begin(), ps.end()).size() != ps.size() ||
      std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("sweep lists must not contain duplicates");
  }
  base.validate();
}

std::string SweepCell::name() const {
  return "alpha" + shortest(alpha) + "_p" + shortest(p) + "_seed" + std::to_string(seed);
}

TrainConfig SweepCell::config(const TrainConfig& base) const {
  auto c = base;
  c.loss.alpha = alpha;
  c.loss.p = p;
  c.seed = seed;
  return c;
}

std::vector<SweepCell> enumerate_cells(const SweepConfig& config) {
  std::vector<SweepCell> cells;
  for (double a : config.alphas) {
    for (double p : config.ps) {
      for (auto s : config.seeds) cells.push_back({a, p, s});
    }
  }
  return cells;
}

std::vector<CellOutcome> run_sweep(const SweepConfig& config, const fs::path& out_dir, const CellRunner& runner,
                                   int jobs) {
  config.validate();
  if (jobs < 1) throw ConfigError("--jobs must be >= 1");
  fs::create_directories(out_dir);
  const auto cells = enumerate_cells(config);
  std::vector<CellOutcome> outcomes(cells.size());

  auto run_one = [&](std::size_t i) {
    auto& o = outcomes[i];
    o.cell = cells[i];
    const auto dir = out_dir / cells[i].name();
    const auto summary = dir / "summary.json";
    if (fs::exists(summary)) {
      o.status = CellStatus::Skipped;
      o.record = read_summary(summary);
      return;
    }
    fs::create_directories(dir);
    fs::remove(dir / "failed.json");
    try {
      runner(cells[i], cells[i].config(config.base), dir);
      if (!fs::exists(summary)) throw std::runtime_error("cell finished without writing summary.json");
      o.status = CellStatus::Completed;
      o.record = read_summary(summary);
    } catch (const std::exception& e) {
      o.status = CellStatus::Failed;
      o.error = e.what();
      write_text_atomic(dir / "failed.json", nlohmann::json{{"cell", cells[i].name()}, {"error", o.error}}.dump(2) + "\n");
    }
  };

  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < std::min<int>(jobs, static_cast<int>(cells.size())); ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_one(i);
      });
    }
    for (auto& t : workers) t.join();
  }

  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& o : outcomes) {
    const char* status = o.status == CellStatus::Failed ? "failed" : "completed";
    nlohmann::json row{{"cell", o.cell.name()}, {"alpha", o.cell.alpha}, {"p", o.cell.p}, {"seed", o.cell.seed},
                       {"status", status}};
    if (o.status == CellStatus::Failed) row["error"] = o.error;
    manifest.push_back(row);
  }
  write_text_atomic(out_dir / "sweep_manifest.json", nlohmann::json{{"cells", manifest}}.dump(2) + "\n");
  return outcomes;
}

std::vector<ConvergenceRow> compare_convergence(std::span<const RunRecord> records) {
  if (records.empty()) throw ConfigError("compare_convergence needs at least one record");
  for (const auto& r : records) {
    if (r.p != records.front().p) throw ConfigError("records differ in p; compare one p at a time");
    if (r.seed != records.front().seed) throw ConfigError("records differ in seed; compare one seed at a time");
    if (r.best_iteration <= 0) throw ConfigError("record without a positive best_iteration");
  }
  const auto ref = std::find_if(records.begin(), records.end(), [](const RunRecord& r) { return r.alpha == 1.0; });
  if (ref == records.end()) throw ConfigError("no alpha = 1 reference record");
  std::vector<ConvergenceRow> rows;
  for (const auto& r : records) {
    rows.push_back({r.alpha, r.best_error, r.best_iteration,
                    static_cast<double>(ref->best_iteration) / static_cast<double>(r.best_iteration)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.alpha < b.alpha; });
  return rows;
}

}  // namespace cardiomt
