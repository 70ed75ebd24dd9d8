#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cardiomt/commands.hpp"
#include "cardiomt/errors.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace cardiomt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ExperimentConfig desk_experiment(int phantoms) {
  ExperimentConfig c;
  c.preproc = fixtures::desk_preproc();
  c.train() = fixtures::desk_train();
  c.phantom_count = phantoms;
  c.finalize();
  return c;
}

}  // namespace

TEST_SUITE("commands") {

TEST_CASE("prepare 100 phantoms: 20 per class, 15/5 split, rerun identical") {
  testutil::TempDir tmp;
  const auto cfg = desk_experiment(100);
  const auto r = cmd_prepare(cfg, tmp.path() / "a");
  CHECK(r.prepared == 100);
  CHECK(r.failures.empty());
  CHECK(r.manifest.at("train").size() == 75);
  CHECK(r.manifest.at("val").size() == 25);
  std::map<std::string, int> train_per_class, total_per_class;
  const auto& diag = r.manifest.at("diagnosis");
  for (const auto& id : r.manifest.at("train")) ++train_per_class[diag.at(id.get<std::string>())];
  for (const auto& [id, d] : diag.items()) ++total_per_class[d.get<std::string>()];
  for (auto d : kAllDiagnoses) {
    CHECK(total_per_class[std::string(diagnosis_name(d))] == 20);
    CHECK(train_per_class[std::string(diagnosis_name(d))] == 15);
  }
  CHECK(fs::exists(tmp.path() / "a" / kResolvedConfigName));
  cmd_prepare(cfg, tmp.path() / "b");
  CHECK(slurp(tmp.path() / "a" / kManifestName) == slurp(tmp.path() / "b" / kManifestName));
}

TEST_CASE("empty dataset directory fails without writing a manifest") {
  testutil::TempDir tmp;
  auto cfg = desk_experiment(0);
  fs::create_directories(tmp.path() / "empty");
  cfg.paths.dataset_dir = (tmp.path() / "empty").string();
  CHECK_THROWS_AS(cmd_prepare(cfg, tmp.path() / "out"), DataError);
  CHECK_FALSE(fs::exists(tmp.path() / "out" / kManifestName));
}

TEST_CASE("missing cache names the prepare command") {
  testutil::TempDir tmp;
  try {
    load_prepared_split(tmp.path() / "nope", fixtures::desk_preproc());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("cardiomt prepare") != std::string::npos);
  }
}

TEST_CASE("cache built with other preprocessing is refused") {
  testutil::TempDir tmp;
  cmd_prepare(desk_experiment(20), tmp.path());
  auto other = fixtures::desk_preproc();
  other.crop_margin_mm = 2;
  CHECK_THROWS_AS(load_prepared_split(tmp.path(), other), ConfigError);
}

TEST_CASE("train, evaluate and the mask-free notice") {
  testutil::TempDir tmp;
  auto cfg = desk_experiment(20);
  cfg.train().loss.alpha = 1.0;
  const auto exported = tmp.path() / "acdc";
  cmd_prepare(cfg, tmp.path() / "prep", exported);
  const auto record = cmd_train(cfg, tmp.path() / "prep", tmp.path() / "run");
  CHECK(record.label() == "baseline");
  for (const char* f : {kSummaryName, kEventsName, kCheckpointName, kResolvedConfigName}) {
    CHECK_MESSAGE(fs::exists(tmp.path() / "run" / f), f);
  }

  const auto ckpt = tmp.path() / "run" / kCheckpointName;
  const auto val = cmd_evaluate(ckpt, tmp.path() / "prep", tmp.path() / "ev", EvalSplit::Val);
  CHECK(val.report.cases.size() == 5);
  int total = 0;
  for (const auto& row : val.report.diagnosis.confusion)
    for (int x : row) total += x;
  CHECK(total == 5);
  const auto j = nlohmann::json::parse(slurp(tmp.path() / "ev" / "evaluation.json"));
  CHECK(j.at("aggregate").at("cases") == 5);
  CHECK(j.at("aggregate").contains("segmentation"));

  // Strip the ground truth from the exported studies.
  for (const auto& dir : list_study_dirs(exported)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().filename().string().find("_gt") != std::string::npos) fs::remove(e.path());
    }
  }
  const auto nomask = cmd_evaluate(ckpt, exported, tmp.path() / "ev2");
  CHECK(nomask.report.cases.size() == 20);
  CHECK_FALSE(nomask.notice.empty());
  const auto j2 = nlohmann::json::parse(slurp(tmp.path() / "ev2" / "evaluation.json"));
  CHECK_FALSE(j2.at("aggregate").contains("segmentation"));
}

}  // TEST_SUITE
