#include "cardiomt/study.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cardiomt/errors.hpp"
#include "cardiomt/nifti.hpp"

namespace cardiomt {
namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, kNumDiagnoses> kDiagnosisNames{"NOR", "DCM", "HCM", "MINF", "ARV"};

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::map<std::string, std::string> read_info(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metadata missing: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    kv[trim(line.substr(0, colon))] = trim(line.substr(colon + 1));
  }
  return kv;
}

int parse_frame(const std::map<std::string, std::string>& info, const std::string& key, const fs::path& where) {
  const auto it = info.find(key);
  if (it == info.end()) throw DataError("metadata " + where.string() + " lacks '" + key + ":'");
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw DataError("metadata " + where.string() + ": bad frame index '" + it->second + "'");
  }
}

std::string frame_stem(const std::string& pid, int frame) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", frame);
  return pid + "_frame" + buf;
}

std::optional<fs::path> find_nifti(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    auto p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

ImageVolume load_frame(const fs::path& dir, const std::string& pid, int frame, Spacing& spacing) {
  if (auto p = find_nifti(dir, frame_stem(pid, frame))) {
    const auto img = nifti::read(*p);
    spacing = nifti::spacing_of(img);
    return nifti::frame_volume(img, 0);
  }
  if (auto p = find_nifti(dir, pid + "_4d")) {
    const auto img = nifti::read(*p);
    spacing = nifti::spacing_of(img);
    return nifti::frame_volume(img, frame - 1);
  }
  throw DataError(pid + ": no volume for frame " + std::to_string(frame));
}

}  // namespace

std::string_view diagnosis_name(Diagnosis d) { return kDiagnosisNames.at(static_cast<std::size_t>(d)); }

Diagnosis parse_diagnosis(std::string_view name) {
  for (std::size_t i = 0; i < kDiagnosisNames.size(); ++i) {
    if (kDiagnosisNames[i] == name) return static_cast<Diagnosis>(i);
  }
  throw DataError("unknown diagnosis group '" + std::string(name) + "'");
}

void validate(const CineStudy& study) {
  const auto& id = study.patient_id;
  const auto shape = study.ed_volume.shape();
  if (shape.slices < 1 || shape.rows < 1 || shape.cols < 1) throw DataError(id + ": empty volume");
  if (!(study.es_volume.shape() == shape)) {
    throw DataError(id + ": ED/ES volume shape mismatch " + to_string(shape) + " vs " +
                    to_string(study.es_volume.shape()));
  }
  if (!study.spacing.positive()) throw DataError(id + ": spacing must be positive");
  if (study.ed_mask.has_value() != study.es_mask.has_value()) {
    throw DataError(id + ": ground truth present for only one phase");
  }
  for (const auto* mask : {&study.ed_mask, &study.es_mask}) {
    if (!mask->has_value()) continue;
    if (!((*mask)->shape() == shape)) {
      throw DataError(id + ": mask/volume shape mismatch " + to_string((*mask)->shape()) + " vs " + to_string(shape));
    }
    const auto& d = (*mask)->data();
    if (std::any_of(d.begin(), d.end(), [](std::uint8_t v) { return v >= kNumLabels; })) {
      throw DataError(id + ": mask label outside {0,1,2,3}");
    }
  }
}

CineStudy load_acdc_study(const fs::path& study_dir) {
  const auto info_path = study_dir / "Info.cfg";
  if (!fs::exists(info_path)) throw DataError("metadata missing: " + info_path.string());
  const auto info = read_info(info_path);

  CineStudy study;
  study.patient_id = study_dir.filename().string();
  if (study.patient_id.empty()) study.patient_id = study_dir.parent_path().filename().string();
  const int ed = parse_frame(info, "ED", info_path);
  const int es = parse_frame(info, "ES", info_path);
  const auto group = info.find("Group");
  if (group == info.end()) throw DataError("metadata " + info_path.string() + " lacks 'Group:'");
  study.diagnosis = parse_diagnosis(group->second);

  Spacing es_spacing;
  study.ed_volume = load_frame(study_dir, study.patient_id, ed, study.spacing);
  study.es_volume = load_frame(study_dir, study.patient_id, es, es_spacing);

  const auto ed_gt = find_nifti(study_dir, frame_stem(study.patient_id, ed) + "_gt");
  const auto es_gt = find_nifti(study_dir, frame_stem(study.patient_id, es) + "_gt");
  if (ed_gt) study.ed_mask = nifti::frame_labels(nifti::read(*ed_gt));
  if (es_gt) study.es_mask = nifti::frame_labels(nifti::read(*es_gt));

  if (const auto bb = info.find("BBox"); bb != info.end()) {
    std::istringstream in(bb->second);
    BBox box;
    if (!(in >> box.row_min >> box.row_max >> box.col_min >> box.col_max)) {
      throw DataError(study.patient_id + ": malformed BBox line '" + bb->second + "'");
    }
    study.bbox = box;
  }
  validate(study);
  return study;
}

fs::path export_study(const CineStudy& study, const fs::path& parent) {
  validate(study);
  const auto dir = parent / study.patient_id;
  fs::create_directories(dir);
  constexpr int ed = 1;
  constexpr int es = 2;
  {
    std::ofstream info(dir / "Info.cfg");
    info << "ED: " << ed << "\nES: " << es << "\nGroup: " << diagnosis_name(study.diagnosis) << "\nNbFrame: 2\n";
    if (study.bbox) {
      info << "BBox: " << study.bbox->row_min << ' ' << study.bbox->row_max << ' ' << study.bbox->col_min << ' '
           << study.bbox->col_max << '\n';
    }
    if (!info) throw DataError("cannot write " + (dir / "Info.cfg").string());
  }
  const auto& pid = study.patient_id;
  nifti::write(dir / (frame_stem(pid, ed) + ".nii.gz"), nifti::from_volume(study.ed_volume, study.spacing));
  nifti::write(dir / (frame_stem(pid, es) + ".nii.gz"), nifti::from_volume(study.es_volume, study.spacing));
  if (study.has_masks()) {
    nifti::write(dir / (frame_stem(pid, ed) + "_gt.nii.gz"), nifti::from_labels(*study.ed_mask, study.spacing), true);
    nifti::write(dir / (frame_stem(pid, es) + "_gt.nii.gz"), nifti::from_labels(*study.es_mask, study.spacing), true);
  }
  return dir;
}

std::vector<fs::path> list_study_dirs(const fs::path& dataset_dir) {
  if (!fs::is_directory(dataset_dir)) throw DataError("dataset directory not found: " + dataset_dir.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dataset_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "Info.cfg")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::string to_string(const Shape3& shape) {
  return "(" + std::to_string(shape.slices) + "x" + std::to_string(shape.rows) + "x" + std::to_string(shape.cols) + ")";
}

}  // namespace cardiomt
