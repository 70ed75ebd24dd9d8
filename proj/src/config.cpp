#include "cardiomt/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "cardiomt/errors.hpp"

namespace cardiomt {
namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const auto s = trim(raw);
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError("invalid value '" + raw + "' for " + key);
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const auto s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("invalid boolean '" + raw + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError(key + " must list at least one value");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) s += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt(values[i]);
    } else {
      s += std::to_string(values[i]);
    }
  }
  return s;
}

std::array<std::int64_t, 3> parse_triple(const std::string& key, const std::string& raw) {
  const auto v = parse_list<std::int64_t>(key, raw);
  if (v.size() != 3) throw ConfigError(key + " needs three comma-separated values");
  return {v[0], v[1], v[2]};
}

struct Entry {
  const char* section;
  const char* key;
  const char* doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& name, const std::string&)> set;
};

#define CFG_REAL(sec, k, field, doc)                                                                  \
  Entry {                                                                                            \
    sec, #k, doc, [](const ExperimentConfig& c) { return fmt(c.field); },                            \
        [](ExperimentConfig& c, const std::string& n, const std::string& v) { c.field = parse_number<double>(n, v); } \
  }
#define CFG_INT(sec, k, field, type, doc)                                                             \
  Entry {                                                                                            \
    sec, #k, doc, [](const ExperimentConfig& c) { return std::to_string(c.field); },                 \
        [](ExperimentConfig& c, const std::string& n, const std::string& v) { c.field = parse_number<type>(n, v); } \
  }
#define CFG_BOOL(sec, k, field, doc)                                                                  \
  Entry {                                                                                            \
    sec, #k, doc, [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& n, const std::string& v) { c.field = parse_bool(n, v); } \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table{
      CFG_REAL("preproc", target_in_plane_spacing_mm, preproc.target_in_plane_spacing_mm,
               "in-plane spacing after resampling (mm)"),
      CFG_INT("preproc", crop_rows, preproc.crop_rows, std::int64_t, "crop height around the heart (voxels, even)"),
      CFG_INT("preproc", crop_cols, preproc.crop_cols, std::int64_t, "crop width around the heart (voxels, even)"),
      CFG_REAL("preproc", crop_margin_mm, preproc.crop_margin_mm, "minimum margin between heart box and crop edge"),
      CFG_INT("preproc", slab_depth, preproc.slab_depth, std::int64_t, "consecutive slices per network input"),
      CFG_REAL("preproc", normalization_epsilon, preproc.normalization_epsilon,
               "slices with std below this are only mean-shifted"),
      CFG_BOOL("preproc", normalize, preproc.normalize, "per-slice zero mean / unit variance"),
      Entry{"preproc", "supervision", "segmentation phases: ed or ed_es",
            [](const ExperimentConfig& c) {
              return std::string(c.preproc.supervision == SegSupervision::EdAndEs ? "ed_es" : "ed");
            },
            [](ExperimentConfig& c, const std::string& n, const std::string& v) {
              const auto s = trim(v);
              if (s == "ed_es") {
                c.preproc.supervision = SegSupervision::EdAndEs;
              } else if (s == "ed") {
                c.preproc.supervision = SegSupervision::EdOnly;
              } else {
                throw ConfigError("invalid value '" + v + "' for " + n + " (expected ed or ed_es)");
              }
            }},

      CFG_INT("phantom", count, phantom_count, int, "phantom studies for prepare; 0 reads paths.dataset_dir"),
      CFG_INT("phantom", slices, phantom.grid.slices, std::int64_t, "phantom grid slices"),
      CFG_INT("phantom", rows, phantom.grid.rows, std::int64_t, "phantom grid rows"),
      CFG_INT("phantom", cols, phantom.grid.cols, std::int64_t, "phantom grid cols"),
      CFG_REAL("phantom", slice_mm, phantom.spacing.slice_mm, "phantom slice spacing (mm)"),
      CFG_REAL("phantom", row_mm, phantom.spacing.row_mm, "phantom row spacing (mm)"),
      CFG_REAL("phantom", col_mm, phantom.spacing.col_mm, "phantom column spacing (mm)"),
      CFG_REAL("phantom", noise_std, phantom.noise_std, "Gaussian intensity noise"),
      CFG_REAL("phantom", center_jitter_mm, phantom.center_jitter_mm, "random in-plane shift of the heart (mm)"),
      CFG_INT("phantom", seed, phantom.seed, std::uint64_t, "phantom generator seed"),

      CFG_REAL("split", train_fraction, split.train_fraction, "per-class training share"),
      CFG_INT("split", seed, split.seed, std::uint64_t, "split shuffle seed"),

      CFG_REAL("loss", alpha, sweep.base.loss.alpha, "diagnosis weight; 1 - alpha weights segmentation"),
      CFG_REAL("loss", p, sweep.base.loss.p, "exponent on (1 - Dice)"),
      CFG_REAL("loss", dice_smooth, sweep.base.loss.dice_smooth, "soft Dice smoothing constant"),
      CFG_REAL("loss", dice_clamp, sweep.base.loss.dice_clamp, "Dice upper clamp used when p < 1"),
      Entry{"loss", "dice_denominator", "soft Dice denominator: linear or squared",
            [](const ExperimentConfig& c) {
              return std::string(c.sweep.base.loss.dice_denominator == DiceDenominator::Linear ? "linear" : "squared");
            },
            [](ExperimentConfig& c, const std::string& n, const std::string& v) {
              const auto s = trim(v);
              if (s == "linear") {
                c.sweep.base.loss.dice_denominator = DiceDenominator::Linear;
              } else if (s == "squared") {
                c.sweep.base.loss.dice_denominator = DiceDenominator::Squared;
              } else {
                throw ConfigError("invalid value '" + v + "' for " + n + " (expected linear or squared)");
              }
            }},

      CFG_INT("model", growth_rate, sweep.base.model.growth_rate, std::int64_t, "channels added per dense layer"),
      CFG_INT("model", init_features, sweep.base.model.init_features, std::int64_t, "stem output channels"),
      Entry{"model", "block_layers", "layers per dense block, one entry per stage",
            [](const ExperimentConfig& c) { return join(c.sweep.base.model.block_layers); },
            [](ExperimentConfig& c, const std::string& n, const std::string& v) {
              c.sweep.base.model.block_layers = parse_list<std::int64_t>(n, v);
            }},
      CFG_REAL("model", dropout_input, sweep.base.model.dropout_input, "dropout on the input channels"),
      CFG_REAL("model", dropout_conv, sweep.base.model.dropout_conv, "dropout after every convolution"),
      Entry{"model", "stem_kernel", "stem kernel (slices, rows, cols)",
            [](const ExperimentConfig& c) {
              const auto& k = c.sweep.base.model.stem_kernel;
              return join(std::vector<std::int64_t>(k.begin(), k.end()));
            },
            [](ExperimentConfig& c, const std::string& n, const std::string& v) {
              c.sweep.base.model.stem_kernel = parse_triple(n, v);
            }},
      Entry{"model", "stem_stride", "stem stride (slices, rows, cols)",
            [](const ExperimentConfig& c) {
              const auto& k = c.sweep.base.model.stem_stride;
              return join(std::vector<std::int64_t>(k.begin(), k.end()));
            },
            [](ExperimentConfig& c, const std::string& n, const std::string& v) {
              c.sweep.base.model.stem_stride = parse_triple(n, v);
            }},

      CFG_REAL("train", learning_rate, sweep.base.learning_rate, "Adam learning rate"),
      CFG_REAL("train", beta1, sweep.base.beta1, "Adam beta1"),
      CFG_REAL("train", beta2, sweep.base.beta2, "Adam beta2"),
      CFG_INT("train", batch_size, sweep.base.batch_size, std::int64_t, "slabs per iteration"),
      CFG_INT("train", max_iterations, sweep.base.max_iterations, std::int64_t, "training iterations"),
      CFG_INT("train", eval_interval, sweep.base.eval_interval, std::int64_t, "iterations between validations"),
      CFG_INT("train", seed, sweep.base.seed, std::uint64_t, "initialisation, dropout and sampling seed"),
      CFG_BOOL("train", deterministic, sweep.base.deterministic, "single-threaded deterministic kernels"),

      Entry{"sweep", "alphas", "alpha grid", [](const ExperimentConfig& c) { return join(c.sweep.alphas); },
            [](ExperimentConfig& c, const std::string& n, const std::string& v) {
              c.sweep.alphas = parse_list<double>(n, v);
            }},
      Entry{"sweep", "ps", "p grid", [](const ExperimentConfig& c) { return join(c.sweep.ps); },
            [](ExperimentConfig& c, const std::string& n, const std::string& v) { c.sweep.ps = parse_list<double>(n, v); }},
      Entry{"sweep", "seeds", "training seeds", [](const ExperimentConfig& c) { return join(c.sweep.seeds); },
            [](ExperimentConfig& c, const std::string& n, const std::string& v) {
              c.sweep.seeds = parse_list<std::uint64_t>(n, v);
            }},

      Entry{"paths", "dataset_dir", "ACDC-layout dataset directory",
            [](const ExperimentConfig& c) { return c.paths.dataset_dir; },
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.paths.dataset_dir = trim(v); }},
      Entry{"paths", "prepared_dir", "preprocessed cache directory",
            [](const ExperimentConfig& c) { return c.paths.prepared_dir; },
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.paths.prepared_dir = trim(v); }},
  };
  return table;
}

#undef CFG_REAL
#undef CFG_INT
#undef CFG_BOOL

}  // namespace

void ExperimentConfig::finalize() {
  sweep.base.preproc = preproc;
  sync_model_to_preproc(sweep.base);
  sweep.base.validate();
  preproc.validate();
  phantom.validate();
  if (phantom_count < 0) throw ConfigError("phantom.count must be >= 0");
  if (!(split.train_fraction > 0 && split.train_fraction < 1)) throw ConfigError("split.train_fraction must lie in (0, 1)");
  sweep.validate();
}

ExperimentConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  ExperimentConfig config;
  std::set<std::string> sections;
  for (const auto& e : entries()) sections.insert(e.section);
  for (const auto& [section, keys] : tree) {
    if (!sections.count(section)) {
      if (keys.empty() && !keys.data().empty()) throw ConfigError("key '" + section + "' outside any section");
      throw ConfigError("unknown config section [" + section + "]");
    }
    for (const auto& [key, value] : keys) {
      const auto it = std::find_if(entries().begin(), entries().end(),
                                   [&](const Entry& e) { return section == e.section && key == e.key; });
      const auto name = section + "." + key;
      if (it == entries().end()) throw ConfigError("unknown config key " + name);
      it->set(config, name, value.data());
    }
  }
  config.finalize();
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& e : entries()) {
    if (section != e.section) {
      if (!section.empty()) out += "\n";
      section = e.section;
      out += "[" + section + "]\n";
    }
    out += "; " + std::string(e.doc) + "\n";
    out += std::string(e.key) + " = " + e.get(config) + "\n";
  }
  return out;
}

void write_resolved_config(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / kResolvedConfigName);
  if (!out) throw DataError("cannot write " + (dir / kResolvedConfigName).string());
  out << render_config(config);
}

}  // namespace cardiomt
