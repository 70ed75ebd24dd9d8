#include "cardiomt/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cardiomt/errors.hpp"

namespace cardiomt {
namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 8> kColors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                             "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Round tick step giving roughly `target` intervals over [lo, hi].
double tick_step(double lo, double hi, int target) {
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (raw <= m * mag) return m * mag;
  }
  return 10 * mag;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string p_suffix(double p, bool many_p) { return many_p ? " (p=" + num(p) + ")" : ""; }

}  // namespace

std::string render_svg(const LineChart& chart) {
  constexpr double W = 640, H = 420, L = 70, R = 170, T = 40, B = 55;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : chart.series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream s;
  s << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(chart.title) << "</text>\n";

  const double xs = tick_step(x0, x1, 6), ys = tick_step(y0, y1, 6);
  for (double t = std::ceil(x0 / xs) * xs; t <= x1 + 1e-9 * xs; t += xs) {
    s << "<line x1=\"" << px(t) << "\" y1=\"" << T << "\" x2=\"" << px(t) << "\" y2=\"" << H - B
      << "\" stroke=\"#e5e5e5\"/>\n";
    s << "<text x=\"" << px(t) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << num(std::round(t / xs) * xs)
      << "</text>\n";
  }
  for (double t = std::ceil(y0 / ys) * ys; t <= y1 + 1e-9 * ys; t += ys) {
    s << "<line x1=\"" << L << "\" y1=\"" << py(t) << "\" x2=\"" << W - R << "\" y2=\"" << py(t)
      << "\" stroke=\"#e5e5e5\"/>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(t) + 4 << "\" text-anchor=\"end\">" << num(std::round(t / ys) * ys)
      << "</text>\n";
  }
  s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"" << H - 14 << "\" text-anchor=\"middle\">"
    << escape(chart.x_label) << "</text>\n";
  s << "<text transform=\"translate(18," << (T + (H - T - B) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(chart.y_label) << "</text>\n";

  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    auto pts = chart.series[i].points;
    std::sort(pts.begin(), pts.end());
    const auto* color = kColors[i % kColors.size()];
    if (pts.size() > 1) {
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const auto& [x, y] : pts) s << px(x) << ',' << py(y) << ' ';
      s << "\"/>\n";
    }
    for (const auto& [x, y] : pts) {
      s << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = T + 10 + 18.0 * static_cast<double>(i);
    s << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << escape(chart.series[i].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<RunRecord> load_records(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("records directory not found: " + dir.string());
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "summary.json") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<RunRecord> records;
  for (const auto& p : paths) records.push_back(read_summary(p));
  return records;
}

const EvalEvent& best_eval(const RunRecord& record) {
  for (const auto& e : record.evals) {
    if (e.iteration == record.best_iteration) return e;
  }
  throw DataError("run record has no evaluation at its best iteration");
}

ReportFiles write_report(const std::vector<RunRecord>& records, const fs::path& out_dir) {
  if (records.empty()) throw DataError("no run records to report");
  fs::create_directories(out_dir);
  ReportFiles files;

  std::size_t phases = 0;
  for (const auto& r : records) phases = std::max(phases, best_eval(r).dsc.size());

  {
    std::ostringstream csv;
    csv << "label,alpha,p,seed,best_iteration,best_error,accuracy";
    for (std::size_t ph = 0; ph < phases; ++ph) {
      for (const char* st : kStructureNames) csv << ",dsc_" << st << '_' << kPhaseNames[ph];
    }
    for (std::size_t ph = 0; ph < phases; ++ph) {
      for (const char* st : kStructureNames) csv << ",hd_mm_" << st << '_' << kPhaseNames[ph];
    }
    csv << '\n';
    for (const auto& r : records) {
      const auto& e = best_eval(r);
      csv << r.label() << ',' << num(r.alpha) << ',' << num(r.p) << ',' << r.seed << ',' << r.best_iteration << ','
          << num(r.best_error) << ',' << num(1.0 - r.best_error);
      for (std::size_t ph = 0; ph < phases; ++ph) {
        for (std::size_t s = 0; s < 3; ++s) csv << ',' << (ph < e.dsc.size() ? num(e.dsc[ph][s]) : "");
      }
      for (std::size_t ph = 0; ph < phases; ++ph) {
        for (std::size_t s = 0; s < 3; ++s) {
          csv << ',';
          if (ph < e.hausdorff_mm.size() && e.hausdorff_mm[ph][s]) csv << num(*e.hausdorff_mm[ph][s]);
        }
      }
      csv << '\n';
    }
    files.tables.push_back(out_dir / "sweep_summary.csv");
    write_file(files.tables.back(), csv.str());
  }
  {
    std::ostringstream csv;
    csv << "alpha,p,seed,iteration,error";
    for (std::size_t ph = 0; ph < phases; ++ph) {
      for (const char* st : kStructureNames) csv << ",dsc_" << st << '_' << kPhaseNames[ph];
    }
    csv << '\n';
    for (const auto& r : records) {
      for (const auto& e : r.evals) {
        csv << num(r.alpha) << ',' << num(r.p) << ',' << r.seed << ',' << e.iteration << ',' << num(e.error);
        for (std::size_t ph = 0; ph < phases; ++ph) {
          for (std::size_t s = 0; s < 3; ++s) csv << ',' << (ph < e.dsc.size() ? num(e.dsc[ph][s]) : "");
        }
        csv << '\n';
      }
    }
    files.tables.push_back(out_dir / "eval_series.csv");
    write_file(files.tables.back(), csv.str());
  }

  // Seeds grouped per (p, alpha).
  std::map<std::pair<double, double>, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) groups[{r.p, r.alpha}].push_back(&r);
  std::vector<double> ps;
  for (const auto& [key, _] : groups) {
    if (std::find(ps.begin(), ps.end(), key.first) == ps.end()) ps.push_back(key.first);
  }
  const bool many_p = ps.size() > 1;

  {
    std::ostringstream md;
    md << "| Model | alpha | p | runs | accuracy (mean) | best iteration (median) |\n";
    md << "|---|---|---|---|---|---|\n";
    for (const auto& [key, runs] : groups) {
      std::vector<double> acc, iters;
      for (const auto* r : runs) {
        acc.push_back(1.0 - r->best_error);
        iters.push_back(static_cast<double>(r->best_iteration));
      }
      double mean_acc = 0;
      for (double a : acc) mean_acc += a;
      mean_acc /= static_cast<double>(acc.size());
      const auto model = key.second == 1.0 ? std::string("Baseline") : std::string("Multi-task");
      md << "| " << model << " | " << num(key.second) << " | " << num(key.first) << " | " << runs.size() << " | "
         << fixed(mean_acc, 2) << " | " << num(median(iters)) << " |\n";
    }
    files.tables.push_back(out_dir / "accuracy_table.md");
    write_file(files.tables.back(), md.str());
  }

  if (records.size() < 2) {
    files.notice = "only one run record: wrote tables only, no plots";
    return files;
  }

  LineChart error{"Validation diagnostic error vs alpha", "alpha", "best validation error (median over seeds)", {}};
  LineChart best_iter{"Iteration of lowest error vs alpha", "alpha", "best iteration (median over seeds)", {}};
  LineChart dsc{"Dice vs alpha", "alpha", "DSC at best iteration (mean over seeds)", {}};
  LineChart hd{"Hausdorff distance vs alpha", "alpha", "Hausdorff (mm) at best iteration (mean over seeds)", {}};
  for (double p : ps) {
    PlotSeries e{"p=" + num(p), {}}, it{"p=" + num(p), {}};
    std::map<std::string, PlotSeries> dsc_series, hd_series;
    for (const auto& [key, runs] : groups) {
      if (key.first != p) continue;
      std::vector<double> errs, iters;
      std::vector<std::vector<double>> dsum(phases * 3), hsum(phases * 3);
      for (const auto* r : runs) {
        errs.push_back(r->best_error);
        iters.push_back(static_cast<double>(r->best_iteration));
        const auto& ev = best_eval(*r);
        for (std::size_t ph = 0; ph < ev.dsc.size(); ++ph) {
          for (std::size_t s = 0; s < 3; ++s) {
            dsum[ph * 3 + s].push_back(ev.dsc[ph][s]);
            if (ev.hausdorff_mm[ph][s]) hsum[ph * 3 + s].push_back(*ev.hausdorff_mm[ph][s]);
          }
        }
      }
      e.points.emplace_back(key.second, median(errs));
      it.points.emplace_back(key.second, median(iters));
      for (std::size_t i = 0; i < phases * 3; ++i) {
        const auto name = std::string(kStructureNames[i % 3]) + " " + kPhaseNames[i / 3] + p_suffix(p, many_p);
        auto mean = [](const std::vector<double>& v) {
          double t = 0;
          for (double x : v) t += x;
          return t / static_cast<double>(v.size());
        };
        dsc_series[name].name = name;
        hd_series[name].name = name;
        if (!dsum[i].empty()) dsc_series[name].points.emplace_back(key.second, mean(dsum[i]));
        if (!hsum[i].empty()) hd_series[name].points.emplace_back(key.second, mean(hsum[i]));
      }
    }
    error.series.push_back(e);
    best_iter.series.push_back(it);
    for (std::size_t i = 0; i < phases * 3; ++i) {
      const auto name = std::string(kStructureNames[i % 3]) + " " + kPhaseNames[i / 3] + p_suffix(p, many_p);
      dsc.series.push_back(dsc_series[name]);
      hd.series.push_back(hd_series[name]);
    }
  }
  const std::vector<std::pair<const char*, const LineChart*>> plots{{"error_vs_alpha.svg", &error},
                                                                     {"best_iteration_vs_alpha.svg", &best_iter},
                                                                     {"dsc_vs_alpha.svg", &dsc},
                                                                     {"hausdorff_vs_alpha.svg", &hd}};
  for (const auto& [name, chart] : plots) {
    files.plots.push_back(out_dir / name);
    write_file(files.plots.back(), render_svg(*chart));
  }
  return files;
}

}  // namespace cardiomt
