#include "cardiomt/evaluate.hpp"

#include <fstream>

#include "cardiomt/errors.hpp"

namespace cardiomt {
namespace {

LabelVolume argmax_labels(const torch::Tensor& logits) {
  // logits: (1, labels, slices, rows, cols)
  const auto idx = logits.argmax(1).squeeze(0).to(torch::kUInt8).contiguous();
  const Shape3 shape{idx.size(0), idx.size(1), idx.size(2)};
  const auto* p = idx.data_ptr<std::uint8_t>();
  return LabelVolume(shape, std::vector<std::uint8_t>(p, p + shape.voxels()));
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

torch::Tensor input_tensor(std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("empty sample batch");
  const auto shape = samples.front().input[0].shape();
  auto out = torch::empty({static_cast<std::int64_t>(samples.size()), 3, shape.slices, shape.rows, shape.cols});
  auto* dst = out.data_ptr<float>();
  for (const auto& s : samples) {
    for (const auto& ch : s.input) {
      if (!(ch.shape() == shape)) throw DataError("inconsistent sample shapes in batch");
      dst = std::copy(ch.data().begin(), ch.data().end(), dst);
    }
  }
  return out;
}

torch::Tensor onehot_tensor(std::span<const Sample> samples, int phase) {
  if (samples.empty()) throw std::invalid_argument("empty sample batch");
  const auto shape = samples.front().input[0].shape();
  auto labels = torch::empty({static_cast<std::int64_t>(samples.size()), shape.slices, shape.rows, shape.cols},
                             torch::TensorOptions().dtype(torch::kLong));
  auto* dst = labels.data_ptr<std::int64_t>();
  for (const auto& s : samples) {
    if (phase >= static_cast<int>(s.seg_labels.size())) {
      throw DataError(s.patient_id + ": no segmentation target for phase " + std::to_string(phase));
    }
    const auto& m = s.seg_labels[static_cast<std::size_t>(phase)];
    dst = std::copy(m.data().begin(), m.data().end(), dst);
  }
  return torch::one_hot(labels, kNumLabels).permute({0, 4, 1, 2, 3}).to(torch::kFloat32).contiguous();
}

torch::Tensor diagnosis_tensor(std::span<const Sample> samples) {
  std::vector<std::int64_t> t;
  for (const auto& s : samples) t.push_back(s.diag_target);
  return torch::tensor(t, torch::TensorOptions().dtype(torch::kLong));
}

Predictor model_predictor(MultiTaskNet model) {
  return [model](const torch::Tensor& input) mutable {
    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    auto out = model->forward(input);
    if (was_training) model->train();
    return out;
  };
}

StudyEvaluation evaluate_study(const Predictor& predictor, const PreparedStudy& study, std::int64_t slab_depth,
                               int num_phases) {
  const auto sample = center_slab(study, slab_depth, num_phases);
  const auto out = predictor(input_tensor(std::span(&sample, 1)));

  StudyEvaluation eval;
  eval.slab_start = sample.slab_start;
  const auto probs = torch::softmax(out.diag_logits.to(torch::kFloat64), 1).squeeze(0).contiguous();
  for (int c = 0; c < kNumDiagnoses; ++c) eval.probabilities[static_cast<std::size_t>(c)] = probs[c].item<double>();
  const auto predicted = static_cast<int>(probs.argmax().item<std::int64_t>());
  eval.diagnosis = {study.patient_id, sample.diag_target, predicted, eval.probabilities[static_cast<std::size_t>(predicted)]};

  if (!sample.seg_labels.empty()) {
    std::vector<LabelVolume> predictions;
    for (std::size_t ph = 0; ph < sample.seg_labels.size(); ++ph) {
      const auto& logits = out.phase_logits(static_cast<int>(ph));
      if (!logits.defined()) break;
      predictions.push_back(argmax_labels(logits));
    }
    eval.segmentation = score_segmentation(predictions, sample.seg_labels, study.spacing);
  }
  return eval;
}

StudyEvaluation evaluate_study(const Predictor& predictor, const CineStudy& study, const PreprocConfig& config) {
  return evaluate_study(predictor, prepare_study(study, config), config.slab_depth, config.num_phases());
}

double EvaluationReport::macro_dsc() const {
  double sum = 0;
  int n = 0;
  for (const auto& phase : aggregates) {
    for (const auto& s : phase) {
      sum += s.mean_dsc;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

EvaluationReport evaluate_all(const Predictor& predictor, std::span<const PreparedStudy> studies,
                              std::int64_t slab_depth, int num_phases) {
  EvaluationReport report;
  std::vector<CaseDiagnosis> cases;
  std::array<std::array<std::vector<double>, 3>, 2> dsc;
  std::array<std::array<std::vector<std::optional<double>>, 3>, 2> hd;
  std::size_t phases_seen = 0;
  for (const auto& study : studies) {
    auto eval = evaluate_study(predictor, study, slab_depth, num_phases);
    cases.push_back(eval.diagnosis);
    if (eval.segmentation) {
      ++report.cases_with_segmentation;
      const auto& phases = eval.segmentation->phases;
      phases_seen = std::max(phases_seen, phases.size());
      for (std::size_t ph = 0; ph < phases.size(); ++ph) {
        for (std::size_t s = 0; s < 3; ++s) {
          dsc[ph][s].push_back(phases[ph][s].dsc);
          hd[ph][s].push_back(phases[ph][s].hausdorff_mm);
        }
      }
    }
    report.cases.push_back(std::move(eval));
  }
  report.diagnosis = diagnostic_error(std::move(cases));
  for (std::size_t ph = 0; ph < phases_seen; ++ph) {
    std::array<StructureAggregate, 3> agg;
    for (std::size_t s = 0; s < 3; ++s) {
      double sum = 0;
      for (double d : dsc[ph][s]) sum += d;
      agg[s].mean_dsc = dsc[ph][s].empty() ? 0.0 : sum / static_cast<double>(dsc[ph][s].size());
      agg[s].hausdorff = aggregate(hd[ph][s]);
    }
    report.aggregates.push_back(agg);
  }
  return report;
}

nlohmann::json to_json(const EvaluationReport& report) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : report.cases) {
    nlohmann::json row{{"patient_id", c.diagnosis.patient_id},
                       {"truth", diagnosis_name(static_cast<Diagnosis>(c.diagnosis.truth))},
                       {"predicted", diagnosis_name(static_cast<Diagnosis>(c.diagnosis.predicted))},
                       {"confidence", c.diagnosis.confidence},
                       {"probabilities", c.probabilities},
                       {"slab_start", c.slab_start}};
    if (c.segmentation) {
      nlohmann::json seg = nlohmann::json::object();
      for (std::size_t ph = 0; ph < c.segmentation->phases.size(); ++ph) {
        for (std::size_t s = 0; s < 3; ++s) {
          const auto& score = c.segmentation->phases[ph][s];
          seg[std::string(kStructureNames[s]) + "_" + kPhaseNames[ph]] = {
              {"dsc", score.dsc}, {"hausdorff_mm", optional_json(score.hausdorff_mm)}};
        }
      }
      row["segmentation"] = seg;
    }
    cases.push_back(row);
  }
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& r : report.diagnosis.confusion) confusion.push_back(r);

  nlohmann::json aggregate_block{{"cases", report.cases.size()},
                                 {"accuracy", report.diagnosis.accuracy},
                                 {"diagnostic_error", report.diagnosis.error},
                                 {"confusion", confusion},
                                 {"class_order", {"NOR", "DCM", "HCM", "MINF", "ARV"}}};
  if (!report.aggregates.empty()) {
    nlohmann::json seg = nlohmann::json::object();
    for (std::size_t ph = 0; ph < report.aggregates.size(); ++ph) {
      for (std::size_t s = 0; s < 3; ++s) {
        const auto& a = report.aggregates[ph][s];
        seg[std::string(kStructureNames[s]) + "_" + kPhaseNames[ph]] = {
            {"mean_dsc", a.mean_dsc},
            {"mean_hausdorff_mm", a.hausdorff.defined > 0 ? nlohmann::json(a.hausdorff.mean) : nlohmann::json(nullptr)},
            {"hausdorff_undefined", a.hausdorff.undefined}};
      }
    }
    aggregate_block["segmentation"] = seg;
    aggregate_block["cases_with_segmentation"] = report.cases_with_segmentation;
    aggregate_block["macro_dsc"] = report.macro_dsc();
  }
  return {{"cases", cases}, {"aggregate", aggregate_block}};
}

void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "patient_id,truth,predicted,confidence,structure,phase,dsc,hausdorff_mm\n";
  for (const auto& c : report.cases) {
    const auto prefix = c.diagnosis.patient_id + "," +
                        std::string(diagnosis_name(static_cast<Diagnosis>(c.diagnosis.truth))) + "," +
                        std::string(diagnosis_name(static_cast<Diagnosis>(c.diagnosis.predicted))) + "," +
                        std::to_string(c.diagnosis.confidence);
    if (!c.segmentation) {
      out << prefix << ",,,,\n";
      continue;
    }
    for (std::size_t ph = 0; ph < c.segmentation->phases.size(); ++ph) {
      for (std::size_t s = 0; s < 3; ++s) {
        const auto& score = c.segmentation->phases[ph][s];
        out << prefix << ',' << kStructureNames[s] << ',' << kPhaseNames[ph] << ',' << score.dsc << ',';
        if (score.hausdorff_mm) out << *score.hausdorff_mm;
        out << '\n';
      }
    }
  }
}

}  // namespace cardiomt
