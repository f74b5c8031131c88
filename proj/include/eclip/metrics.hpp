#pragma once

// Evaluation metrics for multilabel, multiclass and regression probes.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace eclip {

enum class ProbeTask { kMultilabel, kMulticlass, kRegression };
const char* to_string(ProbeTask task);
ProbeTask parse_probe_task(const std::string& s);

using Matrix = std::vector<std::vector<double>>;  // rows = samples

struct MetricReport {
  std::optional<double> map;          // mean average precision
  std::optional<double> auc;          // mean ROC area
  std::optional<double> r2;           // averaged over output dims
  std::optional<double> accuracy;     // top-1
  std::optional<double> weighted_f1;  // support-weighted
  std::optional<double> mse;
  std::vector<std::string> notes;     // e.g. classes skipped for lack of positives
};

void to_json(nlohmann::json& j, const MetricReport& r);

// Average precision of one class: mean of precision@k over the ranks k of
// the positives when sorted by descending score (ties keep sample order).
// Returns nullopt when there are no positives.
std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<int>& labels);
// Mann-Whitney ROC area, ties count ½. nullopt without both positives and negatives.
std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// scores: N×K. labels: multilabel N×K in {0,1}; multiclass N×K one-hot
// (argmax taken); regression N×K real targets with scores the predictions.
// Throws ValidationError on misaligned inputs.
MetricReport compute_metrics(const Matrix& scores, const Matrix& labels, ProbeTask task);

}  // namespace eclip
