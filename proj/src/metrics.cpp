#include "eclip/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "eclip/error.hpp"

namespace eclip {

const char* to_string(ProbeTask task) {
  switch (task) {
    case ProbeTask::kMultilabel: return "multilabel";
    case ProbeTask::kMulticlass: return "multiclass";
    case ProbeTask::kRegression: return "regression";
  }
  return "?";
}

ProbeTask parse_probe_task(const std::string& s) {
  if (s == "multilabel") return ProbeTask::kMultilabel;
  if (s == "multiclass") return ProbeTask::kMulticlass;
  if (s == "regression") return ProbeTask::kRegression;
  throw ValidationError("unknown task '" + s + "' (multilabel|multiclass|regression)");
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json::object();
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("map", r.map);
  put("auc", r.auc);
  put("r2", r.r2);
  put("accuracy", r.accuracy);
  put("weighted_f1", r.weighted_f1);
  put("mse", r.mse);
  if (!r.notes.empty()) j["notes"] = r.notes;
}

std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty()) return std::nullopt;
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

namespace {

std::size_t argmax(const std::vector<double>& row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

MetricReport multilabel(const Matrix& scores, const Matrix& labels, std::size_t K) {
  MetricReport r;
  double ap_sum = 0.0, auc_sum = 0.0;
  std::size_t ap_n = 0, auc_n = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> s(scores.size());
    std::vector<int> y(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][k];
      if (labels[i][k] != 0.0 && labels[i][k] != 1.0) throw ValidationError("multilabel labels must be 0/1");
      y[i] = labels[i][k] != 0.0;
    }
    if (auto ap = average_precision(s, y)) {
      ap_sum += *ap;
      ++ap_n;
    } else {
      r.notes.push_back("class " + std::to_string(k) + " has no positives; skipped in map/auc");
      continue;
    }
    if (auto auc = roc_auc(s, y)) {
      auc_sum += *auc;
      ++auc_n;
    } else {
      r.notes.push_back("class " + std::to_string(k) + " has no negatives; skipped in auc");
    }
  }
  if (ap_n) r.map = ap_sum / static_cast<double>(ap_n);
  if (auc_n) r.auc = auc_sum / static_cast<double>(auc_n);
  return r;
}

MetricReport multiclass(const Matrix& scores, const Matrix& labels, std::size_t K) {
  std::vector<double> tp(K, 0.0), predicted(K, 0.0), support(K, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t p = argmax(scores[i]), y = argmax(labels[i]);
    predicted[p] += 1.0;
    support[y] += 1.0;
    if (p == y) {
      tp[y] += 1.0;
      correct += 1.0;
    }
  }
  double f1 = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (support[k] == 0.0) continue;
    const double precision = predicted[k] > 0.0 ? tp[k] / predicted[k] : 0.0;
    const double recall = tp[k] / support[k];
    const double f = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    f1 += support[k] * f;
  }
  MetricReport r;
  const double n = static_cast<double>(scores.size());
  r.accuracy = correct / n;
  r.weighted_f1 = f1 / n;
  return r;
}

MetricReport regression(const Matrix& pred, const Matrix& target, std::size_t K) {
  const double n = static_cast<double>(pred.size());
  double r2_sum = 0.0, sq = 0.0;
  std::size_t r2_n = 0;
  MetricReport r;
  for (std::size_t k = 0; k < K; ++k) {
    double mean = 0.0;
    for (const auto& row : target) mean += row[k];
    mean /= n;
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      ss_res += (target[i][k] - pred[i][k]) * (target[i][k] - pred[i][k]);
      ss_tot += (target[i][k] - mean) * (target[i][k] - mean);
    }
    sq += ss_res;
    if (ss_tot > 0.0) {
      r2_sum += 1.0 - ss_res / ss_tot;
      ++r2_n;
    } else {
      r.notes.push_back("output " + std::to_string(k) + " has constant target; skipped in r2");
    }
  }
  if (r2_n) r.r2 = r2_sum / static_cast<double>(r2_n);
  r.mse = sq / (n * static_cast<double>(K));
  return r;
}

}  // namespace

MetricReport compute_metrics(const Matrix& scores, const Matrix& labels, ProbeTask task) {
  if (scores.empty()) throw ValidationError("compute_metrics: no samples");
  if (scores.size() != labels.size()) {
    throw ValidationError("compute_metrics: " + std::to_string(scores.size()) + " score rows vs " +
                          std::to_string(labels.size()) + " label rows");
  }
  const std::size_t K = scores.front().size();
  if (K == 0) throw ValidationError("compute_metrics: zero-width scores");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != K || labels[i].size() != K) {
      throw ValidationError("compute_metrics: ragged row " + std::to_string(i));
    }
  }
  switch (task) {
    case ProbeTask::kMultilabel: return multilabel(scores, labels, K);
    case ProbeTask::kMulticlass: return multiclass(scores, labels, K);
    case ProbeTask::kRegression: return regression(scores, labels, K);
  }
  throw ValidationError("compute_metrics: unknown task");
}

}  // namespace eclip
