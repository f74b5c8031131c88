#pragma once

// Linear-probe evaluation of frozen clip embeddings.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "eclip/data.hpp"
#include "eclip/metrics.hpp"
#include "eclip/model.hpp"

namespace eclip {

struct ProbeOptions {
  std::uint64_t seed = 0;       // train/test split
  double train_fraction = 0.8;
  std::size_t max_steps = 10000;
  double tolerance = 1e-6;      // gradient-norm stop
  double l2 = 1e-4;             // ridge on weights (not bias) of logistic probes
  double mask_threshold = 0.0;
};

struct ProbeResult {
  MetricReport report;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t steps = 0;  // gradient steps taken (0 for regression)
};

// Valence, arousal, dominance per emotion class, in [0, 1]; the regression
// probe target for a labelled clip.
const std::array<std::array<double, 3>, kNumEmotions>& emotion_vad();

// Targets for `task` from the record labels: one-hot rows for the
// classification tasks, VAD rows for regression. Throws ValidationError when
// a record has no label.
Matrix probe_targets(std::span<const ClipRecord> records, ProbeTask task);

// Fits one linear layer on a seeded split of (features, targets) and reports
// metrics on the held-out part. Features are standardized with train-split
// statistics. Classification uses logistic regression (softmax for
// multiclass, per-class sigmoid for multilabel) by full-batch gradient
// descent; regression uses least squares.
ProbeResult fit_probe(const Matrix& features, const Matrix& targets, ProbeTask task, const ProbeOptions& options = {});

// Extracts v for every record with frozen weights, then fit_probe.
ProbeResult linear_probe(const EmotionClipModel& model, std::span<const ClipRecord> records, ProbeTask task,
                         const ProbeOptions& options = {});

}  // namespace eclip
