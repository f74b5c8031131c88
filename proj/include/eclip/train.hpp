#pragma once

// Contrastive training loop and its configuration.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eclip/config.hpp"
#include "eclip/data.hpp"
#include "eclip/loss.hpp"
#include "eclip/model.hpp"

namespace eclip {

struct TrainConfig {
  ModelConfig model;
  double beta = 1.0;
  double kl_epsilon = kDefaultKlEpsilon;
  double lr = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 16;
  std::size_t epochs = 5;
  std::uint64_t seed = 0;
  BatchStrategy batch_strategy = BatchStrategy::kShuffle;
  double mask_threshold = 0.0;
  std::string checkpoint_path;  // written after the last epoch when non-empty
  std::string log_path;         // JSON-lines step log when non-empty

  // Throws ValidationError.
  void validate() const;
};

// Flat JSON object: every ModelConfig key plus the training keys above.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

// Adam with decoupled weight decay. Decay applies to tensors whose name ends
// in ".weight"; embeddings, gains, biases and scalars are not decayed.
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double weight_decay);
  // One update from the gradients currently stored on the tensors.
  void step(const std::vector<std::pair<std::string, Tensor>>& params);
  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global, from 0
  std::size_t batch = 0; // index within the epoch
  double loss = 0.0;
  double inverse_tau = 0.0;
};

struct TrainResult {
  EmotionClipModel model;
  std::vector<StepLog> log;
  double seconds = 0.0;

  // Mean step loss of every epoch.
  std::vector<double> epoch_losses() const;
};

// Precomputed encoder inputs for one record.
struct EncodedRecord {
  VideoInput video;
  std::vector<std::size_t> tokens;
  SentimentDistribution sentiment;
};

std::vector<EncodedRecord> encode_records(const EmotionClipModel& model, std::span<const ClipRecord> records,
                                          double mask_threshold);

// Deterministic in (config, records). The vocabulary is built from the
// captions; labels are never read. Throws TrainingError on a non-finite loss.
TrainResult train(const TrainConfig& config, std::span<const ClipRecord> records, std::ostream* progress = nullptr);

// Clip embeddings v (N×d, unit rows) under frozen weights.
Tensor extract_video_features(const EmotionClipModel& model, std::span<const ClipRecord> records,
                              double mask_threshold = 0.0, std::size_t chunk = 32);

}  // namespace eclip
