#include "eclip/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "eclip/error.hpp"
#include "eclip/loss.hpp"

namespace eclip {

namespace {

const std::set<std::string> kTrainKeys = {
    "beta",         "kl_epsilon", "lr",     "adam_beta1", "adam_beta2",     "adam_eps",       "weight_decay",
    "batch_size",   "epochs",     "seed",   "batch_strategy", "mask_threshold", "checkpoint_path", "log_path"};

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("train config: lr must be positive");
  if (epochs == 0) throw ValidationError("train config: epochs must be at least 1");
  if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("train config: beta must be non-negative");
  if (!(kl_epsilon >= 0.0)) throw ValidationError("train config: kl_epsilon must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ValidationError("train config: moment decays must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("train config: adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("train config: weight_decay must be non-negative");
  if (!(mask_threshold >= 0.0 && mask_threshold < 1.0)) {
    throw ValidationError("train config: mask_threshold must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = c.model;
  j["beta"] = c.beta;
  j["kl_epsilon"] = c.kl_epsilon;
  j["lr"] = c.lr;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["batch_strategy"] = to_string(c.batch_strategy);
  j["mask_threshold"] = c.mask_threshold;
  j["checkpoint_path"] = c.checkpoint_path;
  j["log_path"] = c.log_path;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  nlohmann::json model_part = nlohmann::json::object();
  for (const auto& [key, value] : j.items()) {
    if (!kTrainKeys.count(key)) model_part[key] = value;
  }
  from_json(model_part, c.model);
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("beta", c.beta);
    get("kl_epsilon", c.kl_epsilon);
    get("lr", c.lr);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("weight_decay", c.weight_decay);
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("seed", c.seed);
    get("mask_threshold", c.mask_threshold);
    get("checkpoint_path", c.checkpoint_path);
    get("log_path", c.log_path);
    if (j.contains("batch_strategy")) c.batch_strategy = parse_batch_strategy(j.at("batch_strategy"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  TrainConfig c = j.get<TrainConfig>();
  c.validate();
  return c;
}

// ---- optimizer -----------------------------------------------------------

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(const std::vector<std::pair<std::string, Tensor>>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, tensor] : params) {
    Tensor p = tensor;
    if (!p.has_grad()) continue;
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(p.numel(), 0.0);
      st.v.assign(p.numel(), 0.0);
    }
    const double decay = ends_with(name, ".weight") ? weight_decay_ : 0.0;
    auto value = p.mutable_data();
    const auto grad = p.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * grad[i];
      st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double mhat = st.m[i] / c1, vhat = st.v[i] / c2;
      value[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + decay * value[i]);
    }
  }
}

// ---- training ------------------------------------------------------------

std::vector<double> TrainResult::epoch_losses() const {
  std::vector<double> sums, counts;
  for (const auto& s : log) {
    if (s.epoch >= sums.size()) {
      sums.resize(s.epoch + 1, 0.0);
      counts.resize(s.epoch + 1, 0.0);
    }
    sums[s.epoch] += s.loss;
    counts[s.epoch] += 1.0;
  }
  for (std::size_t e = 0; e < sums.size(); ++e) sums[e] /= counts[e] > 0 ? counts[e] : 1.0;
  return sums;
}

std::vector<EncodedRecord> encode_records(const EmotionClipModel& model, std::span<const ClipRecord> records,
                                          double mask_threshold) {
  const LexiconScorer scorer;
  std::vector<EncodedRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    EncodedRecord e;
    e.video.frames = &r.frames;
    e.video.subjects = subjects_for(r.frames, model.config().patch_size, mask_threshold);
    e.tokens = model.tokenize(r.caption);
    e.sentiment = record_sentiment(r, scorer);
    out.push_back(std::move(e));
  }
  return out;
}

TrainResult train(const TrainConfig& config, std::span<const ClipRecord> records, std::ostream* progress) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();

  EmotionClipModel model(config.model, config.seed);
  std::vector<std::string> corpus;
  corpus.reserve(records.size());
  for (const auto& r : records) corpus.push_back(r.caption);
  model.set_vocabulary(Vocabulary::build(corpus, config.model.vocab_size));

  const auto encoded = encode_records(model, records, config.mask_threshold);
  AdamW opt(config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay);
  const auto params = model.trainable();

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, std::ios::trunc);
    if (!log_file) throw ValidationError("cannot write log " + config.log_path);
  }

  std::vector<StepLog> log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(records, config.batch_size, config.seed * 1000003ULL + epoch,
                                      config.batch_strategy);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b].indices;
      std::vector<VideoInput> videos;
      std::vector<std::vector<std::size_t>> tokens;
      std::vector<SentimentDistribution> sentiments;
      for (auto i : idx) {
        videos.push_back(encoded[i].video);
        tokens.push_back(encoded[i].tokens);
        sentiments.push_back(encoded[i].sentiment);
      }
      for (const auto& [name, p] : params) Tensor(p).zero_grad();

      Graph g;
      const Tensor v = model.encode_video(g, videos);
      const Tensor t = model.encode_text(g, tokens);
      const Tensor inv_tau = model.inverse_temperature(g);
      const Tensor logits = similarity_logits(g, v, t, inv_tau);
      const Tensor loss = total_loss(g, logits, reweight_matrix(sentiments, config.beta, config.kl_epsilon));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::string ids;
        for (auto i : idx) ids += (ids.empty() ? "" : ",") + records[i].id;
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                            " (step " + std::to_string(step) + "); clips: " + ids);
      }
      g.backward(loss);
      opt.step(params);

      const StepLog entry{epoch, step, b, value, inv_tau.item()};
      log.push_back(entry);
      if (log_file) {
        log_file << nlohmann::json{{"epoch", entry.epoch},
                                   {"step", entry.step},
                                   {"batch", entry.batch},
                                   {"loss", entry.loss},
                                   {"inverse_tau", entry.inverse_tau}}
                        .dump()
                 << '\n';
      }
      ++step;
    }
    if (progress) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& s : log)
        if (s.epoch == epoch) sum += s.loss, ++count;
      *progress << "epoch " << epoch + 1 << "/" << config.epochs << " loss " << (count ? sum / count : 0.0)
                << '\n';
    }
  }

  for (const auto& [name, p] : params) Tensor(p).clear_grad();
  if (!config.checkpoint_path.empty()) model.save(config.checkpoint_path);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return TrainResult{std::move(model), std::move(log), seconds};
}

Tensor extract_video_features(const EmotionClipModel& model, std::span<const ClipRecord> records,
                              double mask_threshold, std::size_t chunk) {
  if (records.empty()) throw ValidationError("extract_video_features: no records");
  if (chunk == 0) chunk = 1;
  const auto encoded = encode_records(model, records, mask_threshold);
  const std::size_t d = model.config().d;
  std::vector<double> out;
  out.reserve(records.size() * d);
  for (std::size_t start = 0; start < encoded.size(); start += chunk) {
    const std::size_t end = std::min(encoded.size(), start + chunk);
    std::vector<VideoInput> videos;
    for (std::size_t i = start; i < end; ++i) videos.push_back(encoded[i].video);
    Graph g;
    const Tensor v = model.encode_video(g, videos);
    out.insert(out.end(), v.data().begin(), v.data().end());
  }
  return Tensor({records.size(), d}, std::move(out));
}

}  // namespace eclip
