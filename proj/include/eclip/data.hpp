#pragma once

// Synthetic paired video/caption data, the on-disk dataset format and batch
// assembly.
//
// Dataset directory layout:
//   manifest.jsonl   one JSON object per clip:
//                    {"id", "frames", "masks", "caption", "sentiment"?, "label"?}
//                    with file paths relative to the manifest
//   *.evid           "EVID" | version u32 | T,H,W,C u32 (C=3) | u8 pixels
//   *.emsk           "EMSK" | version u32 | T,H,W,C u32 (C=1) | u8 {0,1}

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eclip/attention.hpp"
#include "eclip/model.hpp"
#include "eclip/sentiment.hpp"

namespace eclip {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct ClipRecord {
  std::string id;
  FrameInput frames;
  std::string caption;
  std::optional<SentimentDistribution> sentiment;
  std::optional<int> label;  // emotion class, probing only

  bool operator==(const ClipRecord&) const = default;
};

// Patch i (row-major, same order as patchify) belongs to P iff the fraction
// of subject pixels inside it exceeds `threshold`.
SubjectIndexSet mask_to_patch_indices(std::span<const std::uint8_t> mask, std::size_t height,
                                      std::size_t width, std::size_t patch_size, double threshold = 0.0);

// One subject set per frame of the clip.
std::vector<SubjectIndexSet> subjects_for(const FrameInput& clip, std::size_t patch_size,
                                          double threshold = 0.0);

// What carries the class in the synthetic video.
enum class Motif {
  kTexture,  // subject texture (equal colour statistics across classes)
  kColor,    // subject colour
  kOrder,    // the frame at which the subject's brightness cycle peaks
};

const char* to_string(Motif motif);
Motif parse_motif(const std::string& s);

struct SyntheticSpec {
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  Motif motif = Motif::kColor;
  std::size_t subject_min = 10;  // subject box side range, pixels
  std::size_t subject_max = 16;
  std::size_t distractors = 2;   // boxes showing a random class motif
  std::size_t distractor_size = 8;
  double noise = 0.04;           // per-pixel uniform noise amplitude
  std::size_t emotion_words_min = 2;
  std::size_t emotion_words_max = 3;
  bool store_sentiment = true;   // write scorer output into the manifest

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

// Deterministic in (n, spec, seed). Classes are drawn uniformly from the 7 emotions.
std::vector<ClipRecord> synthesize_records(std::size_t n, const SyntheticSpec& spec, std::uint64_t seed);
void generate_synthetic_dataset(const std::filesystem::path& dir, std::size_t n, const SyntheticSpec& spec,
                                std::uint64_t seed);

void write_dataset(const std::filesystem::path& dir, std::span<const ClipRecord> records);

std::vector<std::uint8_t> encode_frames_file(const FrameInput& clip);
std::vector<std::uint8_t> encode_masks_file(const FrameInput& clip);
// Fills pixels (and dims) or masks of `clip`; throws FormatError with offset.
void decode_frames_file(std::span<const std::uint8_t> bytes, FrameInput& clip, const std::string& context);
void decode_masks_file(std::span<const std::uint8_t> bytes, FrameInput& clip, const std::string& context);

// Streams records from a dataset directory one manifest line at a time.
class DatasetReader {
 public:
  explicit DatasetReader(std::filesystem::path dir);
  // Next record, or nullopt at end of manifest.
  std::optional<ClipRecord> next();

 private:
  std::filesystem::path dir_;
  std::ifstream manifest_;
  std::size_t line_ = 0;
};

std::vector<ClipRecord> load_dataset(const std::filesystem::path& dir);

enum class BatchStrategy { kShuffle, kClassCollision };
const char* to_string(BatchStrategy s);
BatchStrategy parse_batch_strategy(const std::string& s);

// Record indices of one batch; pair (i, i) is the positive.
struct Batch {
  std::vector<std::size_t> indices;
};

// Sentiment used for a record: the stored distribution, else the scorer.
SentimentDistribution record_sentiment(const ClipRecord& record, const SentimentScorer& scorer);

// Deterministic in seed; the trailing partial batch is dropped. The
// class-collision strategy groups records by the argmax of their sentiment
// and fills batches with same-group pairs.
std::vector<Batch> make_batches(std::span<const ClipRecord> records, std::size_t batch_size, std::uint64_t seed,
                                BatchStrategy strategy);

}  // namespace eclip
