#pragma once

// Frozen sentiment scorers producing a 7-way emotion distribution per caption.
// Scores never enter the autodiff graph.

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace eclip {

inline constexpr std::size_t kNumEmotions = 7;

// Index order of every sentiment distribution. Neutral is last.
enum class Emotion : std::size_t { kAnger, kDisgust, kFear, kHappiness, kSadness, kSurprise, kNeutral };

const char* emotion_name(std::size_t index);

struct SentimentDistribution {
  std::array<double, kNumEmotions> p{};

  // Throws ValidationError unless entries are non-negative and sum to 1 ± 1e-6.
  void validate() const;
  std::size_t argmax() const;
  std::span<const double> span() const { return p; }
  bool operator==(const SentimentDistribution&) const = default;

  static SentimentDistribution uniform();
};

class SentimentScorer {
 public:
  virtual ~SentimentScorer() = default;
  virtual SentimentDistribution score(std::string_view text) const = 0;
};

// Keyword counting over a fixed lexicon, one word list per emotion. Logits are
// the hit counts per class plus one smoothing count on neutral; the result is
// softmax(logits) at temperature 1. Words outside the lexicon add nothing, so
// a caption without hits leans uniform with its peak on neutral.
class LexiconScorer final : public SentimentScorer {
 public:
  LexiconScorer();
  explicit LexiconScorer(std::array<std::vector<std::string>, kNumEmotions> lexicon);

  SentimentDistribution score(std::string_view text) const override;
  const std::array<std::vector<std::string>, kNumEmotions>& lexicon() const { return lexicon_; }

 private:
  std::array<std::vector<std::string>, kNumEmotions> lexicon_;
};

// Built-in word lists; the synthetic caption generator draws from these.
const std::array<std::vector<std::string>, kNumEmotions>& default_lexicon();

// Scores with the built-in LexiconScorer.
SentimentDistribution score_sentiment(std::string_view text);

// Lowercased whitespace tokens with surrounding punctuation stripped.
std::vector<std::string> split_words(std::string_view text);

}  // namespace eclip
