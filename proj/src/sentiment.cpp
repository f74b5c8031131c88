#include "eclip/sentiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "eclip/error.hpp"

namespace eclip {

const char* emotion_name(std::size_t index) {
  static constexpr const char* kNames[kNumEmotions] = {"anger",   "disgust",  "fear",   "happiness",
                                                       "sadness", "surprise", "neutral"};
  return index < kNumEmotions ? kNames[index] : "?";
}

void SentimentDistribution::validate() const {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("sentiment entry must be finite and >= 0");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) {
    throw ValidationError("sentiment distribution sums to " + std::to_string(s));
  }
}

std::size_t SentimentDistribution::argmax() const {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

SentimentDistribution SentimentDistribution::uniform() {
  SentimentDistribution s;
  s.p.fill(1.0 / kNumEmotions);
  return s;
}

const std::array<std::vector<std::string>, kNumEmotions>& default_lexicon() {
  static const std::array<std::vector<std::string>, kNumEmotions> kLexicon = {{
      {"angry", "furious", "rage", "mad", "irritated", "annoyed", "hostile"},
      {"disgusted", "gross", "revolting", "nasty", "repulsed", "sickening", "vile"},
      {"afraid", "scared", "terrified", "fearful", "nervous", "anxious", "panicked"},
      {"happy", "joyful", "delighted", "cheerful", "glad", "pleased", "thrilled"},
      {"sad", "unhappy", "sorrowful", "miserable", "gloomy", "heartbroken", "depressed"},
      {"surprised", "amazed", "astonished", "shocked", "stunned", "startled", "unexpected"},
      {"calm", "neutral", "composed", "indifferent", "steady", "plain", "ordinary"},
  }};
  return kLexicon;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&]() {
    auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
    while (!cur.empty() && is_punct(cur.back())) cur.pop_back();
    std::size_t start = 0;
    while (start < cur.size() && is_punct(cur[start])) ++start;
    if (start < cur.size()) words.push_back(cur.substr(start));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return words;
}

LexiconScorer::LexiconScorer() : lexicon_(default_lexicon()) {}

LexiconScorer::LexiconScorer(std::array<std::vector<std::string>, kNumEmotions> lexicon)
    : lexicon_(std::move(lexicon)) {}

SentimentDistribution LexiconScorer::score(std::string_view text) const {
  std::array<double, kNumEmotions> logits{};
  logits[static_cast<std::size_t>(Emotion::kNeutral)] = 1.0;
  for (const auto& w : split_words(text)) {
    for (std::size_t k = 0; k < kNumEmotions; ++k) {
      if (std::find(lexicon_[k].begin(), lexicon_[k].end(), w) != lexicon_[k].end()) logits[k] += 1.0;
    }
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  SentimentDistribution s;
  double z = 0.0;
  for (std::size_t k = 0; k < kNumEmotions; ++k) {
    s.p[k] = std::exp(logits[k] - mx);
    z += s.p[k];
  }
  for (auto& v : s.p) v /= z;
  return s;
}

SentimentDistribution score_sentiment(std::string_view text) {
  static const LexiconScorer kScorer;
  return kScorer.score(text);
}

}  // namespace eclip
