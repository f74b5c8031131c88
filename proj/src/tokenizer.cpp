#include "eclip/tokenizer.hpp"

#include "eclip/error.hpp"
#include "eclip/sentiment.hpp"

namespace eclip {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<unk>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.empty() || words_.front() != "<unk>") {
    throw ValidationError("vocabulary must start with <unk>");
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second) {
      throw ValidationError("duplicate vocabulary word '" + words_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, std::size_t max_size) {
  std::vector<std::string> words{"<unk>"};
  std::unordered_map<std::string, std::size_t> seen{{"<unk>", 0}};
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) {
      if (words.size() >= max_size) break;
      if (seen.emplace(w, words.size()).second) words.push_back(w);
    }
  }
  return Vocabulary(std::move(words));
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text, std::size_t max_len) const {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) {
    if (ids.size() >= max_len) break;
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? kUnknown : it->second);
  }
  return ids;
}

}  // namespace eclip
