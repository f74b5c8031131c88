#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace eclip {

// Whitespace/lowercase word vocabulary. Id 0 is the unknown token.
class Vocabulary {
 public:
  static constexpr std::size_t kUnknown = 0;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);  // words[0] must be "<unk>"

  // Words in first-seen order over the corpus, capped at max_size entries
  // (including <unk>).
  static Vocabulary build(const std::vector<std::string>& corpus, std::size_t max_size);

  // Word ids, truncated to max_len.
  std::vector<std::size_t> encode(std::string_view text, std::size_t max_len) const;

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace eclip
