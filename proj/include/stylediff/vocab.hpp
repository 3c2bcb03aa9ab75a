#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylediff/errors.hpp"

namespace stylediff {

// Word table shared by prompts and the dataset pipeline. Token ids:
//   0 = null token (empty prompt), 1 = UNK, then subject words, then style
//   words. Vocabulary entries may be multi-word ("oil painting"); the
//   tokenizer prefers whole comma-separated segments over per-word lookup.
class Vocabulary {
 public:
  static constexpr int kNullId = 0;
  static constexpr int kUnkId = 1;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> subject_words, std::vector<std::string> style_words);

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  const std::vector<std::string>& subject_words() const { return subjects_; }
  const std::vector<std::string>& style_words() const { return styles_; }

  int size() const { return 2 + static_cast<int>(subjects_.size() + styles_.size()); }

  std::optional<int> id_of(const std::string& word) const;
  const std::string& word_of(int id) const;

  bool is_subject_id(int id) const {
    return id >= 2 && id < 2 + static_cast<int>(subjects_.size());
  }
  bool is_style_id(int id) const {
    return id >= 2 + static_cast<int>(subjects_.size()) && id < size();
  }

  int subject_id(int index) const { return 2 + index; }
  int style_id(int index) const { return 2 + static_cast<int>(subjects_.size()) + index; }
  // inverse of the two above; throws if id is not of the requested class
  int subject_index(int id) const;
  int style_index(int id) const;

 private:
  std::vector<std::string> subjects_;
  std::vector<std::string> styles_;
  std::unordered_map<std::string, int> ids_;
};

// Comma segments are looked up whole first, then word by word; unknown words
// map to UNK, an empty prompt to the null token. Total function.
std::vector<int> tokenize(const std::string& prompt, const Vocabulary& vocab);

// Desk-scale default vocabulary: 12 subject shapes, 24 style names.
Vocabulary default_vocabulary();

}  // namespace stylediff
