// Word-level vocabulary with reserved control tokens.
//
// Ids are stable for a fixed word list: [PAD]=0, [MASK]=1, [EOS]=2, then
// the remaining words sorted. Object words carry a noun flag so heads that
// score "is this an object word" can read it off directly.
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace cdet {

class Vocabulary {
 public:
  Vocabulary() = default;

  // `words` may contain duplicates and any casing; nouns must be a subset.
  static Vocabulary build(const std::vector<std::string>& words,
                          const std::vector<std::string>& nouns);
  // Rebuild from an exact id-ordered word list (checkpoint restore).
  static Vocabulary from_ordered(const std::vector<std::string>& ordered_words,
                                 const std::vector<bool>& noun_flags);

  int size() const { return static_cast<int>(words_.size()); }
  int pad_id() const { return 0; }
  int mask_id() const { return 1; }
  int eos_id() const { return 2; }

  int id_of(const std::string& word) const;  // throws listing the word
  bool contains(const std::string& word) const;
  const std::string& word_of(int id) const;
  bool is_noun(int id) const;
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<bool>& noun_flags() const { return noun_; }
  std::vector<int> noun_ids() const;

  // Lowercases, splits on whitespace, and makes each of . , ! ? ; : its own
  // token. Bracketed control tokens ([MASK] etc.) pass through case-blind.
  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;  // space joined

 private:
  std::vector<std::string> words_;
  std::vector<bool> noun_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace cdet
