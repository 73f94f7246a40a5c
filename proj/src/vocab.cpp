#include "cdet/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace cdet {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string upper(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

bool is_punct_token(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

}  // namespace

Vocabulary Vocabulary::build(const std::vector<std::string>& words,
                             const std::vector<std::string>& nouns) {
  std::set<std::string> unique;
  for (const auto& w : words) {
    if (!w.empty()) unique.insert(lower(w));
  }
  std::set<std::string> noun_set;
  for (const auto& n : nouns) noun_set.insert(lower(n));
  for (const auto& n : noun_set) {
    if (!unique.count(n)) {
      throw std::invalid_argument("Vocabulary: noun '" + n + "' missing from word list");
    }
  }

  Vocabulary v;
  v.words_ = {"[PAD]", "[MASK]", "[EOS]"};
  v.noun_ = {false, false, false};
  for (const auto& w : unique) {
    v.words_.push_back(w);
    v.noun_.push_back(noun_set.count(w) > 0);
  }
  for (size_t i = 0; i < v.words_.size(); ++i) {
    v.index_[v.words_[i]] = static_cast<int>(i);
  }
  return v;
}

Vocabulary Vocabulary::from_ordered(const std::vector<std::string>& ordered_words,
                                    const std::vector<bool>& noun_flags) {
  if (ordered_words.size() != noun_flags.size()) {
    throw std::invalid_argument("Vocabulary: word/flag count mismatch");
  }
  if (ordered_words.size() < 3 || ordered_words[0] != "[PAD]" || ordered_words[1] != "[MASK]" ||
      ordered_words[2] != "[EOS]") {
    throw std::invalid_argument("Vocabulary: ordered list must start [PAD],[MASK],[EOS]");
  }
  Vocabulary v;
  v.words_ = ordered_words;
  v.noun_ = noun_flags;
  for (size_t i = 0; i < v.words_.size(); ++i) {
    if (v.index_.count(v.words_[i])) {
      throw std::invalid_argument("Vocabulary: duplicate word '" + v.words_[i] + "'");
    }
    v.index_[v.words_[i]] = static_cast<int>(i);
  }
  return v;
}

int Vocabulary::id_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) {
    throw std::out_of_range("vocabulary: word '" + word + "' is out of vocabulary");
  }
  return it->second;
}

bool Vocabulary::contains(const std::string& word) const { return index_.count(word) > 0; }

const std::string& Vocabulary::word_of(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return words_[static_cast<size_t>(id)];
}

bool Vocabulary::is_noun(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return noun_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::noun_ids() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (noun_[static_cast<size_t>(i)]) out.push_back(i);
  }
  return out;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> ids;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      ids.push_back(id_of(cur));
      cur.clear();
    }
  };
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_punct_token(c)) {
      flush();
      ids.push_back(id_of(std::string(1, c)));
    } else if (c == '[') {
      flush();
      size_t close = text.find(']', i);
      if (close == std::string::npos) {
        throw std::invalid_argument("tokenize: unterminated '[' control token");
      }
      ids.push_back(id_of(upper(text.substr(i, close - i + 1))));
      i = close;
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += word_of(ids[i]);
  }
  return out;
}

}  // namespace cdet
