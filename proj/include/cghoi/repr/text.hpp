#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cghoi/error.hpp"

namespace cghoi::repr {

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    words.push_back(w);
  }
  return words;
}

// Whitespace vocabulary; id 0 is UNK.
class Vocabulary {
 public:
  static constexpr std::uint32_t kUnk = 0;
  static constexpr std::size_t kMaxSize = 1024;

  Vocabulary() : words_{"<unk>"} {}

  explicit Vocabulary(const std::vector<std::string>& texts) : Vocabulary() {
    std::vector<std::string> all;
    for (const auto& t : texts) {
      for (auto& w : split_words(t)) all.push_back(w);
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    for (auto& w : all) add(w);
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::uint32_t id) const { return words_.at(id); }

  std::vector<std::uint32_t> tokenize(const std::string& text) const {
    std::vector<std::uint32_t> ids;
    for (const auto& w : split_words(text)) {
      auto it = index_.find(w);
      ids.push_back(it == index_.end() ? kUnk : it->second);
    }
    return ids;
  }

  std::string detokenize(const std::vector<std::uint32_t>& ids) const {
    std::string out;
    for (std::uint32_t id : ids) {
      if (!out.empty()) out += ' ';
      out += id < words_.size() ? words_[id] : words_[kUnk];
    }
    return out;
  }

 private:
  void add(const std::string& w) {
    if (words_.size() >= kMaxSize) throw ValidationError("vocabulary exceeds 1024 entries");
    index_.emplace(w, static_cast<std::uint32_t>(words_.size()));
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::map<std::string, std::uint32_t> index_;
};

}  // namespace cghoi::repr
