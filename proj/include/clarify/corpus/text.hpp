#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "clarify/errors.hpp"

namespace clarify {

// Lowercases, splits on whitespace, strips leading/trailing ASCII punctuation
// from each chunk and drops chunks that end up empty.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (e > b) {
      std::string tok(text.substr(b, e - b));
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::string_view kUnkToken = "UNK";

  Vocabulary() : tokens_{std::string(kUnkToken)} { index_.emplace(tokens_[0], 0); }

  // tokens[0] must be the UNK token; the rest must be distinct.
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty() || tokens_[0] != kUnkToken) throw ValidationError("vocabulary must start with UNK");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second) throw ValidationError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

  std::size_t index_of(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Keeps tokens whose occurrence count across the corpus is at least 2.
inline Vocabulary build_vocabulary(const std::vector<std::string>& instructions) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : instructions) {
    for (auto& tok : tokenize(text)) ++counts[tok];
  }
  std::vector<std::string> tokens{std::string(Vocabulary::kUnkToken)};
  for (const auto& [tok, n] : counts) {
    if (n >= 2) tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

inline std::vector<std::size_t> encode_tokens(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(vocab.index_of(t));
  return out;
}

inline std::vector<std::size_t> encode_text(std::string_view text, const Vocabulary& vocab) {
  return encode_tokens(tokenize(text), vocab);
}

}  // namespace clarify
