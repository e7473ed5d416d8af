#include "escape/tokenizer.hpp"

#include <cctype>

namespace escape {

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  index_.reserve(vocab_.size());
  for (size_t i = 0; i < vocab_.size(); ++i) {
    require(index_.emplace(vocab_[i], static_cast<TokenId>(i)).second,
            "duplicate token in vocabulary: " + vocab_[i]);
  }
  bos_ = id_of("<bos>");
  eos_ = id_of("<eos>");
  unk_ = id_of("<unk>");
  require(bos_ >= 0 && eos_ >= 0 && unk_ >= 0,
          "vocabulary must contain <bos>, <eos>, <unk>");
}

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '<') {
      // Angle-bracket markers are atomic tokens.
      flush();
      size_t j = text.find('>', i);
      if (j == std::string::npos) {
        cur.push_back(c);
      } else {
        out.push_back(text.substr(i, j - i + 1));
        i = j;
      }
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-') {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      flush();
      out.push_back(std::string(1, c));
    }
  }
  flush();
  return out;
}

std::vector<TokenId> Tokenizer::encode(const std::string& text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    const TokenId id = id_of(w);
    ids.push_back(id >= 0 ? id : unk_);
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token_of(ids[i]);
  }
  return out;
}

TokenId Tokenizer::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

const std::string& Tokenizer::token_of(TokenId id) const {
  require(id >= 0 && id < vocab_size(), "token id out of range");
  return vocab_[static_cast<size_t>(id)];
}

std::string decode_plain(const Tokenizer& tok, const std::vector<TokenId>& ids) {
  static const std::string kClosers = ".,!?;:";
  std::string out;
  for (const TokenId id : ids) {
    const std::string& w = tok.token_of(id);
    if (w.size() >= 2 && w.front() == '<' && w.back() == '>') continue;
    // closing punctuation attaches to the previous word, as in natural prose
    const bool attach = w.size() == 1 && kClosers.find(w[0]) != std::string::npos;
    if (!out.empty() && !attach) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace escape
