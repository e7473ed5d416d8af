#pragma once

#include "escape/common.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace escape {

/// Whitespace/punctuation word tokenizer with a fixed vocabulary.
///
/// Tokens are lowercase words, single punctuation marks, or atomic
/// angle-bracket markers such as "<bos>". Unknown words map to "<unk>".
/// decode() joins tokens with single spaces, so encode(decode(ids)) == ids
/// for any in-vocabulary id sequence.
class Tokenizer {
 public:
  Tokenizer() = default;
  explicit Tokenizer(std::vector<std::string> vocab);

  static std::vector<std::string> split_words(const std::string& text);

  std::vector<TokenId> encode(const std::string& text) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  TokenId id_of(const std::string& token) const;  // -1 when absent
  const std::string& token_of(TokenId id) const;
  bool contains(const std::string& token) const { return id_of(token) >= 0; }

  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  TokenId bos_id() const { return bos_; }
  TokenId eos_id() const { return eos_; }
  TokenId unk_id() const { return unk_; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId bos_ = -1, eos_ = -1, unk_ = -1;
};

/// decode() with every angle-bracket marker token dropped. Generated text is
/// passed through this before detectors see it, so control markers never leak.
std::string decode_plain(const Tokenizer& tok, const std::vector<TokenId>& ids);

}  // namespace escape
