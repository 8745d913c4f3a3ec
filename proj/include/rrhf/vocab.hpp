#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rrhf/tensor.hpp"

namespace rrhf {

// Fixed character-level vocabulary: four special tokens followed by single
// printable characters. Special tokens render as "<name>" in text, which is
// why '<' and '>' are not in the character set.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;  // start of a query
  static constexpr TokenId kSep = 2;  // end of query, start of response
  static constexpr TokenId kEos = 3;  // end of response

  // The 64-token default: specials, space, a-z, 0-9 and 23 punctuation marks.
  static const Vocabulary& standard();

  explicit Vocabulary(std::vector<std::string> tokens);

  // One token per line, UTF-8.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  bool contains(char c) const noexcept { return char_to_id_[static_cast<unsigned char>(c)] >= 0; }

  // Characters and "<name>" specials to ids. Throws ContractError naming the
  // first character outside the vocabulary.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  // Text of a response: tokens up to (not including) the first end-of-response.
  std::string decode_response(std::span<const TokenId> ids) const;

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::array<TokenId, 256> char_to_id_{};
};

// A query followed by a response: [bos, query..., sep, response..., eos].
// query_len counts the prompt tokens including bos and sep.
struct TokenSeq {
  std::vector<TokenId> ids;
  std::size_t query_len = 0;

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t response_len() const noexcept { return ids.size() - query_len; }
  std::span<const TokenId> query() const { return std::span(ids).first(query_len); }
  std::span<const TokenId> response() const { return std::span(ids).subspan(query_len); }

  // Throws IndexError / ContractError when the invariants do not hold.
  void validate(std::size_t vocab_size) const;
};

struct TruncationConfig {
  std::size_t max_query_tokens = 96;     // query characters, dropped from the left
  std::size_t max_response_tokens = 96;  // response characters, dropped from the right
};

struct EncodedPrompt {
  std::vector<TokenId> ids;  // bos ... sep
  bool truncated = false;
};

EncodedPrompt encode_query(const Vocabulary& vocab, std::string_view query, const TruncationConfig& trunc);

// Query plus response; the response gets a trailing end-of-response token.
TokenSeq make_sequence(const Vocabulary& vocab, std::string_view query, std::string_view response,
                       const TruncationConfig& trunc, bool* truncated = nullptr);

// Query prompt plus already tokenised response ids, used as-is.
TokenSeq make_sequence(std::span<const TokenId> prompt, std::span<const TokenId> response);

}  // namespace rrhf
