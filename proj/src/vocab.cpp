#include "rrhf/vocab.hpp"

#include <fstream>
#include <unordered_set>

#include "rrhf/errors.hpp"

namespace rrhf {

namespace {

std::vector<std::string> standard_tokens() {
  std::vector<std::string> t = {"<pad>", "<bos>", "<sep>", "<eos>", " "};
  for (char c = 'a'; c <= 'z'; ++c) t.emplace_back(1, c);
  for (char c = '0'; c <= '9'; ++c) t.emplace_back(1, c);
  for (char c : std::string_view(".,:;!?-_'\"()[]=+*/#@&%$")) t.emplace_back(1, c);
  return t;
}

}  // namespace

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v(standard_tokens());
  return v;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  char_to_id_.fill(-1);
  if (tokens_.size() < 4) throw ContractError("vocabulary needs at least the four special tokens");
  const char* specials[] = {"<pad>", "<bos>", "<sep>", "<eos>"};
  for (int i = 0; i < 4; ++i) {
    if (tokens_[static_cast<std::size_t>(i)] != specials[i]) {
      throw ContractError("vocabulary slot " + std::to_string(i) + " must be " + specials[i]);
    }
  }
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!seen.insert(tokens_[i]).second) throw ContractError("duplicate vocabulary token '" + tokens_[i] + "'");
    if (i < 4) continue;
    if (tokens_[i].size() != 1 || tokens_[i][0] == '<' || tokens_[i][0] == '>' || tokens_[i][0] == '\n') {
      throw ContractError("vocabulary token " + std::to_string(i) + " must be one character other than <, >");
    }
    char_to_id_[static_cast<unsigned char>(tokens_[i][0])] = static_cast<TokenId>(i);
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError(path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw Error("cannot write vocabulary to " + path.string());
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '<') {
      const auto close = text.find('>', i);
      bool matched = false;
      if (close != std::string_view::npos) {
        const auto name = text.substr(i, close - i + 1);
        for (TokenId s = 0; s < 4; ++s) {
          if (name == tokens_[static_cast<std::size_t>(s)]) {
            ids.push_back(s);
            i = close;
            matched = true;
            break;
          }
        }
      }
      if (!matched) throw ContractError("unknown token at offset " + std::to_string(i) + " in \"" + std::string(text) + "\"");
      continue;
    }
    const TokenId id = char_to_id_[static_cast<unsigned char>(text[i])];
    if (id < 0) {
      throw ContractError("character '" + std::string(1, text[i]) + "' at offset " + std::to_string(i) +
                          " is not in the vocabulary");
    }
    ids.push_back(id);
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string s;
  for (TokenId id : ids) s += token(id);
  return s;
}

std::string Vocabulary::decode_response(std::span<const TokenId> ids) const {
  std::size_t n = 0;
  while (n < ids.size() && ids[n] != kEos) ++n;
  return decode(ids.first(n));
}

void TokenSeq::validate(std::size_t vocab_size) const {
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_size));
    }
  }
  if (query_len == 0 || query_len > ids.size()) {
    throw ContractError("query_len " + std::to_string(query_len) + " invalid for sequence of " +
                        std::to_string(ids.size()));
  }
}

EncodedPrompt encode_query(const Vocabulary& vocab, std::string_view query, const TruncationConfig& trunc) {
  EncodedPrompt p;
  std::vector<TokenId> body = vocab.encode(query);
  if (body.size() > trunc.max_query_tokens) {
    body.erase(body.begin(), body.end() - static_cast<std::ptrdiff_t>(trunc.max_query_tokens));
    p.truncated = true;
  }
  p.ids.reserve(body.size() + 2);
  p.ids.push_back(Vocabulary::kBos);
  p.ids.insert(p.ids.end(), body.begin(), body.end());
  p.ids.push_back(Vocabulary::kSep);
  return p;
}

TokenSeq make_sequence(const Vocabulary& vocab, std::string_view query, std::string_view response,
                       const TruncationConfig& trunc, bool* truncated) {
  EncodedPrompt p = encode_query(vocab, query, trunc);
  std::vector<TokenId> r = vocab.encode(response);
  bool cut = p.truncated;
  if (r.size() > trunc.max_response_tokens) {
    r.resize(trunc.max_response_tokens);
    cut = true;
  }
  r.push_back(Vocabulary::kEos);
  if (truncated) *truncated = cut;
  return make_sequence(p.ids, r);
}

TokenSeq make_sequence(std::span<const TokenId> prompt, std::span<const TokenId> response) {
  TokenSeq s;
  s.ids.assign(prompt.begin(), prompt.end());
  s.ids.insert(s.ids.end(), response.begin(), response.end());
  s.query_len = prompt.size();
  return s;
}

}  // namespace rrhf
