#pragma once
// Generation strategies: greedy, ancestral sampling, vanilla beam search and
// diverse (Hamming-penalised, grouped) beam search, with stop-sequence
// truncation.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrhf/model.hpp"

namespace rrhf {

enum class Strategy { greedy, sample, beam, diverse_beam };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct DecodeConfig {
  Strategy strategy = Strategy::beam;
  std::size_t beam_size = 4;
  std::size_t group_count = 4;
  double diversity_penalty = 1.0;
  double temperature = 1.0;
  std::size_t max_new_tokens = 24;
  std::vector<std::vector<TokenId>> stop_sequences;
  std::optional<TokenId> eos = Vocabulary::kEos;
  std::uint64_t seed = 0;

  static DecodeConfig greedy();
  static DecodeConfig sampling(double temperature);
  static DecodeConfig vanilla_beam();   // beam 4
  static DecodeConfig diverse_beam();   // beam 4, 4 groups, penalty 1.0, temperature 0.8

  void validate() const;
};

// A generated response. `tokens` holds the response after stop truncation and
// ends with the end-of-response token when the model emitted one.
struct Hypothesis {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;  // sum of temperature-scaled token log-probs
  Strategy strategy = Strategy::greedy;
  bool ended = false;     // emitted end-of-response

  double normalized() const {
    return tokens.empty() ? log_prob : log_prob / static_cast<double>(tokens.size());
  }
};

// Anything that can produce next-token logits incrementally.
class DecodeState {
 public:
  virtual ~DecodeState() = default;
  virtual std::span<const double> logits() const = 0;
  virtual void push(TokenId token) = 0;
  virtual std::unique_ptr<DecodeState> clone() const = 0;
  virtual std::size_t length() const = 0;
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::unique_ptr<DecodeState> start(std::span<const TokenId> prompt) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t context_window() const = 0;
};

// The transformer behind the LanguageModel interface (KV-cache decoding).
class TransformerLM final : public LanguageModel {
 public:
  explicit TransformerLM(const Model& model) : model_(&model) {}
  std::unique_ptr<DecodeState> start(std::span<const TokenId> prompt) const override;
  std::size_t vocab_size() const override { return model_->config().vocab_size; }
  std::size_t context_window() const override { return model_->config().context; }

 private:
  const Model* model_;
};

// Returns 1 hypothesis for greedy/sample, beam_size otherwise, ordered by
// non-increasing length-normalised log-prob for the beam strategies.
// Throws ContextOverflowError when the prompt leaves no room for a new token.
std::vector<Hypothesis> decode(const LanguageModel& lm, std::span<const TokenId> prompt, const DecodeConfig& cfg);
std::vector<Hypothesis> decode(const Model& model, std::span<const TokenId> prompt, const DecodeConfig& cfg);

// Hamming diversity: adjusted[v] = scores[v] - penalty * prior_counts[v], where
// prior_counts[v] is how often earlier groups picked v at this step.
std::vector<double> diverse_beam_step(std::span<const double> group_scores, std::span<const std::size_t> prior_counts,
                                      double penalty);

// Prefix before the earliest (by start position) occurrence of any pattern.
// Empty patterns never match.
template <class T>
std::vector<T> stop_truncate(std::span<const T> seq, std::span<const std::vector<T>> patterns) {
  std::size_t cut = seq.size();
  for (const auto& pat : patterns) {
    if (pat.empty() || pat.size() > seq.size()) continue;
    auto it = std::search(seq.begin(), seq.end(), pat.begin(), pat.end());
    if (it != seq.end()) cut = std::min(cut, static_cast<std::size_t>(it - seq.begin()));
  }
  return std::vector<T>(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(cut));
}

inline std::string stop_truncate(std::string_view text, std::span<const std::string> patterns) {
  std::size_t cut = text.size();
  for (const auto& pat : patterns) {
    if (pat.empty()) continue;
    const auto pos = text.find(pat);
    if (pos != std::string_view::npos) cut = std::min(cut, pos);
  }
  return std::string(text.substr(0, cut));
}

}  // namespace rrhf
