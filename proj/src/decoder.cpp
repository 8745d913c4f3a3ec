#include "rrhf/decoder.hpp"

#include <cmath>
#include <numeric>

#include "rrhf/errors.hpp"
#include "rrhf/rng.hpp"
#include "rrhf/rowops.hpp"

namespace rrhf {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::greedy: return "greedy";
    case Strategy::sample: return "sample";
    case Strategy::beam: return "beam";
    case Strategy::diverse_beam: return "diverse_beam";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "greedy") return Strategy::greedy;
  if (s == "sample") return Strategy::sample;
  if (s == "beam") return Strategy::beam;
  if (s == "diverse_beam") return Strategy::diverse_beam;
  throw ConfigError("strategy", "unknown decoding strategy '" + s + "'");
}

DecodeConfig DecodeConfig::greedy() {
  DecodeConfig c;
  c.strategy = Strategy::greedy;
  c.beam_size = 1;
  c.group_count = 1;
  return c;
}

DecodeConfig DecodeConfig::sampling(double temperature) {
  DecodeConfig c;
  c.strategy = Strategy::sample;
  c.beam_size = 1;
  c.group_count = 1;
  c.temperature = temperature;
  return c;
}

DecodeConfig DecodeConfig::vanilla_beam() {
  DecodeConfig c;
  c.strategy = Strategy::beam;
  c.beam_size = 4;
  c.group_count = 1;
  return c;
}

DecodeConfig DecodeConfig::diverse_beam() {
  DecodeConfig c;
  c.strategy = Strategy::diverse_beam;
  c.beam_size = 4;
  c.group_count = 4;
  c.diversity_penalty = 1.0;
  c.temperature = 0.8;
  return c;
}

void DecodeConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("decode.temperature", "must be > 0");
  if (max_new_tokens == 0) throw ConfigError("decode.max_new_tokens", "must be at least 1");
  if (strategy == Strategy::beam || strategy == Strategy::diverse_beam) {
    if (beam_size == 0) throw ConfigError("decode.beam_size", "must be at least 1");
  }
  if (strategy == Strategy::diverse_beam) {
    if (group_count == 0 || beam_size % group_count != 0) {
      throw ConfigError("decode.group_count", "beam_size must be divisible by group_count");
    }
    if (diversity_penalty < 0.0) throw ConfigError("decode.diversity_penalty", "must be >= 0");
  }
}

// --- transformer adapter --------------------------------------------------------

namespace {

class TransformerState final : public DecodeState {
 public:
  TransformerState(const Model& m, std::span<const TokenId> prompt) : s_(m, prompt) {}
  std::span<const double> logits() const override { return s_.logits(); }
  void push(TokenId t) override { s_.push(t); }
  std::unique_ptr<DecodeState> clone() const override { return std::make_unique<TransformerState>(*this); }
  std::size_t length() const override { return s_.length(); }

 private:
  InferenceState s_;
};

}  // namespace

std::unique_ptr<DecodeState> TransformerLM::start(std::span<const TokenId> prompt) const {
  return std::make_unique<TransformerState>(*model_, prompt);
}

// --- helpers ----------------------------------------------------------------------

std::vector<double> diverse_beam_step(std::span<const double> group_scores, std::span<const std::size_t> prior_counts,
                                      double penalty) {
  if (prior_counts.size() != group_scores.size()) {
    throw ShapeError("diverse_beam_step: " + std::to_string(prior_counts.size()) + " counts for " +
                     std::to_string(group_scores.size()) + " scores");
  }
  std::vector<double> out(group_scores.begin(), group_scores.end());
  if (penalty == 0.0) return out;
  for (std::size_t v = 0; v < out.size(); ++v) out[v] -= penalty * static_cast<double>(prior_counts[v]);
  return out;
}

namespace {

std::vector<double> scaled_log_probs(std::span<const double> logits, double temperature) {
  std::vector<double> scaled(logits.begin(), logits.end());
  if (temperature != 1.0) {
    for (auto& x : scaled) x /= temperature;
  }
  std::vector<double> lp(scaled.size());
  rowops::log_softmax(scaled.data(), lp.data(), scaled.size());
  return lp;
}

bool ends_with_stop(const std::vector<TokenId>& tokens, const std::vector<std::vector<TokenId>>& stops) {
  for (const auto& pat : stops) {
    if (pat.empty() || pat.size() > tokens.size()) continue;
    if (std::equal(pat.rbegin(), pat.rend(), tokens.rbegin())) return true;
  }
  return false;
}

void finalize(Hypothesis& h, const DecodeConfig& cfg) {
  const std::size_t before = h.tokens.size();
  h.tokens = stop_truncate<TokenId>(h.tokens, cfg.stop_sequences);
  if (h.tokens.size() != before) h.ended = false;
}

Hypothesis decode_single(const LanguageModel& lm, std::span<const TokenId> prompt, const DecodeConfig& cfg) {
  Rng rng(cfg.seed);
  auto state = lm.start(prompt);
  Hypothesis h;
  h.strategy = cfg.strategy;
  for (std::size_t t = 0; t < cfg.max_new_tokens; ++t) {
    const auto lp = scaled_log_probs(state->logits(), cfg.temperature);
    TokenId pick = 0;
    if (cfg.strategy == Strategy::greedy) {
      for (std::size_t v = 1; v < lp.size(); ++v) {
        if (lp[v] > lp[static_cast<std::size_t>(pick)]) pick = static_cast<TokenId>(v);
      }
    } else {
      const double u = uniform01(rng);
      double acc = 0.0;
      pick = static_cast<TokenId>(lp.size() - 1);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        acc += std::exp(lp[v]);
        if (u < acc) {
          pick = static_cast<TokenId>(v);
          break;
        }
      }
    }
    h.tokens.push_back(pick);
    h.log_prob += lp[static_cast<std::size_t>(pick)];
    if (cfg.eos && pick == *cfg.eos) {
      h.ended = true;
      break;
    }
    if (ends_with_stop(h.tokens, cfg.stop_sequences)) break;
    if (state->length() >= lm.context_window()) break;
    state->push(pick);
  }
  finalize(h, cfg);
  return h;
}

struct Beam {
  std::unique_ptr<DecodeState> state;  // null once finished
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  double score = 0.0;  // selection score (includes diversity penalties)
  bool finished = false;
  bool ended = false;
};

struct PoolEntry {
  std::size_t parent;
  TokenId token;  // -1: carry a finished beam unchanged
  double log_prob;
  double score;
  std::size_t len;
  double key() const { return score / static_cast<double>(len); }
};

std::vector<Hypothesis> decode_beams(const LanguageModel& lm, std::span<const TokenId> prompt,
                                     const DecodeConfig& cfg) {
  const bool diverse = cfg.strategy == Strategy::diverse_beam;
  const std::size_t groups = diverse ? cfg.group_count : 1;
  const std::size_t width = cfg.beam_size / groups;
  const std::size_t V = lm.vocab_size();
  const double penalty = diverse ? cfg.diversity_penalty : 0.0;

  auto root = lm.start(prompt);
  std::vector<std::vector<Beam>> beams(groups);
  for (auto& g : beams) {
    Beam b;
    b.state = root->clone();
    g.push_back(std::move(b));
  }

  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    bool any_alive = false;
    for (const auto& g : beams) {
      for (const auto& b : g) any_alive |= !b.finished;
    }
    if (!any_alive) break;

    std::vector<std::size_t> counts(V, 0);
    for (auto& group : beams) {
      std::vector<PoolEntry> pool;
      for (std::size_t bi = 0; bi < group.size(); ++bi) {
        const Beam& b = group[bi];
        if (b.finished) {
          pool.push_back({bi, -1, b.log_prob, b.score, std::max<std::size_t>(b.tokens.size(), 1)});
          continue;
        }
        const auto lp = scaled_log_probs(b.state->logits(), cfg.temperature);
        const auto adj = groups > 1 ? diverse_beam_step(lp, counts, penalty) : lp;
        for (std::size_t v = 0; v < V; ++v) {
          pool.push_back({bi, static_cast<TokenId>(v), b.log_prob + lp[v], b.score + adj[v], b.tokens.size() + 1});
        }
      }
      std::stable_sort(pool.begin(), pool.end(), [](const PoolEntry& a, const PoolEntry& b) { return a.key() > b.key(); });
      if (pool.size() > width) pool.resize(width);

      std::vector<Beam> next;
      next.reserve(pool.size());
      for (const auto& e : pool) {
        Beam& parent = group[e.parent];
        if (e.token < 0) {
          next.push_back(std::move(parent));
          continue;
        }
        Beam nb;
        nb.tokens = parent.tokens;
        nb.tokens.push_back(e.token);
        nb.log_prob = e.log_prob;
        nb.score = e.score;
        ++counts[static_cast<std::size_t>(e.token)];
        if (cfg.eos && e.token == *cfg.eos) {
          nb.finished = nb.ended = true;
        } else if (ends_with_stop(nb.tokens, cfg.stop_sequences) || parent.state->length() >= lm.context_window()) {
          nb.finished = true;
        } else {
          nb.state = parent.state->clone();
          nb.state->push(e.token);
        }
        next.push_back(std::move(nb));
      }
      group = std::move(next);
    }
  }

  std::vector<Hypothesis> out;
  for (auto& g : beams) {
    for (auto& b : g) {
      Hypothesis h;
      h.tokens = std::move(b.tokens);
      h.log_prob = b.log_prob;
      h.ended = b.ended;
      h.strategy = cfg.strategy;
      finalize(h, cfg);
      out.push_back(std::move(h));
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.normalized() > b.normalized(); });
  return out;
}

}  // namespace

std::vector<Hypothesis> decode(const LanguageModel& lm, std::span<const TokenId> prompt, const DecodeConfig& cfg) {
  cfg.validate();
  if (prompt.empty()) throw ContractError("decode: empty prompt");
  if (prompt.size() >= lm.context_window()) {
    throw ContextOverflowError("prompt of " + std::to_string(prompt.size()) + " tokens leaves no room in context window " +
                               std::to_string(lm.context_window()));
  }
  switch (cfg.strategy) {
    case Strategy::greedy:
    case Strategy::sample:
      return {decode_single(lm, prompt, cfg)};
    case Strategy::beam:
    case Strategy::diverse_beam:
      return decode_beams(lm, prompt, cfg);
  }
  return {};
}

std::vector<Hypothesis> decode(const Model& model, std::span<const TokenId> prompt, const DecodeConfig& cfg) {
  return decode(TransformerLM(model), prompt, cfg);
}

}  // namespace rrhf
