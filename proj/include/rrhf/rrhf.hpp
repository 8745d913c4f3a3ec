#pragma once
// Ranking-based alignment: for each query, k scored candidates; the policy's
// length-normalised log-probabilities are pushed into the reward order with a
// pairwise hinge, and the best candidate gets plain cross-entropy.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rrhf/corpus.hpp"
#include "rrhf/model.hpp"
#include "rrhf/optimizer.hpp"
#include "rrhf/sampler.hpp"

namespace rrhf {

struct RankedBatch {
  std::string query;
  std::vector<TokenSeq> seqs;
  std::vector<double> rewards;
  std::vector<std::string> texts;  // for diagnostics

  // argmax of rewards, lowest index on ties.
  std::size_t best() const;
  std::size_t size() const noexcept { return seqs.size(); }
  void validate() const;
};

RankedBatch to_ranked(const RolloutSet& set, const TruncationConfig& trunc,
                      const Vocabulary& vocab = Vocabulary::standard());
std::vector<RankedBatch> to_ranked(const std::vector<RolloutSet>& sets, const TruncationConfig& trunc);

// Sum over ordered pairs with r_i < r_j of max(0, p_i - p_j + margin).
double rank_loss(std::span<const double> p, std::span<const double> r, double margin = 0.0);
Var rank_loss(Var p, std::span<const double> r, double margin = 0.0);

// Summed (not length-normalised) negative log-likelihood of the response.
Var sft_loss(const BoundModel& m, const TokenSeq& seq);

struct LossParts {
  Var total;
  double rank = 0.0;
  double sft = 0.0;
};

// rank_weight * rank_loss(p) + sft_loss(best), with p_i recomputed from the
// bound model.
LossParts rrhf_loss(const BoundModel& m, const RankedBatch& batch, double rank_weight = 1.0, double margin = 0.0);

struct TrainConfig {
  std::size_t epochs = 3;
  double peak_lr = 1e-4;
  double warmup_ratio = 0.1;  // fraction of all optimizer steps spent warming up
  std::size_t accumulation = 8;
  double max_grad_norm = 0.0;
  double rank_weight = 1.0;
  double margin = 0.0;
  std::uint64_t seed = 0;
};

struct StepMetrics {
  std::size_t step = 0;  // optimizer updates applied so far (1-based after the update)
  std::size_t epoch = 0;
  double rank_loss = 0.0;
  double sft_loss = 0.0;
  double total_loss = 0.0;
  double lr = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double rank_loss = 0.0;  // means over the epoch's queries
  double sft_loss = 0.0;
  double total_loss = 0.0;
  nlohmann::json eval;     // whatever the epoch hook returned
};

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  // Called after each epoch with the current model; the result is kept in
  // EpochMetrics::eval.
  std::function<nlohmann::json(std::size_t epoch, const Model&)> on_epoch;
  // Called before every optimizer update (testing hook).
  std::function<void(const Model&)> before_update;
};

struct TrainResult {
  std::vector<StepMetrics> steps;
  std::vector<EpochMetrics> epochs;
};

// Trains in place. Queries are shuffled each epoch with a seed derived from
// cfg.seed; each query's loss is divided by the accumulation count.
TrainResult train_rrhf(Model& model, const std::vector<RankedBatch>& data, const TrainConfig& cfg,
                       const TrainHooks& hooks = {});

// Supervised fine-tuning on single responses through the same loop.
TrainResult train_sft(Model& model, const std::vector<TokenSeq>& data, const TrainConfig& cfg,
                      const TrainHooks& hooks = {});

std::size_t total_optimizer_steps(std::size_t items, const TrainConfig& cfg);

}  // namespace rrhf
