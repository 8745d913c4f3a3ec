#pragma once
// Reward providers R(x, y): exact task oracles, a learned pairwise reward
// model, a language model scoring by mean log-probability, and an external
// judge.

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rrhf/corpus.hpp"
#include "rrhf/judge.hpp"
#include "rrhf/model.hpp"

namespace rrhf {

class RewardProvider {
 public:
  virtual ~RewardProvider() = default;
  // "oracle:target_affinity", "oracle:format_compliance", "learned_rm", "lm_as_rm", "external_judge"
  virtual std::string kind() const = 0;
  virtual double score(std::string_view query, std::string_view response) const = 0;
  // Scores of several responses to one query; nullopt marks a response the
  // provider could not score. The default scores one at a time.
  virtual std::vector<std::optional<double>> score_all(std::string_view query,
                                                      const std::vector<std::string>& responses) const;
};

class OracleReward final : public RewardProvider {
 public:
  explicit OracleReward(TaskSpec spec) : spec_(std::move(spec)) {}
  std::string kind() const override;
  double score(std::string_view query, std::string_view response) const override {
    return oracle_score(spec_, query, response);
  }
  const TaskSpec& spec() const noexcept { return spec_; }

 private:
  TaskSpec spec_;
};

// Mean response log-probability under a language model (the trained policy
// doubling as a reward model).
class LmAsRm final : public RewardProvider {
 public:
  LmAsRm(const Model& model, TruncationConfig trunc = {}, const Vocabulary& vocab = Vocabulary::standard())
      : model_(&model), trunc_(trunc), vocab_(&vocab) {}
  std::string kind() const override { return "lm_as_rm"; }
  double score(std::string_view query, std::string_view response) const override;

 private:
  const Model* model_;
  TruncationConfig trunc_;
  const Vocabulary* vocab_;
};

double lm_as_rm_score(const Model& model, const TokenSeq& seq);

// Scalar head at the end-of-response position of a model trained with the
// pairwise logistic loss.
class LearnedRewardModel final : public RewardProvider {
 public:
  explicit LearnedRewardModel(Model model, TruncationConfig trunc = {},
                              const Vocabulary& vocab = Vocabulary::standard())
      : model_(std::move(model)), trunc_(trunc), vocab_(&vocab) {}
  std::string kind() const override { return "learned_rm"; }
  double score(std::string_view query, std::string_view response) const override;
  double score(const TokenSeq& seq) const;
  const Model& model() const noexcept { return model_; }

 private:
  Model model_;
  TruncationConfig trunc_;
  const Vocabulary* vocab_;
};

class ExternalJudgeReward final : public RewardProvider {
 public:
  explicit ExternalJudgeReward(JudgeClient& client) : client_(&client) {}
  std::string kind() const override { return "external_judge"; }
  double score(std::string_view query, std::string_view response) const override;
  // Batches of up to five responses per request; a failed request leaves its
  // responses unscored.
  std::vector<std::optional<double>> score_all(std::string_view query,
                                              const std::vector<std::string>& responses) const override;

 private:
  JudgeClient* client_;
};

struct RmTrainConfig {
  std::size_t epochs = 3;
  double peak_lr = 1e-3;
  std::size_t warmup = 0;
  std::size_t batch = 8;  // pairs per optimizer step
  std::uint64_t seed = 0;
};

struct RmTrainResult {
  Model model;
  std::vector<double> epoch_loss;      // mean pairwise loss during each epoch
  std::vector<double> step_loss;       // mean pairwise loss of each optimizer step's batch
  double train_accuracy = 0.0;         // on the training pairs after training
  bool degenerate = false;             // every pair had identical chosen and rejected sequences
};

// Pairwise loss for one pair: -log sigmoid(s_chosen - s_rejected).
Var pairwise_rm_loss(Tape& tape, Model& model, const TokenSeq& chosen, const TokenSeq& rejected);

// Trains `init` (backbone and scalar head) on tokenised preference pairs.
RmTrainResult train_learned_rm(Model init, const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                               const RmTrainConfig& cfg);

// Fraction of pairs with score(chosen) strictly above score(rejected); pairs
// the provider cannot score count as misses.
double rm_accuracy(const RewardProvider& provider, const std::vector<Record>& pairs);

}  // namespace rrhf
