#pragma once
// Automatic evaluation: greedy decoding scored by a reward provider,
// perplexity under a frozen scorer, preference accuracy, oracle-judged
// win/tie/lose, best-of-N gap and loss/reward rank correlation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rrhf/corpus.hpp"
#include "rrhf/decoder.hpp"
#include "rrhf/model.hpp"
#include "rrhf/reward.hpp"
#include "rrhf/rrhf.hpp"
#include "rrhf/sampler.hpp"

namespace rrhf {

// Responses are cut at the first turn boundary before scoring.
std::vector<std::vector<TokenId>> first_turn_stops();

struct EvalConfig {
  DecodeConfig decode = [] {
    DecodeConfig d = DecodeConfig::greedy();
    d.stop_sequences = first_turn_stops();
    return d;
  }();
  TruncationConfig truncation;
  std::size_t threads = 1;
};

struct EvalReport {
  std::string model_id;
  std::string label;
  double mean_reward = 0.0;              // over scored queries
  std::optional<double> perplexity;
  std::optional<double> rm_accuracy;
  std::vector<std::optional<double>> per_query;  // one slot per eval query; nullopt = provider failed
  std::vector<std::string> responses;
  std::size_t failed = 0;
  std::optional<RolloutStats> rollout;

  std::vector<double> scored() const;
  double reward_std() const;  // population std of the scored per-query rewards
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

// Greedy-decodes every query and scores it. When `scorer` is given, the
// perplexity of the generated responses under it is reported.
EvalReport evaluate(const Model& model, const std::vector<Record>& eval_set, const RewardProvider& provider,
                    const EvalConfig& cfg = {}, const Model* scorer = nullptr);

// Same, for any decoder-compatible model (no perplexity).
EvalReport evaluate(const LanguageModel& lm, const std::vector<Record>& eval_set, const RewardProvider& provider,
                    const EvalConfig& cfg = {});

// Scores fixed responses (one per query) the same way evaluate() does.
EvalReport evaluate_responses(const std::vector<Record>& eval_set, const std::vector<std::string>& responses,
                              const RewardProvider& provider);

struct Comparison {
  std::size_t win = 0;
  std::size_t tie = 0;
  std::size_t lose = 0;
  double delta = 0.0;
};

// 5% of the spread of all finite rewards in a and b.
double default_tie_band(std::span<const std::optional<double>> a, std::span<const std::optional<double>> b);

// Queries that either side failed to score are skipped.
Comparison compare(std::span<const std::optional<double>> a, std::span<const std::optional<double>> b, double delta);
Comparison compare(const EvalReport& a, const EvalReport& b, std::optional<double> delta = std::nullopt);

struct ComparisonRow {
  std::string a;
  std::string b;
  Comparison result;
};
void write_comparison_csv(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows,
                          const std::string& config_hash = "");

// trained mean reward minus the rollouts' mean per-query maximum.
double best_of_n_gap(const EvalReport& trained, const RolloutStats& rollouts);

// Average ranks for ties. Throws ContractError for fewer than two points or a
// constant series.
double spearman(std::span<const double> x, std::span<const double> y);

// Spearman correlation of per-epoch mean total loss against the per-epoch
// "mean_reward" recorded by the epoch hook. Needs at least three epochs.
double loss_reward_correlation(const std::vector<EpochMetrics>& epochs);

}  // namespace rrhf
