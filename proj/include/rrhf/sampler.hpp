#pragma once
// Offline rollout generation: assembles scored candidate sets for each query
// according to a sampling policy.
//
//   BP    4 vanilla-beam responses + dataset chosen + dataset rejected
//   DP    4 diverse-beam responses + dataset chosen + dataset rejected
//   D     4 diverse-beam responses
//   P     dataset chosen + dataset rejected
//   IP-n  DP sampled with the model trained in iteration n-1 (IP-1 is DP)

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rrhf/corpus.hpp"
#include "rrhf/decoder.hpp"
#include "rrhf/reward.hpp"

namespace rrhf {

enum class PolicyKind { BP, DP, D, P, IP };

struct SamplingPolicy {
  PolicyKind kind = PolicyKind::DP;
  std::size_t iteration = 1;  // IP only

  static SamplingPolicy parse(const std::string& s);  // "BP", "DP", "D", "P", "IP-3"
  std::string name() const;
  // The policy a single iteration actually runs: IP-1 becomes DP, IP-n (n>1)
  // stays IP-n.
  SamplingPolicy at_iteration(std::size_t n) const;
  std::size_t iterations() const { return kind == PolicyKind::IP ? iteration : 1; }
  bool generates() const { return kind != PolicyKind::P; }
  bool uses_dataset() const { return kind != PolicyKind::D; }
  std::size_t candidates_per_set() const;
  friend bool operator==(const SamplingPolicy&, const SamplingPolicy&) = default;
};

struct Candidate {
  std::string text;
  std::string source;  // beam, diverse_beam, dataset_good, dataset_bad, prior_iteration
  double reward = 0.0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct RolloutSet {
  std::string query;
  std::size_t iteration = 1;
  std::string policy;
  std::vector<Candidate> candidates;
  friend bool operator==(const RolloutSet&, const RolloutSet&) = default;
};

struct SamplerConfig {
  DecodeConfig beam = DecodeConfig::vanilla_beam();
  DecodeConfig diverse = DecodeConfig::diverse_beam();
  TruncationConfig truncation;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct RolloutResult {
  std::vector<RolloutSet> sets;
  std::size_t skipped = 0;  // queries whose candidates the provider could not score
};

// `model` may be null only for policy P. `prior` supplies cached rewards for
// dataset responses (matched by query) so later iterations do not rescore them.
RolloutResult generate_rollouts(const SamplingPolicy& policy, const Model* model, const std::vector<Record>& data,
                                const RewardProvider& provider, const SamplerConfig& cfg,
                                const std::vector<RolloutSet>* prior = nullptr);

nlohmann::json to_json(const RolloutSet& s);
RolloutSet rollout_from_json(const nlohmann::json& j);

// One set per line; `extra` keys are added to every line.
void write_rollouts(const std::filesystem::path& path, const std::vector<RolloutSet>& sets,
                    const nlohmann::json& extra = nlohmann::json::object());
// Throws MissingArtifactError, or ValidationError for a malformed line or a
// set whose candidate count does not match its policy.
std::vector<RolloutSet> read_rollouts(const std::filesystem::path& path);

struct RolloutStats {
  double mean = 0.0;  // over all candidates
  double std = 0.0;   // population standard deviation over all candidates
  double max = 0.0;   // per-set maximum, averaged over sets
  double min_reward = 0.0;
  double max_reward = 0.0;
  std::size_t candidates = 0;
};

RolloutStats rollout_stats(const std::vector<RolloutSet>& sets);
nlohmann::json to_json(const RolloutStats& s);

}  // namespace rrhf
