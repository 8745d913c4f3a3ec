#pragma once
// Token-level PPO baseline: sampled responses, KL-shaped per-token rewards
// against a frozen reference model, GAE advantages from the scalar value
// head, clipped surrogate objective.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rrhf/corpus.hpp"
#include "rrhf/model.hpp"
#include "rrhf/reward.hpp"
#include "rrhf/rrhf.hpp"

namespace rrhf {

// R - beta * (logp_pi - logp_rho)
double shaped_reward(double reward, double logp_pi, double logp_rho, double beta);

// values has one more entry than rewards (the bootstrap value, 0 at a terminal state).
// A_t = sum_l (gamma*lambda)^l delta_{t+l}, delta_t = r_t + gamma V_{t+1} - V_t.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda);

struct SurrogateTerm {
  double loss = 0.0;            // -min(ratio*A, clip(ratio)*A)
  bool clipped = false;         // the clipped branch is strictly smaller
  double dloss_dratio = 0.0;    // 0 when clipped
};
SurrogateTerm clipped_surrogate(double ratio, double advantage, double eps);

// Mean over tokens of the clipped surrogate, differentiable through logp_new.
Var clipped_surrogate(Var logp_new, std::span<const double> logp_behavior, std::span<const double> advantages,
                      double eps);

struct PpoConfig {
  double clip = 0.2;
  double gamma = 1.0;
  double lambda = 0.95;
  double kl_beta = 0.05;
  double value_weight = 0.5;
  std::size_t rollout_batch = 64;  // queries sampled per behavior-policy refresh
  std::size_t update_epochs = 4;   // passes over each rollout batch before refreshing
  std::size_t minibatch = 8;       // trajectories per optimizer step
  std::size_t epochs = 3;          // passes over the query set (the same budget as rrhf)
  double peak_lr = 5e-5;
  double warmup_ratio = 0.1;
  double max_grad_norm = 0.0;
  bool whiten_advantages = true;
  double temperature = 1.0;
  std::size_t max_new_tokens = 24;
  double max_ratio = 100.0;
  TruncationConfig truncation;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Trajectory {
  std::string query;
  std::string response;
  TokenSeq seq;
  std::vector<double> behavior_logp;  // frozen at sampling time
  std::vector<double> reference_logp;
  std::vector<double> values;
  std::vector<double> rewards;        // shaped, per response token
  std::vector<double> advantages;
  std::vector<double> returns;
  double task_reward = 0.0;
};

class PpoTrainer {
 public:
  // The value function is the policy model's scalar head.
  PpoTrainer(Model& policy, const Model& reference, const RewardProvider& reward, PpoConfig cfg);

  // Parameter sets that must stay resident while training.
  std::vector<std::string> live_parameter_sets() const;

  Trajectory rollout(const std::string& query, std::uint64_t seed) const;
  // Fills rewards/advantages/returns from the sampled quantities.
  void finish(Trajectory& t) const;

  // Optimizer passes over one rollout batch. Returns per-step metrics with
  // rank_loss = policy loss and sft_loss = value loss.
  std::vector<StepMetrics> update(std::vector<Trajectory>& batch, Optimizer& opt, std::size_t epoch);

  TrainResult train(const std::vector<Record>& queries, const TrainHooks& hooks = {});

  const PpoConfig& config() const noexcept { return cfg_; }

 private:
  Model* policy_;
  const Model* reference_;
  const RewardProvider* reward_;
  PpoConfig cfg_;
};

// The RRHF trainer's counterpart: only the policy is resident (rewards are
// read from the rollout file).
std::vector<std::string> rrhf_live_parameter_sets();

}  // namespace rrhf
