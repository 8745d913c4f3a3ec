#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "rrhf/errors.hpp"
#include "rrhf/ppo.hpp"

using namespace rrhf;
using testing::micro_config;
using testing::random_ids;

namespace {

// Definition: sum over l of (gamma*lambda)^l * delta_{t+l}.
std::vector<double> gae_oracle(const std::vector<double>& r, const std::vector<double>& v, double g, double lam) {
  const std::size_t T = r.size();
  std::vector<double> out(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t l = 0; t + l < T; ++l) {
      const double delta = r[t + l] + g * v[t + l + 1] - v[t + l];
      out[t] += std::pow(g * lam, static_cast<double>(l)) * delta;
    }
  }
  return out;
}

std::vector<Record> reversal_queries(std::size_t n, std::uint64_t seed) {
  TaskSpec spec;
  spec.min_len = 2;
  spec.max_len = 4;
  return generate_corpus(spec, n, seed).records;
}

ModelConfig small_lm() {
  ModelConfig c = micro_config(64, 1);
  c.d_model = 16;
  c.context = 48;
  c.init_std = 0.05;
  return c;
}

}  // namespace

TEST_CASE("shaped reward") {
  CHECK(shaped_reward(0.7, -1.0, -3.0, 0.0) == 0.7);
  CHECK(shaped_reward(0.7, -2.5, -2.5, 9.0) == 0.7);
  CHECK(shaped_reward(-1.0, -1.0, -3.0, 0.1) == doctest::Approx(-1.2).epsilon(1e-15));
}

TEST_CASE("gae") {
  CHECK(gae(std::vector<double>{1.0}, std::vector<double>{0.0, 0.0}, 1.0, 1.0) == std::vector<double>{1.0});
  CHECK_THROWS_AS(gae(std::vector<double>{1.0, 2.0}, std::vector<double>{0.0, 0.0}, 1.0, 1.0), ContractError);

  std::mt19937_64 g(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double grid[] = {0.0, 0.5, 0.95, 1.0};
  for (std::size_t T = 1; T <= 8; ++T) {
    for (double gamma : grid) {
      for (double lambda : grid) {
        std::vector<double> r(T), v(T + 1);
        for (auto& x : r) x = nd(g);
        for (auto& x : v) x = nd(g);
        v.back() = 0.0;
        const auto got = gae(r, v, gamma, lambda);
        const auto want = gae_oracle(r, v, gamma, lambda);
        REQUIRE(got.size() == T);
        for (std::size_t t = 0; t < T; ++t) CHECK(std::abs(got[t] - want[t]) <= 1e-12);
        if (lambda == 0.0) {
          for (std::size_t t = 0; t < T; ++t) CHECK(got[t] == r[t] + gamma * v[t + 1] - v[t]);
        }
      }
    }
  }
}

TEST_CASE("clipped surrogate branches") {
  for (double a : {-3.0, -0.5, 0.0, 0.25, 2.0}) {
    const auto s = clipped_surrogate(1.0, a, 0.2);
    CHECK(s.loss == -a);
    CHECK_FALSE(s.clipped);
  }
  // Improvement beyond the band is cut off.
  auto up = clipped_surrogate(1.5, 2.0, 0.2);
  CHECK(up.loss == doctest::Approx(-1.2 * 2.0).epsilon(1e-15));
  CHECK(up.clipped);
  CHECK(up.dloss_dratio == 0.0);
  // ratio 0.5, A = -1: branches -0.5 and -0.8, the smaller one (clipped) wins.
  auto down = clipped_surrogate(0.5, -1.0, 0.2);
  CHECK(down.loss == doctest::Approx(-std::min(0.5 * -1.0, 0.8 * -1.0)).epsilon(1e-15));
  CHECK(down.loss == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(down.clipped);
  // ratio 0.5, A = +1: the unclipped branch is the pessimistic one and keeps its gradient.
  auto keep = clipped_surrogate(0.5, 1.0, 0.2);
  CHECK(keep.loss == -0.5);
  CHECK_FALSE(keep.clipped);
  CHECK(keep.dloss_dratio == -1.0);
  auto worse = clipped_surrogate(1.5, -1.0, 0.2);
  CHECK(worse.loss == 1.5);
  CHECK(worse.dloss_dratio == 1.0);
}

TEST_CASE("surrogate gradient through the policy matches finite differences") {
  Model m(micro_config(12, 1), 41);
  testing::jitter(m, 42);
  REQUIRE(m.parameter_count() <= 2000);
  TokenSeq seq{random_ids(10, 12, 43), 4};
  std::vector<double> behavior, adv;
  {
    Tape t(false);
    const Tensor lp = response_log_probs(bind(t, m), seq).value();
    std::mt19937_64 g(44);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (std::size_t i = 0; i < lp.numel(); ++i) {
      behavior.push_back(lp[i] + u(g));
      adv.push_back(u(g) * 10.0);
    }
    behavior[2] = lp[2] - 1.0;  // ratio ~ e: clipped for a positive advantage
    adv[2] = 1.0;
  }
  auto rep = testing::check_params(testing::policy_params(m), [&](Tape& t) {
    return clipped_surrogate(response_log_probs(bind(t, m), seq), behavior, adv, 0.2);
  });
  CHECK_MESSAGE(rep.worst < 1e-4, rep.where);

  Tape t;
  Var lp = t.leaf(Tensor::vector({-1.0, -2.0}));
  CHECK_THROWS_AS(clipped_surrogate(lp, std::vector<double>{-1.0}, std::vector<double>{1.0, 1.0}, 0.2), ContractError);
}

TEST_CASE("PPO configuration") {
  PpoConfig c;
  CHECK(c.clip == 0.2);
  CHECK(c.gamma == 1.0);
  CHECK(c.lambda == 0.95);
  CHECK(c.update_epochs == 4);
  c.clip = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.kl_beta = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("live parameter sets: PPO keeps four, RRHF one") {
  Model policy(small_lm(), 1), ref(small_lm(), 1);
  OracleReward reward(TaskSpec{});
  PpoTrainer ppo(policy, ref, reward, {});
  CHECK(ppo.live_parameter_sets() == std::vector<std::string>{"policy", "value", "reward", "reference"});
  CHECK(rrhf_live_parameter_sets() == std::vector<std::string>{"policy"});
}

TEST_CASE("trajectories") {
  Model policy(small_lm(), 3), ref(small_lm(), 3);
  testing::jitter(policy, 4, 0.02);
  TaskSpec spec;
  OracleReward reward(spec);
  PpoConfig cfg;
  cfg.max_new_tokens = 8;
  PpoTrainer ppo(policy, ref, reward, cfg);
  Trajectory t = ppo.rollout("abc", 9);
  ppo.finish(t);
  const std::size_t T = t.seq.response_len();
  CHECK(T >= 1);
  CHECK(t.behavior_logp.size() == T);
  CHECK(t.reference_logp.size() == T);
  CHECK(t.values.size() == T);
  CHECK(t.rewards.size() == T);
  CHECK(t.advantages.size() == T);
  CHECK(t.returns.size() == T);
  CHECK(t.task_reward == reward.score("abc", t.response));
  // Only the last token carries the task reward; the rest is KL shaping.
  for (std::size_t i = 0; i + 1 < T; ++i) {
    CHECK(t.rewards[i] == shaped_reward(0.0, t.behavior_logp[i], t.reference_logp[i], cfg.kl_beta));
  }
  CHECK(t.rewards[T - 1] == shaped_reward(t.task_reward, t.behavior_logp[T - 1], t.reference_logp[T - 1], cfg.kl_beta));
  // Same seed, same sample.
  Trajectory again = ppo.rollout("abc", 9);
  CHECK(again.seq.ids == t.seq.ids);
  CHECK(again.behavior_logp == t.behavior_logp);
}

TEST_CASE("zero advantages leave the policy unchanged") {
  Model policy(small_lm(), 5), ref(small_lm(), 5);
  testing::jitter(policy, 6, 0.02);
  const Model before = policy;
  OracleReward reward(TaskSpec{});
  PpoConfig cfg;
  cfg.update_epochs = 1;
  cfg.minibatch = 2;
  cfg.max_new_tokens = 6;
  cfg.peak_lr = 1e-2;
  PpoTrainer ppo(policy, ref, reward, cfg);
  std::vector<Trajectory> batch;
  for (const char* q : {"ab", "xyz"}) {
    Trajectory t = ppo.rollout(q, 3);
    ppo.finish(t);
    std::fill(t.advantages.begin(), t.advantages.end(), 0.0);
    for (auto& r : t.returns) r = 1.0;  // value targets still move the head
    batch.push_back(t);
  }
  Optimizer opt(policy.parameters(), LinearSchedule{1e-2, 0, 1}, AdamConfig{}, cfg.minibatch);
  auto steps = ppo.update(batch, opt, 1);
  CHECK(steps.size() == 1);
  CHECK(steps[0].rank_loss == 0.0);
  CHECK(steps[0].sft_loss > 0.0);
  bool head_moved = false;
  for (std::size_t i = 0; i < policy.parameters().size(); ++i) {
    const auto x = policy.parameters()[i].value.data();
    const auto y = before.parameters()[i].value.data();
    const bool same = std::equal(x.begin(), x.end(), y.begin(), y.end());
    if (policy.is_head_parameter(i)) {
      head_moved |= !same;
    } else {
      CHECK_MESSAGE(same, policy.parameters()[i].name);
    }
  }
  CHECK(head_moved);
}

TEST_CASE("runaway probability ratio aborts") {
  Model policy(small_lm(), 7), ref(small_lm(), 7);
  OracleReward reward(TaskSpec{});
  PpoTrainer ppo(policy, ref, reward, {});
  Trajectory t = ppo.rollout("abc", 1);
  ppo.finish(t);
  for (auto& b : t.behavior_logp) b -= 10.0;  // ratio e^10
  std::vector<Trajectory> batch{t};
  Optimizer opt(policy.parameters(), LinearSchedule{1e-3, 0, 1}, AdamConfig{}, 1);
  CHECK_THROWS_AS(ppo.update(batch, opt, 1), NumericError);
}

TEST_CASE("a large KL coefficient keeps the policy near the reference") {
  const auto queries = reversal_queries(16, 3);
  Model init(small_lm(), 11);
  OracleReward reward(TaskSpec{});
  auto drift = [&](double beta) {
    Model policy = init;
    PpoConfig cfg;
    cfg.kl_beta = beta;
    cfg.rollout_batch = 8;
    cfg.minibatch = 4;
    cfg.epochs = 3;
    cfg.max_new_tokens = 8;
    cfg.peak_lr = 1e-2;
    cfg.warmup_ratio = 0.0;
    cfg.seed = 2;
    PpoTrainer ppo(policy, init, reward, cfg);
    TrainResult r = ppo.train(queries);
    CHECK(r.epochs.size() == 3);
    CHECK_FALSE(r.steps.empty());
    // Mean |log pi - log rho| on fresh samples from the trained policy.
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      Trajectory t = ppo.rollout(queries[i].query, 1000 + i);
      for (std::size_t k = 0; k < t.behavior_logp.size(); ++k) {
        total += std::abs(t.behavior_logp[k] - t.reference_logp[k]);
        ++n;
      }
    }
    return total / static_cast<double>(n);
  };
  const double anchored = drift(100.0);
  const double free = drift(0.0);
  MESSAGE("mean |log pi - log rho|: beta=100 " << anchored << ", beta=0 " << free);
  CHECK(anchored < free);
}
