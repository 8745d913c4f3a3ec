#include "rrhf/ppo.hpp"

#include <cmath>
#include <numeric>

#include "rrhf/decoder.hpp"
#include "rrhf/errors.hpp"
#include "rrhf/rng.hpp"

namespace rrhf {

double shaped_reward(double reward, double logp_pi, double logp_rho, double beta) {
  return reward - beta * (logp_pi - logp_rho);
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda) {
  if (values.size() != rewards.size() + 1) {
    throw ContractError("gae: need " + std::to_string(rewards.size() + 1) + " values, got " +
                        std::to_string(values.size()));
  }
  std::vector<double> adv(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double delta = rewards[t] + gamma * values[t + 1] - values[t];
    acc = delta + gamma * lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

SurrogateTerm clipped_surrogate(double ratio, double advantage, double eps) {
  const double clipped_ratio = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  const double a = ratio * advantage, b = clipped_ratio * advantage;
  SurrogateTerm s;
  if (b < a) {
    s.loss = -b;
    s.clipped = true;
  } else {
    s.loss = -a;
    s.dloss_dratio = -advantage;
  }
  return s;
}

Var clipped_surrogate(Var logp_new, std::span<const double> logp_behavior, std::span<const double> advantages,
                      double eps) {
  const Tensor& lp = logp_new.value();
  const std::size_t T = lp.numel();
  if (logp_behavior.size() != T || advantages.size() != T) {
    throw ContractError("clipped_surrogate: " + std::to_string(T) + " log-probs, " +
                        std::to_string(logp_behavior.size()) + " behavior log-probs, " +
                        std::to_string(advantages.size()) + " advantages");
  }
  if (T == 0) throw ContractError("clipped_surrogate: empty trajectory");
  std::vector<double> dl(T);
  double loss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double ratio = std::exp(lp[t] - logp_behavior[t]);
    const SurrogateTerm s = clipped_surrogate(ratio, advantages[t], eps);
    loss += s.loss;
    dl[t] = s.dloss_dratio * ratio / static_cast<double>(T);  // d ratio / d logp = ratio
  }
  loss /= static_cast<double>(T);
  return logp_new.tape().record(Tensor::scalar(loss), {logp_new}, [logp_new, dl](Tape& t, const Tensor& g) {
    if (!t.needs_grad(logp_new)) return;
    Tensor& gl = t.grad_buffer(logp_new);
    for (std::size_t i = 0; i < dl.size(); ++i) gl[i] += g[0] * dl[i];
  });
}

void PpoConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("ppo.clip", "must be within (0, 1)");
  if (kl_beta < 0.0) throw ConfigError("ppo.kl_beta", "must be >= 0");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("ppo.gamma", "must be within [0, 1]");
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("ppo.lambda", "must be within [0, 1]");
  if (rollout_batch == 0) throw ConfigError("ppo.rollout_batch", "must be at least 1");
  if (update_epochs == 0) throw ConfigError("ppo.update_epochs", "must be at least 1");
  if (minibatch == 0) throw ConfigError("ppo.minibatch", "must be at least 1");
  if (epochs == 0) throw ConfigError("ppo.epochs", "must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("ppo.temperature", "must be > 0");
  if (max_new_tokens == 0) throw ConfigError("ppo.max_new_tokens", "must be at least 1");
}

PpoTrainer::PpoTrainer(Model& policy, const Model& reference, const RewardProvider& reward, PpoConfig cfg)
    : policy_(&policy), reference_(&reference), reward_(&reward), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (policy.config() != reference.config()) throw ConfigError("ppo", "policy and reference architectures differ");
}

std::vector<std::string> PpoTrainer::live_parameter_sets() const {
  std::vector<std::string> sets;
  if (policy_) sets.push_back("policy");
  if (policy_ && policy_->parameters().size() > policy_->head_w) sets.push_back("value");
  if (reward_) sets.push_back("reward");
  if (reference_) sets.push_back("reference");
  return sets;
}

std::vector<std::string> rrhf_live_parameter_sets() { return {"policy"}; }

namespace {

std::vector<double> to_vec(const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); }

constexpr std::uint64_t kPpoSampleStream = 0x70706f;
constexpr std::uint64_t kPpoShuffleStream = 0x70706f73;

}  // namespace

Trajectory PpoTrainer::rollout(const std::string& query, std::uint64_t seed) const {
  const auto& vocab = Vocabulary::standard();
  Trajectory tr;
  tr.query = query;
  const auto prompt = encode_query(vocab, query, cfg_.truncation).ids;
  DecodeConfig d = DecodeConfig::sampling(cfg_.temperature);
  d.max_new_tokens = cfg_.max_new_tokens;
  d.seed = seed;
  const auto hyp = decode(*policy_, prompt, d).front();
  tr.response = vocab.decode_response(hyp.tokens);
  std::vector<TokenId> resp = hyp.tokens;
  if (resp.empty() || resp.back() != Vocabulary::kEos) resp.push_back(Vocabulary::kEos);
  if (prompt.size() + resp.size() > policy_->config().context) resp.resize(policy_->config().context - prompt.size());
  tr.seq = make_sequence(prompt, resp);
  {
    Tape tape(false);
    BoundModel b = bind(tape, static_cast<const Model&>(*policy_));
    Var hidden = forward_hidden(b, tr.seq.ids);
    Var rows = slice_rows(hidden, tr.seq.query_len - 1, tr.seq.size() - 1);
    tr.behavior_logp = to_vec(gather_log_prob(matmul_nt(rows, b.p[policy_->tok_emb]), tr.seq.response()).value());
    tr.values = to_vec(response_values(b, tr.seq, hidden).value());
  }
  {
    Tape tape(false);
    tr.reference_logp = to_vec(response_log_probs(bind(tape, *reference_), tr.seq).value());
  }
  tr.task_reward = reward_->score(query, tr.response);
  return tr;
}

void PpoTrainer::finish(Trajectory& t) const {
  const std::size_t T = t.behavior_logp.size();
  t.rewards.assign(T, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    t.rewards[i] = shaped_reward(i + 1 == T ? t.task_reward : 0.0, t.behavior_logp[i], t.reference_logp[i], cfg_.kl_beta);
  }
  std::vector<double> v = t.values;
  v.push_back(0.0);
  t.advantages = gae(t.rewards, v, cfg_.gamma, cfg_.lambda);
  t.returns.resize(T);
  for (std::size_t i = 0; i < T; ++i) t.returns[i] = t.advantages[i] + t.values[i];
}

std::vector<StepMetrics> PpoTrainer::update(std::vector<Trajectory>& batch, Optimizer& opt, std::size_t epoch) {
  std::vector<StepMetrics> out;
  const std::size_t n = batch.size();
  const double inv = 1.0 / static_cast<double>(cfg_.minibatch);
  std::vector<std::size_t> order(n);
  for (std::size_t pass = 0; pass < cfg_.update_epochs; ++pass) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg_.seed, kPpoShuffleStream, opt.step() * 131 + pass));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    StepMetrics w;
    std::size_t in_w = 0;
    for (std::size_t pos = 0; pos < n; ++pos) {
      const Trajectory& tr = batch[order[pos]];
      Tape tape;
      BoundModel b = bind(tape, *policy_);
      Var hidden = forward_hidden(b, tr.seq.ids);
      Var rows = slice_rows(hidden, tr.seq.query_len - 1, tr.seq.size() - 1);
      Var logp = gather_log_prob(matmul_nt(rows, b.p[policy_->tok_emb]), tr.seq.response());
      for (std::size_t t = 0; t < tr.behavior_logp.size(); ++t) {
        const double ratio = std::exp(logp.value()[t] - tr.behavior_logp[t]);
        if (!(ratio <= cfg_.max_ratio)) {
          throw NumericError("PPO probability ratio " + std::to_string(ratio) + " at token " + std::to_string(t) +
                             " of query '" + tr.query + "' exceeds " + std::to_string(cfg_.max_ratio));
        }
      }
      Var pl = clipped_surrogate(logp, tr.behavior_logp, tr.advantages, cfg_.clip);
      Var values = response_values(b, tr.seq, hidden);
      Var vl = mean(square(sub(values, tape.constant(Tensor::matrix(tr.returns.size(), 1, tr.returns)))));
      Var total = add(pl, scale(vl, cfg_.value_weight));
      const double tv = total.item();
      if (!std::isfinite(tv)) throw NumericError("non-finite PPO loss for query '" + tr.query + "'");
      tape.backward(scale(total, inv));
      w.rank_loss += pl.item();
      w.sft_loss += vl.item();
      w.total_loss += tv;
      ++in_w;
      const bool due = opt.pending() + 1 == opt.accumulation_steps() || pos + 1 == n;
      if (!due) {
        opt.micro_step();
        continue;
      }
      w.lr = opt.current_lr();
      if (!opt.micro_step()) opt.flush();
      w.step = opt.step();
      w.epoch = epoch;
      w.rank_loss /= static_cast<double>(in_w);
      w.sft_loss /= static_cast<double>(in_w);
      w.total_loss /= static_cast<double>(in_w);
      out.push_back(w);
      w = {};
      in_w = 0;
    }
  }
  return out;
}

TrainResult PpoTrainer::train(const std::vector<Record>& queries, const TrainHooks& hooks) {
  if (queries.empty()) throw ConfigError("ppo", "no training queries");
  const std::size_t n = queries.size();
  const std::size_t rounds_per_epoch = (n + cfg_.rollout_batch - 1) / cfg_.rollout_batch;
  std::size_t total = 0;
  for (std::size_t r = 0; r < rounds_per_epoch; ++r) {
    const std::size_t sz = std::min(cfg_.rollout_batch, n - r * cfg_.rollout_batch);
    total += cfg_.update_epochs * ((sz + cfg_.minibatch - 1) / cfg_.minibatch);
  }
  total *= cfg_.epochs;
  const auto warmup = static_cast<std::size_t>(std::llround(cfg_.warmup_ratio * static_cast<double>(total)));
  AdamConfig adam;
  adam.max_grad_norm = cfg_.max_grad_norm;
  Optimizer opt(policy_->parameters(), LinearSchedule{cfg_.peak_lr, warmup, total}, adam, cfg_.minibatch);
  policy_->zero_grad();

  TrainResult res;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg_.seed, kPpoShuffleStream, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    EpochMetrics em;
    em.epoch = epoch;
    std::size_t steps_this_epoch = 0;
    for (std::size_t start = 0; start < n; start += cfg_.rollout_batch) {
      const std::size_t end = std::min(n, start + cfg_.rollout_batch);
      std::vector<Trajectory> batch;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t q = order[i];
        batch.push_back(rollout(queries[q].query, derive_seed(cfg_.seed, kPpoSampleStream, epoch * n + q)));
      }
      for (auto& t : batch) finish(t);
      if (cfg_.whiten_advantages) {
        double s = 0.0, ss = 0.0;
        std::size_t cnt = 0;
        for (const auto& t : batch) {
          for (double a : t.advantages) {
            s += a;
            ++cnt;
          }
        }
        const double mu = s / static_cast<double>(cnt);
        for (const auto& t : batch) {
          for (double a : t.advantages) ss += (a - mu) * (a - mu);
        }
        const double sd = std::sqrt(ss / static_cast<double>(cnt));
        for (auto& t : batch) {
          for (auto& a : t.advantages) a = (a - mu) / (sd + 1e-8);
        }
      }
      for (auto& m : update(batch, opt, epoch)) {
        em.rank_loss += m.rank_loss;
        em.sft_loss += m.sft_loss;
        em.total_loss += m.total_loss;
        ++steps_this_epoch;
        if (hooks.on_step) hooks.on_step(m);
        res.steps.push_back(m);
      }
    }
    em.rank_loss /= static_cast<double>(steps_this_epoch);
    em.sft_loss /= static_cast<double>(steps_this_epoch);
    em.total_loss /= static_cast<double>(steps_this_epoch);
    if (hooks.on_epoch) em.eval = hooks.on_epoch(epoch, *policy_);
    res.epochs.push_back(std::move(em));
  }
  return res;
}

}  // namespace rrhf
