#include "rrhf/reward.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include "rrhf/errors.hpp"
#include "rrhf/optimizer.hpp"
#include "rrhf/rng.hpp"

namespace rrhf {

std::vector<std::optional<double>> RewardProvider::score_all(std::string_view query,
                                                             const std::vector<std::string>& responses) const {
  std::vector<std::optional<double>> out;
  out.reserve(responses.size());
  for (const auto& r : responses) out.emplace_back(score(query, r));
  return out;
}

std::string OracleReward::kind() const {
  return spec_.oracle() == OracleKind::format_compliance ? "oracle:format_compliance" : "oracle:target_affinity";
}

double lm_as_rm_score(const Model& model, const TokenSeq& seq) { return score_response(model, seq); }

double LmAsRm::score(std::string_view query, std::string_view response) const {
  return lm_as_rm_score(*model_, make_sequence(*vocab_, query, response, trunc_));
}

double LearnedRewardModel::score(const TokenSeq& seq) const {
  Tape tape(false);
  return sequence_reward(bind(tape, model_), seq.ids).item();
}

double LearnedRewardModel::score(std::string_view query, std::string_view response) const {
  return score(make_sequence(*vocab_, query, response, trunc_));
}

double ExternalJudgeReward::score(std::string_view query, std::string_view response) const {
  return client_->score(query, {std::string(response)}).at(0);
}

std::vector<std::optional<double>> ExternalJudgeReward::score_all(std::string_view query,
                                                                  const std::vector<std::string>& responses) const {
  std::vector<std::pair<std::string, std::vector<std::string>>> reqs;
  for (std::size_t i = 0; i < responses.size(); i += kJudgeMaxResponses) {
    const auto end = std::min(responses.size(), i + kJudgeMaxResponses);
    reqs.emplace_back(std::string(query), std::vector<std::string>(responses.begin() + static_cast<std::ptrdiff_t>(i),
                                                                   responses.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  auto got = client_->score_many(reqs);
  std::vector<std::optional<double>> out;
  for (std::size_t r = 0; r < reqs.size(); ++r) {
    for (std::size_t j = 0; j < reqs[r].second.size(); ++j) {
      out.push_back(got[r] ? std::optional<double>((*got[r])[j]) : std::nullopt);
    }
  }
  return out;
}

Var pairwise_rm_loss(Tape& tape, Model& model, const TokenSeq& chosen, const TokenSeq& rejected) {
  BoundModel b = bind(tape, model);
  Var diff = sub(sequence_reward(b, chosen.ids), sequence_reward(b, rejected.ids));
  return softplus(scale(diff, -1.0));  // -log sigmoid(d) = softplus(-d)
}

RmTrainResult train_learned_rm(Model init, const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                               const RmTrainConfig& cfg) {
  if (pairs.empty()) throw ContractError("train_learned_rm: no preference pairs");
  if (cfg.batch == 0) throw ConfigError("reward.batch", "must be at least 1");
  RmTrainResult res{std::move(init), {}, {}, 0.0, false};
  Model& model = res.model;

  res.degenerate = std::all_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.first.ids == p.second.ids; });
  if (res.degenerate) std::clog << "train_learned_rm: warning: every pair is identical; nothing to learn\n";

  const std::size_t steps_per_epoch = (pairs.size() + cfg.batch - 1) / cfg.batch;
  Optimizer opt(model.parameters(), LinearSchedule{cfg.peak_lr, cfg.warmup, steps_per_epoch * cfg.epochs}, {},
                cfg.batch);
  model.zero_grad();
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, 0x726d, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double epoch_total = 0.0, batch_total = 0.0;
    std::size_t in_batch = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& [c, r] = pairs[order[i]];
      Tape tape;
      Var loss = pairwise_rm_loss(tape, model, c, r);
      const double l = loss.item();
      if (!std::isfinite(l)) throw NumericError("learned RM loss is not finite at pair " + std::to_string(order[i]));
      epoch_total += l;
      batch_total += l;
      ++in_batch;
      tape.backward(scale(loss, 1.0 / static_cast<double>(cfg.batch)));
      const bool last = i + 1 == order.size();
      if (opt.micro_step() || (last && opt.flush())) {
        res.step_loss.push_back(batch_total / static_cast<double>(in_batch));
        batch_total = 0.0;
        in_batch = 0;
      }
    }
    res.epoch_loss.push_back(epoch_total / static_cast<double>(pairs.size()));
  }
  std::size_t correct = 0;
  LearnedRewardModel rm(model);
  for (const auto& [c, r] : pairs) correct += rm.score(c) > rm.score(r);
  res.train_accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
  return res;
}

double rm_accuracy(const RewardProvider& provider, const std::vector<Record>& pairs) {
  if (pairs.empty()) throw ContractError("rm_accuracy: no pairs");
  std::size_t correct = 0, failed = 0;
  for (const auto& p : pairs) {
    auto s = provider.score_all(p.query, {p.chosen, p.rejected});
    if (!s[0] || !s[1]) {
      ++failed;
      continue;
    }
    correct += *s[0] > *s[1];
  }
  if (failed) std::clog << "rm_accuracy: " << failed << " pairs could not be scored\n";
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

}  // namespace rrhf
