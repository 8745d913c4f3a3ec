#include "rrhf/rrhf.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rrhf/errors.hpp"
#include "rrhf/rng.hpp"

namespace rrhf {

std::size_t RankedBatch::best() const {
  std::size_t b = 0;
  for (std::size_t i = 1; i < rewards.size(); ++i) {
    if (rewards[i] > rewards[b]) b = i;
  }
  return b;
}

void RankedBatch::validate() const {
  if (seqs.empty()) throw ContractError("ranked batch with no candidates");
  if (seqs.size() != rewards.size()) throw ContractError("ranked batch: candidate and reward counts differ");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw NumericError("ranked batch for '" + query + "' has a non-finite reward");
  }
}

RankedBatch to_ranked(const RolloutSet& set, const TruncationConfig& trunc, const Vocabulary& vocab) {
  RankedBatch b;
  b.query = set.query;
  for (const auto& c : set.candidates) {
    b.seqs.push_back(make_sequence(vocab, set.query, c.text, trunc));
    b.rewards.push_back(c.reward);
    b.texts.push_back(c.text);
  }
  b.validate();
  return b;
}

std::vector<RankedBatch> to_ranked(const std::vector<RolloutSet>& sets, const TruncationConfig& trunc) {
  std::vector<RankedBatch> out;
  out.reserve(sets.size());
  for (const auto& s : sets) out.push_back(to_ranked(s, trunc));
  return out;
}

double rank_loss(std::span<const double> p, std::span<const double> r, double margin) {
  if (p.size() != r.size()) throw ContractError("rank_loss: " + std::to_string(p.size()) + " scores for " +
                                                std::to_string(r.size()) + " rewards");
  if (p.empty()) throw ContractError("rank_loss: no candidates");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (r[i] < r[j]) loss += std::max(0.0, p[i] - p[j] + margin);
    }
  }
  return loss;
}

Var rank_loss(Var p, std::span<const double> r, double margin) {
  const Tensor& pv = p.value();
  if (pv.numel() != r.size()) throw ContractError("rank_loss: " + std::to_string(pv.numel()) + " scores for " +
                                                  std::to_string(r.size()) + " rewards");
  const double value = rank_loss(pv.data(), r, margin);
  std::vector<double> rewards(r.begin(), r.end());
  return p.tape().record(Tensor::scalar(value), {p}, [p, rewards, margin](Tape& t, const Tensor& g) {
    if (!t.needs_grad(p)) return;
    const Tensor& v = t.value(p);
    Tensor& gp = t.grad_buffer(p);
    const double go = g[0];
    const std::size_t k = rewards.size();
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        // hinge subgradient is 0 at the boundary
        if (rewards[i] < rewards[j] && v[i] - v[j] + margin > 0.0) {
          gp[i] += go;
          gp[j] -= go;
        }
      }
    }
  });
}

Var sft_loss(const BoundModel& m, const TokenSeq& seq) { return scale(sum(response_log_probs(m, seq)), -1.0); }

LossParts rrhf_loss(const BoundModel& m, const RankedBatch& batch, double rank_weight, double margin) {
  batch.validate();
  const std::size_t best = batch.best();
  std::vector<Var> scores;
  Var sft;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var lp = sum(response_log_probs(m, batch.seqs[i]));
    if (i == best) sft = scale(lp, -1.0);
    scores.push_back(scale(lp, 1.0 / static_cast<double>(batch.seqs[i].response_len())));
  }
  Var rank = rank_loss(stack(scores), batch.rewards, margin);
  LossParts out;
  out.rank = rank.item();
  out.sft = sft.item();
  out.total = add(scale(rank, rank_weight), sft);
  return out;
}

std::size_t total_optimizer_steps(std::size_t items, const TrainConfig& cfg) {
  const std::size_t acc = std::max<std::size_t>(cfg.accumulation, 1);
  return ((items + acc - 1) / acc) * cfg.epochs;
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566;

struct ItemLoss {
  Var total;
  double rank = 0.0;
  double sft = 0.0;
};

template <class LossFn, class DumpFn>
TrainResult train_loop(Model& model, std::size_t n, const TrainConfig& cfg, const TrainHooks& hooks, LossFn&& loss_fn,
                       DumpFn&& dump) {
  if (n == 0) throw ConfigError("train", "no training data");
  if (cfg.epochs == 0) throw ConfigError("train.epochs", "must be at least 1");
  if (cfg.accumulation == 0) throw ConfigError("train.accumulation", "must be at least 1");
  if (!(cfg.peak_lr >= 0.0)) throw ConfigError("train.peak_lr", "must be non-negative");
  if (!(cfg.warmup_ratio >= 0.0 && cfg.warmup_ratio <= 1.0)) {
    throw ConfigError("train.warmup_ratio", "must be within [0, 1]");
  }
  const std::size_t total = total_optimizer_steps(n, cfg);
  const auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_ratio * static_cast<double>(total)));
  AdamConfig adam;
  adam.max_grad_norm = cfg.max_grad_norm;
  Optimizer opt(model.parameters(), LinearSchedule{cfg.peak_lr, warmup, total}, adam, cfg.accumulation);
  // The policy objective never touches the scalar head.
  std::vector<bool> mask(model.parameters().size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = !model.is_head_parameter(i);
  opt.set_trainable(mask);
  model.zero_grad();

  TrainResult res;
  std::vector<std::size_t> order(n);
  const double inv_acc = 1.0 / static_cast<double>(cfg.accumulation);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, kShuffleStream, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    EpochMetrics em;
    em.epoch = epoch;
    StepMetrics window;
    std::size_t in_window = 0;
    for (std::size_t pos = 0; pos < n; ++pos) {
      const std::size_t item = order[pos];
      Tape tape;
      ItemLoss l = loss_fn(tape, item);
      const double total_v = l.total.item();
      if (!std::isfinite(total_v)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", item " + std::to_string(item) +
                           "\n" + dump(item));
      }
      tape.backward(scale(l.total, inv_acc));
      em.rank_loss += l.rank;
      em.sft_loss += l.sft;
      em.total_loss += total_v;
      window.rank_loss += l.rank;
      window.sft_loss += l.sft;
      window.total_loss += total_v;
      ++in_window;

      // Each epoch ends with an update, even on a partial window.
      const bool due = opt.pending() + 1 == opt.accumulation_steps() || pos + 1 == n;
      if (!due) {
        opt.micro_step();
        continue;
      }
      if (hooks.before_update) hooks.before_update(model);
      window.lr = opt.current_lr();
      if (!opt.micro_step()) opt.flush();
      window.step = opt.step();
      window.epoch = epoch;
      window.rank_loss /= static_cast<double>(in_window);
      window.sft_loss /= static_cast<double>(in_window);
      window.total_loss /= static_cast<double>(in_window);
      res.steps.push_back(window);
      if (hooks.on_step) hooks.on_step(window);
      window = {};
      in_window = 0;
    }
    em.rank_loss /= static_cast<double>(n);
    em.sft_loss /= static_cast<double>(n);
    em.total_loss /= static_cast<double>(n);
    if (hooks.on_epoch) em.eval = hooks.on_epoch(epoch, model);
    res.epochs.push_back(std::move(em));
  }
  return res;
}

}  // namespace

TrainResult train_rrhf(Model& model, const std::vector<RankedBatch>& data, const TrainConfig& cfg,
                       const TrainHooks& hooks) {
  for (const auto& b : data) b.validate();
  return train_loop(
      model, data.size(), cfg, hooks,
      [&](Tape& tape, std::size_t i) {
        LossParts p = rrhf_loss(bind(tape, model), data[i], cfg.rank_weight, cfg.margin);
        return ItemLoss{p.total, p.rank, p.sft};
      },
      [&](std::size_t i) {
        std::ostringstream os;
        const auto& b = data[i];
        os << "query: " << b.query << '\n';
        for (std::size_t c = 0; c < b.size(); ++c) {
          os << "  [" << c << "] reward=" << b.rewards[c] << " text=" << (c < b.texts.size() ? b.texts[c] : "") << '\n';
        }
        return os.str();
      });
}

TrainResult train_sft(Model& model, const std::vector<TokenSeq>& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  return train_loop(
      model, data.size(), cfg, hooks,
      [&](Tape& tape, std::size_t i) {
        Var l = sft_loss(bind(tape, model), data[i]);
        return ItemLoss{l, 0.0, l.item()};
      },
      [&](std::size_t i) { return "sequence " + std::to_string(i) + " (" + std::to_string(data[i].size()) + " tokens)"; });
}

}  // namespace rrhf
