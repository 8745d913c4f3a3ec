#include "rrhf/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <thread>

#include "rrhf/errors.hpp"

namespace rrhf {

std::vector<std::vector<TokenId>> first_turn_stops() { return {{Vocabulary::kBos}, {Vocabulary::kSep}}; }

std::vector<double> EvalReport::scored() const {
  std::vector<double> out;
  for (const auto& r : per_query) {
    if (r) out.push_back(*r);
  }
  return out;
}

double EvalReport::reward_std() const {
  const auto xs = scored();
  if (xs.empty()) return 0.0;
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["model_id"] = r.model_id;
  j["label"] = r.label;
  j["mean_reward"] = r.mean_reward;
  j["perplexity"] = r.perplexity ? nlohmann::json(*r.perplexity) : nlohmann::json(nullptr);
  j["rm_accuracy"] = r.rm_accuracy ? nlohmann::json(*r.rm_accuracy) : nlohmann::json(nullptr);
  j["per_query_rewards"] = nlohmann::json::array();
  for (const auto& x : r.per_query) j["per_query_rewards"].push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
  j["responses"] = r.responses;
  j["failed"] = r.failed;
  j["reward_std"] = r.reward_std();
  j["rollout_stats"] = r.rollout ? to_json(*r.rollout) : nlohmann::json(nullptr);
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.mean_reward = j.at("mean_reward").get<double>();
    if (!j.at("perplexity").is_null()) r.perplexity = j["perplexity"].get<double>();
    if (!j.at("rm_accuracy").is_null()) r.rm_accuracy = j["rm_accuracy"].get<double>();
    for (const auto& x : j.at("per_query_rewards")) {
      r.per_query.push_back(x.is_null() ? std::nullopt : std::optional<double>(x.get<double>()));
    }
    r.responses = j.at("responses").get<std::vector<std::string>>();
    r.failed = j.at("failed").get<std::size_t>();
    if (j.contains("rollout_stats") && !j["rollout_stats"].is_null()) {
      const auto& s = j["rollout_stats"];
      RolloutStats st;
      st.mean = s.at("mean").get<double>();
      st.std = s.at("std").get<double>();
      st.max = s.at("max").get<double>();
      st.min_reward = s.at("min_reward").get<double>();
      st.max_reward = s.at("max_reward").get<double>();
      st.candidates = s.at("candidates").get<std::size_t>();
      r.rollout = st;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(1, std::string("eval report: ") + e.what());
  }
}

namespace {

void aggregate(EvalReport& r) {
  const auto xs = r.scored();
  r.failed = r.per_query.size() - xs.size();
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean_reward = xs.empty() ? std::nan("") : s / static_cast<double>(xs.size());
  if (r.failed) std::clog << "eval: " << r.failed << " of " << r.per_query.size() << " queries could not be scored\n";
}

std::optional<double> try_score(const RewardProvider& provider, const std::string& q, const std::string& resp,
                                std::size_t index) {
  try {
    auto s = provider.score_all(q, {resp});
    if (s.size() == 1 && s[0] && std::isfinite(*s[0])) return s[0];
    std::clog << "eval: query " << index << " was not scored\n";
  } catch (const Error& e) {
    std::clog << "eval: scoring query " << index << " failed: " << e.what() << '\n';
  }
  return std::nullopt;
}

}  // namespace

EvalReport evaluate_responses(const std::vector<Record>& eval_set, const std::vector<std::string>& responses,
                              const RewardProvider& provider) {
  if (eval_set.empty()) throw ContractError("evaluate: empty evaluation set");
  if (responses.size() != eval_set.size()) throw ContractError("evaluate: one response per query required");
  EvalReport r;
  r.responses = responses;
  for (std::size_t i = 0; i < eval_set.size(); ++i) r.per_query.push_back(try_score(provider, eval_set[i].query, responses[i], i));
  aggregate(r);
  return r;
}

namespace {

// Greedy responses and the token sequences they form with their queries.
EvalReport decode_and_score(const LanguageModel& lm, const std::vector<Record>& eval_set,
                            const RewardProvider& provider, const EvalConfig& cfg, std::vector<TokenSeq>* seqs) {
  if (eval_set.empty()) throw ContractError("evaluate: empty evaluation set");
  cfg.decode.validate();
  const auto& vocab = Vocabulary::standard();
  const std::size_t n = eval_set.size();
  EvalReport r;
  r.responses.resize(n);
  r.per_query.resize(n);
  if (seqs) seqs->assign(n, {});

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto prompt = encode_query(vocab, eval_set[i].query, cfg.truncation).ids;
      DecodeConfig d = cfg.decode;
      d.seed = derive_seed(cfg.decode.seed, 0x6576616c, i);
      const auto h = decode(lm, prompt, d).front();
      r.responses[i] = vocab.decode_response(h.tokens);
      if (seqs) {
        std::vector<TokenId> resp(h.tokens.begin(), std::find(h.tokens.begin(), h.tokens.end(), Vocabulary::kEos));
        resp.push_back(Vocabulary::kEos);
        if (prompt.size() + resp.size() > lm.context_window()) resp.resize(lm.context_window() - prompt.size());
        (*seqs)[i] = make_sequence(prompt, resp);
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, n));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  // Scoring is serial so provider failures are logged in query order.
  for (std::size_t i = 0; i < n; ++i) r.per_query[i] = try_score(provider, eval_set[i].query, r.responses[i], i);
  aggregate(r);
  return r;
}

}  // namespace

EvalReport evaluate(const LanguageModel& lm, const std::vector<Record>& eval_set, const RewardProvider& provider,
                    const EvalConfig& cfg) {
  return decode_and_score(lm, eval_set, provider, cfg, nullptr);
}

EvalReport evaluate(const Model& model, const std::vector<Record>& eval_set, const RewardProvider& provider,
                    const EvalConfig& cfg, const Model* scorer) {
  std::vector<TokenSeq> seqs;
  TransformerLM lm(model);
  EvalReport r = decode_and_score(lm, eval_set, provider, cfg, scorer ? &seqs : nullptr);
  if (scorer) r.perplexity = perplexity(*scorer, seqs);
  return r;
}

double default_tie_band(std::span<const std::optional<double>> a, std::span<const std::optional<double>> b) {
  double lo = INFINITY, hi = -INFINITY;
  for (auto s : {a, b}) {
    for (const auto& x : s) {
      if (!x) continue;
      lo = std::min(lo, *x);
      hi = std::max(hi, *x);
    }
  }
  return hi > lo ? 0.05 * (hi - lo) : 0.0;
}

Comparison compare(std::span<const std::optional<double>> a, std::span<const std::optional<double>> b, double delta) {
  if (a.size() != b.size()) {
    throw ContractError("compare: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " queries");
  }
  if (!(delta >= 0.0)) throw ContractError("compare: tie band must be >= 0");
  Comparison c;
  c.delta = delta;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i] || !b[i]) continue;
    if (*a[i] > *b[i] + delta) {
      ++c.win;
    } else if (*a[i] < *b[i] - delta) {
      ++c.lose;
    } else {
      ++c.tie;
    }
  }
  return c;
}

Comparison compare(const EvalReport& a, const EvalReport& b, std::optional<double> delta) {
  return compare(a.per_query, b.per_query, delta ? *delta : default_tie_band(a.per_query, b.per_query));
}

void write_comparison_csv(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows,
                          const std::string& config_hash) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  if (!config_hash.empty()) out << "# config_hash: " << config_hash << '\n';
  out << "a,b,win,tie,lose,delta\n";
  for (const auto& r : rows) {
    out << r.a << ',' << r.b << ',' << r.result.win << ',' << r.result.tie << ',' << r.result.lose << ','
        << nlohmann::json(r.result.delta).dump() << '\n';
  }
}

double best_of_n_gap(const EvalReport& trained, const RolloutStats& rollouts) { return trained.mean_reward - rollouts.max; }

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("spearman: series lengths differ");
  if (x.size() < 2) throw ContractError("spearman: need at least two points");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ContractError("spearman: correlation undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

double loss_reward_correlation(const std::vector<EpochMetrics>& epochs) {
  if (epochs.size() < 3) {
    throw ContractError("loss/reward correlation needs at least 3 epochs, got " + std::to_string(epochs.size()));
  }
  std::vector<double> loss, reward;
  for (const auto& e : epochs) {
    if (!e.eval.is_object() || !e.eval.contains("mean_reward") || !e.eval["mean_reward"].is_number()) {
      throw ContractError("epoch " + std::to_string(e.epoch) + " has no mean_reward");
    }
    loss.push_back(e.total_loss);
    reward.push_back(e.eval["mean_reward"].get<double>());
  }
  return spearman(loss, reward);
}

}  // namespace rrhf
