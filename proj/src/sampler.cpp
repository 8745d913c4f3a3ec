#include "rrhf/sampler.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <thread>
#include <unordered_map>

#include "rrhf/errors.hpp"

namespace rrhf {

SamplingPolicy SamplingPolicy::parse(const std::string& s) {
  if (s == "BP") return {PolicyKind::BP, 1};
  if (s == "DP") return {PolicyKind::DP, 1};
  if (s == "D") return {PolicyKind::D, 1};
  if (s == "P") return {PolicyKind::P, 1};
  if (s.rfind("IP-", 0) == 0 && s.size() > 3) {
    const std::string n = s.substr(3);
    if (n.find_first_not_of("0123456789") == std::string::npos && n.size() < 4) {
      const std::size_t it = std::stoul(n);
      if (it >= 1) return {PolicyKind::IP, it};
    }
  }
  throw ConfigError("policy", "unknown sampling policy '" + s + "' (expected BP, DP, D, P or IP-n)");
}

std::string SamplingPolicy::name() const {
  switch (kind) {
    case PolicyKind::BP: return "BP";
    case PolicyKind::DP: return "DP";
    case PolicyKind::D: return "D";
    case PolicyKind::P: return "P";
    case PolicyKind::IP: return "IP-" + std::to_string(iteration);
  }
  return "?";
}

SamplingPolicy SamplingPolicy::at_iteration(std::size_t n) const {
  if (kind != PolicyKind::IP) return *this;
  if (n <= 1) return {PolicyKind::DP, 1};
  return {PolicyKind::IP, n};
}

std::size_t SamplingPolicy::candidates_per_set() const {
  switch (kind) {
    case PolicyKind::P: return 2;
    case PolicyKind::D: return 4;
    default: return 6;
  }
}

namespace {

constexpr std::uint64_t kRolloutStream = 0x726f6c6c;  // per-query decode seeds

std::string generated_source(const SamplingPolicy& p) {
  if (p.kind == PolicyKind::BP) return "beam";
  if (p.kind == PolicyKind::IP && p.iteration > 1) return "prior_iteration";
  return "diverse_beam";
}

}  // namespace

RolloutResult generate_rollouts(const SamplingPolicy& policy_in, const Model* model, const std::vector<Record>& data,
                                const RewardProvider& provider, const SamplerConfig& cfg,
                                const std::vector<RolloutSet>* prior) {
  if (policy_in.kind == PolicyKind::IP && policy_in.iteration > 1 && !model) {
    throw ConfigError("policy", policy_in.name() + " needs the checkpoint trained in iteration " +
                                    std::to_string(policy_in.iteration - 1));
  }
  const SamplingPolicy policy = policy_in.at_iteration(policy_in.iteration);
  if (policy.generates() && !model) throw ContractError("generate_rollouts: policy " + policy.name() + " needs a model");
  const auto& vocab = Vocabulary::standard();
  const DecodeConfig& dcfg = policy.kind == PolicyKind::BP ? cfg.beam : cfg.diverse;
  dcfg.validate();

  std::unordered_map<std::string, std::pair<double, double>> cached;
  if (prior) {
    for (const auto& s : *prior) {
      std::optional<double> good, bad;
      for (const auto& c : s.candidates) {
        if (c.source == "dataset_good") good = c.reward;
        if (c.source == "dataset_bad") bad = c.reward;
      }
      if (good && bad) cached[s.query] = {*good, *bad};
    }
  }

  std::vector<std::optional<RolloutSet>> slots(data.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < data.size(); i = next++) {
      const Record& rec = data[i];
      RolloutSet set{rec.query, policy.iteration, policy.name(), {}};
      std::vector<std::string> texts;
      if (policy.generates()) {
        DecodeConfig d = dcfg;
        d.seed = derive_seed(cfg.seed, kRolloutStream, i);
        const auto prompt = encode_query(vocab, rec.query, cfg.truncation).ids;
        const std::string src = generated_source(policy);
        for (const auto& h : decode(*model, prompt, d)) {
          set.candidates.push_back({vocab.decode_response(h.tokens), src, 0.0});
        }
      }
      const std::size_t generated = set.candidates.size();
      if (policy.uses_dataset()) {
        set.candidates.push_back({rec.chosen, "dataset_good", 0.0});
        set.candidates.push_back({rec.rejected, "dataset_bad", 0.0});
      }
      // Score everything not served from the cache.
      auto hit = policy.uses_dataset() ? cached.find(rec.query) : cached.end();
      const std::size_t to_score = hit != cached.end() ? generated : set.candidates.size();
      for (std::size_t c = 0; c < to_score; ++c) texts.push_back(set.candidates[c].text);
      std::vector<std::optional<double>> scores;
      try {
        scores = provider.score_all(rec.query, texts);
      } catch (const Error& e) {
        std::clog << "sampler: reward provider failed for query " << i << ": " << e.what() << '\n';
        continue;
      }
      bool ok = true;
      for (std::size_t c = 0; c < to_score; ++c) {
        if (!scores[c] || !std::isfinite(*scores[c])) {
          ok = false;
          break;
        }
        set.candidates[c].reward = *scores[c];
      }
      if (!ok) continue;
      if (hit != cached.end()) {
        set.candidates[generated].reward = hit->second.first;
        set.candidates[generated + 1].reward = hit->second.second;
      }
      slots[i] = std::move(set);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(cfg.threads, data.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();

  RolloutResult res;
  for (auto& s : slots) {
    if (s) {
      res.sets.push_back(std::move(*s));
    } else {
      ++res.skipped;
    }
  }
  if (res.skipped) std::clog << "sampler: skipped " << res.skipped << " of " << data.size() << " queries\n";
  return res;
}

nlohmann::json to_json(const RolloutSet& s) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : s.candidates) cands.push_back({{"text", c.text}, {"source", c.source}, {"reward", c.reward}});
  return {{"query", s.query}, {"iteration", s.iteration}, {"policy", s.policy}, {"candidates", cands}};
}

RolloutSet rollout_from_json(const nlohmann::json& j) {
  RolloutSet s;
  s.query = j.at("query").get<std::string>();
  s.iteration = j.at("iteration").get<std::size_t>();
  s.policy = j.at("policy").get<std::string>();
  for (const auto& c : j.at("candidates")) {
    s.candidates.push_back({c.at("text").get<std::string>(), c.at("source").get<std::string>(), c.at("reward").get<double>()});
  }
  return s;
}

void write_rollouts(const std::filesystem::path& path, const std::vector<RolloutSet>& sets, const nlohmann::json& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    for (const auto& s : sets) {
      nlohmann::json j = to_json(s);
      for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
      out << j.dump() << '\n';
    }
    if (!out) throw Error("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<RolloutSet> read_rollouts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError(path.string());
  std::vector<RolloutSet> sets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    RolloutSet s;
    try {
      s = rollout_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(lineno, std::string("malformed rollout set: ") + e.what());
    }
    std::size_t want = 0;
    try {
      want = SamplingPolicy::parse(s.policy).candidates_per_set();
    } catch (const ConfigError& e) {
      throw ValidationError(lineno, e.what());
    }
    if (s.candidates.size() != want) {
      throw ValidationError(lineno, "policy " + s.policy + " expects " + std::to_string(want) + " candidates, found " +
                                        std::to_string(s.candidates.size()));
    }
    sets.push_back(std::move(s));
  }
  if (sets.empty()) throw ValidationError(0, "rollout file " + path.string() + " holds no sets");
  return sets;
}

RolloutStats rollout_stats(const std::vector<RolloutSet>& sets) {
  if (sets.empty()) throw ContractError("rollout_stats: no sets");
  RolloutStats st;
  double sum = 0.0, max_sum = 0.0;
  bool first = true;
  for (const auto& s : sets) {
    if (s.candidates.empty()) throw ContractError("rollout_stats: empty candidate set");
    double mx = s.candidates[0].reward;
    for (const auto& c : s.candidates) {
      sum += c.reward;
      mx = std::max(mx, c.reward);
      if (first) {
        st.min_reward = st.max_reward = c.reward;
        first = false;
      }
      st.min_reward = std::min(st.min_reward, c.reward);
      st.max_reward = std::max(st.max_reward, c.reward);
      ++st.candidates;
    }
    max_sum += mx;
  }
  st.mean = sum / static_cast<double>(st.candidates);
  double ss = 0.0;
  for (const auto& s : sets) {
    for (const auto& c : s.candidates) ss += (c.reward - st.mean) * (c.reward - st.mean);
  }
  st.std = std::sqrt(ss / static_cast<double>(st.candidates));
  st.max = max_sum / static_cast<double>(sets.size());
  return st;
}

nlohmann::json to_json(const RolloutStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"max", s.max}, {"min_reward", s.min_reward},
          {"max_reward", s.max_reward}, {"candidates", s.candidates}};
}

}  // namespace rrhf
