#include "rrhf/config.hpp"

#include <fstream>
#include <sstream>

#include "rrhf/checkpoint.hpp"
#include "rrhf/hashing.hpp"
#include "rrhf/json_util.hpp"
#include "rrhf/rng.hpp"

namespace rrhf {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSamplerStream = 0x73616d70;

std::string hash_json(const json& j) { return sha256_hex(j.dump()); }

// --- readers -------------------------------------------------------------------

TaskSpec read_task_spec(ObjectReader& r, TaskSpec s) {
  s.kind = task_kind_from_string(r.get<std::string>("kind", to_string(s.kind)));
  s.min_len = r.get<std::size_t>("min_len", s.min_len);
  s.max_len = r.get<std::size_t>("max_len", s.max_len);
  s.alphabet = r.get<std::string>("alphabet", s.alphabet);
  s.max_edits = r.get<std::size_t>("max_edits", s.max_edits);
  if (const json* f = r.child("format")) {
    ObjectReader fr(*f, r.key_path("format"));
    auto& fm = s.format;
    fm.prefix = fr.get<std::string>("prefix", fm.prefix);
    fm.prefix_weight = fr.get<double>("prefix_weight", fm.prefix_weight);
    fm.keyword_weight = fr.get<double>("keyword_weight", fm.keyword_weight);
    fm.length_weight = fr.get<double>("length_weight", fm.length_weight);
    fm.length_slack = fr.get<std::size_t>("length_slack", fm.length_slack);
    fr.finish();
  }
  return s;
}

TaskConfig read_task(const json& j) {
  ObjectReader r(j, "task");
  TaskConfig t;
  try {
    t.spec = read_task_spec(r, t.spec);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("task.kind", e.what());
  }
  t.dataset = r.get<std::string>("dataset", "");
  if (const json* s = r.child("splits")) {
    ObjectReader sr(*s, "task.splits");
    t.sft_split = sr.get<std::size_t>("sft", t.sft_split);
    t.train_split = sr.get<std::size_t>("train", t.train_split);
    t.eval_split = sr.get<std::size_t>("eval", t.eval_split);
    sr.finish();
  }
  r.finish();
  t.spec.validate();
  if (t.train_split == 0) throw ConfigError("task.splits.train", "must be at least 1");
  if (t.eval_split == 0) throw ConfigError("task.splits.eval", "must be at least 1");
  return t;
}

TrainConfig read_train(const json* j, const std::string& path, TrainConfig c, bool* use_rejected = nullptr) {
  if (j) {
    ObjectReader r(*j, path);
    if (use_rejected) *use_rejected = r.get<bool>("use_rejected", *use_rejected);
    c.epochs = r.get<std::size_t>("epochs", c.epochs);
    c.peak_lr = r.get<double>("peak_lr", c.peak_lr);
    c.warmup_ratio = r.get<double>("warmup_ratio", c.warmup_ratio);
    c.accumulation = r.get<std::size_t>("accumulation", c.accumulation);
    c.max_grad_norm = r.get<double>("max_grad_norm", c.max_grad_norm);
    if (!use_rejected) {
      c.rank_weight = r.get<double>("rank_weight", c.rank_weight);
      c.margin = r.get<double>("margin", c.margin);
    }
    r.finish();
  }
  if (c.epochs == 0) throw ConfigError(path + ".epochs", "must be at least 1");
  if (c.accumulation == 0) throw ConfigError(path + ".accumulation", "must be at least 1");
  if (!(c.peak_lr >= 0.0)) throw ConfigError(path + ".peak_lr", "must be non-negative");
  if (!(c.warmup_ratio >= 0.0 && c.warmup_ratio <= 1.0)) {
    throw ConfigError(path + ".warmup_ratio", "must be within [0, 1]");
  }
  if (c.max_grad_norm < 0.0) throw ConfigError(path + ".max_grad_norm", "must be >= 0");
  if (c.rank_weight < 0.0) throw ConfigError(path + ".rank_weight", "must be >= 0");
  if (c.margin < 0.0) throw ConfigError(path + ".margin", "must be >= 0");
  return c;
}

json train_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},           {"peak_lr", c.peak_lr},     {"warmup_ratio", c.warmup_ratio},
          {"accumulation", c.accumulation}, {"max_grad_norm", c.max_grad_norm}, {"rank_weight", c.rank_weight},
          {"margin", c.margin}};
}

DecodeConfig read_decode(const json* j, const std::string& path, DecodeConfig c) {
  if (j) {
    ObjectReader r(*j, path);
    c.beam_size = r.get<std::size_t>("beam_size", c.beam_size);
    if (c.strategy == Strategy::diverse_beam) {
      c.group_count = r.get<std::size_t>("group_count", c.group_count);
      c.diversity_penalty = r.get<double>("diversity_penalty", c.diversity_penalty);
    }
    c.temperature = r.get<double>("temperature", c.temperature);
    c.max_new_tokens = r.get<std::size_t>("max_new_tokens", c.max_new_tokens);
    r.finish();
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    // decode.* -> <section>.*
    const auto& kp = e.key_path();
    const auto dot = kp.find('.');
    throw ConfigError(path + (dot == std::string::npos ? "" : kp.substr(dot)), e.what());
  }
  if (c.beam_size != 4) throw ConfigError(path + ".beam_size", "candidate sets use exactly 4 generated responses");
  return c;
}

json decode_json(const DecodeConfig& c) {
  json j = {{"beam_size", c.beam_size}, {"temperature", c.temperature}, {"max_new_tokens", c.max_new_tokens}};
  if (c.strategy == Strategy::diverse_beam) {
    j["group_count"] = c.group_count;
    j["diversity_penalty"] = c.diversity_penalty;
  }
  return j;
}

PpoConfig read_ppo(const json* j) {
  PpoConfig c;
  if (j) {
    ObjectReader r(*j, "ppo");
    c.clip = r.get<double>("clip", c.clip);
    c.gamma = r.get<double>("gamma", c.gamma);
    c.lambda = r.get<double>("lambda", c.lambda);
    c.kl_beta = r.get<double>("kl_beta", c.kl_beta);
    c.value_weight = r.get<double>("value_weight", c.value_weight);
    c.rollout_batch = r.get<std::size_t>("rollout_batch", c.rollout_batch);
    c.update_epochs = r.get<std::size_t>("update_epochs", c.update_epochs);
    c.minibatch = r.get<std::size_t>("minibatch", c.minibatch);
    c.epochs = r.get<std::size_t>("epochs", c.epochs);
    c.peak_lr = r.get<double>("peak_lr", c.peak_lr);
    c.warmup_ratio = r.get<double>("warmup_ratio", c.warmup_ratio);
    c.max_grad_norm = r.get<double>("max_grad_norm", c.max_grad_norm);
    c.whiten_advantages = r.get<bool>("whiten_advantages", c.whiten_advantages);
    c.temperature = r.get<double>("temperature", c.temperature);
    c.max_new_tokens = r.get<std::size_t>("max_new_tokens", c.max_new_tokens);
    c.max_ratio = r.get<double>("max_ratio", c.max_ratio);
    r.finish();
  }
  c.validate();
  if (!(c.peak_lr >= 0.0)) throw ConfigError("ppo.peak_lr", "must be non-negative");
  if (!(c.warmup_ratio >= 0.0 && c.warmup_ratio <= 1.0)) throw ConfigError("ppo.warmup_ratio", "must be within [0, 1]");
  if (!(c.max_ratio > 1.0)) throw ConfigError("ppo.max_ratio", "must be > 1");
  return c;
}

json ppo_json(const PpoConfig& c) {
  return {{"clip", c.clip},
          {"gamma", c.gamma},
          {"lambda", c.lambda},
          {"kl_beta", c.kl_beta},
          {"value_weight", c.value_weight},
          {"rollout_batch", c.rollout_batch},
          {"update_epochs", c.update_epochs},
          {"minibatch", c.minibatch},
          {"epochs", c.epochs},
          {"peak_lr", c.peak_lr},
          {"warmup_ratio", c.warmup_ratio},
          {"max_grad_norm", c.max_grad_norm},
          {"whiten_advantages", c.whiten_advantages},
          {"temperature", c.temperature},
          {"max_new_tokens", c.max_new_tokens},
          {"max_ratio", c.max_ratio}};
}

bool known_provider(const std::string& p) {
  return p == "oracle" || p == "learned_rm" || p == "lm_as_rm" || p == "external_judge";
}

json task_json(const TaskConfig& t) {
  const auto& s = t.spec;
  return {{"kind", to_string(s.kind)},
          {"min_len", s.min_len},
          {"max_len", s.max_len},
          {"alphabet", s.alphabet},
          {"max_edits", s.max_edits},
          {"format",
           {{"prefix", s.format.prefix},
            {"prefix_weight", s.format.prefix_weight},
            {"keyword_weight", s.format.keyword_weight},
            {"length_weight", s.format.length_weight},
            {"length_slack", s.format.length_slack}}},
          {"dataset", t.dataset},
          {"splits", {{"sft", t.sft_split}, {"train", t.train_split}, {"eval", t.eval_split}}}};
}

json reward_json(const RewardConfig& r) {
  return {{"provider", r.provider},
          {"rm",
           {{"epochs", r.rm.epochs}, {"peak_lr", r.rm.peak_lr}, {"warmup", r.rm.warmup}, {"batch", r.rm.batch}}},
          {"judge", {{"retries", r.judge_retries}, {"parallelism", r.judge_parallelism}}}};
}

json truncation_json(const TruncationConfig& t) {
  return {{"max_query_tokens", t.max_query_tokens}, {"max_response_tokens", t.max_response_tokens}};
}

// The pieces of the config the training reward depends on.
json reward_inputs(const RunConfig& c) {
  json j = {{"provider", c.reward.provider}};
  if (c.reward.provider == "learned_rm") j["rm_stage"] = rm_stage_hash(c);
  if (c.reward.provider == "lm_as_rm") j["sft_stage"] = sft_stage_hash(c);
  if (c.reward.provider == "oracle") j["task"] = task_json(c.task);
  return j;
}

}  // namespace

std::string to_string(TrainerKind k) {
  switch (k) {
    case TrainerKind::rrhf: return "rrhf";
    case TrainerKind::ppo: return "ppo";
    case TrainerKind::sft: return "sft";
  }
  return "?";
}

SamplerConfig RunConfig::sampler_config(std::uint64_t iteration) const {
  SamplerConfig s;
  s.beam = sampler.beam;
  s.diverse = sampler.diverse;
  s.truncation = truncation;
  s.threads = sampler.threads;
  s.seed = derive_seed(seed, kSamplerStream, iteration);
  return s;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e;
  e.decode.max_new_tokens = eval.max_new_tokens;
  e.truncation = truncation;
  e.threads = eval.threads;
  return e;
}

RunConfig run_config_from_json(const json& j) {
  ObjectReader r(j, "");
  RunConfig c;
  c.name = r.get<std::string>("name", c.name);
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  c.output_dir = r.get<std::string>("output_dir", c.output_dir);
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  const auto trainer = r.get<std::string>("trainer", "rrhf");
  if (trainer == "rrhf") {
    c.trainer = TrainerKind::rrhf;
  } else if (trainer == "ppo") {
    c.trainer = TrainerKind::ppo;
  } else if (trainer == "sft") {
    c.trainer = TrainerKind::sft;
  } else {
    throw ConfigError("trainer", "expected rrhf, ppo or sft, got \"" + trainer + "\"");
  }

  if (const json* m = r.child("model")) c.model = model_config_from_json(*m, "model");
  if (c.model.vocab_size != Vocabulary::standard().size()) {
    throw ConfigError("model.vocab_size", "must equal the vocabulary size " +
                                              std::to_string(Vocabulary::standard().size()));
  }
  if (const json* t = r.child("task")) c.task = read_task(*t);

  if (const json* t = r.child("truncation")) {
    ObjectReader tr(*t, "truncation");
    c.truncation.max_query_tokens = tr.get<std::size_t>("max_query_tokens", c.truncation.max_query_tokens);
    c.truncation.max_response_tokens = tr.get<std::size_t>("max_response_tokens", c.truncation.max_response_tokens);
    tr.finish();
  }
  if (c.truncation.max_query_tokens == 0) throw ConfigError("truncation.max_query_tokens", "must be at least 1");
  if (c.truncation.max_response_tokens == 0) throw ConfigError("truncation.max_response_tokens", "must be at least 1");
  if (c.truncation.max_query_tokens + c.truncation.max_response_tokens + 3 > c.model.context) {
    throw ConfigError("truncation", "query and response limits exceed model.context");
  }

  if (const json* rw = r.child("reward")) {
    ObjectReader rr(*rw, "reward");
    c.reward.provider = rr.get<std::string>("provider", c.reward.provider);
    if (const json* rm = rr.child("rm")) {
      ObjectReader mr(*rm, "reward.rm");
      c.reward.rm.epochs = mr.get<std::size_t>("epochs", c.reward.rm.epochs);
      c.reward.rm.peak_lr = mr.get<double>("peak_lr", c.reward.rm.peak_lr);
      c.reward.rm.warmup = mr.get<std::size_t>("warmup", c.reward.rm.warmup);
      c.reward.rm.batch = mr.get<std::size_t>("batch", c.reward.rm.batch);
      mr.finish();
    }
    if (const json* jd = rr.child("judge")) {
      ObjectReader jr(*jd, "reward.judge");
      c.reward.judge_retries = jr.get<std::size_t>("retries", c.reward.judge_retries);
      c.reward.judge_parallelism = jr.get<std::size_t>("parallelism", c.reward.judge_parallelism);
      jr.finish();
    }
    rr.finish();
  }
  if (!known_provider(c.reward.provider)) {
    throw ConfigError("reward.provider", "unknown provider \"" + c.reward.provider + "\"");
  }
  if (c.reward.rm.epochs == 0) throw ConfigError("reward.rm.epochs", "must be at least 1");
  if (c.reward.rm.batch == 0) throw ConfigError("reward.rm.batch", "must be at least 1");

  SftConfig sft_defaults;
  sft_defaults.train.epochs = 2;
  sft_defaults.train.peak_lr = 1e-3;
  sft_defaults.train.accumulation = 8;
  c.sft.use_rejected = sft_defaults.use_rejected;
  c.sft.train = read_train(r.child("sft"), "sft", sft_defaults.train, &c.sft.use_rejected);

  if (const json* s = r.child("sampler")) {
    ObjectReader sr(*s, "sampler");
    c.sampler.policy = sr.get<std::string>("policy", c.sampler.policy);
    c.sampler.beam = read_decode(sr.child("beam"), "sampler.beam", c.sampler.beam);
    c.sampler.diverse = read_decode(sr.child("diverse"), "sampler.diverse", c.sampler.diverse);
    c.sampler.threads = sr.get<std::size_t>("threads", c.sampler.threads);
    c.sampler.ip_restart = sr.get<bool>("ip_restart", c.sampler.ip_restart);
    sr.finish();
  }
  try {
    (void)SamplingPolicy::parse(c.sampler.policy);
  } catch (const Error& e) {
    throw ConfigError("sampler.policy", e.what());
  }
  if (c.sampler.threads == 0) throw ConfigError("sampler.threads", "must be at least 1");

  TrainConfig rrhf_defaults;
  rrhf_defaults.peak_lr = 1e-3;
  c.rrhf = read_train(r.child("rrhf"), "rrhf", rrhf_defaults);
  c.ppo = read_ppo(r.child("ppo"));

  if (const json* e = r.child("eval")) {
    ObjectReader er(*e, "eval");
    c.eval.provider = er.get<std::string>("provider", c.eval.provider);
    c.eval.max_new_tokens = er.get<std::size_t>("max_new_tokens", c.eval.max_new_tokens);
    c.eval.threads = er.get<std::size_t>("threads", c.eval.threads);
    c.eval.per_epoch = er.get<bool>("per_epoch", c.eval.per_epoch);
    er.finish();
  }
  if (!known_provider(c.eval.provider)) {
    throw ConfigError("eval.provider", "unknown provider \"" + c.eval.provider + "\"");
  }
  if (c.eval.max_new_tokens == 0) throw ConfigError("eval.max_new_tokens", "must be at least 1");
  if (c.eval.threads == 0) throw ConfigError("eval.threads", "must be at least 1");
  r.finish();

  c.ppo.truncation = c.truncation;
  c.ppo.seed = c.seed;
  c.rrhf.seed = c.seed;
  c.sft.train.seed = c.seed;
  c.reward.rm.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError(path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
  return {{"name", c.name},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"trainer", to_string(c.trainer)},
          {"model", to_json(c.model)},
          {"task", task_json(c.task)},
          {"truncation", truncation_json(c.truncation)},
          {"reward", reward_json(c.reward)},
          {"sft", [&] {
             json s = train_json(c.sft.train);
             s.erase("rank_weight");
             s.erase("margin");
             s["use_rejected"] = c.sft.use_rejected;
             return s;
           }()},
          {"sampler",
           {{"policy", c.sampler.policy},
            {"beam", decode_json(c.sampler.beam)},
            {"diverse", decode_json(c.sampler.diverse)},
            {"threads", c.sampler.threads},
            {"ip_restart", c.sampler.ip_restart}}},
          {"rrhf", train_json(c.rrhf)},
          {"ppo", ppo_json(c.ppo)},
          {"eval",
           {{"provider", c.eval.provider},
            {"max_new_tokens", c.eval.max_new_tokens},
            {"threads", c.eval.threads},
            {"per_epoch", c.eval.per_epoch}}}};
}

std::string config_hash(const RunConfig& c) { return hash_json(to_json(c)); }

std::string data_stage_hash(const RunConfig& c) {
  return hash_json({{"stage", "data"},
                    {"seed", c.seed},
                    {"task", task_json(c.task)},
                    {"truncation", truncation_json(c.truncation)}});
}

std::string sft_stage_hash(const RunConfig& c) {
  json s = train_json(c.sft.train);
  s["use_rejected"] = c.sft.use_rejected;
  return hash_json({{"stage", "sft"}, {"data", data_stage_hash(c)}, {"model", to_json(c.model)}, {"sft", s}});
}

std::string rm_stage_hash(const RunConfig& c) {
  return hash_json({{"stage", "rm"}, {"sft", sft_stage_hash(c)}, {"rm", reward_json(c.reward)["rm"]}});
}

std::string sample_stage_hash(const RunConfig& c, std::size_t iteration) {
  const auto policy = c.policy().at_iteration(iteration);
  json j = {{"stage", "sample"},
            {"iteration", iteration},
            {"policy", policy.name()},
            {"sft", sft_stage_hash(c)},
            {"reward", reward_inputs(c)}};
  if (policy.generates()) {
    j["beam"] = decode_json(c.sampler.beam);
    j["diverse"] = decode_json(c.sampler.diverse);
  }
  if (iteration > 1) j["model"] = rrhf_stage_hash(c, iteration - 1);
  return hash_json(j);
}

std::string rrhf_stage_hash(const RunConfig& c, std::size_t iteration) {
  json j = {{"stage", "rrhf"},
            {"iteration", iteration},
            {"rollouts", sample_stage_hash(c, iteration)},
            {"rrhf", train_json(c.rrhf)}};
  j["init"] = (iteration == 1 || c.sampler.ip_restart) ? sft_stage_hash(c) : rrhf_stage_hash(c, iteration - 1);
  return hash_json(j);
}

std::string ppo_stage_hash(const RunConfig& c) {
  return hash_json(
      {{"stage", "ppo"}, {"sft", sft_stage_hash(c)}, {"reward", reward_inputs(c)}, {"ppo", ppo_json(c.ppo)}});
}

std::string eval_stage_hash(const RunConfig& c) {
  return hash_json({{"stage", "eval"},
                    {"provider", c.eval.provider},
                    {"max_new_tokens", c.eval.max_new_tokens},
                    {"data", data_stage_hash(c)}});
}

}  // namespace rrhf
