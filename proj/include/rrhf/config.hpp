#pragma once
// RunConfig: one JSON document describing a whole experiment. Parsing is
// strict (unknown keys are errors) and every error names its key path. The
// schema is documented in README.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "rrhf/corpus.hpp"
#include "rrhf/decoder.hpp"
#include "rrhf/eval.hpp"
#include "rrhf/model.hpp"
#include "rrhf/ppo.hpp"
#include "rrhf/reward.hpp"
#include "rrhf/rrhf.hpp"
#include "rrhf/sampler.hpp"

namespace rrhf {

enum class TrainerKind { rrhf, ppo, sft };
std::string to_string(TrainerKind k);

struct TaskConfig {
  TaskSpec spec;
  std::string dataset;  // JSONL to ingest instead of generating; empty = synthetic
  std::size_t sft_split = 2048;
  std::size_t train_split = 512;
  std::size_t eval_split = 512;
};

struct RewardConfig {
  std::string provider = "oracle";  // oracle | learned_rm | lm_as_rm | external_judge
  RmTrainConfig rm;
  std::size_t judge_retries = 3;
  std::size_t judge_parallelism = 1;
};

struct SftConfig {
  TrainConfig train;
  bool use_rejected = true;  // also imitate the rejected responses
};

struct SamplerSection {
  std::string policy = "DP";
  DecodeConfig beam = DecodeConfig::vanilla_beam();
  DecodeConfig diverse = DecodeConfig::diverse_beam();
  std::size_t threads = 1;
  bool ip_restart = false;  // IP-n: train every iteration from the SFT model
};

struct EvalSection {
  std::string provider = "oracle";
  std::size_t max_new_tokens = 24;
  std::size_t threads = 1;
  bool per_epoch = true;  // evaluate after every training epoch
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 1;
  std::string output_dir = "runs/run";
  TrainerKind trainer = TrainerKind::rrhf;
  ModelConfig model;
  TaskConfig task;
  TruncationConfig truncation;
  RewardConfig reward;
  SftConfig sft;
  SamplerSection sampler;
  TrainConfig rrhf;
  PpoConfig ppo;
  EvalSection eval;

  SamplingPolicy policy() const { return SamplingPolicy::parse(sampler.policy); }
  SamplerConfig sampler_config(std::uint64_t iteration) const;
  EvalConfig eval_config() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
// Reads a config file. ConfigError for malformed JSON or invalid content,
// MissingArtifactError when the file does not exist.
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

// Hash of the canonical serialisation of the whole config.
std::string config_hash(const RunConfig& c);

// Hashes of the config subset each stage's output depends on. Two configs
// that agree on a stage's inputs give that stage the same hash, so e.g. the
// first iteration of IP-n and a DP run produce identical files.
std::string data_stage_hash(const RunConfig& c);
std::string sft_stage_hash(const RunConfig& c);
std::string rm_stage_hash(const RunConfig& c);
std::string sample_stage_hash(const RunConfig& c, std::size_t iteration);
std::string rrhf_stage_hash(const RunConfig& c, std::size_t iteration);
std::string ppo_stage_hash(const RunConfig& c);
std::string eval_stage_hash(const RunConfig& c);

}  // namespace rrhf
