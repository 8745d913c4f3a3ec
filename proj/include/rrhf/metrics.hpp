#pragma once
// Training metrics files shared by every trainer:
//   <name>.csv    one row per optimizer step: step,epoch,rank_loss,sft_loss,total_loss,lr
//   <name>.jsonl  one object per epoch: epoch means plus whatever the epoch evaluation produced
// Both start by recording the config hash that produced them.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rrhf/rrhf.hpp"

namespace rrhf {

class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& csv, const std::filesystem::path& jsonl, std::string config_hash);
  void step(const StepMetrics& m);
  void epoch(const EpochMetrics& m);
  TrainHooks hooks(std::function<nlohmann::json(std::size_t, const Model&)> on_epoch = {});

 private:
  std::ofstream csv_;
  std::ofstream jsonl_;
  std::string hash_;
};

std::vector<StepMetrics> read_step_metrics(const std::filesystem::path& csv);
std::vector<EpochMetrics> read_epoch_metrics(const std::filesystem::path& jsonl);

}  // namespace rrhf
