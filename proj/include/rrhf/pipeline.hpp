#pragma once
// Experiment stages over a run directory:
//
//   config.json                 the full RunConfig, written before anything else
//   manifest.json               per-stage config hash and sha256 of each output
//   data/dataset.jsonl          preference records
//   data/splits.json            sft / train / eval index lists
//   checkpoints/sft.ckpt        the initial policy (also the PPO reference)
//   checkpoints/rm.ckpt         learned reward model (provider learned_rm only)
//   rollouts/iter{n}.jsonl      scored candidate sets for iteration n
//   checkpoints/rrhf_iter{n}.ckpt, checkpoints/ppo.ckpt
//   metrics/{stage}.csv|jsonl   per-step and per-epoch training metrics
//   reports/{label}.json        evaluation reports
//
// Every artifact records the hash of the config subset that produced it.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rrhf/config.hpp"
#include "rrhf/eval.hpp"

namespace rrhf {

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path dataset() const { return root / "data" / "dataset.jsonl"; }
  std::filesystem::path splits() const { return root / "data" / "splits.json"; }
  std::filesystem::path sft_checkpoint() const { return root / "checkpoints" / "sft.ckpt"; }
  std::filesystem::path rm_checkpoint() const { return root / "checkpoints" / "rm.ckpt"; }
  std::filesystem::path rollouts(std::size_t iteration) const;
  std::filesystem::path rrhf_checkpoint(std::size_t iteration) const;
  std::filesystem::path ppo_checkpoint() const { return root / "checkpoints" / "ppo.ckpt"; }
  std::filesystem::path metrics_csv(const std::string& stage) const { return root / "metrics" / (stage + ".csv"); }
  std::filesystem::path metrics_jsonl(const std::string& stage) const { return root / "metrics" / (stage + ".jsonl"); }
  std::filesystem::path report(const std::string& label) const { return root / "reports" / (label + ".json"); }
};

struct Splits {
  std::vector<Record> sft, train, eval;
};

class Pipeline {
 public:
  // Takes the run directory's lock and writes config.json, or checks that an
  // existing one matches `cfg` (ConfigError otherwise). `root` defaults to
  // cfg.output_dir.
  explicit Pipeline(RunConfig cfg, std::optional<std::filesystem::path> root = std::nullopt,
                    std::ostream* log = nullptr);
  ~Pipeline();

  const RunConfig& config() const noexcept { return cfg_; }
  const RunPaths& paths() const noexcept { return paths_; }
  const std::string& hash() const noexcept { return hash_; }

  void datagen();
  void train_rm();
  void train_sft();
  void sample(std::size_t iteration = 1);
  void train_rrhf(std::size_t iteration = 1);
  void train_ppo();

  // `which` is "initial" (the SFT model), "final" or a checkpoint path.
  EvalReport eval(const std::string& which, const std::string& label);
  // Also accepts "untrained": the model before any training.
  double rm_accuracy(const std::string& which);
  double score(const std::string& query, const std::string& response);

  // Every stage in order; stages whose outputs are recorded in the manifest
  // under the current stage hash and still match their sha256 are skipped.
  void run_all();

  // Copies artifacts of `other` whose stage hash equals this config's, so
  // related runs can share e.g. the dataset and the SFT model. Returns the
  // names of the imported stages. A non-empty `only` limits the candidates.
  std::vector<std::string> import_stages(const std::filesystem::path& other,
                                         const std::vector<std::string>& only = {});

  std::filesystem::path final_checkpoint() const;
  Splits load_splits() const;
  nlohmann::json manifest() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  RunConfig cfg_;
  RunPaths paths_;
  std::string hash_;
};

// Re-executes a completed run from its config.json into <run_dir>/.reproduce
// and compares every checkpoint's model hash with the original. Returns 0 on a
// match and 4 on any mismatch (including a config.json that no longer matches
// the manifest); both hashes are printed.
int reproduce(const std::filesystem::path& run_dir, std::ostream& out);

}  // namespace rrhf
