#include "rrhf/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>

#include "rrhf/checkpoint.hpp"
#include "rrhf/hashing.hpp"
#include "rrhf/metrics.hpp"
#include "rrhf/ppo.hpp"
#include "rrhf/rng.hpp"

namespace rrhf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kModelInitStream = 0x696e6974;
constexpr std::uint64_t kSplitStream = 0x73706c74;
constexpr std::uint64_t kRrhfStream = 0x72726866;

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifactError(p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(p.string() + ": " + e.what());
  }
}

// Write-then-rename so a crash never leaves a half-written file behind.
void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

Model load_model(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifactError(p.string());
  return load_checkpoint(p).model;
}

std::string rel(const fs::path& root, const fs::path& p) { return fs::relative(p, root).generic_string(); }

struct ProviderBox {
  std::unique_ptr<JudgeTransport> transport;
  std::unique_ptr<JudgeClient> client;
  std::unique_ptr<Model> model;
  std::unique_ptr<RewardProvider> provider;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// --- lock ----------------------------------------------------------------------

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw Error("run directory " + dir.string() + " is in use (lock file " + path_.string() +
                  "); delete it if no run is active");
    }
    throw Error("cannot create " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  (void)!::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

fs::path RunPaths::rollouts(std::size_t iteration) const {
  return root / "rollouts" / ("iter" + std::to_string(iteration) + ".jsonl");
}

fs::path RunPaths::rrhf_checkpoint(std::size_t iteration) const {
  return root / "checkpoints" / ("rrhf_iter" + std::to_string(iteration) + ".ckpt");
}

// --- pipeline ------------------------------------------------------------------

struct Pipeline::Impl {
  std::unique_ptr<RunLock> lock;
  std::ostream* log = nullptr;
  json manifest;

  void save(const RunPaths& paths) { write_text(paths.manifest(), manifest.dump(2) + "\n"); }

  void record(const RunPaths& paths, const std::string& stage, const std::string& stage_hash,
              const std::vector<fs::path>& outputs) {
    json o = json::object();
    for (const auto& p : outputs) o[rel(paths.root, p)] = sha256_file(p);
    manifest["stages"][stage] = {{"hash", stage_hash}, {"outputs", o}};
    save(paths);
  }

  bool up_to_date(const RunPaths& paths, const std::string& stage, const std::string& stage_hash) const {
    const auto& st = manifest["stages"];
    if (!st.contains(stage) || st[stage].value("hash", "") != stage_hash) return false;
    for (auto it = st[stage]["outputs"].begin(); it != st[stage]["outputs"].end(); ++it) {
      const fs::path p = paths.root / it.key();
      if (!fs::exists(p) || sha256_file(p) != it.value().get<std::string>()) return false;
    }
    return true;
  }
};

Pipeline::Pipeline(RunConfig cfg, std::optional<fs::path> root, std::ostream* log)
    : impl_(std::make_unique<Impl>()), cfg_(std::move(cfg)) {
  paths_.root = root ? *root : fs::path(cfg_.output_dir);
  hash_ = config_hash(cfg_);
  impl_->log = log ? log : &std::clog;
  impl_->lock = std::make_unique<RunLock>(paths_.root);
  if (fs::exists(paths_.config())) {
    const RunConfig existing = load_run_config(paths_.config());
    const std::string h = config_hash(existing);
    if (h != hash_) {
      throw ConfigError("output_dir", paths_.root.string() + " was created by a different config (hash " + h +
                                          "); use a new output_dir");
    }
  } else {
    write_text(paths_.config(), to_json(cfg_).dump(2) + "\n");
  }
  if (fs::exists(paths_.manifest())) {
    impl_->manifest = read_json(paths_.manifest());
  } else {
    impl_->manifest = {{"stages", json::object()}};
  }
  impl_->manifest["config_hash"] = hash_;
  impl_->manifest["name"] = cfg_.name;
  impl_->save(paths_);
}

Pipeline::~Pipeline() = default;

json Pipeline::manifest() const { return impl_->manifest; }

namespace {

ProviderBox make_provider(const std::string& name, const RunConfig& cfg, const RunPaths& paths) {
  ProviderBox b;
  if (name == "oracle") {
    b.provider = std::make_unique<OracleReward>(cfg.task.spec);
  } else if (name == "lm_as_rm") {
    b.model = std::make_unique<Model>(load_model(paths.sft_checkpoint()));
    b.provider = std::make_unique<LmAsRm>(*b.model, cfg.truncation);
  } else if (name == "learned_rm") {
    b.provider = std::make_unique<LearnedRewardModel>(load_model(paths.rm_checkpoint()), cfg.truncation);
  } else if (name == "external_judge") {
    b.transport = HttpJudgeTransport::from_env();
    b.client = std::make_unique<JudgeClient>(*b.transport, cfg.reward.judge_retries, cfg.reward.judge_parallelism);
    b.provider = std::make_unique<ExternalJudgeReward>(*b.client);
  } else {
    throw ConfigError("reward.provider", "unknown provider \"" + name + "\"");
  }
  return b;
}

}  // namespace

Splits Pipeline::load_splits() const {
  const auto records = ingest_strict(paths_.dataset(), Vocabulary::standard(), cfg_.truncation);
  const auto manifest = SplitManifest::from_json(read_json(paths_.splits()));
  Splits s;
  s.sft = manifest.select(records, "sft");
  s.train = manifest.select(records, "train");
  s.eval = manifest.select(records, "eval");
  return s;
}

void Pipeline::datagen() {
  auto& log = *impl_->log;
  const auto& t = cfg_.task;
  const std::size_t need = t.sft_split + t.train_split + t.eval_split;
  std::vector<Record> records;
  if (t.dataset.empty()) {
    auto gen = generate_corpus(t.spec, need, cfg_.seed);
    records = std::move(gen.records);
    log << "datagen: " << records.size() << " synthetic " << to_string(t.spec.kind) << " records";
    if (gen.regenerated) log << " (" << gen.regenerated << " regenerated)";
    log << "\n";
  } else {
    auto res = ingest(t.dataset, Vocabulary::standard(), cfg_.truncation);
    for (const auto& issue : res.issues) log << "datagen: " << t.dataset << ":" << issue.line << ": " << issue.message << "\n";
    std::size_t truncated = 0;
    for (const auto& r : res.records) truncated += r.truncated;
    if (truncated) log << "datagen: " << truncated << " records truncated\n";
    records = res.plain();
    if (records.empty()) throw ConfigError("task.dataset", "no valid records in " + t.dataset);
  }
  const auto splits = SplitManifest::make(
      records.size(), {{"sft", t.sft_split}, {"train", t.train_split}, {"eval", t.eval_split}},
      derive_seed(cfg_.seed, kSplitStream));
  const std::string h = data_stage_hash(cfg_);
  write_jsonl(paths_.dataset(), records, {{"config_hash", h}});
  const json sj = {{"splits", splits.to_json()}, {"config_hash", h}};
  write_text(paths_.splits(), sj.dump() + "\n");
  impl_->record(paths_, "datagen", h, {paths_.dataset(), paths_.splits()});
}

namespace {

// Per-epoch evaluation recorded next to the epoch's losses.
std::function<json(std::size_t, const Model&)> epoch_eval(const RunConfig& cfg, const std::vector<Record>& eval_set,
                                                          const RewardProvider& provider, const Model* scorer,
                                                          std::ostream& log, std::string tag) {
  return [&cfg, &eval_set, &provider, scorer, &log, tag = std::move(tag)](std::size_t epoch, const Model& m) {
    const auto t0 = std::chrono::steady_clock::now();
    const EvalReport r = evaluate(m, eval_set, provider, cfg.eval_config(), scorer);
    const double acc = rm_accuracy(LmAsRm(m, cfg.truncation), eval_set);
    json j = {{"mean_reward", r.mean_reward}, {"reward_std", r.reward_std()}, {"rm_accuracy", acc}};
    if (r.perplexity) j["perplexity"] = *r.perplexity;
    log << tag << " epoch " << epoch << ": eval reward " << r.mean_reward << ", rm accuracy " << acc << " ("
        << seconds_since(t0) << " s)\n";
    return j;
  };
}

TrainHooks make_hooks(MetricsLog& metrics, std::function<json(std::size_t, const Model&)> on_epoch) {
  return metrics.hooks(std::move(on_epoch));
}

}  // namespace

void Pipeline::train_sft() {
  auto& log = *impl_->log;
  const auto splits = load_splits();
  Model model(cfg_.model, derive_seed(cfg_.seed, kModelInitStream));
  const std::string h = sft_stage_hash(cfg_);
  std::vector<TokenSeq> seqs;
  for (const auto& r : splits.sft) {
    seqs.push_back(make_sequence(Vocabulary::standard(), r.query, r.chosen, cfg_.truncation));
    if (cfg_.sft.use_rejected) seqs.push_back(make_sequence(Vocabulary::standard(), r.query, r.rejected, cfg_.truncation));
  }
  std::vector<fs::path> outputs{paths_.sft_checkpoint()};
  if (seqs.empty()) {
    log << "train-sft: empty sft split, keeping the initialised model\n";
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    MetricsLog metrics(paths_.metrics_csv("sft"), paths_.metrics_jsonl("sft"), h);
    std::unique_ptr<ProviderBox> eval_provider;
    std::function<json(std::size_t, const Model&)> hook;
    if (cfg_.eval.per_epoch && cfg_.eval.provider == "oracle") {
      eval_provider = std::make_unique<ProviderBox>(make_provider("oracle", cfg_, paths_));
      hook = epoch_eval(cfg_, splits.eval, *eval_provider->provider, nullptr, log, "train-sft");
    }
    const auto res = rrhf::train_sft(model, seqs, cfg_.sft.train, make_hooks(metrics, hook));
    for (const auto& e : res.epochs) metrics.epoch(e);
    log << "train-sft: " << seqs.size() << " sequences, " << res.steps.size() << " steps (" << seconds_since(t0)
        << " s)\n";
    outputs.push_back(paths_.metrics_csv("sft"));
    outputs.push_back(paths_.metrics_jsonl("sft"));
  }
  save_checkpoint(paths_.sft_checkpoint(), model, {{"config_hash", h}, {"stage", "sft"}});
  impl_->record(paths_, "sft", h, outputs);
}

void Pipeline::train_rm() {
  auto& log = *impl_->log;
  const auto splits = load_splits();
  const auto& src = splits.sft.empty() ? splits.train : splits.sft;
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  for (const auto& r : src) {
    pairs.emplace_back(make_sequence(Vocabulary::standard(), r.query, r.chosen, cfg_.truncation),
                       make_sequence(Vocabulary::standard(), r.query, r.rejected, cfg_.truncation));
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto res = train_learned_rm(load_model(paths_.sft_checkpoint()), pairs, cfg_.reward.rm);
  if (res.degenerate) log << "train-rm: warning: every pair is degenerate (chosen == rejected)\n";
  log << "train-rm: " << pairs.size() << " pairs, train accuracy " << res.train_accuracy << " (" << seconds_since(t0)
      << " s)\n";
  const std::string h = rm_stage_hash(cfg_);
  save_checkpoint(paths_.rm_checkpoint(), res.model, {{"config_hash", h}, {"stage", "rm"}});
  impl_->record(paths_, "rm", h, {paths_.rm_checkpoint()});
}

void Pipeline::sample(std::size_t iteration) {
  auto& log = *impl_->log;
  const SamplingPolicy policy = cfg_.policy();
  if (iteration == 0 || iteration > policy.iterations()) {
    throw ConfigError("sampler.policy", "policy " + policy.name() + " has no iteration " + std::to_string(iteration));
  }
  const SamplingPolicy p = policy.at_iteration(iteration);
  const auto splits = load_splits();
  std::optional<Model> model;
  if (p.generates()) {
    model = load_model(iteration == 1 ? paths_.sft_checkpoint() : paths_.rrhf_checkpoint(iteration - 1));
  }
  std::optional<std::vector<RolloutSet>> prior;
  if (iteration > 1 && p.uses_dataset()) prior = read_rollouts(paths_.rollouts(iteration - 1));
  const auto provider = make_provider(cfg_.reward.provider, cfg_, paths_);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = generate_rollouts(p, model ? &*model : nullptr, splits.train, *provider.provider,
                                     cfg_.sampler_config(iteration), prior ? &*prior : nullptr);
  if (res.skipped) log << "sample: " << res.skipped << " queries skipped (reward provider failed)\n";
  if (res.sets.empty()) throw Error("sample: no query could be scored");
  const std::string h = sample_stage_hash(cfg_, iteration);
  write_rollouts(paths_.rollouts(iteration), res.sets, {{"config_hash", h}});
  const auto st = rollout_stats(res.sets);
  log << "sample: " << p.name() << " iteration " << iteration << ", " << res.sets.size() << " sets, mean reward "
      << st.mean << ", mean best " << st.max << " (" << seconds_since(t0) << " s)\n";
  impl_->record(paths_, "sample_" + std::to_string(iteration), h, {paths_.rollouts(iteration)});
}

void Pipeline::train_rrhf(std::size_t iteration) {
  auto& log = *impl_->log;
  const SamplingPolicy policy = cfg_.policy();
  if (iteration == 0 || iteration > policy.iterations()) {
    throw ConfigError("sampler.policy", "policy " + policy.name() + " has no iteration " + std::to_string(iteration));
  }
  const fs::path rollouts_path = paths_.rollouts(iteration);
  const auto sets = read_rollouts(rollouts_path);
  const fs::path init_path = (iteration == 1 || cfg_.sampler.ip_restart) ? paths_.sft_checkpoint()
                                                                          : paths_.rrhf_checkpoint(iteration - 1);
  Model model = load_model(init_path);
  const std::string parent = model_hash(model);
  const auto splits = load_splits();
  const Model scorer = load_model(paths_.sft_checkpoint());
  const std::string h = rrhf_stage_hash(cfg_, iteration);
  const std::string stage = "rrhf_iter" + std::to_string(iteration);

  TrainConfig tc = cfg_.rrhf;
  tc.seed = derive_seed(cfg_.seed, kRrhfStream, iteration);
  MetricsLog metrics(paths_.metrics_csv(stage), paths_.metrics_jsonl(stage), h);
  std::unique_ptr<ProviderBox> eval_provider;
  std::function<json(std::size_t, const Model&)> hook;
  if (cfg_.eval.per_epoch) {
    eval_provider = std::make_unique<ProviderBox>(make_provider(cfg_.eval.provider, cfg_, paths_));
    hook = epoch_eval(cfg_, splits.eval, *eval_provider->provider, &scorer, log, "train-rrhf");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = rrhf::train_rrhf(model, to_ranked(sets, cfg_.truncation), tc, make_hooks(metrics, hook));
  for (const auto& e : res.epochs) metrics.epoch(e);
  log << "train-rrhf: iteration " << iteration << ", " << sets.size() << " sets, " << res.steps.size() << " steps ("
      << seconds_since(t0) << " s)\n";
  save_checkpoint(paths_.rrhf_checkpoint(iteration), model,
                  {{"config_hash", h},
                   {"stage", "rrhf"},
                   {"iteration", iteration},
                   {"policy", policy.at_iteration(iteration).name()},
                   {"parent_model_hash", parent},
                   {"parent", rel(paths_.root, init_path)},
                   {"rollouts_sha256", sha256_file(rollouts_path)}});
  impl_->record(paths_, "rrhf_" + std::to_string(iteration), h,
                {paths_.rrhf_checkpoint(iteration), paths_.metrics_csv(stage), paths_.metrics_jsonl(stage)});
}

void Pipeline::train_ppo() {
  auto& log = *impl_->log;
  const auto splits = load_splits();
  Model policy = load_model(paths_.sft_checkpoint());
  const Model reference = policy;
  const std::string parent = model_hash(policy);
  const auto provider = make_provider(cfg_.reward.provider, cfg_, paths_);
  const std::string h = ppo_stage_hash(cfg_);
  MetricsLog metrics(paths_.metrics_csv("ppo"), paths_.metrics_jsonl("ppo"), h);
  std::unique_ptr<ProviderBox> eval_provider;
  std::function<json(std::size_t, const Model&)> hook;
  if (cfg_.eval.per_epoch) {
    eval_provider = std::make_unique<ProviderBox>(make_provider(cfg_.eval.provider, cfg_, paths_));
    hook = epoch_eval(cfg_, splits.eval, *eval_provider->provider, &reference, log, "train-ppo");
  }
  PpoTrainer trainer(policy, reference, *provider.provider, cfg_.ppo);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = trainer.train(splits.train, make_hooks(metrics, hook));
  for (const auto& e : res.epochs) metrics.epoch(e);
  log << "train-ppo: " << splits.train.size() << " queries, " << res.steps.size() << " steps (" << seconds_since(t0)
      << " s)\n";
  save_checkpoint(paths_.ppo_checkpoint(), policy,
                  {{"config_hash", h}, {"stage", "ppo"}, {"parent_model_hash", parent}, {"parent", "checkpoints/sft.ckpt"}});
  impl_->record(paths_, "ppo", h, {paths_.ppo_checkpoint(), paths_.metrics_csv("ppo"), paths_.metrics_jsonl("ppo")});
}

fs::path Pipeline::final_checkpoint() const {
  switch (cfg_.trainer) {
    case TrainerKind::rrhf: return paths_.rrhf_checkpoint(cfg_.policy().iterations());
    case TrainerKind::ppo: return paths_.ppo_checkpoint();
    case TrainerKind::sft: return paths_.sft_checkpoint();
  }
  return paths_.sft_checkpoint();
}

namespace {

fs::path resolve_model(const Pipeline& p, const std::string& which) {
  if (which == "initial") return p.paths().sft_checkpoint();
  if (which == "final") return p.final_checkpoint();
  return which;
}

}  // namespace

EvalReport Pipeline::eval(const std::string& which, const std::string& label) {
  auto& log = *impl_->log;
  const fs::path mp = resolve_model(*this, which);
  const Model model = load_model(mp);
  const auto splits = load_splits();
  std::optional<Model> scorer;
  if (fs::exists(paths_.sft_checkpoint())) scorer = load_model(paths_.sft_checkpoint());
  const auto provider = make_provider(cfg_.eval.provider, cfg_, paths_);
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport r = evaluate(model, splits.eval, *provider.provider, cfg_.eval_config(), scorer ? &*scorer : nullptr);
  r.model_id = model_hash(model);
  r.label = label;
  r.rm_accuracy = rrhf::rm_accuracy(LmAsRm(model, cfg_.truncation), splits.eval);
  std::error_code ec;
  const bool is_final = fs::exists(final_checkpoint()) && fs::equivalent(mp, final_checkpoint(), ec);
  if (cfg_.trainer == TrainerKind::rrhf && is_final) {
    const fs::path ro = paths_.rollouts(cfg_.policy().iterations());
    if (fs::exists(ro)) r.rollout = rollout_stats(read_rollouts(ro));
  }
  if (r.failed) log << "eval: " << r.failed << " queries could not be scored\n";
  log << "eval " << label << ": mean reward " << r.mean_reward << ", rm accuracy " << *r.rm_accuracy << " ("
      << seconds_since(t0) << " s)\n";
  const std::string h = sha256_hex(eval_stage_hash(cfg_) + r.model_id);
  json j = to_json(r);
  j["config_hash"] = h;
  j["checkpoint"] = fs::exists(mp) ? rel(paths_.root, mp) : mp.string();
  write_text(paths_.report(label), j.dump(2) + "\n");
  impl_->record(paths_, "eval_" + label, h, {paths_.report(label)});
  return r;
}

double Pipeline::rm_accuracy(const std::string& which) {
  // "untrained" is the freshly initialised model SFT starts from.
  const Model model = which == "untrained" ? Model(cfg_.model, derive_seed(cfg_.seed, kModelInitStream))
                                           : load_model(resolve_model(*this, which));
  const auto splits = load_splits();
  return rrhf::rm_accuracy(LmAsRm(model, cfg_.truncation), splits.eval);
}

double Pipeline::score(const std::string& query, const std::string& response) {
  const auto provider = make_provider(cfg_.reward.provider, cfg_, paths_);
  return provider.provider->score(query, response);
}

void Pipeline::run_all() {
  auto& log = *impl_->log;
  auto stage = [&](const std::string& name, const std::string& h, auto&& fn) {
    if (impl_->up_to_date(paths_, name, h)) {
      log << name << ": up to date\n";
      return;
    }
    fn();
  };
  stage("datagen", data_stage_hash(cfg_), [&] { datagen(); });
  stage("sft", sft_stage_hash(cfg_), [&] { train_sft(); });
  if (cfg_.reward.provider == "learned_rm" || cfg_.eval.provider == "learned_rm") {
    stage("rm", rm_stage_hash(cfg_), [&] { train_rm(); });
  }
  const auto eval_hash = [&](const fs::path& ckpt) {
    return sha256_hex(eval_stage_hash(cfg_) + model_hash(load_model(ckpt)));
  };
  stage("eval_initial", eval_hash(paths_.sft_checkpoint()), [&] { eval("initial", "initial"); });
  switch (cfg_.trainer) {
    case TrainerKind::rrhf:
      for (std::size_t n = 1; n <= cfg_.policy().iterations(); ++n) {
        stage("sample_" + std::to_string(n), sample_stage_hash(cfg_, n), [&] { sample(n); });
        stage("rrhf_" + std::to_string(n), rrhf_stage_hash(cfg_, n), [&] { train_rrhf(n); });
      }
      break;
    case TrainerKind::ppo:
      stage("ppo", ppo_stage_hash(cfg_), [&] { train_ppo(); });
      break;
    case TrainerKind::sft:
      break;
  }
  const fs::path fin = final_checkpoint();
  stage("eval_final", eval_hash(fin), [&] { eval("final", "final"); });
  impl_->manifest["final"] = {{"checkpoint", rel(paths_.root, fin)}, {"model_hash", model_hash(load_model(fin))}};
  impl_->save(paths_);
}

std::vector<std::string> Pipeline::import_stages(const fs::path& other, const std::vector<std::string>& only) {
  const json om = read_json(other / "manifest.json");
  std::vector<std::string> imported;
  const auto expected = [&](const std::string& name) -> std::optional<std::string> {
    if (name == "datagen") return data_stage_hash(cfg_);
    if (name == "sft") return sft_stage_hash(cfg_);
    if (name == "rm") return rm_stage_hash(cfg_);
    if (name == "ppo") return ppo_stage_hash(cfg_);
    for (const char* prefix : {"sample_", "rrhf_"}) {
      const std::string pre = prefix;
      if (name.rfind(pre, 0) == 0) {
        const std::size_t n = std::stoul(name.substr(pre.size()));
        if (n == 0 || n > cfg_.policy().iterations()) return std::nullopt;
        return pre == "sample_" ? sample_stage_hash(cfg_, n) : rrhf_stage_hash(cfg_, n);
      }
    }
    return std::nullopt;
  };
  for (auto it = om.at("stages").begin(); it != om.at("stages").end(); ++it) {
    if (!only.empty() && std::find(only.begin(), only.end(), it.key()) == only.end()) continue;
    const auto want = expected(it.key());
    if (!want || it.value().value("hash", "") != *want) continue;
    std::vector<fs::path> outs;
    for (auto o = it.value()["outputs"].begin(); o != it.value()["outputs"].end(); ++o) {
      const fs::path src = other / o.key();
      const fs::path dst = paths_.root / o.key();
      if (!fs::exists(src)) throw MissingArtifactError(src.string());
      fs::create_directories(dst.parent_path());
      fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
      outs.push_back(dst);
    }
    impl_->record(paths_, it.key(), *want, outs);
    imported.push_back(it.key());
  }
  return imported;
}

// --- reproduce -----------------------------------------------------------------

int reproduce(const fs::path& run_dir, std::ostream& out) {
  const RunConfig cfg = load_run_config(run_dir / "config.json");
  const json manifest = read_json(run_dir / "manifest.json");
  const std::string recorded = manifest.value("config_hash", "");
  const std::string actual = config_hash(cfg);
  if (recorded != actual) {
    out << "config hash mismatch: manifest " << recorded << ", config.json " << actual << "\n";
    return 4;
  }
  if (!manifest.contains("final")) throw MissingArtifactError((run_dir / "manifest.json").string() + " (no completed run)");

  RunLock lock(run_dir);
  const fs::path redo = run_dir / ".reproduce";
  fs::remove_all(redo);
  {
    Pipeline p(cfg, redo, &out);
    p.run_all();
  }
  const json rm = read_json(redo / "manifest.json");

  int status = 0;
  for (auto it = manifest["stages"].begin(); it != manifest["stages"].end(); ++it) {
    for (auto o = it.value()["outputs"].begin(); o != it.value()["outputs"].end(); ++o) {
      if (fs::path(o.key()).extension() != ".ckpt") continue;
      const fs::path a = run_dir / o.key(), b = redo / o.key();
      const std::string ha = fs::exists(a) ? model_hash(load_model(a)) : "(missing)";
      const std::string hb = fs::exists(b) ? model_hash(load_model(b)) : "(missing)";
      const bool ok = ha == hb;
      out << o.key() << ": original " << ha << " reproduced " << hb << (ok ? " ok" : " MISMATCH") << "\n";
      if (!ok) status = 4;
    }
  }
  // Iteration chain: each RRHF checkpoint must name its predecessor's hash.
  const std::size_t iters = cfg.trainer == TrainerKind::rrhf ? cfg.policy().iterations() : 0;
  RunPaths rp{redo};
  for (std::size_t n = 1; n <= iters; ++n) {
    const auto ck = load_checkpoint(rp.rrhf_checkpoint(n));
    const fs::path parent = redo / ck.meta.value("parent", "");
    const bool linked = fs::exists(parent) && model_hash(load_model(parent)) == ck.meta.value("parent_model_hash", "");
    out << "iteration " << n << ": parent " << ck.meta.value("parent", "?") << (linked ? " linked" : " BROKEN") << "\n";
    if (!linked) status = 4;
  }
  const std::string want = manifest["final"].value("model_hash", "");
  const std::string got = rm.contains("final") ? rm["final"].value("model_hash", "") : "";
  out << "final: original " << want << " reproduced " << got << (want == got ? " ok" : " MISMATCH") << "\n";
  if (want != got) status = 4;
  return status;
}

}  // namespace rrhf
