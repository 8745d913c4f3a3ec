// rrhf: experiment driver. Exit codes: 0 ok, 1 other failure, 2 bad config,
// 3 missing upstream artifact, 4 reproduction mismatch.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rrhf/checkpoint.hpp"
#include "rrhf/config.hpp"
#include "rrhf/errors.hpp"
#include "rrhf/eval.hpp"
#include "rrhf/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rrhf;

namespace {

struct RunArgs {
  std::string config;
  std::string run_dir;
};

void add_run_args(CLI::App* sub, RunArgs& a) {
  sub->add_option("-c,--config", a.config, "experiment config (JSON)");
  sub->add_option("-r,--run-dir", a.run_dir, "run directory (default: the config's output_dir)");
}

// --config wins; with only --run-dir the stored config.json is used.
Pipeline open_pipeline(const RunArgs& a) {
  if (a.config.empty() && a.run_dir.empty()) throw ConfigError("", "give --config or --run-dir");
  const fs::path cfg_path = a.config.empty() ? fs::path(a.run_dir) / "config.json" : fs::path(a.config);
  RunConfig cfg = load_run_config(cfg_path);
  std::optional<fs::path> root;
  if (!a.run_dir.empty()) root = a.run_dir;
  return Pipeline(std::move(cfg), root);
}

EvalReport read_report(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifactError(p.string());
  return eval_report_from_json(nlohmann::json::parse(in));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ranking-based alignment of small language models"};
  app.require_subcommand(1);

  RunArgs ra;
  std::size_t iteration = 1;
  std::string which = "final", label;
  std::string report_a, report_b, out_csv;
  double delta = -1.0;
  std::string query, response;
  std::string reuse;

  auto* datagen = app.add_subcommand("datagen", "generate or ingest the dataset and its splits");
  add_run_args(datagen, ra);
  auto* train_sft = app.add_subcommand("train-sft", "supervised fine-tuning (the initial policy)");
  add_run_args(train_sft, ra);
  auto* train_rm = app.add_subcommand("train-rm", "train the pairwise reward model");
  add_run_args(train_rm, ra);
  auto* sample = app.add_subcommand("sample", "generate and score candidate sets");
  add_run_args(sample, ra);
  sample->add_option("-i,--iteration", iteration, "IP-n iteration")->check(CLI::PositiveNumber);
  auto* train_rrhf = app.add_subcommand("train-rrhf", "ranking-loss training on sampled candidates");
  add_run_args(train_rrhf, ra);
  train_rrhf->add_option("-i,--iteration", iteration, "IP-n iteration")->check(CLI::PositiveNumber);
  auto* train_ppo = app.add_subcommand("train-ppo", "PPO baseline");
  add_run_args(train_ppo, ra);
  auto* eval = app.add_subcommand("eval", "greedy-decode the eval split and score it");
  add_run_args(eval, ra);
  eval->add_option("-m,--model", which, "initial, final or a checkpoint path");
  eval->add_option("-l,--label", label, "report name (default: the --model value)");
  auto* compare = app.add_subcommand("compare", "win/tie/lose between two eval reports");
  add_run_args(compare, ra);
  compare->add_option("a", report_a, "report A (path or label)")->required();
  compare->add_option("b", report_b, "report B (path or label)")->required();
  compare->add_option("--delta", delta, "tie band (default: 5% of the reward range)");
  compare->add_option("-o,--out", out_csv, "CSV path inside the run directory");
  auto* score = app.add_subcommand("score", "score one response with the configured reward provider");
  add_run_args(score, ra);
  score->add_option("-q,--query", query)->required();
  score->add_option("-y,--response", response)->required();
  auto* rm_acc = app.add_subcommand("rm-accuracy", "preference accuracy of a model's mean log-prob on eval pairs");
  add_run_args(rm_acc, ra);
  rm_acc->add_option("-m,--model", which, "untrained, initial, final or a checkpoint path");
  auto* run = app.add_subcommand("run", "every stage in order, skipping up-to-date ones");
  add_run_args(run, ra);
  run->add_option("--reuse", reuse, "run directory to copy matching stages from");
  std::string repro_dir;
  auto* repro = app.add_subcommand("reproduce", "re-run a completed run and compare checkpoint hashes");
  repro->add_option("run_dir", repro_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (repro->parsed()) return reproduce(repro_dir, std::cout);

    Pipeline p = open_pipeline(ra);
    if (datagen->parsed()) {
      p.datagen();
    } else if (train_sft->parsed()) {
      p.train_sft();
    } else if (train_rm->parsed()) {
      p.train_rm();
    } else if (sample->parsed()) {
      p.sample(iteration);
    } else if (train_rrhf->parsed()) {
      p.train_rrhf(iteration);
    } else if (train_ppo->parsed()) {
      p.train_ppo();
    } else if (eval->parsed()) {
      const std::string l = label.empty() ? fs::path(which).stem().string() : label;
      const auto r = p.eval(which, l);
      std::cout << "mean_reward " << r.mean_reward << "\n";
      std::cout << "report " << p.paths().report(l).string() << "\n";
    } else if (compare->parsed()) {
      auto resolve = [&](const std::string& s) {
        return fs::exists(s) ? fs::path(s) : p.paths().report(s);
      };
      const auto a = read_report(resolve(report_a));
      const auto b = read_report(resolve(report_b));
      std::optional<double> d;
      if (delta >= 0.0) d = delta;
      const auto c = rrhf::compare(a, b, d);
      const fs::path out = out_csv.empty() ? p.paths().root / "reports" / (a.label + "_vs_" + b.label + ".csv")
                                           : p.paths().root / out_csv;
      write_comparison_csv(out, {{a.label, b.label, c}}, p.hash());
      std::cout << a.label << " vs " << b.label << ": win " << c.win << " tie " << c.tie << " lose " << c.lose
                << " (delta " << c.delta << ")\n";
    } else if (score->parsed()) {
      std::cout << p.score(query, response) << "\n";
    } else if (rm_acc->parsed()) {
      std::cout << p.rm_accuracy(which) << "\n";
    } else if (run->parsed()) {
      if (!reuse.empty()) {
        for (const auto& s : p.import_stages(reuse)) std::clog << "reused " << s << " from " << reuse << "\n";
      }
      p.run_all();
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.path() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
