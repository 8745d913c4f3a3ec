#include <sys/wait.h>

#include <cstdlib>

#include "doctest.h"
#include "rrhf/config.hpp"
#include "run_fixture.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using rrhf::testing::read_file;
using rrhf::testing::write_file;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(RRHF_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

}  // namespace

TEST_CASE("cli: the datagen -> sample -> train -> eval path and its exit codes") {
  const auto dir = rrhf::testing::scratch_dir("cli");
  const fs::path run = dir / "run";
  write_file(dir / "c.json", rrhf::testing::tiny_run_json(run).dump());
  const std::string c = "--config " + (dir / "c.json").string();

  CHECK(cli("datagen " + c, dir).code == 0);
  CHECK(fs::exists(run / "data" / "dataset.jsonl"));
  CHECK(fs::exists(run / "manifest.json"));
  CHECK(fs::exists(run / "config.json"));

  const auto missing = cli("train-rrhf " + c, dir);
  CHECK(missing.code == 3);
  CHECK(missing.err.find((run / "rollouts" / "iter1.jsonl").string()) != std::string::npos);

  CHECK(cli("sample " + c, dir).code == 3);  // no SFT checkpoint yet
  CHECK(cli("train-sft " + c, dir).code == 0);
  CHECK(cli("sample " + c, dir).code == 0);
  CHECK(cli("train-rrhf --run-dir " + run.string(), dir).code == 0);
  CHECK(fs::exists(run / "checkpoints" / "rrhf_iter1.ckpt"));

  const auto ev = cli("eval " + c, dir);
  CHECK(ev.code == 0);
  CHECK(ev.out.find("mean_reward") != std::string::npos);
  CHECK(fs::exists(run / "reports" / "final.json"));
  CHECK(cli("eval " + c + " --model initial", dir).code == 0);

  const auto cmp = cli("compare " + c + " initial final", dir);
  CHECK(cmp.code == 0);
  CHECK(fs::exists(run / "reports" / "initial_vs_final.csv"));
  CHECK(read_file(run / "reports" / "initial_vs_final.csv").rfind("# config_hash: ", 0) == 0);

  const auto sc = cli("score " + c + " -q abc -y cba", dir);
  CHECK(sc.code == 0);
  CHECK(std::stod(sc.out) == doctest::Approx(0.0));
  const auto acc = cli("rm-accuracy " + c, dir);
  CHECK(acc.code == 0);
  const double a = std::stod(acc.out);
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);

  // The manifest has no "final" entry until `run` completes.
  CHECK(cli("reproduce " + run.string(), dir).code == 3);
  CHECK(cli("run " + c, dir).code == 0);
  CHECK(cli("reproduce " + run.string(), dir).code == 0);

  json j = json::parse(read_file(run / "config.json"));
  j["seed"] = 12;
  write_file(run / "config.json", j.dump());
  const auto tampered = cli("reproduce " + run.string(), dir);
  CHECK(tampered.code == 4);
  CHECK(tampered.out.find("config hash mismatch") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli: bad configs exit 2 naming the key path") {
  const auto dir = rrhf::testing::scratch_dir("cli_bad");
  json j = rrhf::testing::tiny_run_json(dir / "run");
  j["rrhf"]["peak_lr"] = "high";
  write_file(dir / "c.json", j.dump());
  const auto r = cli("datagen --config " + (dir / "c.json").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("rrhf.peak_lr") != std::string::npos);

  j = rrhf::testing::tiny_run_json(dir / "run");
  j["samplr"] = json::object();
  write_file(dir / "c.json", j.dump());
  const auto r2 = cli("datagen --config " + (dir / "c.json").string(), dir);
  CHECK(r2.code == 2);
  CHECK(r2.err.find("samplr") != std::string::npos);

  write_file(dir / "c.json", "{ not json");
  CHECK(cli("datagen --config " + (dir / "c.json").string(), dir).code == 2);
  CHECK(cli("datagen", dir).code == 2);
  CHECK(cli("frobnicate", dir).code == 1);
  fs::remove_all(dir);
}
