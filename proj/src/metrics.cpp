#include "rrhf/metrics.hpp"

#include <sstream>

#include "rrhf/errors.hpp"

namespace rrhf {

namespace {

std::string num(double x) { return nlohmann::json(x).dump(); }

}  // namespace

MetricsLog::MetricsLog(const std::filesystem::path& csv, const std::filesystem::path& jsonl, std::string config_hash)
    : hash_(std::move(config_hash)) {
  for (const auto& p : {csv, jsonl}) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  csv_.open(csv, std::ios::trunc);
  jsonl_.open(jsonl, std::ios::trunc);
  if (!csv_ || !jsonl_) throw Error("cannot open metrics files " + csv.string() + ", " + jsonl.string());
  csv_ << "# config_hash: " << hash_ << '\n' << "step,epoch,rank_loss,sft_loss,total_loss,lr\n";
  csv_.flush();
}

void MetricsLog::step(const StepMetrics& m) {
  csv_ << m.step << ',' << m.epoch << ',' << num(m.rank_loss) << ',' << num(m.sft_loss) << ',' << num(m.total_loss)
       << ',' << num(m.lr) << '\n';
  csv_.flush();
}

void MetricsLog::epoch(const EpochMetrics& m) {
  nlohmann::json j = m.eval.is_object() ? m.eval : nlohmann::json::object();
  j["config_hash"] = hash_;
  j["epoch"] = m.epoch;
  j["rank_loss"] = m.rank_loss;
  j["sft_loss"] = m.sft_loss;
  j["total_loss"] = m.total_loss;
  jsonl_ << j.dump() << '\n';
  jsonl_.flush();
}

TrainHooks MetricsLog::hooks(std::function<nlohmann::json(std::size_t, const Model&)> on_epoch) {
  TrainHooks h;
  h.on_step = [this](const StepMetrics& m) { step(m); };
  h.on_epoch = std::move(on_epoch);
  return h;
}

std::vector<StepMetrics> read_step_metrics(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw MissingArtifactError(csv.string());
  std::vector<StepMetrics> out;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "step,epoch,rank_loss,sft_loss,total_loss,lr") throw ValidationError(lineno, "unexpected metrics header");
      header = true;
      continue;
    }
    std::istringstream ss(line);
    StepMetrics m;
    char c1, c2, c3, c4, c5;
    if (!(ss >> m.step >> c1 >> m.epoch >> c2 >> m.rank_loss >> c3 >> m.sft_loss >> c4 >> m.total_loss >> c5 >> m.lr)) {
      throw ValidationError(lineno, "malformed metrics row");
    }
    out.push_back(m);
  }
  return out;
}

std::vector<EpochMetrics> read_epoch_metrics(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw MissingArtifactError(jsonl.string());
  std::vector<EpochMetrics> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      EpochMetrics m;
      m.epoch = j.at("epoch").get<std::size_t>();
      m.rank_loss = j.at("rank_loss").get<double>();
      m.sft_loss = j.at("sft_loss").get<double>();
      m.total_loss = j.at("total_loss").get<double>();
      for (const char* k : {"epoch", "rank_loss", "sft_loss", "total_loss", "config_hash"}) j.erase(k);
      m.eval = std::move(j);
      out.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(lineno, e.what());
    }
  }
  return out;
}

}  // namespace rrhf
