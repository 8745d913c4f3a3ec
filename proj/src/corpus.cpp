#include "rrhf/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <unordered_set>

#include "rrhf/errors.hpp"

namespace rrhf {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::reversal: return "reversal";
    case TaskKind::keyed_lookup: return "keyed-lookup";
    case TaskKind::format_following: return "format-following";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "reversal") return TaskKind::reversal;
  if (s == "keyed-lookup") return TaskKind::keyed_lookup;
  if (s == "format-following") return TaskKind::format_following;
  throw ConfigError("task.kind", "unknown task '" + s + "'");
}

namespace {

constexpr std::string_view kDigits = "0123456789";

std::string random_word(Rng& rng, std::string_view alphabet, std::size_t len) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += alphabet[uniform_index(rng, alphabet.size())];
  return s;
}

std::size_t random_len(Rng& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

std::string_view corruption_alphabet(const TaskSpec& spec) {
  return spec.kind == TaskKind::keyed_lookup ? kDigits : std::string_view(spec.alphabet);
}

std::string corrupt(const TaskSpec& spec, const std::string& s, Rng& rng) {
  const auto alpha = corruption_alphabet(spec);
  std::string out = s;
  const std::size_t edits = 1 + uniform_index(rng, spec.max_edits);
  for (std::size_t e = 0; e < edits; ++e) {
    const std::size_t op = uniform_index(rng, 3);
    if (op == 0 && !out.empty()) {  // substitute
      const std::size_t i = uniform_index(rng, out.size());
      char c = out[i];
      while (c == out[i] && alpha.size() > 1) c = alpha[uniform_index(rng, alpha.size())];
      out[i] = c;
    } else if (op == 1 || out.empty()) {  // insert
      const std::size_t i = uniform_index(rng, out.size() + 1);
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(i), alpha[uniform_index(rng, alpha.size())]);
    } else if (out.size() > 1) {  // delete
      out.erase(out.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, out.size())));
    }
  }
  return out;
}

}  // namespace

void TaskSpec::validate() const {
  if (min_len == 0 || min_len > max_len) throw ConfigError("task.min_len", "need 1 <= min_len <= max_len");
  if (alphabet.empty()) throw ConfigError("task.alphabet", "must not be empty");
  if (max_edits == 0) throw ConfigError("task.max_edits", "must be at least 1");
  if (kind == TaskKind::keyed_lookup) {
    if (alphabet.size() * alphabet.size() < max_len) {
      throw ConfigError("task.alphabet", "too small for distinct two-letter keys");
    }
  }
}

std::string TaskSpec::make_query(Rng& rng) const {
  const std::size_t len = random_len(rng, min_len, max_len);
  switch (kind) {
    case TaskKind::reversal:
      return random_word(rng, alphabet, len);
    case TaskKind::keyed_lookup: {
      const std::size_t pairs = std::max<std::size_t>(2, len);
      std::vector<std::string> keys;
      while (keys.size() < pairs) {
        std::string k = random_word(rng, alphabet, 2);
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
      }
      std::string q;
      for (std::size_t i = 0; i < pairs; ++i) {
        if (i) q += ',';
        q += keys[i] + "=" + random_word(rng, kDigits, 2);
      }
      return q + "?" + keys[uniform_index(rng, pairs)];
    }
    case TaskKind::format_following:
      return "fmt:" + random_word(rng, alphabet, len);
  }
  return {};
}

std::string TaskSpec::reference(std::string_view query) const {
  switch (kind) {
    case TaskKind::reversal:
      return std::string(query.rbegin(), query.rend());
    case TaskKind::keyed_lookup: {
      const auto q = query.rfind('?');
      if (q == std::string_view::npos) return {};
      const std::string key = std::string(query.substr(q + 1)) + "=";
      const auto table = query.substr(0, q);
      std::size_t pos = 0;
      while (pos <= table.size()) {
        auto end = table.find(',', pos);
        if (end == std::string_view::npos) end = table.size();
        const auto entry = table.substr(pos, end - pos);
        if (entry.substr(0, key.size()) == key) return std::string(entry.substr(key.size()));
        pos = end + 1;
      }
      return {};
    }
    case TaskKind::format_following:
      return format.prefix + keyword(query) + ".";
  }
  return {};
}

std::string TaskSpec::keyword(std::string_view query) const {
  constexpr std::string_view tag = "fmt:";
  if (query.substr(0, tag.size()) == tag) return std::string(query.substr(tag.size()));
  return std::string(query);
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double target_affinity(std::string_view response, std::string_view reference) {
  const std::size_t denom = std::max(response.size(), reference.size());
  if (denom == 0) return 0.0;
  return -static_cast<double>(edit_distance(response, reference)) / static_cast<double>(denom);
}

double format_compliance(std::string_view response, std::string_view reference, std::string_view keyword,
                         const FormatRules& rules) {
  double s = 0.0;
  if (response.substr(0, rules.prefix.size()) == rules.prefix) s += rules.prefix_weight;
  if (!keyword.empty() && response.find(keyword) != std::string_view::npos) s += rules.keyword_weight;
  const auto diff = response.size() > reference.size() ? response.size() - reference.size()
                                                       : reference.size() - response.size();
  if (diff <= rules.length_slack) s += rules.length_weight;
  return s;
}

double oracle_score(const TaskSpec& spec, std::string_view query, std::string_view response) {
  const std::string ref = spec.reference(query);
  if (spec.oracle() == OracleKind::format_compliance) {
    return format_compliance(response, ref, spec.keyword(query), spec.format);
  }
  return target_affinity(response, ref);
}

GeneratedCorpus generate_corpus(const TaskSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw ContractError("generate_corpus: n must be at least 1");
  Rng rng(seed);
  GeneratedCorpus out;
  std::unordered_set<std::string> seen;
  constexpr int kCorruptionTries = 8;
  const std::size_t max_attempts = 100 * n + 1000;
  std::size_t attempts = 0;
  while (out.records.size() < n) {
    if (++attempts > max_attempts) {
      throw ContractError("generate_corpus: could not find " + std::to_string(n) +
                          " unique queries; widen the task's length band");
    }
    std::string q = spec.make_query(rng);
    if (seen.count(q)) continue;
    const std::string chosen = spec.reference(q);
    const double best = oracle_score(spec, q, chosen);
    std::string rejected;
    bool ok = false;
    for (int t = 0; t < kCorruptionTries && !ok; ++t) {
      rejected = corrupt(spec, chosen, rng);
      ok = rejected != chosen && oracle_score(spec, q, rejected) < best;
    }
    if (!ok) {
      ++out.regenerated;
      continue;
    }
    seen.insert(q);
    out.records.push_back({std::move(q), chosen, std::move(rejected)});
  }
  if (out.regenerated) std::clog << "generate_corpus: regenerated " << out.regenerated << " items\n";
  return out;
}

nlohmann::json to_json(const Record& r) {
  return {{"query", r.query}, {"chosen", r.chosen}, {"rejected", r.rejected}};
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Record>& records, const nlohmann::json& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& r : records) {
    nlohmann::json j = to_json(r);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    out << j.dump() << '\n';
  }
  if (!out) throw Error("cannot write " + path.string());
}

std::vector<Record> IngestResult::plain() const {
  std::vector<Record> r;
  r.reserve(records.size());
  for (const auto& x : records) r.push_back(x.record);
  return r;
}

IngestResult ingest(const std::filesystem::path& path, const Vocabulary& vocab, const TruncationConfig& trunc) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError(path.string());
  IngestResult res;
  std::string line;
  std::size_t lineno = 0, nonblank = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++nonblank;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      res.issues.push_back({lineno, "invalid JSON"});
      continue;
    }
    if (!j.is_object()) {
      res.issues.push_back({lineno, "expected a JSON object"});
      continue;
    }
    std::string missing;
    for (const char* field : {"query", "chosen", "rejected"}) {
      if (!j.contains(field) || !j[field].is_string()) {
        missing = field;
        break;
      }
    }
    if (!missing.empty()) {
      res.issues.push_back({lineno, "missing string field '" + missing + "'"});
      continue;
    }
    IngestedRecord r;
    r.line = lineno;
    r.record = {j["query"].get<std::string>(), j["chosen"].get<std::string>(), j["rejected"].get<std::string>()};
    if (r.record.chosen == r.record.rejected) {
      res.issues.push_back({lineno, "chosen and rejected responses are identical"});
      continue;
    }
    try {
      bool t1 = false, t2 = false;
      r.chosen = make_sequence(vocab, r.record.query, r.record.chosen, trunc, &t1);
      r.rejected = make_sequence(vocab, r.record.query, r.record.rejected, trunc, &t2);
      r.truncated = t1 || t2;
    } catch (const ContractError& e) {
      res.issues.push_back({lineno, e.what()});
      continue;
    }
    res.records.push_back(std::move(r));
  }
  if (nonblank == 0) throw ConfigError("", "dataset file " + path.string() + " is empty");
  return res;
}

std::vector<Record> ingest_strict(const std::filesystem::path& path, const Vocabulary& vocab,
                                  const TruncationConfig& trunc) {
  IngestResult r = ingest(path, vocab, trunc);
  if (!r.issues.empty()) throw ValidationError(r.issues.front().line, r.issues.front().message);
  return r.plain();
}

SplitManifest SplitManifest::make(std::size_t n, const std::vector<std::pair<std::string, std::size_t>>& sizes,
                                  std::uint64_t seed) {
  std::size_t need = 0;
  for (const auto& [name, count] : sizes) need += count;
  if (need > n) {
    throw ConfigError("task.splits", "split sizes sum to " + std::to_string(need) + " but only " + std::to_string(n) +
                                         " records exist");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  SplitManifest m;
  std::size_t pos = 0;
  for (const auto& [name, count] : sizes) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                  idx.begin() + static_cast<std::ptrdiff_t>(pos + count));
    std::sort(part.begin(), part.end());
    m.splits[name] = std::move(part);
    pos += count;
  }
  return m;
}

const std::vector<std::size_t>& SplitManifest::at(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw ConfigError("splits", "no split named '" + name + "'");
  return it->second;
}

std::vector<Record> SplitManifest::select(const std::vector<Record>& records, const std::string& name) const {
  std::vector<Record> out;
  for (auto i : at(name)) {
    if (i >= records.size()) throw IndexError("split '" + name + "' references record " + std::to_string(i));
    out.push_back(records[i]);
  }
  return out;
}

nlohmann::json SplitManifest::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, ids] : splits) j[name] = ids;
  return j;
}

SplitManifest SplitManifest::from_json(const nlohmann::json& j) {
  SplitManifest m;
  const auto& s = j.contains("splits") ? j.at("splits") : j;
  for (auto it = s.begin(); it != s.end(); ++it) m.splits[it.key()] = it.value().get<std::vector<std::size_t>>();
  return m;
}

}  // namespace rrhf
