#pragma once
// Synthetic preference tasks with exactly computable rewards, plus JSONL
// ingestion of {"query", "chosen", "rejected"} records.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rrhf/rng.hpp"
#include "rrhf/vocab.hpp"

namespace rrhf {

enum class TaskKind { reversal, keyed_lookup, format_following };
enum class OracleKind { target_affinity, format_compliance };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

// Weighted checklist for format-following responses.
struct FormatRules {
  std::string prefix = "ans:";
  double prefix_weight = 0.5;
  double keyword_weight = 0.3;
  double length_weight = 0.2;
  std::size_t length_slack = 2;  // accepted |len(response) - len(reference)|
};

struct TaskSpec {
  TaskKind kind = TaskKind::reversal;
  std::size_t min_len = 3;  // query body length band (characters, keys or letters)
  std::size_t max_len = 8;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  FormatRules format;
  std::size_t max_edits = 3;  // corruption budget for rejected responses

  OracleKind oracle() const {
    return kind == TaskKind::format_following ? OracleKind::format_compliance : OracleKind::target_affinity;
  }

  std::string make_query(Rng& rng) const;
  // The answer the task's oracle scores highest for `query`.
  std::string reference(std::string_view query) const;
  // For format-following: the keyword the response must contain.
  std::string keyword(std::string_view query) const;

  void validate() const;
};

// Levenshtein distance over bytes.
std::size_t edit_distance(std::string_view a, std::string_view b);

// -(edit distance) / max(|a|, |b|); 0 when both are empty.
double target_affinity(std::string_view response, std::string_view reference);

double format_compliance(std::string_view response, std::string_view reference, std::string_view keyword,
                         const FormatRules& rules);

// Oracle reward of `response` for `query` under the task's oracle.
double oracle_score(const TaskSpec& spec, std::string_view query, std::string_view response);

struct Record {
  std::string query;
  std::string chosen;
  std::string rejected;
  friend bool operator==(const Record&, const Record&) = default;
};

struct GeneratedCorpus {
  std::vector<Record> records;
  std::size_t regenerated = 0;  // items whose corruption never lowered the oracle score
};

// n records with unique queries; chosen is the reference answer, rejected is
// the reference after 1..max_edits random edits, with oracle(chosen) >
// oracle(rejected). Deterministic in (spec, n, seed).
GeneratedCorpus generate_corpus(const TaskSpec& spec, std::size_t n, std::uint64_t seed);

nlohmann::json to_json(const Record& r);
void write_jsonl(const std::filesystem::path& path, const std::vector<Record>& records,
                 const nlohmann::json& extra = nlohmann::json::object());

struct IngestIssue {
  std::size_t line;  // 1-based
  std::string message;
};

struct IngestedRecord {
  Record record;
  TokenSeq chosen;
  TokenSeq rejected;
  bool truncated = false;
  std::size_t line = 0;
};

struct IngestResult {
  std::vector<IngestedRecord> records;
  std::vector<IngestIssue> issues;

  std::vector<Record> plain() const;
};

// Reads and validates a JSONL preference file. Malformed lines are reported in
// `issues` and skipped. Throws MissingArtifactError when the file does not
// exist and ConfigError when it holds no records at all.
IngestResult ingest(const std::filesystem::path& path, const Vocabulary& vocab, const TruncationConfig& trunc);

// Like ingest() but throws ValidationError for the first malformed line.
std::vector<Record> ingest_strict(const std::filesystem::path& path, const Vocabulary& vocab,
                                  const TruncationConfig& trunc);

// Named, disjoint index lists into a dataset. Assignment is a seeded shuffle
// of record indices, so it is stable for a given (n, seed).
struct SplitManifest {
  std::map<std::string, std::vector<std::size_t>> splits;

  static SplitManifest make(std::size_t n, const std::vector<std::pair<std::string, std::size_t>>& sizes,
                            std::uint64_t seed);
  const std::vector<std::size_t>& at(const std::string& name) const;
  std::vector<Record> select(const std::vector<Record>& records, const std::string& name) const;

  nlohmann::json to_json() const;
  static SplitManifest from_json(const nlohmann::json& j);
};

}  // namespace rrhf
