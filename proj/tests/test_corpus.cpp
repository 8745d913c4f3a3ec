#include <fstream>
#include <set>

#include "doctest.h"
#include "rrhf/corpus.hpp"
#include "rrhf/errors.hpp"
#include "rrhf/hashing.hpp"

using namespace rrhf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "rrhf_corpus_test";
  fs::create_directories(dir);
  return dir / name;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream f(p, std::ios::trunc);
  for (const auto& l : lines) f << l << '\n';
}

}  // namespace

TEST_CASE("task references") {
  TaskSpec rev;
  CHECK(rev.reference("abc") == "cba");
  TaskSpec look;
  look.kind = TaskKind::keyed_lookup;
  CHECK(look.reference("ab=12,cd=34?cd") == "34");
  CHECK(look.reference("ab=12,cd=34?ab") == "12");
  TaskSpec fmt;
  fmt.kind = TaskKind::format_following;
  CHECK(fmt.reference("fmt:word") == "ans:word.");
  CHECK(fmt.keyword("fmt:word") == "word");
  CHECK(task_kind_from_string("keyed-lookup") == TaskKind::keyed_lookup);
  CHECK_THROWS_AS(task_kind_from_string("nope"), ConfigError);
}

TEST_CASE("oracles") {
  CHECK(target_affinity("cba", "cba") == 0.0);
  CHECK(target_affinity("xyz", "cba") == -1.0);
  CHECK(target_affinity("cbx", "cba") == doctest::Approx(-1.0 / 3.0));
  CHECK(target_affinity("", "") == 0.0);
  CHECK(edit_distance("kitten", "sitting") == 3);
  FormatRules r;
  // keyword present, no prefix, length far outside the band
  CHECK(format_compliance("zzzzzzzz word zzzzzzzz", "ans:word.", "word", r) == doctest::Approx(0.3));
  CHECK(format_compliance("ans:word.", "ans:word.", "word", r) == doctest::Approx(1.0));
  CHECK(format_compliance("ans:", "ans:word.", "word", r) == doctest::Approx(0.5));
  CHECK(format_compliance("qqqqqqqq", "ans:word.", "word", r) == doctest::Approx(0.2));
}

TEST_CASE("generated pairs respect the oracle ordering and are seed-deterministic") {
  for (auto kind : {TaskKind::reversal, TaskKind::keyed_lookup, TaskKind::format_following}) {
    TaskSpec spec;
    spec.kind = kind;
    auto a = generate_corpus(spec, 300, 42);
    REQUIRE(a.records.size() == 300);
    std::set<std::string> queries;
    for (const auto& r : a.records) {
      CHECK(r.chosen == spec.reference(r.query));
      CHECK(oracle_score(spec, r.query, r.chosen) > oracle_score(spec, r.query, r.rejected));
      CHECK(r.chosen != r.rejected);
      queries.insert(r.query);
    }
    CHECK(queries.size() == 300);
    auto b = generate_corpus(spec, 300, 42);
    const auto pa = scratch("a.jsonl"), pb = scratch("b.jsonl");
    write_jsonl(pa, a.records);
    write_jsonl(pb, b.records);
    CHECK(sha256_file(pa) == sha256_file(pb));
    auto c = generate_corpus(spec, 300, 43);
    CHECK(c.records != a.records);
  }
}

TEST_CASE("ingest") {
  const auto& vocab = Vocabulary::standard();
  TruncationConfig trunc;
  SUBCASE("round trip of a generated corpus") {
    auto gen = generate_corpus(TaskSpec{}, 50, 1);
    const auto p = scratch("rt.jsonl");
    write_jsonl(p, gen.records, {{"config_hash", "abc"}});
    auto in = ingest(p, vocab, trunc);
    CHECK(in.issues.empty());
    CHECK(in.plain() == gen.records);
    for (const auto& r : in.records) {
      CHECK_FALSE(r.truncated);
      CHECK(vocab.decode_response(r.chosen.response()) == r.record.chosen);
    }
  }
  SUBCASE("valid three-line file") {
    const auto p = scratch("three.jsonl");
    write_lines(p, {R"({"query":"abc","chosen":"cba","rejected":"cb"})",
                    R"({"query":"de","chosen":"ed","rejected":"e"})",
                    R"({"query":"xyz","chosen":"zyx","rejected":"zy"})"});
    CHECK(ingest(p, vocab, trunc).records.size() == 3);
    CHECK(ingest_strict(p, vocab, trunc).size() == 3);
  }
  SUBCASE("missing field names the line") {
    const auto p = scratch("missing.jsonl");
    write_lines(p, {R"({"query":"abc","chosen":"cba","rejected":"cb"})", R"({"query":"de","chosen":"ed"})"});
    auto in = ingest(p, vocab, trunc);
    REQUIRE(in.issues.size() == 1);
    CHECK(in.issues[0].line == 2);
    CHECK(in.issues[0].message.find("rejected") != std::string::npos);
    try {
      ingest_strict(p, vocab, trunc);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("overlong query is truncated and flagged") {
    const auto p = scratch("long.jsonl");
    write_lines(p, {R"({"query":")" + std::string(500, 'q') + R"(","chosen":"a","rejected":"b"})"});
    auto in = ingest(p, vocab, trunc);
    REQUIRE(in.records.size() == 1);
    CHECK(in.records[0].truncated);
    CHECK(in.records[0].chosen.query_len == trunc.max_query_tokens + 2);
  }
  SUBCASE("empty and missing files") {
    const auto p = scratch("empty.jsonl");
    write_lines(p, {});
    CHECK_THROWS_AS(ingest(p, vocab, trunc), ConfigError);
    CHECK_THROWS_AS(ingest(scratch("nope.jsonl"), vocab, trunc), MissingArtifactError);
  }
  SUBCASE("other malformed lines") {
    const auto p = scratch("bad.jsonl");
    write_lines(p, {"not json", R"({"query":"a","chosen":"b","rejected":"b"})",
                    R"({"query":"a","chosen":"<","rejected":"b"})", R"({"query":"a","chosen":"b","rejected":"c"})"});
    auto in = ingest(p, vocab, trunc);
    CHECK(in.records.size() == 1);
    REQUIRE(in.issues.size() == 3);
    CHECK(in.issues[0].line == 1);
    CHECK(in.issues[1].line == 2);
    CHECK(in.issues[2].line == 3);
  }
}

TEST_CASE("splits are disjoint and seed-stable") {
  auto m = SplitManifest::make(100, {{"train", 60}, {"eval", 30}}, 5);
  auto m2 = SplitManifest::make(100, {{"train", 60}, {"eval", 30}}, 5);
  CHECK(m.splits == m2.splits);
  std::set<std::size_t> tr(m.at("train").begin(), m.at("train").end());
  for (auto i : m.at("eval")) CHECK_FALSE(tr.count(i));
  CHECK(tr.size() == 60);
  CHECK(SplitManifest::from_json(m.to_json()).splits == m.splits);
  CHECK_THROWS_AS(SplitManifest::make(10, {{"train", 11}}, 1), ConfigError);
  CHECK_THROWS_AS(m.at("dev"), ConfigError);
}
