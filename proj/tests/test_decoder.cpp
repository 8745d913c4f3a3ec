#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "rrhf/errors.hpp"
#include "rrhf/rowops.hpp"
#include "toy_lm.hpp"

using namespace rrhf;
using rrhf::testing::FnLM;

namespace {

// Logits depend only on the step index: beam search is exact on such models.
FnLM separable(std::size_t V, std::size_t steps, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> d(0.0, 1.5);
  std::vector<std::vector<double>> table(steps + 1, std::vector<double>(V));
  for (auto& row : table)
    for (auto& x : row) x = d(g);
  return FnLM(V, 64, [table](const std::vector<TokenId>& gen) { return table[std::min(gen.size(), table.size() - 1)]; });
}

std::vector<double> log_probs(std::vector<double> logits, double temperature) {
  for (auto& x : logits) x /= temperature;
  std::vector<double> out(logits.size());
  rowops::log_softmax(logits.data(), out.data(), logits.size());
  return out;
}

// Grouped beam search with Hamming diversity, written directly from the
// per-step definition (fixed length, no end token).
std::vector<std::vector<TokenId>> reference_diverse(const FnLM& lm, std::size_t groups, std::size_t width,
                                                    double penalty, double temperature, std::size_t steps) {
  struct B {
    std::vector<TokenId> toks;
    double score = 0.0;
  };
  std::vector<std::vector<B>> gs(groups, std::vector<B>(1));
  const std::vector<TokenId> prompt{1};
  for (std::size_t s = 0; s < steps; ++s) {
    std::map<TokenId, std::size_t> used;
    for (auto& grp : gs) {
      std::vector<B> cand;
      for (const auto& b : grp) {
        auto st = lm.start(prompt);
        for (TokenId t : b.toks) st->push(t);
        auto lp = log_probs(std::vector<double>(st->logits().begin(), st->logits().end()), temperature);
        for (std::size_t v = 0; v < lp.size(); ++v) {
          B nb{b.toks, b.score + lp[v] - penalty * static_cast<double>(used[static_cast<TokenId>(v)])};
          nb.toks.push_back(static_cast<TokenId>(v));
          cand.push_back(nb);
        }
      }
      std::stable_sort(cand.begin(), cand.end(), [](const B& a, const B& b) { return a.score > b.score; });
      cand.resize(std::min(width, cand.size()));
      for (const auto& c : cand) ++used[c.toks.back()];
      grp = cand;
    }
  }
  std::vector<std::vector<TokenId>> out;
  for (const auto& grp : gs)
    for (const auto& b : grp) out.push_back(b.toks);
  return out;
}

std::vector<TokenId> naive_truncate(const std::vector<TokenId>& seq, const std::vector<std::vector<TokenId>>& pats) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    for (const auto& p : pats) {
      if (p.empty() || i + p.size() > seq.size()) continue;
      bool match = true;
      for (std::size_t j = 0; j < p.size() && match; ++j) match = seq[i + j] == p[j];
      if (match) return std::vector<TokenId>(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }
  return seq;
}

}  // namespace

TEST_CASE("greedy on a memorised model emits the memorised response") {
  const std::vector<TokenId> target{5, 6, 7, Vocabulary::kEos};
  FnLM lm(10, 32, [&](const std::vector<TokenId>& gen) {
    std::vector<double> l(10, 0.0);
    l[static_cast<std::size_t>(target[std::min(gen.size(), target.size() - 1)])] = 20.0;
    return l;
  });
  const std::vector<TokenId> prompt{1, 2};
  auto out = decode(lm, prompt, DecodeConfig::greedy());
  REQUIRE(out.size() == 1);
  CHECK(out[0].tokens == target);
  CHECK(out[0].ended);
  CHECK(out[0].strategy == Strategy::greedy);
}

TEST_CASE("beam search equals exhaustive enumeration on separable models") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t V = 4 + seed % 5, L = 1 + seed % 3;
    FnLM lm = separable(V, L, seed);
    DecodeConfig cfg = DecodeConfig::vanilla_beam();
    cfg.eos.reset();
    cfg.max_new_tokens = L;
    const std::vector<TokenId> prompt{1};
    auto got = decode(lm, prompt, cfg);

    std::vector<std::pair<double, std::vector<TokenId>>> all;
    std::size_t total = 1;
    for (std::size_t i = 0; i < L; ++i) total *= V;
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<TokenId> seq;
      std::size_t c = code;
      for (std::size_t i = 0; i < L; ++i) {
        seq.push_back(static_cast<TokenId>(c % V));
        c /= V;
      }
      std::reverse(seq.begin(), seq.end());
      auto st = lm.start(prompt);
      double lp = 0;
      for (TokenId t : seq) {
        lp += log_probs(std::vector<double>(st->logits().begin(), st->logits().end()), 1.0)[static_cast<std::size_t>(t)];
        st->push(t);
      }
      all.emplace_back(lp, seq);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const std::size_t k = std::min<std::size_t>(4, total);
    REQUIRE(got.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(got[i].tokens == all[i].second);
      CHECK(got[i].log_prob == doctest::Approx(all[i].first).epsilon(1e-12));
      if (i) CHECK(got[i - 1].log_prob >= got[i].log_prob);
    }
  }
}

TEST_CASE("beam size 1 reproduces greedy on a transformer") {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context = 32;
  c.init_std = 0.5;
  Model m(c, 4);
  const std::vector<TokenId> prompt{1, 5, 6, 2};
  DecodeConfig b = DecodeConfig::vanilla_beam();
  b.beam_size = 1;
  b.max_new_tokens = 12;
  DecodeConfig g = DecodeConfig::greedy();
  g.max_new_tokens = 12;
  auto bo = decode(m, prompt, b);
  auto go = decode(m, prompt, g);
  REQUIRE(bo.size() == 1);
  CHECK(bo[0].tokens == go[0].tokens);
  CHECK(bo[0].log_prob == go[0].log_prob);
}

TEST_CASE("diverse_beam_step arithmetic") {
  std::vector<double> s{-0.5, -1.0, -2.0, -0.1, -3.0, -4.0, -5.0, -0.7};
  std::vector<std::size_t> none(8, 0), seven(8, 0);
  seven[7] = 1;
  CHECK(diverse_beam_step(s, seven, 0.0) == s);
  auto adj = diverse_beam_step(s, seven, 1.0);
  for (std::size_t v = 0; v < 7; ++v) CHECK(adj[v] == s[v]);
  CHECK(adj[7] == s[7] - 1.0);
  std::vector<std::size_t> two(8, 0);
  two[0] = 2;
  CHECK(diverse_beam_step(s, two, 0.75)[0] == s[0] - 1.5);
  std::vector<std::size_t> wrong(3, 0);
  CHECK_THROWS_AS(diverse_beam_step(s, wrong, 1.0), ShapeError);
}

TEST_CASE("diverse beam matches the per-step reference") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t V = 5 + seed % 4, L = 1 + seed % 3;
    FnLM lm = separable(V, L, 100 + seed);
    DecodeConfig cfg = DecodeConfig::diverse_beam();
    cfg.eos.reset();
    cfg.max_new_tokens = L;
    cfg.group_count = seed % 2 ? 4 : 2;
    cfg.diversity_penalty = 0.25 * static_cast<double>(seed % 5);
    auto got = decode(lm, std::vector<TokenId>{1}, cfg);
    auto want = reference_diverse(lm, cfg.group_count, cfg.beam_size / cfg.group_count, cfg.diversity_penalty,
                                  cfg.temperature, L);
    std::multiset<std::vector<TokenId>> g, w(want.begin(), want.end());
    for (const auto& h : got) g.insert(h.tokens);
    CHECK(g == w);
    for (const auto& h : got) CHECK(h.strategy == Strategy::diverse_beam);
  }
}

TEST_CASE("two groups split their first token exactly when the top-2 gap is below the penalty") {
  for (double gap : {0.3, 0.9, 1.1, 2.0}) {
    FnLM lm(6, 32, [gap](const std::vector<TokenId>&) {
      std::vector<double> l{0.0, -gap, -5.0, -6.0, -7.0, -8.0};
      return l;
    });
    DecodeConfig cfg = DecodeConfig::diverse_beam();
    cfg.beam_size = 2;
    cfg.group_count = 2;
    cfg.temperature = 1.0;
    cfg.eos.reset();
    cfg.max_new_tokens = 1;
    auto out = decode(lm, std::vector<TokenId>{1}, cfg);
    REQUIRE(out.size() == 2);
    const bool split = out[0].tokens[0] != out[1].tokens[0];
    CHECK(split == (gap < cfg.diversity_penalty));
  }
}

TEST_CASE("diverse beam candidates are distinct on a distinct-top-k model") {
  FnLM lm = separable(8, 4, 77);
  DecodeConfig cfg = DecodeConfig::diverse_beam();
  cfg.eos.reset();
  cfg.max_new_tokens = 4;
  auto out = decode(lm, std::vector<TokenId>{1}, cfg);
  std::set<std::vector<TokenId>> uniq;
  for (const auto& h : out) uniq.insert(h.tokens);
  CHECK(uniq.size() == out.size());
}

TEST_CASE("finished beams keep their slot and the output is ordered by normalised score") {
  // Token 3 ends the response and is only likely at the first step, where it
  // beats every continuation on normalised score.
  FnLM lm(6, 32, [](const std::vector<TokenId>& gen) {
    std::vector<double> l{-9, -9, -9, gen.empty() ? 1.0 : -9.0, 0.0, 0.0};
    return l;
  });
  auto out = decode(lm, std::vector<TokenId>{1}, DecodeConfig::vanilla_beam());
  REQUIRE(out.size() == 4);
  CHECK(out[0].tokens == std::vector<TokenId>{3});
  CHECK(out[0].ended);
  for (std::size_t i = 1; i < out.size(); ++i) {
    CHECK_FALSE(out[i].ended);
    CHECK(out[i].tokens.size() == 24);
    CHECK(out[i - 1].normalized() >= out[i].normalized());
  }
}

TEST_CASE("stop_truncate") {
  SUBCASE("examples") {
    const std::string text = "hello STOP world";
    std::vector<std::string> pats{"STOP"};
    CHECK(stop_truncate(text, pats) == "hello ");
    std::vector<std::string> none{"zzz"};
    CHECK(stop_truncate(text, none) == text);
    std::vector<std::string> overlap{"LO S", "llo"};
    CHECK(stop_truncate(std::string("heLLO STOP"), overlap) == "heL");
    std::vector<std::string> empty{""};
    CHECK(stop_truncate(text, empty) == text);
  }
  SUBCASE("naive scan oracle on 1000 random cases") {
    std::mt19937_64 g(5);
    for (int c = 0; c < 1000; ++c) {
      std::vector<TokenId> seq(g() % 20);
      for (auto& t : seq) t = static_cast<TokenId>(g() % 3);
      std::vector<std::vector<TokenId>> pats(1 + g() % 3);
      for (auto& p : pats) {
        p.resize(g() % 4);
        for (auto& t : p) t = static_cast<TokenId>(g() % 3);
      }
      CHECK(stop_truncate<TokenId>(seq, pats) == naive_truncate(seq, pats));
    }
  }
  SUBCASE("decode applies stop sequences") {
    FnLM lm(8, 32, [](const std::vector<TokenId>& gen) {
      const std::vector<TokenId> script{4, 5, 6, 7, 4, 5};
      std::vector<double> l(8, 0.0);
      l[static_cast<std::size_t>(script[std::min(gen.size(), script.size() - 1)])] = 30.0;
      return l;
    });
    DecodeConfig cfg = DecodeConfig::greedy();
    cfg.stop_sequences = {{6, 7}};
    auto out = decode(lm, std::vector<TokenId>{1}, cfg);
    CHECK(out[0].tokens == std::vector<TokenId>{4, 5});
    CHECK_FALSE(out[0].ended);
  }
}

TEST_CASE("sampling is seeded and follows the distribution") {
  FnLM lm(4, 64, [](const std::vector<TokenId>&) { return std::vector<double>{std::log(0.1), std::log(0.2), std::log(0.3), std::log(0.4)}; });
  DecodeConfig cfg = DecodeConfig::sampling(1.0);
  cfg.eos.reset();
  cfg.max_new_tokens = 1;
  std::vector<int> hist(4, 0);
  for (std::uint64_t s = 0; s < 4000; ++s) {
    cfg.seed = s;
    ++hist[static_cast<std::size_t>(decode(lm, std::vector<TokenId>{1}, cfg)[0].tokens[0])];
  }
  for (std::size_t v = 0; v < 4; ++v) CHECK(std::abs(hist[v] / 4000.0 - 0.1 * static_cast<double>(v + 1)) < 0.03);
  cfg.seed = 9;
  cfg.max_new_tokens = 20;
  auto a = decode(lm, std::vector<TokenId>{1}, cfg), b = decode(lm, std::vector<TokenId>{1}, cfg);
  CHECK(a[0].tokens == b[0].tokens);
  CHECK(a[0].log_prob == b[0].log_prob);
}

TEST_CASE("decode rejects prompts that fill the context") {
  FnLM lm(4, 3, [](const std::vector<TokenId>&) { return std::vector<double>(4, 0.0); });
  CHECK_THROWS_AS(decode(lm, std::vector<TokenId>{1, 2, 3}, DecodeConfig::greedy()), ContextOverflowError);
  DecodeConfig bad = DecodeConfig::diverse_beam();
  bad.group_count = 3;
  CHECK_THROWS_AS(decode(lm, std::vector<TokenId>{1}, bad), ConfigError);
}
