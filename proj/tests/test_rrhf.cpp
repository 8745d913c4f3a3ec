#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "rrhf/errors.hpp"
#include "rrhf/rrhf.hpp"

using namespace rrhf;
using testing::micro_config;
using testing::random_ids;

namespace {

// Direct enumeration of every ordered pair.
double brute_rank(const std::vector<double>& p, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (i != j && r[i] < r[j] && p[i] > p[j]) s += p[i] - p[j];
    }
  }
  return s;
}

bool consistent(const std::vector<double>& p, const std::vector<double>& r) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (r[i] < r[j] && p[i] > p[j]) return false;
    }
  }
  return true;
}

RankedBatch random_batch(std::size_t k, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  RankedBatch b;
  b.query = "q" + std::to_string(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t q = 2 + g() % 3, resp = 2 + g() % 4;
    b.seqs.push_back({random_ids(q + resp, vocab, seed * 31 + i), q});
    b.rewards.push_back(static_cast<double>(g() % 5));
    b.texts.push_back("c" + std::to_string(i));
  }
  return b;
}

std::vector<double> scores_of(const Model& m, const RankedBatch& b) {
  std::vector<double> p;
  for (const auto& s : b.seqs) p.push_back(score_response(m, s));
  return p;
}

}  // namespace

TEST_CASE("rank_loss worked examples") {
  CHECK(rank_loss(std::vector<double>{-2.0, -1.0}, std::vector<double>{0.5, 1.0}) == 0.0);
  CHECK(rank_loss(std::vector<double>{-1.0, -2.0}, std::vector<double>{0.5, 1.0}) == 1.0);
  CHECK(rank_loss(std::vector<double>{-1.0, -1.5, -0.5}, std::vector<double>{0, 1, 2}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(rank_loss(std::vector<double>{-3.0}, std::vector<double>{1.0}) == 0.0);
  CHECK_THROWS_AS(rank_loss(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ContractError);
  CHECK_THROWS_AS(rank_loss(std::vector<double>{}, std::vector<double>{}), ContractError);
}

TEST_CASE("rank_loss equals all-pairs enumeration on random sets") {
  std::mt19937_64 g(2024);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::size_t zeros = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + g() % 6;
    std::vector<double> p(k), r(k);
    for (auto& x : p) x = nd(g);
    // Coarse rewards so ties are common.
    for (auto& x : r) x = static_cast<double>(g() % 4);
    if (trial % 5 == 0) {
      // Force a consistent ordering sometimes so the zero branch is exercised.
      std::sort(p.begin(), p.end());
      std::sort(r.begin(), r.end());
    }
    const double got = rank_loss(p, r);
    CHECK(std::abs(got - brute_rank(p, r)) <= 1e-12);
    CHECK(got >= 0.0);
    CHECK((got == 0.0) == consistent(p, r));
    zeros += got == 0.0;
    // Only comparisons of rewards matter.
    std::vector<double> r2(k);
    for (std::size_t i = 0; i < k; ++i) r2[i] = std::exp(3.0 * r[i]) - 7.0;
    CHECK(rank_loss(p, r2) == got);
  }
  CHECK(zeros > 100);
}

TEST_CASE("rank_loss gradient flows through scores only, zero at the hinge boundary") {
  Tape t;
  Var p = t.leaf(Tensor::vector({-1.0, -1.5, -0.5}));
  t.backward(rank_loss(p, std::vector<double>{0, 1, 2}));
  // only the pair (0, 1) is violated: d/dp0 = +1, d/dp1 = -1
  CHECK(t.grad(p)[0] == 1.0);
  CHECK(t.grad(p)[1] == -1.0);
  CHECK(t.grad(p)[2] == 0.0);

  Tape t2;
  Var q = t2.leaf(Tensor::vector({-1.0, -1.0}));
  Var l = rank_loss(q, std::vector<double>{0.0, 1.0});
  CHECK(l.item() == 0.0);
  t2.backward(l);
  CHECK(t2.grad(q)[0] == 0.0);
  CHECK(t2.grad(q)[1] == 0.0);

  Tape t3;
  Var m = t3.leaf(Tensor::vector({-1.0, -1.0}));
  Var lm = rank_loss(m, std::vector<double>{0.0, 1.0}, 0.25);
  CHECK(lm.item() == 0.25);
  t3.backward(lm);
  CHECK(t3.grad(m)[0] == 1.0);
}

TEST_CASE("sft_loss identities") {
  Model m(micro_config(), 3);
  testing::jitter(m, 4);
  TokenSeq seq{random_ids(9, 12, 5), 4};
  Tape t(false);
  const double l = sft_loss(bind(t, m), seq).item();
  CHECK(l == doctest::Approx(-static_cast<double>(seq.response_len()) * score_response(m, seq)).epsilon(1e-12));

  Model u(micro_config(), 3);
  u.parameter("tok_emb").value.fill(0.0);  // tied output layer -> uniform next-token distribution
  Tape t2(false);
  CHECK(sft_loss(bind(t2, u), seq).item() == doctest::Approx(5.0 * std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("total loss composition") {
  Model m(micro_config(), 8);
  testing::jitter(m, 9);
  SUBCASE("k = 1 is exactly the SFT loss") {
    RankedBatch b = random_batch(1, 12, 11);
    Tape t(false), t2(false);
    LossParts parts = rrhf_loss(bind(t, m), b);
    CHECK(parts.rank == 0.0);
    CHECK(parts.total.item() == sft_loss(bind(t2, m), b.seqs[0]).item());
  }
  SUBCASE("tied rewards leave only the SFT term") {
    RankedBatch b = random_batch(4, 12, 12);
    b.rewards = {0.3, 0.3, 0.3, 0.3};
    Tape t(false), t2(false);
    LossParts parts = rrhf_loss(bind(t, m), b);
    CHECK(parts.total.item() == sft_loss(bind(t2, m), b.seqs[0]).item());
  }
  SUBCASE("random 4-candidate batch equals separately computed parts") {
    for (std::uint64_t s = 20; s < 30; ++s) {
      RankedBatch b = random_batch(4, 12, s);
      Tape t(false), t2(false);
      LossParts parts = rrhf_loss(bind(t, m), b, 1.0);
      const double rank = brute_rank(scores_of(m, b), b.rewards);
      const double sft = -static_cast<double>(b.seqs[b.best()].response_len()) * score_response(m, b.seqs[b.best()]);
      CHECK(parts.total.item() == doctest::Approx(rank + sft).epsilon(1e-12));
      CHECK(parts.rank == doctest::Approx(rank).epsilon(1e-12));
      Tape t3(false);
      CHECK(rrhf_loss(bind(t3, m), b, 2.5).total.item() == doctest::Approx(2.5 * rank + sft).epsilon(1e-12));
    }
  }
}

TEST_CASE("best candidate is the lowest-index maximum") {
  RankedBatch b = random_batch(4, 12, 1);
  b.rewards = {0.1, 0.9, 0.9, 0.2};
  CHECK(b.best() == 1);
  b.rewards = {1.0, 1.0, 1.0, 1.0};
  CHECK(b.best() == 0);
  b.rewards = {1.0, 1.0};
  CHECK_THROWS_AS(b.validate(), ContractError);
  b = random_batch(2, 12, 1);
  b.rewards[1] = std::nan("");
  CHECK_THROWS_AS(b.validate(), NumericError);
}

TEST_CASE("analytic gradients of the ranking, SFT and total losses, k = 3") {
  Model m(micro_config(12, 1), 31);
  testing::jitter(m, 32);
  REQUIRE(m.parameter_count() <= 2000);
  RankedBatch b = random_batch(3, 12, 40);
  // Rewards ordered against the current scores so every pair is violated.
  const auto p = scores_of(m, b);
  std::vector<std::size_t> idx{0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return p[x] > p[y]; });
  for (std::size_t rank = 0; rank < 3; ++rank) b.rewards[idx[rank]] = static_cast<double>(rank);
  REQUIRE(rank_loss(p, b.rewards) > 0.0);
  const auto ps = testing::policy_params(m);

  auto rep_rank = testing::check_params(ps, [&](Tape& t) {
    BoundModel bm = bind(t, m);
    std::vector<Var> s;
    for (const auto& seq : b.seqs) {
      s.push_back(scale(sum(response_log_probs(bm, seq)), 1.0 / static_cast<double>(seq.response_len())));
    }
    return rank_loss(stack(s), b.rewards);
  });
  CHECK_MESSAGE(rep_rank.worst < 1e-4, rep_rank.where);
  auto rep_sft = testing::check_params(ps, [&](Tape& t) { return sft_loss(bind(t, m), b.seqs[b.best()]); });
  CHECK_MESSAGE(rep_sft.worst < 1e-4, rep_sft.where);
  auto rep_total = testing::check_params(ps, [&](Tape& t) { return rrhf_loss(bind(t, m), b).total; });
  CHECK_MESSAGE(rep_total.worst < 1e-4, rep_total.where);
}

TEST_CASE("k = 1 RRHF training reproduces SFT training bit for bit") {
  std::vector<TokenSeq> seqs;
  std::vector<RankedBatch> batches;
  for (std::uint64_t s = 0; s < 13; ++s) {
    RankedBatch b = random_batch(1, 12, 100 + s);
    seqs.push_back(b.seqs[0]);
    batches.push_back(b);
  }
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.accumulation = 4;
  cfg.peak_lr = 3e-3;
  cfg.seed = 77;
  Model init(micro_config(), 5);
  testing::jitter(init, 6, 0.05);

  auto run = [&](bool rrhf_path) {
    Model m = init;
    std::vector<Model> snapshots;
    TrainHooks h;
    h.before_update = [&](const Model& cur) { snapshots.push_back(cur); };
    TrainResult r = rrhf_path ? train_rrhf(m, batches, cfg, h) : train_sft(m, seqs, cfg, h);
    snapshots.push_back(m);
    return std::make_pair(r, snapshots);
  };
  auto [ra, sa] = run(true);
  auto [rb, sb] = run(false);
  REQUIRE(sa.size() == sb.size());
  CHECK(sa.size() == total_optimizer_steps(13, cfg) + 1);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(testing::same_bits(sa[i], sb[i]));
  CHECK_FALSE(testing::same_bits(sa.back(), init));
  REQUIRE(ra.steps.size() == rb.steps.size());
  for (std::size_t i = 0; i < ra.steps.size(); ++i) {
    CHECK(ra.steps[i].total_loss == rb.steps[i].total_loss);
    CHECK(ra.steps[i].lr == rb.steps[i].lr);
    CHECK(ra.steps[i].rank_loss == 0.0);
  }
}

TEST_CASE("RRHF training contract") {
  std::vector<RankedBatch> data;
  for (std::uint64_t s = 0; s < 10; ++s) data.push_back(random_batch(3, 12, 200 + s));
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.accumulation = 3;
  cfg.peak_lr = 1e-2;
  cfg.seed = 5;
  Model init(micro_config(), 12);

  SUBCASE("same seed, same result; head untouched; schedule bookkeeping") {
    Model a = init, b = init;
    TrainResult ra = train_rrhf(a, data, cfg);
    train_rrhf(b, data, cfg);
    CHECK(testing::same_bits(a, b));
    CHECK(ra.steps.size() == total_optimizer_steps(data.size(), cfg));
    CHECK(ra.steps.size() == 12);
    CHECK(ra.steps.back().step == 12);
    CHECK(ra.epochs.size() == 3);
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      if (a.is_head_parameter(i)) {
        const auto x = a.parameters()[i].value.data();
        const auto y = init.parameters()[i].value.data();
        CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
      }
    }
    Model c = init;
    TrainConfig other = cfg;
    other.seed = 6;
    train_rrhf(c, data, other);
    CHECK_FALSE(testing::same_bits(a, c));
  }
  SUBCASE("training lowers the loss on a fixed set") {
    Model m = init;
    TrainConfig long_cfg = cfg;
    long_cfg.epochs = 8;
    TrainResult r = train_rrhf(m, data, long_cfg);
    CHECK(r.epochs.back().total_loss < r.epochs.front().total_loss);
  }
  SUBCASE("empty data and non-finite losses") {
    Model m = init;
    CHECK_THROWS_AS(train_rrhf(m, {}, cfg), ConfigError);
    m.parameter("tok_emb").value[0] = std::nan("");
    try {
      train_rrhf(m, data, cfg);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("query:") != std::string::npos);
    }
  }
}
