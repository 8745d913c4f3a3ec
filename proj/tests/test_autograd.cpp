#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "rrhf/autograd.hpp"
#include "rrhf/errors.hpp"

using namespace rrhf;
using rrhf::testing::check_params;

namespace {

Parameter rand_param(const std::string& name, Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(shape);
  for (auto& x : t.data()) x = d(g);
  return Parameter(name, t);
}

// Weighted sum so every output element gets a distinct upstream gradient.
Var probe(Var v) {
  Tensor w(v.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  return sum(mul(v, v.tape().constant(w)));
}

}  // namespace

TEST_CASE("elementwise and matrix ops pass finite-difference checks") {
  auto a = rand_param("a", {3, 4}, 1), b = rand_param("b", {4, 5}, 2), c = rand_param("c", {3, 4}, 3);
  auto bias = rand_param("bias", {5}, 4), bt = rand_param("bt", {5, 4}, 5);
  std::vector<Parameter*> ps{&a, &b, &c, &bias, &bt};
  SUBCASE("matmul + add_bias") {
    auto r = check_params(ps, [&](Tape& t) { return probe(add_bias(matmul(t.param(a), t.param(b)), t.param(bias))); });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
  }
  SUBCASE("matmul_nt") {
    auto r = check_params(ps, [&](Tape& t) { return probe(matmul_nt(t.param(a), t.param(bt))); });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
  }
  SUBCASE("add sub mul scale") {
    auto r = check_params(ps, [&](Tape& t) {
      Var x = t.param(a), y = t.param(c);
      return probe(scale(mul(add(x, y), sub(x, y)), 0.5));
    });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
  }
  SUBCASE("exp square softplus mean") {
    auto r = check_params(ps, [&](Tape& t) {
      Var x = t.param(a);
      return add(mean(exp(x)), add(probe(square(x)), probe(softplus(x))));
    });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
  }
  SUBCASE("relu away from zero") {
    auto r = check_params(ps, [&](Tape& t) { return probe(relu(t.param(a))); });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
  }
  SUBCASE("slice, element, stack") {
    auto r = check_params(ps, [&](Tape& t) {
      Var x = t.param(a);
      std::vector<Var> parts{element(x, 1), element(x, 7), sum(slice_rows(x, 1, 3))};
      return probe(stack(parts));
    });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
  }
}

TEST_CASE("layer_norm, embedding, attention, log_softmax and gather pass finite-difference checks") {
  auto x = rand_param("x", {4, 6}, 11), g = rand_param("g", {6}, 12), be = rand_param("b", {6}, 13);
  auto table = rand_param("table", {5, 6}, 14), qkv = rand_param("qkv", {5, 6}, 15);
  std::vector<Parameter*> ps{&x, &g, &be, &table, &qkv};
  SUBCASE("layer_norm") {
    auto r = check_params(ps, [&](Tape& t) { return probe(layer_norm(t.param(x), t.param(g), t.param(be))); });
    CHECK_MESSAGE(r.worst < 1e-5, r.where);
  }
  SUBCASE("embedding with repeated ids") {
    std::vector<TokenId> ids{1, 3, 1, 4};
    auto r = check_params(ps, [&](Tape& t) { return probe(embedding(t.param(table), ids)); });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
  }
  SUBCASE("causal attention, two heads") {
    auto r = check_params(ps, [&](Tape& t) { return probe(causal_attention(t.param(qkv), 1)); });
    CHECK_MESSAGE(r.worst < 1e-5, r.where);
    auto q = rand_param("q2", {5, 12}, 16);
    auto r2 = check_params({&q}, [&](Tape& t) { return probe(causal_attention(t.param(q), 2)); });
    CHECK_MESSAGE(r2.worst < 1e-5, r2.where);
  }
  SUBCASE("log_softmax on both axes") {
    auto r = check_params(ps, [&](Tape& t) { return probe(log_softmax(t.param(x), 1)); });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
    auto r0 = check_params(ps, [&](Tape& t) { return probe(log_softmax(t.param(x), 0)); });
    CHECK_MESSAGE(r0.worst < 1e-6, r0.where);
  }
  SUBCASE("gather_log_prob") {
    std::vector<TokenId> tg{0, 5, 2, 2};
    auto r = check_params(ps, [&](Tape& t) { return probe(gather_log_prob(t.param(x), tg)); });
    CHECK_MESSAGE(r.worst < 1e-6, r.where);
  }
}

TEST_CASE("log_softmax values") {
  Tape t(false);
  Var x = t.constant(Tensor::matrix({{1.0, 2.0, 3.0}, {1000.0, 1000.0, -1000.0}}));
  const Tensor y = log_softmax(x).value();
  const double z = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(y.at(0, 0) == doctest::Approx(1.0 - z).epsilon(1e-14));
  CHECK(y.at(0, 2) == doctest::Approx(3.0 - z).epsilon(1e-14));
  CHECK(y.at(1, 0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(std::isfinite(y.at(1, 2)));
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += std::exp(y.at(r, c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Var col = log_softmax(t.constant(Tensor::matrix({{0.0, 1.0}, {0.0, 3.0}})), 0);
  CHECK(col.value().at(0, 0) == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("gather_log_prob matches log_softmax entries and rejects bad targets") {
  Tape t(false);
  Var x = t.constant(Tensor::matrix({{0.1, 0.2, 0.3}, {-1.0, 0.0, 2.0}}));
  std::vector<TokenId> tg{2, 0};
  Tensor ls = log_softmax(x).value();
  Tensor g = gather_log_prob(x, tg).value();
  CHECK(g[0] == ls.at(0, 2));
  CHECK(g[1] == ls.at(1, 0));
  std::vector<TokenId> bad{3, 0};
  CHECK_THROWS_AS(gather_log_prob(x, bad), IndexError);
  std::vector<TokenId> short_{1};
  CHECK_THROWS_AS(gather_log_prob(x, short_), ShapeError);
}

TEST_CASE("relu subgradient is zero at zero") {
  Parameter p("p", Tensor::vector({-1.0, 0.0, 2.0}));
  Tape t;
  t.backward(sum(relu(t.param(p))));
  CHECK(p.grad[0] == 0.0);
  CHECK(p.grad[1] == 0.0);
  CHECK(p.grad[2] == 1.0);
}

TEST_CASE("backward contract") {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  SUBCASE("non-scalar output") {
    Tape t;
    CHECK_THROWS_AS(t.backward(t.param(p)), ContractError);
  }
  SUBCASE("tape reuse") {
    Tape t;
    Var l = sum(square(t.param(p)));
    t.backward(l);
    CHECK(t.consumed());
    CHECK_THROWS_AS(t.backward(l), StateError);
    CHECK_THROWS_AS(t.constant(Tensor::scalar(1.0)), StateError);
  }
  SUBCASE("gradients accumulate into parameters across tapes") {
    p.zero_grad();
    for (int i = 0; i < 2; ++i) {
      Tape t;
      t.backward(sum(square(t.param(p))));
    }
    CHECK(p.grad[0] == 4.0);
    CHECK(p.grad[1] == 8.0);
  }
  SUBCASE("leaf gradients and detach") {
    Tape t;
    Var a = t.leaf(Tensor::vector({3.0}));
    Var y = add(mul(a, a), detach(mul(a, a)));
    t.backward(sum(y));
    CHECK(t.grad(a)[0] == 6.0);
  }
  SUBCASE("a frozen parameter gets no gradient") {
    const Parameter& cp = p;
    p.zero_grad();
    Tape t;
    Var x = t.param(cp);
    CHECK_FALSE(x.requires_grad());
    Var l = sum(square(x));
    t.backward(l);
    CHECK(p.grad[0] == 0.0);
  }
}

TEST_CASE("shape mismatches throw") {
  Tape t(false);
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({2, 3}));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, t.constant(Tensor({3, 2}))), ShapeError);
  CHECK_THROWS_AS(add_bias(a, t.constant(Tensor({2}))), ShapeError);
  CHECK_THROWS_AS(log_softmax(a, 2), IndexError);
}
