#pragma once
// Small models and random token data shared by the trainer tests.

#include <random>
#include <vector>

#include "rrhf/model.hpp"

namespace rrhf::testing {

inline ModelConfig micro_config(std::size_t vocab = 12, std::size_t layers = 1) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_layers = layers;
  c.n_heads = 2;
  c.context = 32;
  c.init_std = 0.3;
  return c;
}

inline std::vector<TokenId> random_ids(std::size_t n, std::size_t v, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::vector<TokenId> ids(n);
  for (auto& x : ids) x = static_cast<TokenId>(g() % v);
  return ids;
}

inline void jitter(Model& m, std::uint64_t seed, double sd = 0.2) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> d(0.0, sd);
  for (auto& p : m.parameters()) {
    for (auto& x : p.value.data()) x += d(g);
  }
}

inline std::vector<Parameter*> all_params(Model& m) {
  std::vector<Parameter*> ps;
  for (auto& p : m.parameters()) ps.push_back(&p);
  return ps;
}

inline std::vector<Parameter*> policy_params(Model& m) {
  std::vector<Parameter*> ps;
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    if (!m.is_head_parameter(i)) ps.push_back(&m.parameters()[i]);
  }
  return ps;
}

inline bool same_bits(const Model& a, const Model& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& x = a.parameters()[i].value.data();
    const auto& y = b.parameters()[i].value.data();
    if (x.size() != y.size()) return false;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (std::bit_cast<std::uint64_t>(x[j]) != std::bit_cast<std::uint64_t>(y[j])) return false;
    }
  }
  return true;
}

}  // namespace rrhf::testing
