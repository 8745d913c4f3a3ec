#pragma once
// Tiny decoder-only transformer (pre-LayerNorm GPT block, ReLU MLP, learned
// positions, output projection tied to the token embedding) plus a scalar head
// on the final hidden state used as the PPO value function and as the learned
// reward model's output.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rrhf/autograd.hpp"
#include "rrhf/vocab.hpp"

namespace rrhf {

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t context = 256;
  std::size_t mlp_mult = 4;
  double init_std = 0.02;

  void validate() const;
  std::size_t parameter_count() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class Model {
 public:
  Model() = default;
  // Weights drawn from N(0, init_std) with the given seed; residual output
  // projections scaled by 1/sqrt(2 * n_layers); the scalar head starts at zero.
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Parameters that belong to the language-model policy (everything except
  // the scalar head).
  bool is_head_parameter(std::size_t index) const { return index >= head_begin_; }

  // Index layout, fixed by construction order.
  struct LayerIndex {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc_w, fc_b, out_w, out_b;
  };
  std::size_t tok_emb = 0, pos_emb = 1, lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;
  std::vector<LayerIndex> layers;

 private:
  void add(std::string name, Tensor value);
  ModelConfig config_;
  std::vector<Parameter> params_;
  std::size_t head_begin_ = 0;
};

// Binds model weights to a tape. With a mutable model and a recording tape the
// parameters receive gradients; a const model is always frozen.
struct BoundModel {
  const Model* model;
  std::vector<Var> p;
};
BoundModel bind(Tape& tape, Model& model);
BoundModel bind(Tape& tape, const Model& model);

// Final-LayerNorm hidden states [T, d]. Throws ContextOverflowError when the
// sequence exceeds the context window.
Var forward_hidden(const BoundModel& m, std::span<const TokenId> ids);

// Logits [T, V]; row t predicts token t+1.
Var forward_logits(const BoundModel& m, std::span<const TokenId> ids);
Tensor forward_logits(const Model& model, std::span<const TokenId> ids);

// Per-token log-probabilities of the response tokens, [response_len].
Var response_log_probs(const BoundModel& m, const TokenSeq& seq);

// Scalar head evaluated at every response-predicting position [response_len],
// on detached hidden states: head gradients never reach the backbone.
Var response_values(const BoundModel& m, const TokenSeq& seq, Var hidden);

// Scalar head at the last position, not detached: the learned reward model
// trains backbone and head together. Returns a [1] Var.
Var sequence_reward(const BoundModel& m, std::span<const TokenId> ids);

// Mean log-probability of the response span (length includes end-of-response).
// Always <= 0. Throws ContractError for an empty response.
double score_response(const Model& model, const TokenSeq& seq);

// exp(-mean log-prob) over all response tokens of the corpus.
double perplexity(const Model& model, std::span<const TokenSeq> seqs);

// Incremental decoding with a key/value cache. Values equal forward_logits'
// rows for the same prefix.
class InferenceState {
 public:
  InferenceState(const Model& model, std::span<const TokenId> prompt);

  void push(TokenId token);
  std::span<const double> logits() const noexcept { return logits_; }
  std::size_t length() const noexcept { return length_; }
  const Model& model() const noexcept { return *model_; }

 private:
  void step(TokenId token);
  const Model* model_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_, values_;  // per layer, [length, d]
  std::vector<double> logits_;
};

}  // namespace rrhf
