#include "rrhf/model.hpp"

#include <algorithm>
#include <cmath>

#include "rrhf/errors.hpp"
#include "rrhf/kernels/kernels.hpp"
#include "rrhf/rng.hpp"
#include "rrhf/rowops.hpp"

namespace rrhf {

constexpr double kLnEps = 1e-5;

void ModelConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("model.vocab_size", "must be at least 5");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("model.n_heads", "d_model must be a positive multiple of n_heads");
  }
  if (n_layers == 0) throw ConfigError("model.n_layers", "must be positive");
  if (context < 2) throw ConfigError("model.context", "must be at least 2");
  if (mlp_mult == 0) throw ConfigError("model.mlp_mult", "must be positive");
  if (!(init_std > 0.0)) throw ConfigError("model.init_std", "must be positive");
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t d = d_model, h = d_model * mlp_mult;
  const std::size_t per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
  return vocab_size * d + context * d + n_layers * per_layer + 2 * d + d + 1;
}

void Model::add(std::string name, Tensor value) { params_.emplace_back(std::move(name), std::move(value)); }

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, config_.init_std);
  const std::size_t d = config_.d_model, h = config_.d_model * config_.mlp_mult;
  const double resid_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
  auto randn = [&](Shape s, double mult = 1.0) {
    Tensor t(std::move(s));
    for (auto& x : t.data()) x = normal(rng) * mult;
    return t;
  };
  auto ones = [](std::size_t n) { return Tensor(Shape{n}, 1.0); };
  auto zeros = [](Shape s) { return Tensor(std::move(s)); };

  tok_emb = params_.size();
  add("tok_emb", randn({config_.vocab_size, d}));
  pos_emb = params_.size();
  add("pos_emb", randn({config_.context, d}));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    LayerIndex li{};
    li.ln1_g = params_.size(); add(p + "ln1.g", ones(d));
    li.ln1_b = params_.size(); add(p + "ln1.b", zeros({d}));
    li.qkv_w = params_.size(); add(p + "attn.qkv.w", randn({d, 3 * d}));
    li.qkv_b = params_.size(); add(p + "attn.qkv.b", zeros({3 * d}));
    li.proj_w = params_.size(); add(p + "attn.proj.w", randn({d, d}, resid_scale));
    li.proj_b = params_.size(); add(p + "attn.proj.b", zeros({d}));
    li.ln2_g = params_.size(); add(p + "ln2.g", ones(d));
    li.ln2_b = params_.size(); add(p + "ln2.b", zeros({d}));
    li.fc_w = params_.size(); add(p + "mlp.fc.w", randn({d, h}));
    li.fc_b = params_.size(); add(p + "mlp.fc.b", zeros({h}));
    li.out_w = params_.size(); add(p + "mlp.proj.w", randn({h, d}, resid_scale));
    li.out_b = params_.size(); add(p + "mlp.proj.b", zeros({d}));
    layers.push_back(li);
  }
  lnf_g = params_.size(); add("ln_f.g", ones(d));
  lnf_b = params_.size(); add("ln_f.b", zeros({d}));
  head_begin_ = params_.size();
  head_w = params_.size(); add("head.w", zeros({d, 1}));
  head_b = params_.size(); add("head.b", zeros({1}));
}

Parameter& Model::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw IndexError("no parameter named '" + name + "'");
}

const Parameter& Model::parameter(const std::string& name) const {
  return const_cast<Model*>(this)->parameter(name);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

BoundModel bind(Tape& tape, Model& model) {
  BoundModel b{&model, {}};
  b.p.reserve(model.parameters().size());
  for (auto& p : model.parameters()) b.p.push_back(tape.param(p));
  return b;
}

BoundModel bind(Tape& tape, const Model& model) {
  BoundModel b{&model, {}};
  b.p.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) b.p.push_back(tape.param(p));
  return b;
}

Var forward_hidden(const BoundModel& m, std::span<const TokenId> ids) {
  const Model& model = *m.model;
  const ModelConfig& c = model.config();
  if (ids.empty()) throw ContractError("forward on an empty sequence");
  if (ids.size() > c.context) {
    throw ContextOverflowError("sequence of " + std::to_string(ids.size()) + " tokens exceeds context window " +
                               std::to_string(c.context));
  }
  const auto& p = m.p;
  Var x = add(embedding(p[model.tok_emb], ids), slice_rows(p[model.pos_emb], 0, ids.size()));
  for (const auto& l : model.layers) {
    Var h = layer_norm(x, p[l.ln1_g], p[l.ln1_b], kLnEps);
    Var qkv = add_bias(matmul(h, p[l.qkv_w]), p[l.qkv_b]);
    Var att = causal_attention(qkv, c.n_heads);
    x = add(x, add_bias(matmul(att, p[l.proj_w]), p[l.proj_b]));
    Var h2 = layer_norm(x, p[l.ln2_g], p[l.ln2_b], kLnEps);
    Var mid = relu(add_bias(matmul(h2, p[l.fc_w]), p[l.fc_b]));
    x = add(x, add_bias(matmul(mid, p[l.out_w]), p[l.out_b]));
  }
  return layer_norm(x, p[model.lnf_g], p[model.lnf_b], kLnEps);
}

Var forward_logits(const BoundModel& m, std::span<const TokenId> ids) {
  return matmul_nt(forward_hidden(m, ids), m.p[m.model->tok_emb]);
}

Tensor forward_logits(const Model& model, std::span<const TokenId> ids) {
  Tape tape(false);
  return forward_logits(bind(tape, model), ids).value();
}

namespace {

void check_sequence(const Model& model, const TokenSeq& seq) {
  seq.validate(model.config().vocab_size);
  if (seq.response_len() == 0) throw ContractError("empty response span");
}

}  // namespace

Var response_log_probs(const BoundModel& m, const TokenSeq& seq) {
  check_sequence(*m.model, seq);
  Var hidden = forward_hidden(m, seq.ids);
  Var rows = slice_rows(hidden, seq.query_len - 1, seq.size() - 1);
  Var logits = matmul_nt(rows, m.p[m.model->tok_emb]);
  return gather_log_prob(logits, seq.response());
}

Var response_values(const BoundModel& m, const TokenSeq& seq, Var hidden) {
  Var rows = detach(slice_rows(hidden, seq.query_len - 1, seq.size() - 1));
  return add_bias(matmul(rows, m.p[m.model->head_w]), m.p[m.model->head_b]);
}

Var sequence_reward(const BoundModel& m, std::span<const TokenId> ids) {
  Var hidden = forward_hidden(m, ids);
  Var last = slice_rows(hidden, ids.size() - 1, ids.size());
  return sum(add_bias(matmul(last, m.p[m.model->head_w]), m.p[m.model->head_b]));
}

double score_response(const Model& model, const TokenSeq& seq) {
  Tape tape(false);
  const Tensor& lp = response_log_probs(bind(tape, model), seq).value();
  double s = 0.0;
  for (double x : lp.data()) s += x;
  return s / static_cast<double>(lp.numel());
}

double perplexity(const Model& model, std::span<const TokenSeq> seqs) {
  if (seqs.empty()) throw ContractError("perplexity of an empty corpus");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : seqs) {
    Tape tape(false);
    const Tensor& lp = response_log_probs(bind(tape, model), seq).value();
    for (double x : lp.data()) total += x;
    count += lp.numel();
  }
  return std::exp(-total / static_cast<double>(count));
}

// --- incremental inference ----------------------------------------------------------

InferenceState::InferenceState(const Model& model, std::span<const TokenId> prompt)
    : model_(&model), keys_(model.layers.size()), values_(model.layers.size()) {
  if (prompt.empty()) throw ContractError("empty prompt");
  for (TokenId t : prompt) push(t);
}

void InferenceState::push(TokenId token) {
  if (length_ >= model_->config().context) {
    throw ContextOverflowError("context window of " + std::to_string(model_->config().context) + " is full");
  }
  if (token < 0 || static_cast<std::size_t>(token) >= model_->config().vocab_size) {
    throw IndexError("token id " + std::to_string(token) + " outside vocabulary");
  }
  step(token);
}

void InferenceState::step(TokenId token) {
  const Model& m = *model_;
  const ModelConfig& c = m.config();
  const auto& P = m.parameters();
  const auto& k = kernels::active();
  const std::size_t d = c.d_model, H = c.n_heads, dh = d / H, hid = d * c.mlp_mult;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t pos = length_;

  std::vector<double> x(P[m.tok_emb].value.ptr() + static_cast<std::size_t>(token) * d,
                        P[m.tok_emb].value.ptr() + (static_cast<std::size_t>(token) + 1) * d);
  k.add(d, P[m.pos_emb].value.ptr() + pos * d, x.data());

  std::vector<double> h(d), qkv(3 * d), att(d), y(d), mid(hid), probs(pos + 1);
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    rowops::layer_norm(x.data(), P[l.ln1_g].value.ptr(), P[l.ln1_b].value.ptr(), h.data(), d, kLnEps);
    std::fill(qkv.begin(), qkv.end(), 0.0);
    k.gemm_nn(1, 3 * d, d, h.data(), d, P[l.qkv_w].value.ptr(), 3 * d, qkv.data(), 3 * d);
    k.add(3 * d, P[l.qkv_b].value.ptr(), qkv.data());

    auto& K = keys_[li];
    auto& V = values_[li];
    K.insert(K.end(), qkv.begin() + static_cast<std::ptrdiff_t>(d), qkv.begin() + static_cast<std::ptrdiff_t>(2 * d));
    V.insert(V.end(), qkv.begin() + static_cast<std::ptrdiff_t>(2 * d), qkv.end());
    std::fill(att.begin(), att.end(), 0.0);
    for (std::size_t hh = 0; hh < H; ++hh) {
      std::fill(probs.begin(), probs.end(), 0.0);
      k.gemm_nt(1, pos + 1, dh, qkv.data() + hh * dh, 3 * d, K.data() + hh * dh, d, probs.data(), pos + 1);
      for (auto& s : probs) s *= sc;
      rowops::softmax(probs.data(), pos + 1);
      k.gemm_nn(1, dh, pos + 1, probs.data(), pos + 1, V.data() + hh * dh, d, att.data() + hh * dh, d);
    }
    std::fill(y.begin(), y.end(), 0.0);
    k.gemm_nn(1, d, d, att.data(), d, P[l.proj_w].value.ptr(), d, y.data(), d);
    k.add(d, P[l.proj_b].value.ptr(), y.data());
    k.add(d, y.data(), x.data());

    rowops::layer_norm(x.data(), P[l.ln2_g].value.ptr(), P[l.ln2_b].value.ptr(), h.data(), d, kLnEps);
    std::fill(mid.begin(), mid.end(), 0.0);
    k.gemm_nn(1, hid, d, h.data(), d, P[l.fc_w].value.ptr(), hid, mid.data(), hid);
    k.add(hid, P[l.fc_b].value.ptr(), mid.data());
    for (auto& v : mid) v = v > 0.0 ? v : 0.0;
    std::fill(y.begin(), y.end(), 0.0);
    k.gemm_nn(1, d, hid, mid.data(), hid, P[l.out_w].value.ptr(), d, y.data(), d);
    k.add(d, P[l.out_b].value.ptr(), y.data());
    k.add(d, y.data(), x.data());
  }
  rowops::layer_norm(x.data(), P[m.lnf_g].value.ptr(), P[m.lnf_b].value.ptr(), h.data(), d, kLnEps);
  logits_.assign(c.vocab_size, 0.0);
  k.gemm_nt(1, c.vocab_size, d, h.data(), d, P[m.tok_emb].value.ptr(), d, logits_.data(), c.vocab_size);
  ++length_;
}

}  // namespace rrhf
