#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mvp/autodiff.hpp"
#include "mvp/common.hpp"
#include "mvp/optimizer.hpp"
#include "mvp/rng.hpp"

namespace mvp {

struct ModelConfig {
  std::size_t n_heads = 8;
  std::size_t n_layers = 8;
  std::size_t model_dim = 512;
  std::size_t ffn_dim = 1024;
  std::size_t token_count = 100;
  bool use_positional_encoding = true;
  double dropout = 0.1;

  std::size_t head_dim() const { return model_dim / n_heads; }

  void validate() const {
    if (n_heads == 0 || n_layers == 0 || model_dim == 0 || ffn_dim == 0 || token_count == 0)
      throw ConfigError("model config: all sizes must be >= 1");
    if (model_dim % n_heads != 0)
      throw ConfigError(str("model config: model_dim ", model_dim, " not divisible by ",
                            n_heads, " heads"));
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError(str("model config: dropout ", dropout, " outside [0,1)"));
  }
};

// Standard sinusoidal positions, added to both token streams on entry.
inline Tensor sinusoidal_positional_encoding(std::size_t length, std::size_t dim) {
  Tensor pe({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

// Projection parameters for one cross-attention block.
struct CrossAttentionParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Multi-head cross-attention: queries projected from q_tokens, keys and
// values from kv_tokens, per-head scaled dot-product attention, heads
// concatenated and output-projected. Output shape [Lq, model_dim].
inline Var cross_attention(Var q_tokens, Var kv_tokens, const CrossAttentionParams& p,
                           std::size_t n_heads, double attn_dropout = 0.0, bool training = false,
                           Rng* rng = nullptr, AttnProbe* probe = nullptr) {
  if (q_tokens.value().rank() != 2 || kv_tokens.value().rank() != 2 ||
      q_tokens.value().shape[1] != kv_tokens.value().shape[1])
    throw DimensionError(str("cross_attention: width mismatch ",
                             shape_str(q_tokens.value().shape), " vs ",
                             shape_str(kv_tokens.value().shape)));
  Var q = dense(q_tokens, p.wq, p.bq);
  Var k = dense(kv_tokens, p.wk, p.bk);
  Var v = dense(kv_tokens, p.wv, p.bv);
  Var core = mha_core(q, k, v, n_heads, attn_dropout, training, rng, probe);
  return dense(core, p.wo, p.bo);
}

// The fusion network: n_layers of pre-norm cross-attention with the running
// query stream attending to a fixed key/value stream, plus an FFN with
// residual connections. Readout is mean pooling over tokens followed by a
// shared dense head producing the two logits (valence, arousal).
class FusionStack {
 public:
  FusionStack(ParamStore& store, ModelConfig cfg, std::string prefix, Rng& init)
      : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();
    const std::size_t d = cfg_.model_dim;
    auto proj = [&](const std::string& name, std::size_t din, std::size_t dout) {
      Tensor w({din, dout});
      const double sigma = std::sqrt(2.0 / static_cast<double>(din + dout));
      for (auto& v : w.data) v = sigma * init.normal();
      return store.add(name, std::move(w));
    };
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      Layer lay;
      const std::string base = str(prefix_, ".layer", l, ".");
      lay.ln1_gamma = store.add(base + "ln1.gamma", Tensor::full({d}, 1.0));
      lay.ln1_beta = store.add(base + "ln1.beta", Tensor({d}));
      lay.wq = proj(base + "attn.wq", d, d);
      lay.bq = store.add(base + "attn.bq", Tensor({d}));
      lay.wk = proj(base + "attn.wk", d, d);
      lay.bk = store.add(base + "attn.bk", Tensor({d}));
      lay.wv = proj(base + "attn.wv", d, d);
      lay.bv = store.add(base + "attn.bv", Tensor({d}));
      lay.wo = proj(base + "attn.wo", d, d);
      lay.bo = store.add(base + "attn.bo", Tensor({d}));
      lay.ln2_gamma = store.add(base + "ln2.gamma", Tensor::full({d}, 1.0));
      lay.ln2_beta = store.add(base + "ln2.beta", Tensor({d}));
      lay.ffn_w1 = proj(base + "ffn.w1", d, cfg_.ffn_dim);
      lay.ffn_b1 = store.add(base + "ffn.b1", Tensor({cfg_.ffn_dim}));
      lay.ffn_w2 = proj(base + "ffn.w2", cfg_.ffn_dim, d);
      lay.ffn_b2 = store.add(base + "ffn.b2", Tensor({d}));
      layers_.push_back(lay);
    }
    head_w_ = proj(prefix_ + ".head.w", d, 2);
    head_b_ = store.add(prefix_ + ".head.b", Tensor({2}));
  }

  const ModelConfig& config() const { return cfg_; }

  // query_tokens, kv_tokens: [token_count, model_dim] -> logits [2].
  Var forward(Tape& tape, Var query_tokens, Var kv_tokens, const std::vector<Var>& params,
              bool training = false, Rng* rng = nullptr, AttnProbe* probe = nullptr) const {
    const bool use_drop = training && cfg_.dropout > 0.0;
    if (use_drop && rng == nullptr)
      throw ContractError("fusion forward: dropout requires an rng while training");
    Var x = query_tokens;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& lay = layers_[l];
      Var qn = layer_norm(x, params[lay.ln1_gamma], params[lay.ln1_beta]);
      CrossAttentionParams cap{params[lay.wq], params[lay.bq], params[lay.wk], params[lay.bk],
                               params[lay.wv], params[lay.bv], params[lay.wo], params[lay.bo]};
      Var attn = cross_attention(qn, kv_tokens, cap, cfg_.n_heads, cfg_.dropout, training, rng,
                                 probe);
      x = add(x, attn);
      Var fn = layer_norm(x, params[lay.ln2_gamma], params[lay.ln2_beta]);
      Var h = relu(dense(fn, params[lay.ffn_w1], params[lay.ffn_b1]));
      if (use_drop) h = dropout(h, cfg_.dropout, true, *rng);
      Var f = dense(h, params[lay.ffn_w2], params[lay.ffn_b2]);
      x = add(x, f);
      if (!x.value().all_finite())
        throw NumericError(str("non-finite activations in fusion layer ", l));
    }
    Var pooled = mean_rows(x);
    return dense(pooled, params[head_w_], params[head_b_]);
  }

 private:
  struct Layer {
    std::size_t ln1_gamma, ln1_beta;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gamma, ln2_beta;
    std::size_t ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  ModelConfig cfg_;
  std::string prefix_;
  std::vector<Layer> layers_;
  std::size_t head_w_ = 0;
  std::size_t head_b_ = 0;
};

}  // namespace mvp
