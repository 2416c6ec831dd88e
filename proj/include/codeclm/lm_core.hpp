#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "codeclm/common.hpp"
#include "codeclm/corpus.hpp"

namespace codeclm {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct ModelConfig {
  int vocab_size = 0;
  int dim = 256;
  int n_layers = 6;
  int n_heads = 8;
  int ffn_multiplier = 4;
  int max_context = 1024;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  std::uint64_t seed = 0;

  int head_dim() const { return dim / n_heads; }
  int ffn_hidden() const { return dim * ffn_multiplier; }
  void validate() const;
  std::uint64_t hash() const;
};

/// Decoder-only transformer weights, Llama style: pre-norm blocks, rotary
/// positions, gated feed-forward, RMS norms, no biases, untied output head.
/// Linear weights are stored (in x out): y = x * W.
template <typename S>
struct LayerParams {
  Mat<S> wq, wk, wv, wo;  // dim x dim
  Mat<S> w_gate, w_up;    // dim x hidden
  Mat<S> w_down;          // hidden x dim
  Vec<S> attn_norm_g, ffn_norm_g;
};

template <typename S>
struct Params {
  ModelConfig config;
  Mat<S> tok_emb;  // vocab x dim
  std::vector<LayerParams<S>> layers;
  Vec<S> final_norm_g;
  Mat<S> w_head;  // dim x vocab

  std::size_t param_count() const;
  Params<S> zeros_like() const;

  template <typename T>
  Params<T> cast() const;

  /// Visits every tensor as (name, data pointer, element count), in a fixed
  /// order shared by the optimizer state and checkpoint layout.
  template <typename F>
  void for_each_tensor(F&& f);
  template <typename F>
  void for_each_tensor(F&& f) const;
};

template <typename S>
Params<S> init_params(const ModelConfig& config);

/// Full-sequence forward pass; returns (batch*time) x vocab logits with rows
/// in batch-major order. Row b*time+t depends only on tokens[b][0..t].
template <typename S>
Mat<S> forward(const Params<S>& params, std::span<const TokenId> tokens, int batch, int time);

template <typename S>
struct LossGrads {
  double loss = 0.0;  // mean next-token cross-entropy, nats
  Params<S> grads;
};

template <typename S>
LossGrads<S> loss_and_grads(const Params<S>& params, const Batch& batch);

/// Per-target-position cross-entropy in nats, batch-major, batch*(time-1)
/// entries; entry (b, t) scores the prediction of tokens[b][t+1].
template <typename S>
std::vector<double> token_cross_entropy(const Params<S>& params,
                                        std::span<const TokenId> tokens, int batch, int time);

// --- template machinery ---

template <typename S>
template <typename F>
void Params<S>::for_each_tensor(F&& f) {
  f("tok_emb", tok_emb.data(), static_cast<std::size_t>(tok_emb.size()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    f((p + "attn_norm_g").c_str(), L.attn_norm_g.data(), static_cast<std::size_t>(L.attn_norm_g.size()));
    f((p + "wq").c_str(), L.wq.data(), static_cast<std::size_t>(L.wq.size()));
    f((p + "wk").c_str(), L.wk.data(), static_cast<std::size_t>(L.wk.size()));
    f((p + "wv").c_str(), L.wv.data(), static_cast<std::size_t>(L.wv.size()));
    f((p + "wo").c_str(), L.wo.data(), static_cast<std::size_t>(L.wo.size()));
    f((p + "ffn_norm_g").c_str(), L.ffn_norm_g.data(), static_cast<std::size_t>(L.ffn_norm_g.size()));
    f((p + "w_gate").c_str(), L.w_gate.data(), static_cast<std::size_t>(L.w_gate.size()));
    f((p + "w_up").c_str(), L.w_up.data(), static_cast<std::size_t>(L.w_up.size()));
    f((p + "w_down").c_str(), L.w_down.data(), static_cast<std::size_t>(L.w_down.size()));
  }
  f("final_norm_g", final_norm_g.data(), static_cast<std::size_t>(final_norm_g.size()));
  f("w_head", w_head.data(), static_cast<std::size_t>(w_head.size()));
}

template <typename S>
template <typename F>
void Params<S>::for_each_tensor(F&& f) const {
  const_cast<Params<S>*>(this)->for_each_tensor(
      [&f](const char* name, S* data, std::size_t n) {
        f(name, static_cast<const S*>(data), n);
      });
}

template <typename S>
template <typename T>
Params<T> Params<S>::cast() const {
  Params<T> out;
  out.config = config;
  out.tok_emb = tok_emb.template cast<T>();
  out.layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out.layers[l].wq = layers[l].wq.template cast<T>();
    out.layers[l].wk = layers[l].wk.template cast<T>();
    out.layers[l].wv = layers[l].wv.template cast<T>();
    out.layers[l].wo = layers[l].wo.template cast<T>();
    out.layers[l].w_gate = layers[l].w_gate.template cast<T>();
    out.layers[l].w_up = layers[l].w_up.template cast<T>();
    out.layers[l].w_down = layers[l].w_down.template cast<T>();
    out.layers[l].attn_norm_g = layers[l].attn_norm_g.template cast<T>();
    out.layers[l].ffn_norm_g = layers[l].ffn_norm_g.template cast<T>();
  }
  out.final_norm_g = final_norm_g.template cast<T>();
  out.w_head = w_head.template cast<T>();
  return out;
}

}  // namespace codeclm
