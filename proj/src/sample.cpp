#include "codeclm/sample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace codeclm {

void SampleConfig::validate() const {
  if (temperature < 0) throw ConfigError("temperature must be non-negative");
  if (top_p <= 0 || top_p > 1) throw ConfigError("top_p must be in (0, 1]");
  if (max_new_tokens < 0) throw ConfigError("max_new_tokens must be non-negative");
}

// ----------------------------- inference session -----------------------------

InferenceSession::InferenceSession(const Params<float>& params) : params_(params) {
  const ModelConfig& cfg = params.config;
  k_cache_.resize(params.layers.size());
  v_cache_.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    k_cache_[l].resize(cfg.max_context, cfg.dim);
    v_cache_[l].resize(cfg.max_context, cfg.dim);
  }
  const int half = cfg.head_dim() / 2;
  rope_cos_.resize(cfg.max_context, half);
  rope_sin_.resize(cfg.max_context, half);
  for (int t = 0; t < cfg.max_context; ++t) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::pow(cfg.rope_base, -2.0 * j / cfg.head_dim());
      rope_cos_(t, j) = static_cast<float>(std::cos(t * freq));
      rope_sin_(t, j) = static_cast<float>(std::sin(t * freq));
    }
  }
  logits_.resize(cfg.vocab_size);
}

namespace {

// Same row-wise normalization as the batched forward: double accumulation of
// the sum of squares, then scale.
void rmsnorm_row(const Eigen::RowVectorXf& x, const Vec<float>& g, double eps,
                 Eigen::RowVectorXf& out) {
  const double ss = x.cast<double>().squaredNorm();
  const auto inv = static_cast<float>(1.0 / std::sqrt(ss / x.size() + eps));
  out = x.cwiseProduct(g.transpose()) * inv;
}

}  // namespace

const Vec<float>& InferenceSession::step(TokenId token) {
  const ModelConfig& cfg = params_.config;
  if (pos_ >= cfg.max_context) throw ContextOverflow("inference past max_context");
  if (token < 0 || token >= cfg.vocab_size) throw InvalidTokenId("token out of vocabulary");

  const int hd = cfg.head_dim();
  const int half = hd / 2;
  const auto alpha = static_cast<float>(1.0 / std::sqrt(static_cast<double>(hd)));

  Eigen::RowVectorXf x = params_.tok_emb.row(token);
  Eigen::RowVectorXf xn(cfg.dim), q(cfg.dim), k(cfg.dim), ctx(cfg.dim);
  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    const LayerParams<float>& L = params_.layers[l];
    rmsnorm_row(x, L.attn_norm_g, cfg.norm_eps, xn);
    q.noalias() = xn * L.wq;
    k.noalias() = xn * L.wk;
    v_cache_[l].row(pos_).noalias() = xn * L.wv;
    for (int h = 0; h < cfg.n_heads; ++h) {
      for (int j = 0; j < half; ++j) {
        const float c = rope_cos_(pos_, j);
        const float s = rope_sin_(pos_, j);
        const int i0 = h * hd + 2 * j;
        const float qa = q(i0), qb = q(i0 + 1);
        q(i0) = qa * c - qb * s;
        q(i0 + 1) = qa * s + qb * c;
        const float ka = k(i0), kb = k(i0 + 1);
        k(i0) = ka * c - kb * s;
        k(i0 + 1) = ka * s + kb * c;
      }
    }
    k_cache_[l].row(pos_) = k;

    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto kh = k_cache_[l].block(0, h * hd, pos_ + 1, hd);
      const auto vh = v_cache_[l].block(0, h * hd, pos_ + 1, hd);
      const auto qh = q.segment(h * hd, hd);
      Eigen::VectorXf scores = kh * qh.transpose() * alpha;
      float mx = scores(0);
      for (int j = 1; j <= pos_; ++j) mx = std::max(mx, scores(j));
      double denom = 0.0;
      for (int j = 0; j <= pos_; ++j) {
        scores(j) = std::exp(scores(j) - mx);
        denom += static_cast<double>(scores(j));
      }
      scores *= static_cast<float>(1.0 / denom);
      ctx.segment(h * hd, hd).noalias() = scores.transpose() * vh;
    }
    x.noalias() += ctx * L.wo;

    rmsnorm_row(x, L.ffn_norm_g, cfg.norm_eps, xn);
    Eigen::RowVectorXf gate = xn * L.w_gate;
    Eigen::RowVectorXf up = xn * L.w_up;
    for (int i = 0; i < gate.size(); ++i) {
      const float z = gate(i);
      gate(i) = z / (1.0f + std::exp(-z)) * up(i);
    }
    x.noalias() += gate * L.w_down;
  }
  rmsnorm_row(x, params_.final_norm_g, cfg.norm_eps, xn);
  logits_.noalias() = (xn * params_.w_head).transpose();
  ++pos_;
  return logits_;
}

// ----------------------------- sampling -----------------------------

TokenId sample_next_token(const Vec<float>& logits, const SampleConfig& cfg,
                          std::mt19937_64& rng) {
  const auto vocab = static_cast<int>(logits.size());
  if (cfg.temperature <= 0.0) {  // argmax mode; smallest id wins ties
    int best = 0;
    for (int i = 1; i < vocab; ++i)
      if (logits(i) > logits(best)) best = i;
    return best;
  }

  // Softmax of logits / temperature, double accumulation.
  std::vector<double> probs(static_cast<std::size_t>(vocab));
  const double mx = static_cast<double>(logits.maxCoeff()) / cfg.temperature;
  double denom = 0.0;
  for (int i = 0; i < vocab; ++i) {
    probs[static_cast<std::size_t>(i)] =
        std::exp(static_cast<double>(logits(i)) / cfg.temperature - mx);
    denom += probs[static_cast<std::size_t>(i)];
  }
  for (double& p : probs) p /= denom;

  std::vector<int> order(static_cast<std::size_t>(vocab));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&probs](int a, int b) {
    const double pa = probs[static_cast<std::size_t>(a)];
    const double pb = probs[static_cast<std::size_t>(b)];
    return pa > pb || (pa == pb && a < b);
  });

  std::size_t keep = order.size();
  if (cfg.top_k > 0) keep = std::min<std::size_t>(keep, static_cast<std::size_t>(cfg.top_k));
  if (cfg.top_p < 1.0) {
    double mass = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
      mass += probs[static_cast<std::size_t>(order[i])];
      if (mass >= cfg.top_p) {  // boundary token stays in
        keep = i + 1;
        break;
      }
    }
  }

  double kept_mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_mass += probs[static_cast<std::size_t>(order[i])];
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * kept_mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += probs[static_cast<std::size_t>(order[i])];
    if (u < acc) return order[i];
  }
  return order[keep - 1];
}

TokenSequence generate(const Params<float>& params, const TokenSequence& prompt,
                       const SampleConfig& cfg, bool use_cache) {
  cfg.validate();
  if (prompt.empty() || prompt.ids.front() != BpeVocab::bos_id)
    throw ConfigError("prompt must begin with BOS");
  const int max_context = params.config.max_context;
  const int budget = cfg.max_new_tokens > 0
                         ? cfg.max_new_tokens
                         : max_context - static_cast<int>(prompt.size());
  if (static_cast<int>(prompt.size()) + budget > max_context)
    throw ContextOverflow("prompt plus max_new_tokens exceeds max_context");

  TokenSequence out = prompt;
  std::mt19937_64 rng(cfg.seed);

  if (use_cache) {
    InferenceSession session(params);
    for (std::size_t i = 0; i + 1 < out.ids.size(); ++i) session.step(out.ids[i]);
    for (int n = 0; n < budget; ++n) {
      const Vec<float>& logits = session.step(out.ids.back());
      const TokenId tok = sample_next_token(logits, cfg, rng);
      out.ids.push_back(tok);
      if (tok == BpeVocab::eos_id) break;
    }
  } else {
    for (int n = 0; n < budget; ++n) {
      InferenceSession session(params);
      for (std::size_t i = 0; i + 1 < out.ids.size(); ++i) session.step(out.ids[i]);
      const Vec<float>& logits = session.step(out.ids.back());
      const TokenId tok = sample_next_token(logits, cfg, rng);
      out.ids.push_back(tok);
      if (tok == BpeVocab::eos_id) break;
    }
  }
  return out;
}

// ----------------------------- image completion -----------------------------

CompletionResult complete_image(const Params<float>& params, const Image& image,
                                double r_prompt, const SampleConfig& cfg,
                                const BpeVocab& vocab, const TableSet& tables,
                                const CodecProfile& profile) {
  const Bytes file = encode_image(image, profile);
  auto [stream, own_tables] = canonicalize(file);
  (void)own_tables;

  CompletionResult result;
  if (r_prompt >= 1.0) {
    // Full prompt: pure token round trip, no generation.
    result.tokens = bpe_encode(stream.bytes, vocab, /*add_bos=*/true, /*add_eos=*/true);
    TokenSequence body = result.tokens;
    const Bytes bytes = bpe_decode(body, vocab);
    const RestoreResult restored = restore(ByteSpan(bytes), tables);
    result.jpeg = restored.file;
    result.status = restored.status;
    result.mcus_kept = restored.mcus_kept;
    result.mcus_filled = restored.mcus_filled;
    return result;
  }

  const std::size_t entropy_offset = prefix_at_ratio(stream, r_prompt);
  TokenSequence prompt;
  prompt.ids.push_back(BpeVocab::bos_id);
  if (entropy_offset > 0) {
    const std::size_t cut = stream.entropy_begin + entropy_offset;
    const TokenSequence prefix =
        bpe_encode(ByteSpan(stream.bytes.data(), cut), vocab, false, false);
    prompt.ids.insert(prompt.ids.end(), prefix.ids.begin(), prefix.ids.end());
  }

  result.tokens = generate(params, prompt, cfg);
  const Bytes bytes = bpe_decode(result.tokens, vocab);
  const RestoreResult restored = restore(ByteSpan(bytes), tables);
  result.jpeg = restored.file;
  result.status = restored.status;
  result.mcus_kept = restored.mcus_kept;
  result.mcus_filled = restored.mcus_filled;
  return result;
}

}  // namespace codeclm
