#include "codeclm/lm_core.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace codeclm {

namespace {

template <typename S>
struct RopeTable {
  Mat<S> cos_t;  // time x head_dim/2
  Mat<S> sin_t;
};

template <typename S>
RopeTable<S> make_rope_table(const ModelConfig& cfg, int time) {
  const int half = cfg.head_dim() / 2;
  RopeTable<S> rt;
  rt.cos_t.resize(time, half);
  rt.sin_t.resize(time, half);
  for (int t = 0; t < time; ++t) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::pow(cfg.rope_base, -2.0 * j / cfg.head_dim());
      const double angle = t * freq;
      rt.cos_t(t, j) = static_cast<S>(std::cos(angle));
      rt.sin_t(t, j) = static_cast<S>(std::sin(angle));
    }
  }
  return rt;
}

// In-place rotary rotation over every head of a (batch*time x dim) matrix.
// `sign` +1 rotates forward, -1 applies the inverse (used on gradients).
template <typename S>
void apply_rope(Mat<S>& x, const RopeTable<S>& rt, const ModelConfig& cfg, int time,
                int sign) {
  const int half = cfg.head_dim() / 2;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int t = static_cast<int>(r % time);
    for (int h = 0; h < cfg.n_heads; ++h) {
      S* base = x.data() + r * x.cols() + static_cast<Eigen::Index>(h) * cfg.head_dim();
      for (int j = 0; j < half; ++j) {
        const S c = rt.cos_t(t, j);
        const S s = static_cast<S>(sign) * rt.sin_t(t, j);
        const S a = base[2 * j];
        const S b = base[2 * j + 1];
        base[2 * j] = a * c - b * s;
        base[2 * j + 1] = a * s + b * c;
      }
    }
  }
}

// y = x * g / rms(x): row-wise, sum of squares accumulated in double.
template <typename S>
Mat<S> rmsnorm(const Mat<S>& x, const Vec<S>& g, double eps) {
  Mat<S> y(x.rows(), x.cols());
  const auto d = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double ss = x.row(r).template cast<double>().squaredNorm();
    const S inv = static_cast<S>(1.0 / std::sqrt(ss / d + eps));
    y.row(r) = x.row(r).cwiseProduct(g.transpose()) * inv;
  }
  return y;
}

template <typename S>
void rmsnorm_backward(const Mat<S>& x, const Vec<S>& g, double eps, const Mat<S>& dy,
                      Mat<S>& dx_out, Vec<S>& dg_accum) {
  const auto d = static_cast<double>(x.cols());
  Eigen::VectorXd dg = Eigen::VectorXd::Zero(x.cols());
  dx_out.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double ss = x.row(r).template cast<double>().squaredNorm();
    const double r2 = ss / d + eps;
    const double inv = 1.0 / std::sqrt(r2);
    // dg += dy .* x / rms
    dg += (dy.row(r).cwiseProduct(x.row(r))).template cast<double>().transpose() * inv;
    // dx = (dy .* g)/rms - x * dot(dy .* g, x) / (d * rms^3)
    const auto dyg = dy.row(r).cwiseProduct(g.transpose());
    const double s = dyg.template cast<double>().dot(x.row(r).template cast<double>());
    dx_out.row(r) =
        dyg * static_cast<S>(inv) - x.row(r) * static_cast<S>(s * inv / (r2 * d));
  }
  dg_accum += dg.cast<S>();
}

template <typename S>
S silu(S z) {
  const S sg = S(1) / (S(1) + std::exp(-z));
  return z * sg;
}

template <typename S>
S silu_grad(S z) {
  const S sg = S(1) / (S(1) + std::exp(-z));
  return sg * (S(1) + z * (S(1) - sg));
}

template <typename S>
struct LayerTape {
  Mat<S> x_in, xn, q, k, v, ctx, x_mid, xn2;
  Mat<S> gate_pre, up, h;
};

template <typename S>
struct Tape {
  std::vector<LayerTape<S>> layers;
  Mat<S> x_final;
  Mat<S> x_norm;
};

// Causal softmax(q k^T / sqrt(hd)) rows for one (batch, head); probabilities
// beyond the causal horizon are exact zeros and never read back.
template <typename S>
void causal_softmax_rows(Mat<S>& scores) {
  const Eigen::Index time = scores.rows();
  for (Eigen::Index i = 0; i < time; ++i) {
    S mx = scores(i, 0);
    for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
    double denom = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      const S e = std::exp(scores(i, j) - mx);
      scores(i, j) = e;
      denom += static_cast<double>(e);
    }
    const S inv = static_cast<S>(1.0 / denom);
    for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) *= inv;
    for (Eigen::Index j = i + 1; j < time; ++j) scores(i, j) = S(0);
  }
}

template <typename S>
Mat<S> run_forward(const Params<S>& params, std::span<const TokenId> tokens, int batch,
                   int time, Tape<S>* tape) {
  const ModelConfig& cfg = params.config;
  if (time > cfg.max_context)
    throw ContextOverflow("sequence length " + std::to_string(time) + " exceeds max_context " +
                          std::to_string(cfg.max_context));
  if (tokens.size() != static_cast<std::size_t>(batch) * time)
    throw ConfigError("token span does not match batch x time");
  for (TokenId id : tokens)
    if (id < 0 || id >= cfg.vocab_size)
      throw InvalidTokenId("token id " + std::to_string(id) + " out of vocabulary");

  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * time;
  const int hd = cfg.head_dim();
  const S alpha = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  const RopeTable<S> rope = make_rope_table<S>(cfg, time);

  Mat<S> x(rows, cfg.dim);
  for (Eigen::Index r = 0; r < rows; ++r)
    x.row(r) = params.tok_emb.row(tokens[static_cast<std::size_t>(r)]);

  if (tape) tape->layers.resize(params.layers.size());

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams<S>& L = params.layers[l];
    LayerTape<S>* lt = tape ? &tape->layers[l] : nullptr;
    if (lt) lt->x_in = x;

    Mat<S> xn = rmsnorm(x, L.attn_norm_g, cfg.norm_eps);
    Mat<S> q(rows, cfg.dim), k(rows, cfg.dim), v(rows, cfg.dim);
    q.noalias() = xn * L.wq;
    k.noalias() = xn * L.wk;
    v.noalias() = xn * L.wv;
    apply_rope(q, rope, cfg, time, +1);
    apply_rope(k, rope, cfg, time, +1);

    Mat<S> ctx(rows, cfg.dim);
    Mat<S> scores(time, time);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < cfg.n_heads; ++h) {
        const auto qh = q.block(static_cast<Eigen::Index>(b) * time, h * hd, time, hd);
        const auto kh = k.block(static_cast<Eigen::Index>(b) * time, h * hd, time, hd);
        const auto vh = v.block(static_cast<Eigen::Index>(b) * time, h * hd, time, hd);
        scores.noalias() = qh * kh.transpose() * alpha;
        causal_softmax_rows(scores);
        auto ctxh = ctx.block(static_cast<Eigen::Index>(b) * time, h * hd, time, hd);
        for (int i = 0; i < time; ++i)
          ctxh.row(i).noalias() = scores.row(i).head(i + 1) * vh.topRows(i + 1);
      }
    }

    if (lt) {
      lt->xn = std::move(xn);
      lt->q = std::move(q);
      lt->k = std::move(k);
      lt->v = std::move(v);
      lt->ctx = ctx;
    }
    x.noalias() += ctx * L.wo;
    if (lt) lt->x_mid = x;

    Mat<S> xn2 = rmsnorm(x, L.ffn_norm_g, cfg.norm_eps);
    Mat<S> gate_pre(rows, cfg.ffn_hidden()), up(rows, cfg.ffn_hidden());
    gate_pre.noalias() = xn2 * L.w_gate;
    up.noalias() = xn2 * L.w_up;
    Mat<S> h = gate_pre.unaryExpr([](S z) { return silu(z); }).cwiseProduct(up);
    x.noalias() += h * L.w_down;

    if (lt) {
      lt->xn2 = std::move(xn2);
      lt->gate_pre = std::move(gate_pre);
      lt->up = std::move(up);
      lt->h = std::move(h);
    }
  }

  if (tape) tape->x_final = x;
  Mat<S> x_norm = rmsnorm(x, params.final_norm_g, cfg.norm_eps);
  Mat<S> logits(rows, cfg.vocab_size);
  logits.noalias() = x_norm * params.w_head;
  if (tape) tape->x_norm = std::move(x_norm);
  return logits;
}

}  // namespace

// ----------------------------- config / params -----------------------------

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("vocab_size must be positive");
  if (dim < 1 || n_layers < 1 || n_heads < 1 || max_context < 1 || ffn_multiplier < 1)
    throw ConfigError("model dimensions must be positive");
  if (dim % n_heads != 0) throw ConfigError("dim must be divisible by n_heads");
  if ((dim / n_heads) % 2 != 0) throw ConfigError("head_dim must be even for rotary pairs");
  if (norm_eps <= 0 || rope_base <= 1) throw ConfigError("bad norm_eps or rope_base");
}

std::uint64_t ModelConfig::hash() const {
  std::ostringstream os;
  os << vocab_size << "|" << dim << "|" << n_layers << "|" << n_heads << "|" << ffn_multiplier
     << "|" << max_context << "|" << rope_base << "|" << norm_eps << "|" << seed;
  return fnv1a64(os.str());
}

template <typename S>
std::size_t Params<S>::param_count() const {
  std::size_t n = 0;
  for_each_tensor([&n](const char*, const S*, std::size_t m) { n += m; });
  return n;
}

template <typename S>
Params<S> Params<S>::zeros_like() const {
  Params<S> z;
  z.config = config;
  z.tok_emb = Mat<S>::Zero(tok_emb.rows(), tok_emb.cols());
  z.layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    auto& o = z.layers[l];
    o.wq = Mat<S>::Zero(L.wq.rows(), L.wq.cols());
    o.wk = Mat<S>::Zero(L.wk.rows(), L.wk.cols());
    o.wv = Mat<S>::Zero(L.wv.rows(), L.wv.cols());
    o.wo = Mat<S>::Zero(L.wo.rows(), L.wo.cols());
    o.w_gate = Mat<S>::Zero(L.w_gate.rows(), L.w_gate.cols());
    o.w_up = Mat<S>::Zero(L.w_up.rows(), L.w_up.cols());
    o.w_down = Mat<S>::Zero(L.w_down.rows(), L.w_down.cols());
    o.attn_norm_g = Vec<S>::Zero(L.attn_norm_g.size());
    o.ffn_norm_g = Vec<S>::Zero(L.ffn_norm_g.size());
  }
  z.final_norm_g = Vec<S>::Zero(final_norm_g.size());
  z.w_head = Mat<S>::Zero(w_head.rows(), w_head.cols());
  return z;
}

template <typename S>
Params<S> init_params(const ModelConfig& config) {
  config.validate();
  Params<S> p;
  p.config = config;
  p.tok_emb.resize(config.vocab_size, config.dim);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& L : p.layers) {
    L.wq.resize(config.dim, config.dim);
    L.wk.resize(config.dim, config.dim);
    L.wv.resize(config.dim, config.dim);
    L.wo.resize(config.dim, config.dim);
    L.w_gate.resize(config.dim, config.ffn_hidden());
    L.w_up.resize(config.dim, config.ffn_hidden());
    L.w_down.resize(config.ffn_hidden(), config.dim);
    L.attn_norm_g.resize(config.dim);
    L.ffn_norm_g.resize(config.dim);
  }
  p.final_norm_g.resize(config.dim);
  p.w_head.resize(config.dim, config.vocab_size);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  const double residual_scale = 1.0 / std::sqrt(2.0 * config.n_layers);
  p.for_each_tensor([&](const char* name, S* data, std::size_t n) {
    const std::string nm(name);
    if (nm.find("norm_g") != std::string::npos) {
      for (std::size_t i = 0; i < n; ++i) data[i] = S(1);
      return;
    }
    double std_dev = 0.02;
    if (nm.ends_with(".wo") || nm.ends_with(".w_down")) std_dev *= residual_scale;
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<S>(dist(rng) * std_dev);
  });
  return p;
}

// ----------------------------- forward / loss -----------------------------

template <typename S>
Mat<S> forward(const Params<S>& params, std::span<const TokenId> tokens, int batch, int time) {
  return run_forward(params, tokens, batch, time, static_cast<Tape<S>*>(nullptr));
}

template <typename S>
std::vector<double> token_cross_entropy(const Params<S>& params,
                                        std::span<const TokenId> tokens, int batch, int time) {
  const Mat<S> logits = run_forward(params, tokens, batch, time, static_cast<Tape<S>*>(nullptr));
  std::vector<double> nats;
  nats.reserve(static_cast<std::size_t>(batch) * (time - 1));
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t + 1 < time; ++t) {
      const auto row = logits.row(static_cast<Eigen::Index>(b) * time + t);
      const TokenId target = tokens[static_cast<std::size_t>(b) * time + t + 1];
      const double mx = static_cast<double>(row.maxCoeff());
      double denom = 0.0;
      for (Eigen::Index j = 0; j < row.size(); ++j)
        denom += std::exp(static_cast<double>(row(j)) - mx);
      const double lse = mx + std::log(denom);
      nats.push_back(lse - static_cast<double>(row(target)));
    }
  }
  return nats;
}

template <typename S>
LossGrads<S> loss_and_grads(const Params<S>& params, const Batch& batch) {
  const ModelConfig& cfg = params.config;
  const int B = batch.rows, T = batch.len;
  if (B < 1 || T < 2) throw ConfigError("batch must have rows and len >= 2");
  if (batch.inputs.size() != static_cast<std::size_t>(B) * T ||
      batch.targets.size() != static_cast<std::size_t>(B) * (T - 1))
    throw ConfigError("batch input/target sizes are inconsistent");

  Tape<S> tape;
  Mat<S> logits = run_forward(params, std::span<const TokenId>(batch.inputs), B, T, &tape);

  // Cross-entropy and dlogits in place; the last position of each row has no
  // target and contributes nothing.
  const double inv_count = 1.0 / (static_cast<double>(B) * (T - 1));
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      auto row = logits.row(static_cast<Eigen::Index>(b) * T + t);
      if (t == T - 1) {
        row.setZero();
        continue;
      }
      const TokenId target = batch.targets[static_cast<std::size_t>(b) * (T - 1) + t];
      if (target < 0 || target >= cfg.vocab_size) throw InvalidTokenId("target out of range");
      const double mx = static_cast<double>(row.maxCoeff());
      double denom = 0.0;
      for (Eigen::Index j = 0; j < row.size(); ++j)
        denom += std::exp(static_cast<double>(row(j)) - mx);
      const double lse = mx + std::log(denom);
      loss += (lse - static_cast<double>(row(target))) * inv_count;
      for (Eigen::Index j = 0; j < row.size(); ++j)
        row(j) = static_cast<S>(std::exp(static_cast<double>(row(j)) - lse) * inv_count);
      row(target) -= static_cast<S>(inv_count);
    }
  }
  if (!std::isfinite(loss)) throw NonFiniteLoss("loss is not finite");

  LossGrads<S> out;
  out.loss = loss;
  out.grads = params.zeros_like();
  Params<S>& g = out.grads;

  const int hd = cfg.head_dim();
  const S alpha = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  const RopeTable<S> rope = make_rope_table<S>(cfg, T);
  const Eigen::Index rows = static_cast<Eigen::Index>(B) * T;

  // Head and final norm.
  g.w_head.noalias() = tape.x_norm.transpose() * logits;
  Mat<S> d_norm(rows, cfg.dim);
  d_norm.noalias() = logits * params.w_head.transpose();
  Mat<S> dx;
  rmsnorm_backward(tape.x_final, params.final_norm_g, cfg.norm_eps, d_norm, dx,
                   g.final_norm_g);

  Mat<S> scores(T, T), dscores(T, T);
  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const LayerParams<S>& L = params.layers[static_cast<std::size_t>(l)];
    LayerParams<S>& gL = g.layers[static_cast<std::size_t>(l)];
    const LayerTape<S>& lt = tape.layers[static_cast<std::size_t>(l)];

    // FFN block: x = x_mid + h * w_down
    Mat<S> dh(rows, cfg.ffn_hidden());
    dh.noalias() = dx * L.w_down.transpose();
    gL.w_down.noalias() = lt.h.transpose() * dx;
    Mat<S> dgate = dh.cwiseProduct(lt.up)
                       .cwiseProduct(lt.gate_pre.unaryExpr([](S z) { return silu_grad(z); }));
    Mat<S> dup = dh.cwiseProduct(lt.gate_pre.unaryExpr([](S z) { return silu(z); }));
    Mat<S> dxn2(rows, cfg.dim);
    dxn2.noalias() = dgate * L.w_gate.transpose();
    dxn2.noalias() += dup * L.w_up.transpose();
    gL.w_gate.noalias() = lt.xn2.transpose() * dgate;
    gL.w_up.noalias() = lt.xn2.transpose() * dup;
    Mat<S> dmid_norm;
    rmsnorm_backward(lt.x_mid, L.ffn_norm_g, cfg.norm_eps, dxn2, dmid_norm, gL.ffn_norm_g);
    dx += dmid_norm;  // dx is now the gradient at x_mid

    // Attention block: x_mid = x_in + ctx * wo
    Mat<S> dctx(rows, cfg.dim);
    dctx.noalias() = dx * L.wo.transpose();
    gL.wo.noalias() = lt.ctx.transpose() * dx;

    Mat<S> dq = Mat<S>::Zero(rows, cfg.dim);
    Mat<S> dk = Mat<S>::Zero(rows, cfg.dim);
    Mat<S> dv = Mat<S>::Zero(rows, cfg.dim);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < cfg.n_heads; ++h) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
        const auto qh = lt.q.block(r0, h * hd, T, hd);
        const auto kh = lt.k.block(r0, h * hd, T, hd);
        const auto vh = lt.v.block(r0, h * hd, T, hd);
        const auto dctxh = dctx.block(r0, h * hd, T, hd);
        scores.noalias() = qh * kh.transpose() * alpha;
        causal_softmax_rows(scores);  // scores now holds P
        dscores.noalias() = dctxh * vh.transpose();
        dv.block(r0, h * hd, T, hd).noalias() += scores.transpose() * dctxh;
        // dS = P .* (dP - rowsum(dP .* P)) over the causal prefix
        for (int i = 0; i < T; ++i) {
          double acc = 0.0;
          for (int j = 0; j <= i; ++j)
            acc += static_cast<double>(dscores(i, j)) * static_cast<double>(scores(i, j));
          const S row_dot = static_cast<S>(acc);
          for (int j = 0; j <= i; ++j)
            dscores(i, j) = scores(i, j) * (dscores(i, j) - row_dot);
          for (int j = i + 1; j < T; ++j) dscores(i, j) = S(0);
        }
        dq.block(r0, h * hd, T, hd).noalias() += dscores * kh * alpha;
        dk.block(r0, h * hd, T, hd).noalias() += dscores.transpose() * qh * alpha;
      }
    }
    apply_rope(dq, rope, cfg, T, -1);
    apply_rope(dk, rope, cfg, T, -1);

    Mat<S> dxn(rows, cfg.dim);
    dxn.noalias() = dq * L.wq.transpose();
    dxn.noalias() += dk * L.wk.transpose();
    dxn.noalias() += dv * L.wv.transpose();
    gL.wq.noalias() = lt.xn.transpose() * dq;
    gL.wk.noalias() = lt.xn.transpose() * dk;
    gL.wv.noalias() = lt.xn.transpose() * dv;
    Mat<S> din_norm;
    rmsnorm_backward(lt.x_in, L.attn_norm_g, cfg.norm_eps, dxn, din_norm, gL.attn_norm_g);
    dx += din_norm;  // gradient at x_in
  }

  for (Eigen::Index r = 0; r < rows; ++r)
    g.tok_emb.row(batch.inputs[static_cast<std::size_t>(r)]) += dx.row(r);

  return out;
}

// ----------------------------- instantiations -----------------------------

template struct Params<float>;
template struct Params<double>;
template struct LossGrads<float>;
template struct LossGrads<double>;

template Params<float> init_params<float>(const ModelConfig&);
template Params<double> init_params<double>(const ModelConfig&);
template Mat<float> forward<float>(const Params<float>&, std::span<const TokenId>, int, int);
template Mat<double> forward<double>(const Params<double>&, std::span<const TokenId>, int, int);
template LossGrads<float> loss_and_grads<float>(const Params<float>&, const Batch&);
template LossGrads<double> loss_and_grads<double>(const Params<double>&, const Batch&);
template std::vector<double> token_cross_entropy<float>(const Params<float>&,
                                                        std::span<const TokenId>, int, int);
template std::vector<double> token_cross_entropy<double>(const Params<double>&,
                                                         std::span<const TokenId>, int, int);

}  // namespace codeclm
