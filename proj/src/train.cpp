#include "codeclm/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace codeclm {

namespace fs = std::filesystem;

std::int64_t TrainConfig::resolved_warmup() const {
  if (warmup_steps >= 0) return warmup_steps;
  return std::max<std::int64_t>(1, total_steps / 50);
}

void TrainConfig::validate() const {
  if (peak_lr <= 0) throw ConfigError("peak_lr must be positive");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (total_steps > 0 && resolved_warmup() >= total_steps)
    throw ConfigError("warmup_steps must be less than total_steps");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (grad_clip_norm <= 0) throw ConfigError("grad_clip_norm must be positive");
  if (lr_floor < 0 || lr_floor > 1) throw ConfigError("lr_floor must be in [0,1]");
}

std::uint64_t TrainConfig::hash() const {
  std::ostringstream os;
  os << peak_lr << "|" << resolved_warmup() << "|" << total_steps << "|" << weight_decay << "|"
     << beta1 << "|" << beta2 << "|" << grad_clip_norm << "|" << adam_eps << "|" << lr_floor
     << "|" << batch_size << "|" << seed;
  return fnv1a64(os.str());
}

double lr_at_step(const TrainConfig& cfg, std::int64_t step) {
  const std::int64_t warmup = cfg.resolved_warmup();
  if (step <= warmup)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double floor = cfg.peak_lr * cfg.lr_floor;
  const auto denom = static_cast<double>(std::max<std::int64_t>(1, cfg.total_steps - warmup));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / denom);
  return floor + (cfg.peak_lr - floor) * 0.5 * (1.0 + std::cos(progress * M_PI));
}

TrainState TrainState::fresh(const ModelConfig& model_cfg, std::uint64_t train_seed) {
  TrainState state;
  state.params = init_params<float>(model_cfg);
  state.opt_m.assign(state.params.param_count(), 0.0f);
  state.opt_v.assign(state.params.param_count(), 0.0f);
  state.step = 0;
  state.rng.seed(train_seed);
  return state;
}

StepMetrics train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  LossGrads<float> lg = loss_and_grads(state.params, batch);

  // Global L2 norm, accumulated in double, then a single clip scale.
  double sumsq = 0.0;
  lg.grads.for_each_tensor([&sumsq](const char*, const float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) sumsq += static_cast<double>(data[i]) * data[i];
  });
  const double grad_norm = std::sqrt(sumsq);
  const float clip_scale =
      grad_norm > cfg.grad_clip_norm ? static_cast<float>(cfg.grad_clip_norm / grad_norm) : 1.0f;

  const double lr = lr_at_step(cfg, state.step);
  const auto t = static_cast<double>(state.step + 1);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);

  std::size_t cursor = 0;
  float* m = state.opt_m.data();
  float* v = state.opt_v.data();
  lg.grads.for_each_tensor([&](const char* name, float* gdata, std::size_t n) {
    float* pdata = nullptr;
    state.params.for_each_tensor([&](const char* pname, float* pd, std::size_t) {
      if (std::strcmp(pname, name) == 0) pdata = pd;
    });
    const bool decay = std::strstr(name, "norm_g") == nullptr;  // no decay on norm gains
    for (std::size_t i = 0; i < n; ++i) {
      const float gi = gdata[i] * clip_scale;
      m[cursor + i] = static_cast<float>(cfg.beta1) * m[cursor + i] +
                      static_cast<float>(1.0 - cfg.beta1) * gi;
      v[cursor + i] = static_cast<float>(cfg.beta2) * v[cursor + i] +
                      static_cast<float>(1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[cursor + i] / bias1;
      const double vhat = v[cursor + i] / bias2;
      double update = lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      if (decay) update += lr * cfg.weight_decay * pdata[i];
      pdata[i] -= static_cast<float>(update);
    }
    cursor += n;
  });

  const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  StepMetrics metrics;
  metrics.step = state.step;
  metrics.loss = lg.loss;
  metrics.grad_norm = grad_norm;
  metrics.lr = lr;
  metrics.tokens_per_sec =
      dt > 0 ? static_cast<double>(batch.rows) * batch.len / dt : 0.0;
  state.step += 1;
  return metrics;
}

// ----------------------------- checkpoint io -----------------------------

namespace {

constexpr std::uint64_t kCkptMagic = 0x434c434b50543031ull;  // "CLCKPT01"

template <typename T>
void put(Bytes& out, const T& value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const Bytes& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw MalformedStream("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void put_string(Bytes& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

std::string take_string(const Bytes& in, std::size_t& pos) {
  const auto n = take<std::uint32_t>(in, pos);
  if (pos + n > in.size()) throw MalformedStream("checkpoint truncated");
  std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
  pos += n;
  return s;
}

void put_floats(Bytes& out, const float* data, std::size_t n) {
  put(out, static_cast<std::uint64_t>(n));
  const auto* p = reinterpret_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n * sizeof(float));
}

void take_floats(const Bytes& in, std::size_t& pos, float* data, std::size_t expect) {
  const auto n = take<std::uint64_t>(in, pos);
  if (n != expect) throw MalformedStream("checkpoint tensor size mismatch");
  if (pos + n * sizeof(float) > in.size()) throw MalformedStream("checkpoint truncated");
  std::memcpy(data, in.data() + pos, n * sizeof(float));
  pos += n * sizeof(float);
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state,
                     const CheckpointMeta& meta) {
  const ModelConfig& mc = state.params.config;
  Bytes out;
  put(out, kCkptMagic);
  put(out, meta.train_hash);
  put(out, meta.vocab_hash);
  put(out, meta.profile_hash);
  put(out, static_cast<std::int64_t>(state.step));
  put(out, static_cast<std::int32_t>(mc.vocab_size));
  put(out, static_cast<std::int32_t>(mc.dim));
  put(out, static_cast<std::int32_t>(mc.n_layers));
  put(out, static_cast<std::int32_t>(mc.n_heads));
  put(out, static_cast<std::int32_t>(mc.ffn_multiplier));
  put(out, static_cast<std::int32_t>(mc.max_context));
  put(out, mc.rope_base);
  put(out, mc.norm_eps);
  put(out, mc.seed);
  {
    std::ostringstream rs;
    rs << state.rng;
    put_string(out, rs.str());
  }
  std::uint32_t n_tensors = 0;
  state.params.for_each_tensor([&n_tensors](const char*, const float*, std::size_t) {
    ++n_tensors;
  });
  put(out, n_tensors);
  state.params.for_each_tensor([&out](const char* name, const float* data, std::size_t n) {
    put_string(out, name);
    put_floats(out, data, n);
  });
  put_floats(out, state.opt_m.data(), state.opt_m.size());
  put_floats(out, state.opt_v.data(), state.opt_v.size());
  write_file(path, out);
}

TrainState load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
  const Bytes in = read_file(path);
  std::size_t pos = 0;
  if (take<std::uint64_t>(in, pos) != kCkptMagic)
    throw MalformedStream("bad checkpoint magic: " + path);
  CheckpointMeta meta;
  meta.train_hash = take<std::uint64_t>(in, pos);
  meta.vocab_hash = take<std::uint64_t>(in, pos);
  meta.profile_hash = take<std::uint64_t>(in, pos);
  const auto step = take<std::int64_t>(in, pos);
  ModelConfig mc;
  mc.vocab_size = take<std::int32_t>(in, pos);
  mc.dim = take<std::int32_t>(in, pos);
  mc.n_layers = take<std::int32_t>(in, pos);
  mc.n_heads = take<std::int32_t>(in, pos);
  mc.ffn_multiplier = take<std::int32_t>(in, pos);
  mc.max_context = take<std::int32_t>(in, pos);
  mc.rope_base = take<double>(in, pos);
  mc.norm_eps = take<double>(in, pos);
  mc.seed = take<std::uint64_t>(in, pos);

  TrainState state;
  state.step = step;
  {
    std::istringstream rs(take_string(in, pos));
    rs >> state.rng;
  }
  state.params = init_params<float>(mc);  // shapes only; data overwritten below
  const auto n_tensors = take<std::uint32_t>(in, pos);
  std::uint32_t seen = 0;
  state.params.for_each_tensor([&](const char* name, float* data, std::size_t n) {
    const std::string stored = take_string(in, pos);
    if (stored != name) throw MalformedStream("checkpoint tensor order mismatch: " + stored);
    take_floats(in, pos, data, n);
    ++seen;
  });
  if (seen != n_tensors) throw MalformedStream("checkpoint tensor count mismatch");
  state.opt_m.resize(state.params.param_count());
  state.opt_v.resize(state.params.param_count());
  take_floats(in, pos, state.opt_m.data(), state.opt_m.size());
  take_floats(in, pos, state.opt_v.data(), state.opt_v.size());
  if (meta_out) *meta_out = meta;
  return state;
}

// ----------------------------- fit -----------------------------

std::string metrics_json_line(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["lr"] = m.lr;
  j["grad_norm"] = m.grad_norm;
  j["tokens_per_sec"] = m.tokens_per_sec;
  return j.dump();
}

FitResult fit(const TrainConfig& cfg, const ModelConfig& model_cfg, const TokenStore& store,
              const std::string& out_dir, const std::string& resume_from) {
  cfg.validate();
  model_cfg.validate();
  if (store.vocab_size != static_cast<std::uint32_t>(model_cfg.vocab_size))
    throw VocabMismatch("store vocab size " + std::to_string(store.vocab_size) +
                        " != model vocab size " + std::to_string(model_cfg.vocab_size));
  if (store.context_len > static_cast<std::uint32_t>(model_cfg.max_context))
    throw ContextOverflow("store context_len exceeds model max_context");

  fs::create_directories(out_dir);
  CheckpointMeta meta;
  meta.train_hash = cfg.hash();
  meta.vocab_hash = store.vocab_hash;
  meta.profile_hash = store.profile_hash;

  TrainState state;
  if (!resume_from.empty()) {
    CheckpointMeta loaded;
    state = load_checkpoint(resume_from, &loaded);
    if (loaded.train_hash != meta.train_hash)
      throw ConfigError("resume checkpoint was written under a different train config");
    if (loaded.vocab_hash != meta.vocab_hash || loaded.profile_hash != meta.profile_hash)
      throw VocabMismatch("resume checkpoint does not match this store");
  } else {
    state = TrainState::fresh(model_cfg, cfg.seed);
  }

  BatchStream batches(store, cfg.batch_size, cfg.seed);
  std::ofstream metrics_out(out_dir + "/metrics.jsonl",
                            resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics_out) throw IoError("cannot open metrics log in " + out_dir);

  FitResult result;
  std::string last_good = resume_from;
  try {
    while (state.step < cfg.total_steps) {
      const Batch batch = batches.at_step(static_cast<std::uint64_t>(state.step));
      const StepMetrics m = train_step(state, batch, cfg);
      metrics_out << metrics_json_line(m) << "\n";
      result.metrics.push_back(m);
      if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
          state.step < cfg.total_steps) {
        const std::string path = out_dir + "/ckpt_" + std::to_string(state.step) + ".bin";
        save_checkpoint(path, state, meta);
        result.checkpoints.push_back(path);
        last_good = path;
      }
    }
  } catch (const NonFiniteLoss& e) {
    metrics_out.flush();
    throw NonFiniteLoss(std::string(e.what()) + " at step " + std::to_string(state.step) +
                        (last_good.empty() ? " (no checkpoint written)"
                                           : " (last good checkpoint: " + last_good + ")"));
  }

  result.final_checkpoint = out_dir + "/ckpt_final.bin";
  save_checkpoint(result.final_checkpoint, state, meta);
  metrics_out.flush();
  return result;
}

}  // namespace codeclm
