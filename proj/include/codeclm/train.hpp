#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "codeclm/corpus.hpp"
#include "codeclm/lm_core.hpp"

namespace codeclm {

struct TrainConfig {
  double peak_lr = 3e-4;
  std::int64_t warmup_steps = -1;  // -1 resolves to 2% of total_steps
  std::int64_t total_steps = 0;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double grad_clip_norm = 1.0;
  double adam_eps = 1e-8;
  double lr_floor = 0.1;  // cosine decays to this fraction of peak
  int batch_size = 8;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::uint64_t seed = 0;

  std::int64_t resolved_warmup() const;
  void validate() const;
  std::uint64_t hash() const;
};

/// Linear warmup to peak_lr, then cosine decay to lr_floor * peak_lr.
double lr_at_step(const TrainConfig& cfg, std::int64_t step);

struct TrainState {
  Params<float> params;
  std::vector<float> opt_m;  // Adam moments, flat, for_each_tensor order
  std::vector<float> opt_v;
  std::int64_t step = 0;
  std::mt19937_64 rng;

  static TrainState fresh(const ModelConfig& model_cfg, std::uint64_t train_seed);
};

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // pre-clip global L2 norm
  double lr = 0.0;
  double tokens_per_sec = 0.0;
};

StepMetrics train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg);

struct CheckpointMeta {
  std::uint64_t train_hash = 0;
  std::uint64_t vocab_hash = 0;
  std::uint64_t profile_hash = 0;
};

void save_checkpoint(const std::string& path, const TrainState& state,
                     const CheckpointMeta& meta);
TrainState load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

struct FitResult {
  std::string final_checkpoint;
  std::vector<std::string> checkpoints;  // cadence checkpoints, in step order
  std::vector<StepMetrics> metrics;
};

/// Runs the optimization loop over the store's chunks, writing checkpoints
/// and one metrics record per step to out_dir. resume_from restarts an
/// interrupted run from a cadence checkpoint.
FitResult fit(const TrainConfig& cfg, const ModelConfig& model_cfg, const TokenStore& store,
              const std::string& out_dir, const std::string& resume_from = "");

std::string metrics_json_line(const StepMetrics& m);

}  // namespace codeclm
