#pragma once

#include <cstdint>
#include <random>

#include "codeclm/bbpe.hpp"
#include "codeclm/jpeg_stream.hpp"
#include "codeclm/lm_core.hpp"

namespace codeclm {

struct SampleConfig {
  double temperature = 1.0;  // 0 = argmax
  int top_k = 40;            // <= 0 disables
  double top_p = 0.9;        // 1.0 disables
  int max_new_tokens = 0;    // 0 = up to max_context
  std::uint64_t seed = 0;

  void validate() const;
};

/// Incremental decoding state: a per-layer key/value cache plus the running
/// residual. One session per sequence; step() mirrors the training forward
/// position by position, so cached and from-scratch decoding agree exactly.
class InferenceSession {
 public:
  explicit InferenceSession(const Params<float>& params);

  /// Appends `token` at the next position and returns logits for what follows.
  const Vec<float>& step(TokenId token);

  int position() const { return pos_; }
  void reset() { pos_ = 0; }

 private:
  const Params<float>& params_;
  std::vector<Mat<float>> k_cache_;  // max_context x dim per layer
  std::vector<Mat<float>> v_cache_;
  Mat<float> rope_cos_, rope_sin_;
  Vec<float> logits_;
  int pos_ = 0;
};

/// One truncated-distribution draw: temperature, then top-k, then nucleus
/// top-p (boundary token included), renormalized.
TokenId sample_next_token(const Vec<float>& logits, const SampleConfig& cfg,
                          std::mt19937_64& rng);

/// Autoregressive generation from a BOS-led prompt. Stops at EOS or after
/// max_new_tokens; the returned sequence includes the prompt. use_cache=false
/// re-runs the whole prefix from scratch for every emitted token (slow; kept
/// as the reference path for cache-equivalence checks).
TokenSequence generate(const Params<float>& params, const TokenSequence& prompt,
                       const SampleConfig& cfg, bool use_cache = true);

struct CompletionResult {
  Bytes jpeg;
  RestoreStatus status = RestoreStatus::clean;
  std::size_t mcus_kept = 0;
  std::size_t mcus_filled = 0;
  TokenSequence tokens;
};

/// Prompted image completion: encode, canonicalize, cut at the MCU closest to
/// r_prompt, generate the remainder, detokenize and restore. r_prompt = 1
/// round-trips the full image without touching the model; r_prompt = 0 is an
/// unconditional sample.
CompletionResult complete_image(const Params<float>& params, const Image& image,
                                double r_prompt, const SampleConfig& cfg,
                                const BpeVocab& vocab, const TableSet& tables,
                                const CodecProfile& profile);

}  // namespace codeclm
