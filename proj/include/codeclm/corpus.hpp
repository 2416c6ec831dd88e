#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codeclm/bbpe.hpp"
#include "codeclm/common.hpp"
#include "codeclm/jpeg_stream.hpp"

namespace codeclm {

/// Flat token corpus: BOS-wrapped documents concatenated in build order,
/// chunked at context_len for training (last partial chunk dropped).
struct TokenStore {
  std::vector<TokenId> tokens;
  std::vector<std::uint64_t> doc_offsets;  // n_docs + 1 entries, starts at 0
  std::uint64_t vocab_hash = 0;
  std::uint64_t profile_hash = 0;
  std::uint32_t vocab_size = 0;
  std::uint32_t context_len = 0;

  std::size_t doc_count() const { return doc_offsets.empty() ? 0 : doc_offsets.size() - 1; }
  std::size_t chunk_count() const {
    return context_len == 0 ? 0 : tokens.size() / context_len;
  }
  std::size_t doc_length(std::size_t i) const { return doc_offsets[i + 1] - doc_offsets[i]; }
  void validate() const;
};

struct Batch {
  int rows = 0;
  int len = 0;                    // tokens per row
  std::vector<TokenId> inputs;    // rows * len
  std::vector<TokenId> targets;   // rows * (len - 1), inputs shifted left by one
};

Batch make_batch(const TokenStore& store, const std::vector<std::size_t>& chunk_indices);

/// Lists corpus files in deterministic (lexicographic) filename order.
std::vector<std::string> list_corpus_files(const std::string& dir,
                                           const std::vector<std::string>& extensions);

/// Encodes every image under image_dir to its canonical stream. Returns the
/// streams in filename order plus the shared TableSet.
std::pair<std::vector<Bytes>, TableSet> encode_image_dir(const std::string& image_dir,
                                                         const CodecProfile& profile,
                                                         int threads = 1);

TokenStore build_corpus_from_streams(const std::vector<Bytes>& canonical_docs,
                                     const BpeVocab& vocab, std::uint32_t context_len,
                                     std::uint64_t profile_hash);

TokenStore build_corpus(const std::string& image_dir, const CodecProfile& profile,
                        const BpeVocab& vocab, std::uint32_t context_len, int threads = 1);

/// Deterministic shuffled batch order. Each epoch is a fresh seeded
/// permutation of all chunks; any step index maps to the same batch no matter
/// where iteration started, which is what checkpoint resume relies on.
class BatchStream {
 public:
  BatchStream(const TokenStore& store, int batch_size, std::uint64_t seed);

  std::uint64_t batches_per_epoch() const { return batches_per_epoch_; }
  Batch at_step(std::uint64_t step) const;

 private:
  const TokenStore& store_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t batches_per_epoch_;
  mutable std::uint64_t cached_epoch_ = ~0ull;
  mutable std::vector<std::size_t> cached_perm_;
};

void save_store(const std::string& path, const TokenStore& store);
TokenStore load_store(const std::string& path);
std::string store_manifest_json(const TokenStore& store);

}  // namespace codeclm
