#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "codeclm/common.hpp"

namespace codeclm {

using TokenId = std::int32_t;

/// Byte-level BPE vocabulary: 256 base byte tokens, BOS/EOS specials, and an
/// ordered list of merge rules. Rule i combines two existing ids into token
/// id first_merge_id + i.
struct BpeVocab {
  static constexpr TokenId bos_id = 256;
  static constexpr TokenId eos_id = 257;
  static constexpr TokenId first_merge_id = 258;

  std::vector<std::pair<TokenId, TokenId>> merges;
  std::uint64_t profile_hash = 0;

  int size() const { return first_merge_id + static_cast<int>(merges.size()); }

  /// Byte expansion of a token; empty for BOS/EOS. Throws InvalidTokenId.
  const Bytes& expansion(TokenId id) const;

  std::string serialize() const;
  static BpeVocab deserialize(const std::string& text);
  std::uint64_t hash() const { return fnv1a64(serialize()); }

  void rebuild_expansions();

 private:
  std::vector<Bytes> expansions_;
};

struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

/// Greedy pair-merge training. `target_vocab` counts base bytes, specials and
/// merges; training stops early when no adjacent pair occurs at least
/// `min_count` times. Ties break on the lexicographically smallest id pair.
BpeVocab train_bpe(const std::vector<Bytes>& corpus, int target_vocab, int min_count = 2);

TokenSequence bpe_encode(ByteSpan bytes, const BpeVocab& vocab, bool add_bos = false,
                         bool add_eos = false);
Bytes bpe_decode(const TokenSequence& tokens, const BpeVocab& vocab);

void save_vocab(const std::string& path, const BpeVocab& vocab);
BpeVocab load_vocab(const std::string& path);

}  // namespace codeclm
