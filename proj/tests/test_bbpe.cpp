#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>

#include "codeclm/bbpe.hpp"
#include "codeclm/jpeg_stream.hpp"
#include "test_support.hpp"

using namespace codeclm;

namespace {

Bytes str_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

// Brute-force pair counting over raw byte docs, the oracle for the first
// merge choice: highest count, then smallest (left, right).
std::pair<int, int> best_pair_oracle(const std::vector<Bytes>& corpus, int min_count) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& doc : corpus)
    for (std::size_t i = 0; i + 1 < doc.size(); ++i)
      counts[{doc[i], doc[i + 1]}] += 1;
  std::pair<int, int> best{-1, -1};
  int best_count = 0;
  for (const auto& [pair, count] : counts)
    if (count >= min_count && (count > best_count || (count == best_count && pair < best)))
      best = pair, best_count = count;
  return best;
}

Bytes random_bytes(std::mt19937_64& rng, std::size_t max_len) {
  Bytes out(1 + rng() % max_len);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

}  // namespace

TEST_CASE("first merge matches the brute-force pair oracle") {
  const std::vector<Bytes> corpus = {str_bytes("aaab"), str_bytes("aaab")};
  const BpeVocab vocab = train_bpe(corpus, 259);
  REQUIRE(vocab.merges.size() == 1);
  const auto expected = best_pair_oracle(corpus, 2);
  CHECK(vocab.merges[0].first == expected.first);
  CHECK(vocab.merges[0].second == expected.second);
  CHECK(vocab.merges[0].first == 'a');
  CHECK(vocab.merges[0].second == 'a');
  CHECK(vocab.size() == 259);
}

TEST_CASE("target 258 yields a pure byte vocabulary") {
  const BpeVocab vocab = train_bpe({str_bytes("anything")}, 258);
  CHECK(vocab.merges.empty());
  CHECK(vocab.size() == 258);
  const TokenSequence seq = bpe_encode(str_bytes("xyz"), vocab);
  CHECK(seq.ids == std::vector<TokenId>{'x', 'y', 'z'});
}

TEST_CASE("training preconditions") {
  CHECK_THROWS_AS(train_bpe({}, 300), EmptyCorpus);
  CHECK_THROWS_AS(train_bpe({str_bytes("ab")}, 257), ConfigError);
  // No adjacent pair reaches min_count 2 before the first merge.
  CHECK_THROWS_AS(train_bpe({str_bytes("ab")}, 259), CorpusTooSmall);
}

TEST_CASE("training stops early when pairs run out") {
  // One repeated pair supports only a few productive merges; asking for a
  // large vocabulary must not loop or invent merges.
  const BpeVocab vocab = train_bpe({str_bytes("cdcd"), str_bytes("cd")}, 400);
  CHECK(vocab.size() < 400);
  CHECK(vocab.merges.size() >= 1);
}

TEST_CASE("encode and decode handle specials") {
  const BpeVocab vocab = train_bpe({str_bytes("aaab")}, 258);
  const TokenSequence empty = bpe_encode({}, vocab, true, true);
  CHECK(empty.ids == std::vector<TokenId>{BpeVocab::bos_id, BpeVocab::eos_id});
  CHECK(bpe_decode(empty, vocab).empty());

  TokenSequence single;
  single.ids = {0x41};
  CHECK(bpe_decode(single, vocab) == str_bytes("A"));

  TokenSequence bad;
  bad.ids = {vocab.size()};
  CHECK_THROWS_AS(bpe_decode(bad, vocab), InvalidTokenId);
}

TEST_CASE("encode never emits specials and bounds its length") {
  const BpeVocab vocab = train_bpe({str_bytes("abababab"), str_bytes("ababab")}, 300);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const Bytes s = random_bytes(rng, 300);
    const TokenSequence seq = bpe_encode(s, vocab);
    CHECK(seq.size() <= s.size());
    for (TokenId id : seq.ids) {
      CHECK(id != BpeVocab::bos_id);
      CHECK(id != BpeVocab::eos_id);
    }
  }
}

TEST_CASE("bijectivity on random byte strings and corpus streams") {
  // Train on real canonical streams so merges reflect actual JPEG bytes.
  std::vector<Bytes> streams;
  const CodecProfile profile;
  for (int i = 0; i < 12; ++i) {
    auto [cs, tables] =
        canonicalize(encode_image(testsup::synth_image(32, 32, 900 + i), profile));
    streams.push_back(cs.bytes);
  }
  const BpeVocab vocab = train_bpe(streams, 322);
  CHECK(vocab.size() == 322);

  for (const Bytes& s : streams) {
    const TokenSequence seq = bpe_encode(s, vocab, true, true);
    CHECK(bpe_decode(seq, vocab) == s);
  }
  std::mt19937_64 rng(17);
  for (int i = 0; i < 2000; ++i) {
    const Bytes s = random_bytes(rng, 200);
    CHECK(bpe_decode(bpe_encode(s, vocab), vocab) == s);
  }
}

TEST_CASE("token prefixes decode to byte prefixes") {
  const BpeVocab vocab = train_bpe({str_bytes("abcabcabcabc"), str_bytes("bcabca")}, 280);
  const Bytes s = str_bytes("abcabcabcxyzabc");
  const TokenSequence seq = bpe_encode(s, vocab);
  for (std::size_t k = 0; k <= seq.size(); ++k) {
    TokenSequence head;
    head.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<long>(k));
    const Bytes prefix = bpe_decode(head, vocab);
    REQUIRE(prefix.size() <= s.size());
    CHECK(std::equal(prefix.begin(), prefix.end(), s.begin()));
  }
}

TEST_CASE("random valid token ids always decode") {
  const BpeVocab vocab = train_bpe({str_bytes("mississippi river runs")}, 270);
  std::mt19937_64 rng(23);
  for (int i = 0; i < 500; ++i) {
    TokenSequence seq;
    for (int j = 0; j < 64; ++j)
      seq.ids.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab.size())));
    CHECK_NOTHROW(bpe_decode(seq, vocab));
  }
}

TEST_CASE("training is deterministic") {
  std::vector<Bytes> corpus;
  std::mt19937_64 rng(31);
  for (int i = 0; i < 20; ++i) corpus.push_back(random_bytes(rng, 500));
  const BpeVocab a = train_bpe(corpus, 300);
  const BpeVocab b = train_bpe(corpus, 300);
  CHECK(a.merges == b.merges);
  CHECK(a.hash() == b.hash());
}

TEST_CASE("vocab file format is stable") {
  const std::vector<Bytes> corpus = {str_bytes("aaabbbaaabbb"), str_bytes("aaabbb")};
  BpeVocab vocab = train_bpe(corpus, 262);
  vocab.rebuild_expansions();
  vocab.profile_hash = 0x1122334455667788ull;
  const std::string golden_path = std::string(CODECLM_GOLDEN_DIR) + "/vocab_small.txt";
  CHECK(vocab.serialize() == read_text_file(golden_path));
}

TEST_CASE("vocab save/load round trip") {
  const BpeVocab vocab = train_bpe({str_bytes("roundtrip roundtrip")}, 290);
  testsup::TempDir tmp("vocab");
  save_vocab(tmp.file("v.txt"), vocab);
  const BpeVocab back = load_vocab(tmp.file("v.txt"));
  CHECK(back.merges == vocab.merges);
  CHECK(back.hash() == vocab.hash());
  CHECK(back.size() == vocab.size());
  const Bytes s = str_bytes("roundtrip!");
  CHECK(bpe_decode(bpe_encode(s, back), back) == s);
}
