#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "codeclm/corpus.hpp"
#include "test_support.hpp"

using namespace codeclm;

namespace {

std::vector<Bytes> tiny_stream_corpus(int n, int size, std::uint64_t seed) {
  const CodecProfile profile;
  std::vector<Bytes> docs;
  for (int i = 0; i < n; ++i) {
    auto [cs, tables] =
        canonicalize(encode_image(testsup::synth_image(size, size, seed + i), profile));
    docs.push_back(cs.bytes);
  }
  return docs;
}

BpeVocab tiny_vocab(const std::vector<Bytes>& docs, int target = 290) {
  return train_bpe(docs, target);
}

}  // namespace

TEST_CASE("identical documents build identical spans") {
  const CodecProfile profile;
  auto [cs, tables] = canonicalize(encode_image(testsup::flat_image(16, 16, 0, 0, 0), profile));
  const std::vector<Bytes> docs(10, cs.bytes);
  const BpeVocab vocab = train_bpe(docs, 280);
  const TokenStore store = build_corpus_from_streams(docs, vocab, 32, profile.hash());

  CHECK(store.doc_count() == 10);
  const std::size_t doc_len = store.doc_length(0);
  CHECK(store.tokens.size() == 10 * doc_len);
  for (std::size_t d = 1; d < 10; ++d) {
    CHECK(store.doc_length(d) == doc_len);
    CHECK(std::equal(store.tokens.begin(), store.tokens.begin() + static_cast<long>(doc_len),
                     store.tokens.begin() + static_cast<long>(d * doc_len)));
  }
}

TEST_CASE("documents are BOS/EOS wrapped and conserve tokens") {
  const auto docs = tiny_stream_corpus(6, 32, 400);
  const BpeVocab vocab = tiny_vocab(docs);
  const TokenStore store = build_corpus_from_streams(docs, vocab, 64, 1);

  std::size_t total = 0;
  for (std::size_t d = 0; d < store.doc_count(); ++d) {
    total += store.doc_length(d);
    CHECK(store.tokens[store.doc_offsets[d]] == BpeVocab::bos_id);
    CHECK(store.tokens[store.doc_offsets[d + 1] - 1] == BpeVocab::eos_id);
  }
  CHECK(total == store.tokens.size());
  CHECK_NOTHROW(store.validate());
}

TEST_CASE("chunks decode to substrings of the concatenated corpus") {
  const auto docs = tiny_stream_corpus(5, 32, 500);
  const BpeVocab vocab = tiny_vocab(docs);
  const TokenStore store = build_corpus_from_streams(docs, vocab, 48, 1);

  Bytes all;
  for (const auto& d : docs) all.insert(all.end(), d.begin(), d.end());
  const std::string haystack(all.begin(), all.end());

  for (std::size_t c = 0; c < store.chunk_count(); ++c) {
    TokenSequence chunk;
    for (std::uint32_t i = 0; i < store.context_len; ++i) {
      const TokenId id = store.tokens[c * store.context_len + i];
      if (id != BpeVocab::bos_id && id != BpeVocab::eos_id) chunk.ids.push_back(id);
    }
    const Bytes decoded = bpe_decode(chunk, vocab);
    const std::string needle(decoded.begin(), decoded.end());
    CHECK(haystack.find(needle) != std::string::npos);
  }
}

TEST_CASE("empty corpus is rejected") {
  const BpeVocab vocab = train_bpe({Bytes{1, 2, 1, 2}}, 258);
  CHECK_THROWS_AS(build_corpus_from_streams({}, vocab, 16, 0), EmptyCorpus);
  testsup::TempDir tmp("emptydir");
  CHECK_THROWS_AS(build_corpus(tmp.str(), CodecProfile{}, vocab, 16), EmptyCorpus);
}

TEST_CASE("build_corpus reads an image directory in filename order") {
  testsup::TempDir tmp("imgs");
  for (int i = 0; i < 4; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "im_%02d.png", i);
    save_png(tmp.file(name), testsup::synth_image(32, 32, 600 + i));
  }
  const CodecProfile profile;
  const auto docs = tiny_stream_corpus(4, 32, 600);
  const BpeVocab vocab = tiny_vocab(docs);
  const TokenStore store = build_corpus(tmp.str(), profile, vocab, 64);
  CHECK(store.doc_count() == 4);
  // Same images through the in-memory path give the same tokens.
  const TokenStore direct = build_corpus_from_streams(docs, vocab, 64, profile.hash());
  CHECK(store.tokens == direct.tokens);

  // Parallel encoding must preserve the deterministic order.
  const TokenStore threaded = build_corpus(tmp.str(), profile, vocab, 64, 2);
  CHECK(threaded.tokens == store.tokens);
}

TEST_CASE("batches partition each epoch without repeats") {
  const auto docs = tiny_stream_corpus(4, 48, 700);
  const BpeVocab vocab = tiny_vocab(docs);
  const TokenStore store = build_corpus_from_streams(docs, vocab, 32, 1);
  REQUIRE(store.chunk_count() >= 3);

  BatchStream bs(store, 1, /*seed=*/9);
  CHECK(bs.batches_per_epoch() == store.chunk_count());

  // One epoch covers every chunk exactly once.
  std::multiset<std::vector<TokenId>> seen;
  for (std::uint64_t s = 0; s < bs.batches_per_epoch(); ++s)
    seen.insert(bs.at_step(s).inputs);
  std::multiset<std::vector<TokenId>> expect;
  for (std::size_t c = 0; c < store.chunk_count(); ++c)
    expect.insert(make_batch(store, {c}).inputs);
  CHECK(seen == expect);

  // Same seed, same order; the second epoch is a different permutation.
  BatchStream bs2(store, 1, 9);
  for (std::uint64_t s = 0; s < 2 * bs.batches_per_epoch(); ++s)
    CHECK(bs.at_step(s).inputs == bs2.at_step(s).inputs);
}

TEST_CASE("targets are inputs shifted left within each row") {
  const auto docs = tiny_stream_corpus(3, 32, 800);
  const BpeVocab vocab = tiny_vocab(docs);
  const TokenStore store = build_corpus_from_streams(docs, vocab, 24, 1);
  BatchStream bs(store, 2, 5);
  const Batch batch = bs.at_step(0);
  REQUIRE(batch.len == 24);
  for (int b = 0; b < batch.rows; ++b)
    for (int t = 0; t < batch.len - 1; ++t)
      CHECK(batch.targets[b * (batch.len - 1) + t] == batch.inputs[b * batch.len + t + 1]);
}

TEST_CASE("store files round trip with a manifest") {
  const auto docs = tiny_stream_corpus(4, 32, 850);
  const BpeVocab vocab = tiny_vocab(docs);
  const TokenStore store = build_corpus_from_streams(docs, vocab, 40, 77);

  testsup::TempDir tmp("store");
  save_store(tmp.file("train.bin"), store);
  const TokenStore back = load_store(tmp.file("train.bin"));
  CHECK(back.tokens == store.tokens);
  CHECK(back.doc_offsets == store.doc_offsets);
  CHECK(back.vocab_hash == store.vocab_hash);
  CHECK(back.profile_hash == store.profile_hash);
  CHECK(back.vocab_size == store.vocab_size);
  CHECK(back.context_len == store.context_len);

  const std::string manifest = read_text_file(tmp.file("train.bin.manifest.json"));
  CHECK(manifest.find("\"images\": 4") != std::string::npos);
  CHECK(manifest.find("vocab_hash") != std::string::npos);
  CHECK(manifest.find("doc_len_histogram") != std::string::npos);
}

TEST_CASE("save_store rejects ids outside the declared vocabulary") {
  TokenStore store;
  store.vocab_size = 200;  // claims one-byte width but contains BOS/EOS
  store.context_len = 4;
  store.tokens = {BpeVocab::bos_id, 1, 2, BpeVocab::eos_id};
  store.doc_offsets = {0, 4};
  testsup::TempDir tmp("width");
  CHECK_THROWS_AS(save_store(tmp.file("bad.bin"), store), InvalidTokenId);
}
