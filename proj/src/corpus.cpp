#include "codeclm/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <filesystem>
#include <map>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "codeclm/image.hpp"

namespace codeclm {

namespace fs = std::filesystem;
using nlohmann::json;

void TokenStore::validate() const {
  if (doc_offsets.empty() || doc_offsets.front() != 0 || doc_offsets.back() != tokens.size())
    throw MalformedStream("token store document index is inconsistent");
  for (std::size_t d = 0; d < doc_count(); ++d) {
    const auto begin = doc_offsets[d], end = doc_offsets[d + 1];
    if (end - begin < 2 || tokens[begin] != BpeVocab::bos_id ||
        tokens[end - 1] != BpeVocab::eos_id)
      throw MalformedStream("document " + std::to_string(d) + " is not BOS...EOS wrapped");
  }
}

Batch make_batch(const TokenStore& store, const std::vector<std::size_t>& chunk_indices) {
  const auto len = static_cast<int>(store.context_len);
  if (len < 2) throw ConfigError("context_len must be at least 2");
  Batch batch;
  batch.rows = static_cast<int>(chunk_indices.size());
  batch.len = len;
  batch.inputs.reserve(chunk_indices.size() * store.context_len);
  batch.targets.reserve(chunk_indices.size() * (store.context_len - 1));
  for (std::size_t ci : chunk_indices) {
    const TokenId* chunk = store.tokens.data() + ci * store.context_len;
    batch.inputs.insert(batch.inputs.end(), chunk, chunk + len);
    batch.targets.insert(batch.targets.end(), chunk + 1, chunk + len);
  }
  return batch;
}

std::vector<std::string> list_corpus_files(const std::string& dir,
                                           const std::vector<std::string>& extensions) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end())
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::pair<std::vector<Bytes>, TableSet> encode_image_dir(const std::string& image_dir,
                                                         const CodecProfile& profile,
                                                         int threads) {
  const auto files = list_corpus_files(image_dir, {".png", ".PNG", ".rgb"});
  if (files.empty()) throw EmptyCorpus("no images in " + image_dir);

  std::vector<Bytes> docs(files.size());
  std::vector<TableSet> tables(files.size());
  std::vector<std::string> errors(files.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= files.size()) return;
      try {
        const Image img = load_image(files[i]);
        const Bytes file = encode_image(img, profile);
        auto [cs, ts] = canonicalize(file);
        docs[i] = std::move(cs.bytes);
        tables[i] = std::move(ts);
      } catch (const std::exception& e) {
        errors[i] = std::string(e.what()) + " [" + files[i] + "]";
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(files.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& err : errors)
    if (!err.empty()) throw MalformedStream(err);
  return {std::move(docs), std::move(tables[0])};
}

TokenStore build_corpus_from_streams(const std::vector<Bytes>& canonical_docs,
                                     const BpeVocab& vocab, std::uint32_t context_len,
                                     std::uint64_t profile_hash) {
  if (canonical_docs.empty()) throw EmptyCorpus("no documents to build a corpus from");
  if (context_len < 2) throw ConfigError("context_len must be at least 2");

  TokenStore store;
  store.vocab_hash = vocab.hash();
  store.profile_hash = profile_hash;
  store.vocab_size = static_cast<std::uint32_t>(vocab.size());
  store.context_len = context_len;
  store.doc_offsets.push_back(0);
  for (const Bytes& doc : canonical_docs) {
    const TokenSequence seq = bpe_encode(doc, vocab, /*add_bos=*/true, /*add_eos=*/true);
    store.tokens.insert(store.tokens.end(), seq.ids.begin(), seq.ids.end());
    store.doc_offsets.push_back(store.tokens.size());
  }
  store.validate();
  return store;
}

TokenStore build_corpus(const std::string& image_dir, const CodecProfile& profile,
                        const BpeVocab& vocab, std::uint32_t context_len, int threads) {
  auto [docs, tables] = encode_image_dir(image_dir, profile, threads);
  (void)tables;
  return build_corpus_from_streams(docs, vocab, context_len, profile.hash());
}

// ----------------------------- batches -----------------------------

BatchStream::BatchStream(const TokenStore& store, int batch_size, std::uint64_t seed)
    : store_(store), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (store.context_len < 2) throw ConfigError("store context_len must be at least 2");
  const std::uint64_t chunks = store.chunk_count();
  if (chunks == 0) throw EmptyCorpus("store has no full chunks");
  batches_per_epoch_ = (chunks + batch_size_ - 1) / batch_size_;
}

Batch BatchStream::at_step(std::uint64_t step) const {
  const std::uint64_t epoch = step / batches_per_epoch_;
  const std::uint64_t index = step % batches_per_epoch_;
  if (epoch != cached_epoch_) {
    cached_perm_.resize(store_.chunk_count());
    for (std::size_t i = 0; i < cached_perm_.size(); ++i) cached_perm_[i] = i;
    std::mt19937_64 rng(splitmix64(seed_ ^ (epoch * 0x9e3779b97f4a7c15ull + 1)));
    std::shuffle(cached_perm_.begin(), cached_perm_.end(), rng);
    cached_epoch_ = epoch;
  }
  const std::size_t begin = index * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, cached_perm_.size());
  const std::vector<std::size_t> chunk_indices(cached_perm_.begin() + begin,
                                               cached_perm_.begin() + end);
  return make_batch(store_, chunk_indices);
}

// ----------------------------- store io -----------------------------

namespace {

constexpr std::uint64_t kStoreMagic = 0x434c544f4b533031ull;  // "CLTOKS01"

template <typename T>
void put(Bytes& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const Bytes& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw MalformedStream("token store file truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void save_store(const std::string& path, const TokenStore& store) {
  // Smallest of {1, 2} bytes covering the vocabulary. BOS/EOS sit at ids
  // 256/257, so any store of wrapped documents lands on two bytes.
  const std::uint8_t id_width = store.vocab_size <= 256 ? 1 : 2;
  if (store.vocab_size > 65536) throw ConfigError("vocab too large for 2-byte token ids");
  for (TokenId id : store.tokens)
    if (id < 0 || id >= static_cast<TokenId>(store.vocab_size))
      throw InvalidTokenId("store contains token id outside its vocabulary");

  Bytes out;
  put(out, kStoreMagic);
  put(out, store.vocab_hash);
  put(out, store.profile_hash);
  put(out, store.vocab_size);
  put(out, store.context_len);
  put(out, id_width);
  put(out, std::uint8_t{0});
  put(out, std::uint16_t{0});
  put(out, static_cast<std::uint64_t>(store.tokens.size()));
  put(out, static_cast<std::uint64_t>(store.doc_offsets.size()));
  for (std::uint64_t off : store.doc_offsets) put(out, off);
  for (TokenId id : store.tokens) {
    if (id_width == 1) {
      put(out, static_cast<std::uint8_t>(id));
    } else {
      put(out, static_cast<std::uint16_t>(id));
    }
  }
  write_file(path, out);
  write_text_file(path + ".manifest.json", store_manifest_json(store));
}

TokenStore load_store(const std::string& path) {
  const Bytes in = read_file(path);
  std::size_t pos = 0;
  if (take<std::uint64_t>(in, pos) != kStoreMagic)
    throw MalformedStream("bad token store magic");
  TokenStore store;
  store.vocab_hash = take<std::uint64_t>(in, pos);
  store.profile_hash = take<std::uint64_t>(in, pos);
  store.vocab_size = take<std::uint32_t>(in, pos);
  store.context_len = take<std::uint32_t>(in, pos);
  const auto id_width = take<std::uint8_t>(in, pos);
  take<std::uint8_t>(in, pos);
  take<std::uint16_t>(in, pos);
  const auto n_tokens = take<std::uint64_t>(in, pos);
  const auto n_offsets = take<std::uint64_t>(in, pos);
  store.doc_offsets.reserve(n_offsets);
  for (std::uint64_t i = 0; i < n_offsets; ++i)
    store.doc_offsets.push_back(take<std::uint64_t>(in, pos));
  store.tokens.reserve(n_tokens);
  for (std::uint64_t i = 0; i < n_tokens; ++i) {
    if (id_width == 1) {
      store.tokens.push_back(take<std::uint8_t>(in, pos));
    } else if (id_width == 2) {
      store.tokens.push_back(take<std::uint16_t>(in, pos));
    } else {
      throw MalformedStream("unsupported token id width");
    }
  }
  store.validate();
  return store;
}

std::string store_manifest_json(const TokenStore& store) {
  std::vector<std::size_t> lengths;
  lengths.reserve(store.doc_count());
  for (std::size_t d = 0; d < store.doc_count(); ++d) lengths.push_back(store.doc_length(d));
  std::vector<std::size_t> sorted = lengths;
  std::sort(sorted.begin(), sorted.end());

  double mean = 0.0;
  for (std::size_t L : lengths) mean += static_cast<double>(L);
  mean = lengths.empty() ? 0.0 : mean / static_cast<double>(lengths.size());
  const std::size_t median = sorted.empty() ? 0 : sorted[sorted.size() / 2];

  // Power-of-two document length histogram.
  std::map<std::string, int> histogram;
  for (std::size_t L : lengths) {
    std::size_t hi = 1;
    while (hi < L) hi *= 2;
    histogram["<=" + std::to_string(hi)] += 1;
  }

  json j;
  j["images"] = store.doc_count();
  j["tokens"] = store.tokens.size();
  j["mean_doc_len"] = mean;
  j["median_doc_len"] = median;
  j["vocab_hash"] = hex_u64(store.vocab_hash);
  j["profile_hash"] = hex_u64(store.profile_hash);
  j["vocab_size"] = store.vocab_size;
  j["context_len"] = store.context_len;
  j["chunks"] = store.chunk_count();
  j["doc_len_histogram"] = histogram;
  return j.dump(2) + "\n";
}

}  // namespace codeclm
