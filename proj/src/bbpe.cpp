#include "codeclm/bbpe.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

namespace codeclm {

namespace {

std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

// Replaces every (a, b) adjacency with `merged`, in place, left to right.
void apply_merge(std::vector<TokenId>& tokens, TokenId a, TokenId b, TokenId merged) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    if (r + 1 < tokens.size() && tokens[r] == a && tokens[r + 1] == b) {
      tokens[w++] = merged;
      ++r;
    } else {
      tokens[w++] = tokens[r];
    }
  }
  tokens.resize(w);
}

}  // namespace

void BpeVocab::rebuild_expansions() {
  expansions_.clear();
  expansions_.reserve(static_cast<std::size_t>(size()));
  for (TokenId id = 0; id < 256; ++id) expansions_.push_back({static_cast<std::uint8_t>(id)});
  expansions_.push_back({});  // BOS
  expansions_.push_back({});  // EOS
  for (const auto& [left, right] : merges) {
    if (left < 0 || right < 0 || left >= static_cast<TokenId>(expansions_.size()) ||
        right >= static_cast<TokenId>(expansions_.size()))
      throw InvalidTokenId("merge rule references unknown token");
    Bytes e = expansions_[static_cast<std::size_t>(left)];
    const Bytes& r = expansions_[static_cast<std::size_t>(right)];
    e.insert(e.end(), r.begin(), r.end());
    expansions_.push_back(std::move(e));
  }
}

const Bytes& BpeVocab::expansion(TokenId id) const {
  if (id < 0 || id >= static_cast<TokenId>(expansions_.size()))
    throw InvalidTokenId("token id " + std::to_string(id) + " out of range");
  return expansions_[static_cast<std::size_t>(id)];
}

BpeVocab train_bpe(const std::vector<Bytes>& corpus, int target_vocab, int min_count) {
  if (corpus.empty()) throw EmptyCorpus("bpe corpus is empty");
  if (target_vocab < BpeVocab::first_merge_id)
    throw ConfigError("target_vocab must be at least 258");

  std::vector<std::vector<TokenId>> docs;
  docs.reserve(corpus.size());
  for (const Bytes& b : corpus) docs.emplace_back(b.begin(), b.end());

  BpeVocab vocab;
  const int wanted_merges = target_vocab - BpeVocab::first_merge_id;
  while (static_cast<int>(vocab.merges.size()) < wanted_merges) {
    std::unordered_map<std::uint64_t, std::int64_t> counts;
    for (const auto& doc : docs)
      for (std::size_t i = 0; i + 1 < doc.size(); ++i)
        ++counts[pair_key(doc[i], doc[i + 1])];

    bool found = false;
    std::int64_t best_count = 0;
    TokenId best_a = 0, best_b = 0;
    for (const auto& [key, count] : counts) {
      if (count < min_count) continue;
      const auto a = static_cast<TokenId>(key >> 32);
      const auto b = static_cast<TokenId>(key & 0xFFFFFFFFu);
      if (!found || count > best_count ||
          (count == best_count && (a < best_a || (a == best_a && b < best_b)))) {
        found = true;
        best_count = count;
        best_a = a;
        best_b = b;
      }
    }
    if (!found) break;

    const TokenId merged = BpeVocab::first_merge_id + static_cast<TokenId>(vocab.merges.size());
    vocab.merges.emplace_back(best_a, best_b);
    for (auto& doc : docs) apply_merge(doc, best_a, best_b, merged);
  }

  if (vocab.merges.empty() && wanted_merges > 0)
    throw CorpusTooSmall("no adjacent pair occurs at least " + std::to_string(min_count) +
                         " times");
  vocab.rebuild_expansions();
  return vocab;
}

TokenSequence bpe_encode(ByteSpan bytes, const BpeVocab& vocab, bool add_bos, bool add_eos) {
  TokenSequence seq;
  seq.ids.reserve(bytes.size() + 2);
  if (add_bos) seq.ids.push_back(BpeVocab::bos_id);
  std::vector<TokenId> tokens(bytes.begin(), bytes.end());
  TokenId next_id = BpeVocab::first_merge_id;
  for (const auto& [a, b] : vocab.merges) {
    apply_merge(tokens, a, b, next_id);
    ++next_id;
  }
  seq.ids.insert(seq.ids.end(), tokens.begin(), tokens.end());
  if (add_eos) seq.ids.push_back(BpeVocab::eos_id);
  return seq;
}

Bytes bpe_decode(const TokenSequence& tokens, const BpeVocab& vocab) {
  Bytes out;
  for (TokenId id : tokens.ids) {
    const Bytes& e = vocab.expansion(id);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

std::string BpeVocab::serialize() const {
  std::ostringstream os;
  os << "codeclm-bpe v1\n";
  os << "profile_hash " << hex_u64(profile_hash) << "\n";
  os << "base 256\n";
  os << "bos " << bos_id << "\n";
  os << "eos " << eos_id << "\n";
  os << "merges " << merges.size() << "\n";
  TokenId id = first_merge_id;
  for (const auto& [a, b] : merges) os << id++ << " " << a << " " << b << "\n";
  return os.str();
}

BpeVocab BpeVocab::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto expect_line = [&](const std::string& what) {
    if (!std::getline(is, line)) throw MalformedStream("vocab file truncated at " + what);
    return line;
  };
  if (expect_line("header") != "codeclm-bpe v1") throw MalformedStream("bad vocab header");

  BpeVocab vocab;
  std::string key;
  {
    std::istringstream ls(expect_line("profile_hash"));
    std::string hex;
    if (!(ls >> key >> hex) || key != "profile_hash") throw MalformedStream("bad profile_hash");
    vocab.profile_hash = parse_hex_u64(hex);
  }
  long v = 0;
  for (const char* field : {"base", "bos", "eos"}) {
    std::istringstream ls(expect_line(field));
    if (!(ls >> key >> v) || key != field) throw MalformedStream(std::string("bad ") + field);
  }
  std::size_t n_merges = 0;
  {
    std::istringstream ls(expect_line("merges"));
    if (!(ls >> key >> n_merges) || key != "merges") throw MalformedStream("bad merges count");
  }
  for (std::size_t i = 0; i < n_merges; ++i) {
    std::istringstream ls(expect_line("merge rule"));
    TokenId id = 0, a = 0, b = 0;
    if (!(ls >> id >> a >> b) || id != BpeVocab::first_merge_id + static_cast<TokenId>(i))
      throw MalformedStream("bad merge rule line");
    vocab.merges.emplace_back(a, b);
  }
  vocab.rebuild_expansions();
  return vocab;
}

void save_vocab(const std::string& path, const BpeVocab& vocab) {
  write_text_file(path, vocab.serialize());
}

BpeVocab load_vocab(const std::string& path) {
  return BpeVocab::deserialize(read_text_file(path));
}

}  // namespace codeclm
