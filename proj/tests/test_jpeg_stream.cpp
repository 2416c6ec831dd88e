#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "codeclm/jpeg_stream.hpp"
#include "test_support.hpp"

using namespace codeclm;
using testsup::flat_image;
using testsup::synth_image;

namespace {

Bytes concat_segments(const std::vector<Segment>& segments) {
  Bytes out;
  for (const auto& s : segments) out.insert(out.end(), s.bytes.begin(), s.bytes.end());
  return out;
}

bool pixels_equal(const Image& a, const Image& b) {
  return a.width == b.width && a.height == b.height && a.rgb == b.rgb;
}

// Max channel difference over one 16x16 MCU.
int mcu_max_diff(const Image& a, const Image& b, int mcu_index) {
  const int mcus_per_row = a.width / 16;
  const int x0 = (mcu_index % mcus_per_row) * 16;
  const int y0 = (mcu_index / mcus_per_row) * 16;
  int worst = 0;
  for (int y = y0; y < y0 + 16; ++y)
    for (int x = x0; x < x0 + 16; ++x)
      for (int c = 0; c < 3; ++c)
        worst = std::max(worst, std::abs(static_cast<int>(a.pixel(x, y)[c]) -
                                         static_cast<int>(b.pixel(x, y)[c])));
  return worst;
}

}  // namespace

TEST_CASE("parse_segments handles the minimal stream") {
  const Bytes minimal = {0xFF, 0xD8, 0xFF, 0xD9};
  const auto segs = parse_segments(minimal);
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].kind == SegmentKind::soi);
  CHECK(segs[1].kind == SegmentKind::eoi);
  CHECK(concat_segments(segs) == minimal);
}

TEST_CASE("parse_segments rejects malformed streams") {
  CHECK_THROWS_AS(parse_segments(Bytes{0x00, 0x11}), MalformedStream);
  CHECK_THROWS_AS(parse_segments(Bytes{0xFF, 0xD8}), MalformedStream);  // no EOI
  // DQT whose declared payload length runs past the end of the file.
  CHECK_THROWS_AS(parse_segments(Bytes{0xFF, 0xD8, 0xFF, 0xDB, 0x00, 0x43, 0x00}),
                  MalformedStream);
  // Trailing bytes after EOI break the partition invariant.
  CHECK_THROWS_AS(parse_segments(Bytes{0xFF, 0xD8, 0xFF, 0xD9, 0x41}), MalformedStream);
}

TEST_CASE("encode_image is deterministic and properly delimited") {
  const CodecProfile profile;
  const Image img = synth_image(64, 64, 7);
  const Bytes a = encode_image(img, profile);
  const Bytes b = encode_image(img, profile);
  CHECK(a == b);
  REQUIRE(a.size() > 4);
  CHECK(a[0] == 0xFF);
  CHECK(a[1] == 0xD8);
  CHECK(a[a.size() - 2] == 0xFF);
  CHECK(a[a.size() - 1] == 0xD9);
  CHECK_NOTHROW(decode_jpeg(a));
}

TEST_CASE("encode_image rejects or pads non-multiple-of-16 dimensions") {
  CodecProfile profile;
  const Image odd = synth_image(40, 24, 3);
  CHECK_THROWS_AS(encode_image(odd, profile), DimensionError);
  profile.pad_to_mcu = true;
  const Bytes padded = encode_image(odd, profile);
  const Image decoded = decode_jpeg(padded);
  CHECK(decoded.width == 48);
  CHECK(decoded.height == 32);
}

TEST_CASE("quality 25 scales the base luminance quant entry 16 to 32") {
  // IJG rule: scale = 5000/25 = 200, entry = (16*200 + 50)/100 = 32.
  const CodecProfile profile;  // quality 25
  auto [stream, tables] = canonicalize(encode_image(flat_image(16, 16, 0, 0, 0), profile));
  REQUIRE(tables.dqt.size() >= 6);
  // DQT layout: FF DB len len Pq/Tq then 64 zigzag entries.
  CHECK(tables.dqt[4] == 0x00);  // 8-bit table 0 (luminance)
  CHECK(tables.dqt[5] == 32);
  CHECK(stream.profile.quality == 25);
}

TEST_CASE("single MCU image has no restart markers") {
  auto [stream, tables] = canonicalize(encode_image(flat_image(16, 16, 0, 0, 0), CodecProfile{}));
  CHECK(stream.mcu_count() == 1);
  CHECK(stream.mcu_offsets.empty());
  CHECK(stream.width == 16);
  CHECK(stream.height == 16);
}

TEST_CASE("canonicalize strips tables and indexes every restart marker") {
  const CodecProfile profile;
  const Bytes file = encode_image(synth_image(64, 64, 11), profile);
  auto [stream, tables] = canonicalize(file);

  CHECK(stream.mcu_count() == 16);
  CHECK(stream.mcu_offsets.size() == 15);
  CHECK(std::is_sorted(stream.mcu_offsets.begin(), stream.mcu_offsets.end()));

  // No stripped segment kinds remain in the canonical bytes.
  for (const auto& seg : parse_segments(stream.bytes)) {
    CHECK(seg.kind != SegmentKind::dqt);
    CHECK(seg.kind != SegmentKind::dht);
    CHECK(seg.kind != SegmentKind::app);
    CHECK(seg.kind != SegmentKind::com);
    CHECK(seg.kind != SegmentKind::dri);
  }
  CHECK(!tables.dqt.empty());
  CHECK(!tables.dht.empty());
  CHECK(!tables.dri.empty());
  CHECK(!tables.app.empty());

  // Canonical bytes plus removed bytes account for the whole file.
  CHECK(stream.bytes.size() + tables.concatenated().size() == file.size());
}

TEST_CASE("restore rebuilds the original file byte for byte") {
  const CodecProfile profile;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const Bytes file = encode_image(synth_image(48, 32, seed), profile);
    auto [stream, tables] = canonicalize(file);
    const RestoreResult restored = restore(stream, tables);
    CHECK(restored.status == RestoreStatus::clean);
    CHECK(restored.file == file);
    CHECK(pixels_equal(decode_jpeg(restored.file), decode_jpeg(file)));
  }
}

TEST_CASE("lossless partition holds for encoder output") {
  const CodecProfile profile;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Bytes file = encode_image(synth_image(32, 32, seed), profile);
    CHECK(concat_segments(parse_segments(file)) == file);
  }
}

TEST_CASE("MCU count matches geometry over random images") {
  const CodecProfile profile;
  std::mt19937_64 rng(99);
  for (int i = 0; i < 100; ++i) {
    const int w = 16 * (1 + static_cast<int>(rng() % 4));
    const int h = 16 * (1 + static_cast<int>(rng() % 4));
    auto [stream, tables] = canonicalize(encode_image(synth_image(w, h, rng()), profile));
    CHECK(stream.mcu_offsets.size() + 1 ==
          static_cast<std::size_t>((w + 15) / 16) * ((h + 15) / 16));
    CHECK_NOTHROW(decode_jpeg(restore(stream, tables).file));
  }
}

TEST_CASE("canonicalize rejects unsupported stream flavors") {
  // Progressive frame marker (SOF2) with a structurally valid segment list.
  const Bytes progressive = {0xFF, 0xD8, 0xFF, 0xC2, 0x00, 0x0B, 0x08, 0x00, 0x10,
                             0x00, 0x10, 0x01, 0x01, 0x11, 0x00, 0xFF, 0xD9};
  CHECK_THROWS_AS(canonicalize(progressive), UnsupportedStream);

  // Baseline but 4:4:4 sampling.
  const Bytes notsub = {0xFF, 0xD8, 0xFF, 0xC0, 0x00, 0x11, 0x08, 0x00, 0x10, 0x00, 0x10,
                        0x03, 0x01, 0x11, 0x00, 0x02, 0x11, 0x01, 0x03, 0x11, 0x01,
                        0xFF, 0xD9};
  CHECK_THROWS_AS(canonicalize(notsub), UnsupportedStream);
}

TEST_CASE("prefix_at_ratio endpoints and monotonicity") {
  const CodecProfile profile;
  auto [stream, tables] = canonicalize(encode_image(synth_image(64, 64, 21), profile));
  CHECK(prefix_at_ratio(stream, 0.0) == 0);
  CHECK(prefix_at_ratio(stream, 0.01) == 0);  // below the first MCU
  CHECK(prefix_at_ratio(stream, 1.0) == stream.entropy_size());
  CHECK(prefix_at_ratio(stream, -3.0) == 0);
  CHECK(prefix_at_ratio(stream, 7.0) == stream.entropy_size());
  CHECK(prefix_at_ratio(stream, 0.5) == stream.mcu_offsets[7] + 2);

  std::size_t prev = 0;
  for (double r = 0.0; r <= 1.0; r += 0.01) {
    const std::size_t off = prefix_at_ratio(stream, r);
    CHECK(off >= prev);
    prev = off;
  }
}

TEST_CASE("prefix decodes to exactly the top half of the image") {
  const CodecProfile profile;
  const Image img = synth_image(64, 64, 33);
  const Bytes file = encode_image(img, profile);
  auto [stream, tables] = canonicalize(file);
  const Image full = decode_jpeg(file);

  const std::size_t off = prefix_at_ratio(stream, 0.5);
  Bytes truncated(stream.bytes.begin(),
                  stream.bytes.begin() + static_cast<long>(stream.entropy_begin + off));
  const RestoreResult salvaged = restore(ByteSpan(truncated), tables);
  CHECK(salvaged.status == RestoreStatus::salvaged);
  CHECK(salvaged.mcus_kept == 8);
  CHECK(salvaged.mcus_filled == 8);

  const Image partial = decode_jpeg(salvaged.file);
  for (int m = 0; m < 8; ++m) CHECK(mcu_max_diff(full, partial, m) == 0);
  // Remainder is mid-gray fill.
  for (int m = 8; m < 16; ++m) {
    const Image gray = flat_image(64, 64, 128, 128, 128);
    CHECK(mcu_max_diff(gray, partial, m) <= 2);
  }
}

TEST_CASE("restore salvages a stream truncated after k restart markers") {
  const CodecProfile profile;
  const Image img = synth_image(64, 64, 55);
  const Bytes file = encode_image(img, profile);
  auto [stream, tables] = canonicalize(file);
  const Image full = decode_jpeg(file);

  for (std::size_t k : {1u, 5u, 11u}) {
    Bytes cut(stream.bytes.begin(),
              stream.bytes.begin() + static_cast<long>(stream.entropy_begin +
                                                       stream.mcu_offsets[k - 1] + 2));
    const RestoreResult salvaged = restore(ByteSpan(cut), tables);
    CHECK(salvaged.status == RestoreStatus::salvaged);
    CHECK(salvaged.mcus_kept == k);
    const Image partial = decode_jpeg(salvaged.file);
    for (std::size_t m = 0; m < k; ++m)
      CHECK(mcu_max_diff(full, partial, static_cast<int>(m)) == 0);
  }
}

TEST_CASE("restore failure modes") {
  const CodecProfile profile;
  auto [stream, tables] = canonicalize(encode_image(synth_image(32, 32, 4), profile));

  // Empty entropy data: header only.
  Bytes header_only(stream.bytes.begin(),
                    stream.bytes.begin() + static_cast<long>(stream.entropy_begin));
  CHECK_THROWS_AS(restore(ByteSpan(header_only), tables), UnrecoverableStream);

  // Pure garbage.
  CHECK_THROWS_AS(restore(ByteSpan(Bytes{0x00, 0x01, 0x02}), tables), UnrecoverableStream);

  // Valid header, garbage entropy with an immediate wrong-numbered restart
  // marker: no complete MCU segment exists.
  Bytes bad = header_only;
  bad.push_back(0xFF);
  bad.push_back(0xD5);
  CHECK_THROWS_AS(restore(ByteSpan(bad), tables), UnrecoverableStream);
}

TEST_CASE("restore trims over-long generations") {
  const CodecProfile profile;
  auto [stream, tables] = canonicalize(encode_image(synth_image(32, 32, 14), profile));
  // Duplicate the entropy data after replacing EOI with a continuing restart
  // marker; the salvage path must trim back to the frame's MCU count.
  Bytes overlong(stream.bytes.begin(), stream.bytes.begin() + stream.entropy_end);
  overlong.push_back(0xFF);
  overlong.push_back(0xD0 + ((stream.mcu_offsets.size()) % 8));
  overlong.insert(overlong.end(), stream.bytes.begin() + stream.entropy_begin,
                  stream.bytes.end());
  const RestoreResult salvaged = restore(ByteSpan(overlong), tables);
  CHECK(salvaged.status == RestoreStatus::salvaged);
  CHECK(salvaged.mcus_kept == stream.mcu_count());
  CHECK_NOTHROW(decode_jpeg(salvaged.file));
}

TEST_CASE("table sidecar round trip and cross-image reuse") {
  const CodecProfile profile;
  auto [stream_a, tables_a] = canonicalize(encode_image(synth_image(32, 32, 71), profile));
  auto [stream_b, tables_b] = canonicalize(encode_image(synth_image(48, 48, 72), profile));
  CHECK(tables_a.concatenated() == tables_b.concatenated());  // global per profile

  testsup::TempDir tmp("tables");
  save_tables(tmp.file("tables.bin"), tables_a);
  const TableSet loaded = load_tables(tmp.file("tables.bin"));
  CHECK(loaded.concatenated() == tables_a.concatenated());
  CHECK(loaded.profile_hash == tables_a.profile_hash);

  // Tables captured from image A restore image B.
  const RestoreResult restored = restore(stream_b, loaded);
  CHECK(restored.status == RestoreStatus::clean);
  CHECK(pixels_equal(decode_jpeg(restored.file),
                     decode_jpeg(encode_image(synth_image(48, 48, 72), profile))));
}

TEST_CASE("restart interval above one is honored") {
  CodecProfile profile;
  profile.restart_interval_mcus = 2;
  const Bytes file = encode_image(synth_image(64, 64, 91), profile);
  auto [stream, tables] = canonicalize(file);
  CHECK(stream.mcu_count() == 16);
  CHECK(stream.mcu_offsets.size() == 7);  // ceil(16/2) - 1
  CHECK(stream.profile.restart_interval_mcus == 2);
  const RestoreResult restored = restore(stream, tables);
  CHECK(restored.status == RestoreStatus::clean);
  CHECK(restored.file == file);
}

TEST_CASE("describe_stream reports the restart map") {
  const CodecProfile profile;
  auto [stream, tables] = canonicalize(encode_image(synth_image(64, 64, 12), profile));
  const std::string text = describe_stream(stream.bytes);
  CHECK(text.find("restart markers: 15") != std::string::npos);
  CHECK(text.find("mcu count: 16") != std::string::npos);
  CHECK(text.find("frame: 64x64") != std::string::npos);
}
