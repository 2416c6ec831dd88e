#include "codeclm/jpeg_stream.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <optional>
#include <sstream>

namespace codeclm {

namespace {

constexpr std::uint8_t kMarkerPrefix = 0xFF;
constexpr std::uint8_t kSOI = 0xD8;
constexpr std::uint8_t kEOI = 0xD9;
constexpr std::uint8_t kSOS = 0xDA;
constexpr std::uint8_t kSOF0 = 0xC0;
constexpr std::uint8_t kDHT = 0xC4;
constexpr std::uint8_t kDQT = 0xDB;
constexpr std::uint8_t kDRI = 0xDD;
constexpr std::uint8_t kCOM = 0xFE;
constexpr std::uint8_t kRST0 = 0xD0;
constexpr std::uint8_t kDAC = 0xCC;

bool is_rst(std::uint8_t code) { return code >= 0xD0 && code <= 0xD7; }
bool is_app(std::uint8_t code) { return code >= 0xE0 && code <= 0xEF; }

// Non-baseline SOF markers (progressive, lossless, arithmetic, hierarchical).
bool is_unsupported_sof(std::uint8_t code) {
  return (code >= 0xC1 && code <= 0xCF) && code != kDHT && code != kSOF0 && code != 0xC8 &&
         code != kDAC;
}

std::uint16_t be16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

SegmentKind classify(std::uint8_t code) {
  if (code == kSOI) return SegmentKind::soi;
  if (code == kEOI) return SegmentKind::eoi;
  if (code == kSOS) return SegmentKind::sos;
  if (code == kSOF0) return SegmentKind::sof0;
  if (code == kDHT) return SegmentKind::dht;
  if (code == kDQT) return SegmentKind::dqt;
  if (code == kDRI) return SegmentKind::dri;
  if (code == kCOM) return SegmentKind::com;
  if (is_app(code)) return SegmentKind::app;
  if (is_rst(code)) return SegmentKind::rst;
  return SegmentKind::other;
}

// ----------------------------- header fields -----------------------------

struct FrameComponent {
  int id = 0;
  int h_samp = 0;
  int v_samp = 0;
  int quant_table = 0;
};

struct FrameHeader {
  int precision = 0;
  int width = 0;
  int height = 0;
  std::vector<FrameComponent> comps;
};

struct ScanComponent {
  int id = 0;
  int dc_table = 0;
  int ac_table = 0;
};

struct ScanHeader {
  std::vector<ScanComponent> comps;
};

// `seg` is the full segment including marker and length.
FrameHeader parse_sof0_fields(ByteSpan seg) {
  if (seg.size() < 10) throw MalformedStream("SOF0 too short");
  const std::uint8_t* p = seg.data() + 4;  // skip marker + length
  FrameHeader fh;
  fh.precision = p[0];
  fh.height = be16(p + 1);
  fh.width = be16(p + 3);
  const int ncomp = p[5];
  if (seg.size() < static_cast<std::size_t>(8 + 3 * ncomp))
    throw MalformedStream("SOF0 truncated component list");
  for (int i = 0; i < ncomp; ++i) {
    const std::uint8_t* c = p + 6 + 3 * i;
    FrameComponent fc;
    fc.id = c[0];
    fc.h_samp = c[1] >> 4;
    fc.v_samp = c[1] & 0x0F;
    fc.quant_table = c[2];
    fh.comps.push_back(fc);
  }
  return fh;
}

ScanHeader parse_sos_fields(ByteSpan seg) {
  if (seg.size() < 6) throw MalformedStream("SOS too short");
  const std::uint8_t* p = seg.data() + 4;
  ScanHeader sh;
  const int ns = p[0];
  if (seg.size() < static_cast<std::size_t>(8 + 2 * ns))
    throw MalformedStream("SOS truncated component list");
  for (int i = 0; i < ns; ++i) {
    const std::uint8_t* c = p + 1 + 2 * i;
    ScanComponent sc;
    sc.id = c[0];
    sc.dc_table = c[1] >> 4;
    sc.ac_table = c[1] & 0x0F;
    sh.comps.push_back(sc);
  }
  return sh;
}

bool is_420_rgb_layout(const FrameHeader& fh) {
  if (fh.precision != 8 || fh.comps.size() != 3) return false;
  return fh.comps[0].h_samp == 2 && fh.comps[0].v_samp == 2 &&
         fh.comps[1].h_samp == 1 && fh.comps[1].v_samp == 1 &&
         fh.comps[2].h_samp == 1 && fh.comps[2].v_samp == 1;
}

std::size_t mcus_for(int width, int height) {
  return static_cast<std::size_t>((width + 15) / 16) *
         static_cast<std::size_t>((height + 15) / 16);
}

int parse_dri_interval(ByteSpan dri) {
  if (dri.size() != 6 || dri[0] != kMarkerPrefix || dri[1] != kDRI)
    throw MalformedStream("bad DRI segment");
  return be16(dri.data() + 4);
}

// ----------------------------- IJG quality recovery -----------------------------

constexpr std::array<int, 64> kBaseLumaQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

int scaled_quant_entry(int base, int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - quality * 2;
  int v = (base * scale + 50) / 100;
  return std::clamp(v, 1, 255);
}

// First luma quant value of the first 8-bit DQT table, in zigzag order.
std::optional<int> first_luma_quant(const Bytes& dqt) {
  if (dqt.size() < 5 + 64 || dqt[4] != 0x00) return std::nullopt;
  return static_cast<int>(dqt[5]);
}

int recover_quality(const Bytes& dqt) {
  const auto q0 = first_luma_quant(dqt);
  if (!q0) return 0;
  for (int q = 100; q >= 1; --q)
    if (scaled_quant_entry(kBaseLumaQuant[0], q) == *q0) return q;
  return 0;  // custom tables
}

// ----------------------------- entropy validation -----------------------------

struct EntropyScan {
  // Byte ranges (begin, end) of complete restart segments, in order. A
  // segment is complete when closed by the correctly numbered RSTn, or by
  // EOI / end-of-data for the final one.
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  bool saw_eoi = false;
  std::size_t eoi_pos = 0;
  bool trailing_garbage = false;
  bool truncated_tail = false;  // data after the last complete segment
};

// Walks `data[from..)` as restart-delimited entropy data. Stops collecting at
// the first structural violation; everything before it is the valid prefix.
EntropyScan scan_entropy(ByteSpan data, std::size_t from) {
  EntropyScan out;
  std::size_t seg_start = from;
  std::size_t pos = from;
  std::size_t rst_index = 0;
  while (pos < data.size()) {
    if (data[pos] != kMarkerPrefix) {
      ++pos;
      continue;
    }
    if (pos + 1 >= data.size()) break;  // dangling 0xFF
    const std::uint8_t code = data[pos + 1];
    if (code == 0x00) {  // stuffed data byte
      pos += 2;
      continue;
    }
    if (is_rst(code)) {
      const bool number_ok = (code - kRST0) == static_cast<int>(rst_index % 8);
      if (!number_ok || pos == seg_start) break;  // wrong cycle or empty segment
      out.segments.emplace_back(seg_start, pos);
      ++rst_index;
      pos += 2;
      seg_start = pos;
      continue;
    }
    if (code == kEOI) {
      if (pos > seg_start) out.segments.emplace_back(seg_start, pos);
      out.saw_eoi = true;
      out.eoi_pos = pos;
      out.trailing_garbage = pos + 2 < data.size();
      return out;
    }
    break;  // unexpected marker
  }
  out.truncated_tail = seg_start < data.size();
  return out;
}

// ----------------------------- huffman + gray MCU -----------------------------

struct HuffCode {
  std::uint32_t code = 0;
  int length = 0;
};

// Canonical code for `symbol` in one DHT table body (BITS + HUFFVAL).
std::optional<HuffCode> huff_code_for(const std::uint8_t* bits, const std::uint8_t* vals,
                                      std::uint8_t symbol) {
  std::uint32_t code = 0;
  std::size_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < bits[len - 1]; ++i, ++k) {
      if (vals[k] == symbol) return HuffCode{code, len};
      ++code;
    }
    code <<= 1;
  }
  return std::nullopt;
}

struct HuffTables {
  // [class][id]: class 0 = DC (symbol 0x00 = zero-diff), 1 = AC (0x00 = EOB).
  std::optional<HuffCode> zero_symbol[2][4];
};

HuffTables parse_dht_tables(const Bytes& dht) {
  HuffTables out;
  std::size_t pos = 0;
  while (pos + 4 <= dht.size()) {
    if (dht[pos] != kMarkerPrefix || dht[pos + 1] != kDHT)
      throw MalformedStream("bad DHT blob");
    const std::size_t seg_end = pos + 2 + be16(dht.data() + pos + 2);
    if (seg_end > dht.size()) throw MalformedStream("truncated DHT");
    std::size_t p = pos + 4;
    while (p < seg_end) {
      if (p + 17 > seg_end) throw MalformedStream("truncated DHT table");
      const int table_class = dht[p] >> 4;
      const int table_id = dht[p] & 0x0F;
      const std::uint8_t* bits = dht.data() + p + 1;
      std::size_t nsyms = 0;
      for (int i = 0; i < 16; ++i) nsyms += bits[i];
      if (p + 17 + nsyms > seg_end) throw MalformedStream("truncated DHT symbols");
      if (table_class <= 1 && table_id <= 3)
        out.zero_symbol[table_class][table_id] =
            huff_code_for(bits, dht.data() + p + 17, 0x00);
      p += 17 + nsyms;
    }
    pos = seg_end;
  }
  return out;
}

class BitWriter {
 public:
  void put(std::uint32_t code, int length) {
    for (int i = length - 1; i >= 0; --i) put_bit((code >> i) & 1u);
  }
  // Pads the final partial byte with 1-bits, as scan data requires.
  Bytes finish() {
    while (nbits_ != 0) put_bit(1);
    return std::move(out_);
  }

 private:
  void put_bit(std::uint32_t b) {
    acc_ = static_cast<std::uint8_t>((acc_ << 1) | b);
    if (++nbits_ == 8) {
      out_.push_back(acc_);
      if (acc_ == 0xFF) out_.push_back(0x00);
      acc_ = 0;
      nbits_ = 0;
    }
  }
  Bytes out_;
  std::uint8_t acc_ = 0;
  int nbits_ = 0;
};

// Entropy bytes for `mcus` consecutive mid-gray MCUs (one restart segment).
// Gray pixels level-shift to zero, so every block is one zero-diff DC code
// plus an EOB; DC prediction stays at zero across the whole segment.
Bytes gray_segment_bytes(const FrameHeader& fh, const ScanHeader& sh,
                         const HuffTables& huff, std::size_t mcus) {
  BitWriter bw;
  for (std::size_t m = 0; m < mcus; ++m) {
    for (const auto& sc : sh.comps) {
      const auto fc =
          std::find_if(fh.comps.begin(), fh.comps.end(),
                       [&](const FrameComponent& c) { return c.id == sc.id; });
      if (fc == fh.comps.end()) throw UnrecoverableStream("scan component not in frame");
      const auto dc = huff.zero_symbol[0][sc.dc_table];
      const auto ac = huff.zero_symbol[1][sc.ac_table];
      if (!dc || !ac) throw UnrecoverableStream("huffman tables lack zero/EOB codes");
      const int blocks = fc->h_samp * fc->v_samp;
      for (int b = 0; b < blocks; ++b) {
        bw.put(dc->code, dc->length);
        bw.put(ac->code, ac->length);
      }
    }
  }
  return bw.finish();
}

void append_rst(Bytes& out, std::size_t index) {
  out.push_back(kMarkerPrefix);
  out.push_back(static_cast<std::uint8_t>(kRST0 + (index % 8)));
}

}  // namespace

// ----------------------------- parse_segments -----------------------------

const char* segment_kind_name(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::soi: return "SOI";
    case SegmentKind::app: return "APPn";
    case SegmentKind::com: return "COM";
    case SegmentKind::dqt: return "DQT";
    case SegmentKind::dht: return "DHT";
    case SegmentKind::sof0: return "SOF0";
    case SegmentKind::dri: return "DRI";
    case SegmentKind::sos: return "SOS";
    case SegmentKind::rst: return "RSTn";
    case SegmentKind::eoi: return "EOI";
    case SegmentKind::entropy: return "entropy";
    case SegmentKind::other: return "other";
  }
  return "?";
}

std::vector<Segment> parse_segments(ByteSpan file) {
  if (file.size() < 2 || file[0] != kMarkerPrefix || file[1] != kSOI)
    throw MalformedStream("missing SOI marker");

  std::vector<Segment> segments;
  segments.push_back({0xFFD8, 0, SegmentKind::soi, {0xFF, 0xD8}});

  std::size_t pos = 2;
  bool in_scan = false;
  bool done = false;
  while (pos < file.size()) {
    if (done) throw MalformedStream("data after EOI");
    if (in_scan) {
      // Entropy data runs until an unstuffed marker other than RSTn.
      const std::size_t start = pos;
      while (pos < file.size()) {
        if (file[pos] != kMarkerPrefix) {
          ++pos;
          continue;
        }
        if (pos + 1 >= file.size()) throw MalformedStream("truncated entropy data");
        if (file[pos + 1] == 0x00) {
          pos += 2;
          continue;
        }
        break;
      }
      if (pos >= file.size()) throw MalformedStream("entropy data without terminating marker");
      if (pos > start) {
        Segment seg;
        seg.marker = 0;
        seg.offset = start;
        seg.kind = SegmentKind::entropy;
        seg.bytes.assign(file.begin() + start, file.begin() + pos);
        segments.push_back(std::move(seg));
      }
      const std::uint8_t code = file[pos + 1];
      if (is_rst(code)) {
        segments.push_back({static_cast<std::uint16_t>(0xFF00 | code), pos, SegmentKind::rst,
                            {kMarkerPrefix, code}});
        pos += 2;
        continue;  // still in scan
      }
      in_scan = false;  // fall through to marker handling below
    }

    if (pos + 1 >= file.size() || file[pos] != kMarkerPrefix)
      throw MalformedStream("expected marker at offset " + std::to_string(pos));
    const std::uint8_t code = file[pos + 1];
    if (code == kEOI) {
      segments.push_back({0xFFD9, pos, SegmentKind::eoi, {kMarkerPrefix, kEOI}});
      pos += 2;
      done = true;
      continue;
    }
    if (code == kSOI || is_rst(code) || code == 0x01 || code == 0x00)
      throw MalformedStream("unexpected marker 0xFF" + hex_u64(code).substr(14) +
                            " at offset " + std::to_string(pos));
    if (pos + 4 > file.size()) throw MalformedStream("truncated marker segment");
    const std::size_t length = be16(file.data() + pos + 2);
    if (length < 2) throw MalformedStream("bad segment length");
    const std::size_t end = pos + 2 + length;
    if (end > file.size()) throw MalformedStream("segment payload exceeds file size");
    Segment seg;
    seg.marker = static_cast<std::uint16_t>(0xFF00 | code);
    seg.offset = pos;
    seg.kind = classify(code);
    seg.bytes.assign(file.begin() + pos, file.begin() + end);
    segments.push_back(std::move(seg));
    if (code == kSOS) in_scan = true;
    pos = end;
  }
  if (!done) throw MalformedStream("missing EOI marker");
  return segments;
}

// ----------------------------- canonicalize -----------------------------

std::size_t CanonicalStream::mcu_count() const { return mcus_for(width, height); }

Bytes TableSet::concatenated() const {
  Bytes out;
  for (const Bytes* part : {&app, &com, &dqt, &dht, &dri})
    out.insert(out.end(), part->begin(), part->end());
  return out;
}

std::pair<CanonicalStream, TableSet> canonicalize(ByteSpan file) {
  const auto segments = parse_segments(file);

  const Segment* sof0 = nullptr;
  const Segment* sos = nullptr;
  TableSet tables;
  for (const auto& seg : segments) {
    switch (seg.kind) {
      case SegmentKind::app: tables.app.insert(tables.app.end(), seg.bytes.begin(), seg.bytes.end()); break;
      case SegmentKind::com: tables.com.insert(tables.com.end(), seg.bytes.begin(), seg.bytes.end()); break;
      case SegmentKind::dqt: tables.dqt.insert(tables.dqt.end(), seg.bytes.begin(), seg.bytes.end()); break;
      case SegmentKind::dht: tables.dht.insert(tables.dht.end(), seg.bytes.begin(), seg.bytes.end()); break;
      case SegmentKind::dri: tables.dri.insert(tables.dri.end(), seg.bytes.begin(), seg.bytes.end()); break;
      case SegmentKind::sof0:
        if (sof0) throw UnsupportedStream("multiple frame headers");
        sof0 = &seg;
        break;
      case SegmentKind::sos:
        if (sos) throw UnsupportedStream("multi-scan streams not supported");
        sos = &seg;
        break;
      case SegmentKind::other: {
        const std::uint8_t code = seg.marker & 0xFF;
        if (is_unsupported_sof(code))
          throw UnsupportedStream("non-baseline frame (progressive or arithmetic)");
        if (code == kDAC) throw UnsupportedStream("arithmetic coding not supported");
        throw UnsupportedStream("unsupported marker in stream");
      }
      default: break;
    }
  }
  if (!sof0) throw UnsupportedStream("no baseline SOF0 frame header");
  const FrameHeader fh = parse_sof0_fields(sof0->bytes);
  if (!is_420_rgb_layout(fh))
    throw UnsupportedStream("only 8-bit 3-component 4:2:0 streams are supported");
  if (!sos) throw MalformedStream("no SOS scan header");
  if (tables.dri.empty()) throw UnsupportedStream("stream has no restart interval");
  const int interval = parse_dri_interval(tables.dri);
  if (interval < 1) throw UnsupportedStream("restart interval must be positive");

  CanonicalStream cs;
  cs.width = fh.width;
  cs.height = fh.height;
  cs.profile.quality = recover_quality(tables.dqt);
  cs.profile.restart_interval_mcus = interval;

  cs.bytes.reserve(file.size());
  auto append = [&cs](const Bytes& b) { cs.bytes.insert(cs.bytes.end(), b.begin(), b.end()); };
  for (const auto& seg : segments) {
    switch (seg.kind) {
      case SegmentKind::soi:
      case SegmentKind::sof0:
      case SegmentKind::sos:
        append(seg.bytes);
        if (seg.kind == SegmentKind::sos) cs.entropy_begin = cs.bytes.size();
        break;
      case SegmentKind::rst:
        cs.mcu_offsets.push_back(cs.bytes.size() - cs.entropy_begin);
        append(seg.bytes);
        break;
      case SegmentKind::entropy: append(seg.bytes); break;
      case SegmentKind::eoi:
        cs.entropy_end = cs.bytes.size();
        append(seg.bytes);
        break;
      default: break;  // stripped
    }
  }

  const std::size_t mcus = cs.mcu_count();
  const std::size_t expected_markers = (mcus + interval - 1) / interval - 1;
  if (cs.mcu_offsets.size() != expected_markers)
    throw MalformedStream("restart marker count " + std::to_string(cs.mcu_offsets.size()) +
                          " does not match MCU geometry (expected " +
                          std::to_string(expected_markers) + ")");

  tables.profile_hash = cs.profile.hash();
  return {std::move(cs), std::move(tables)};
}

// ----------------------------- prefix_at_ratio -----------------------------

std::size_t prefix_at_ratio(const CanonicalStream& stream, double r_prompt) {
  const double r = std::clamp(r_prompt, 0.0, 1.0);
  const std::size_t mcus = stream.mcu_count();
  const auto m = static_cast<std::size_t>(r * static_cast<double>(mcus));
  if (m == 0) return 0;
  if (m >= mcus) return stream.entropy_size();
  const auto interval = static_cast<std::size_t>(stream.profile.restart_interval_mcus);
  const std::size_t k = m / interval;  // closing markers fully covered
  if (k == 0) return 0;
  if (k > stream.mcu_offsets.size()) return stream.entropy_size();
  return stream.mcu_offsets[k - 1] + 2;
}

// ----------------------------- tables io -----------------------------

namespace {
constexpr std::uint64_t kTablesMagic = 0x434c4d54424c5331ull;  // "CLMTBLS1"
}

void save_tables(const std::string& path, const TableSet& tables) {
  Bytes out(16);
  const std::uint64_t magic = kTablesMagic;
  std::memcpy(out.data(), &magic, 8);
  std::memcpy(out.data() + 8, &tables.profile_hash, 8);
  const Bytes body = tables.concatenated();
  out.insert(out.end(), body.begin(), body.end());
  write_file(path, out);
}

TableSet load_tables(const std::string& path) {
  const Bytes raw = read_file(path);
  if (raw.size() < 16) throw MalformedStream("table sidecar too short");
  std::uint64_t magic = 0;
  std::memcpy(&magic, raw.data(), 8);
  if (magic != kTablesMagic) throw MalformedStream("bad table sidecar magic");
  TableSet tables;
  std::memcpy(&tables.profile_hash, raw.data() + 8, 8);

  std::size_t pos = 16;
  while (pos < raw.size()) {
    if (pos + 4 > raw.size() || raw[pos] != kMarkerPrefix)
      throw MalformedStream("bad segment in table sidecar");
    const std::uint8_t code = raw[pos + 1];
    const std::size_t end = pos + 2 + be16(raw.data() + pos + 2);
    if (end > raw.size()) throw MalformedStream("truncated segment in table sidecar");
    Bytes* dst = nullptr;
    switch (classify(code)) {
      case SegmentKind::app: dst = &tables.app; break;
      case SegmentKind::com: dst = &tables.com; break;
      case SegmentKind::dqt: dst = &tables.dqt; break;
      case SegmentKind::dht: dst = &tables.dht; break;
      case SegmentKind::dri: dst = &tables.dri; break;
      default: throw MalformedStream("unexpected segment kind in table sidecar");
    }
    dst->insert(dst->end(), raw.begin() + pos, raw.begin() + end);
    pos = end;
  }
  return tables;
}

// ----------------------------- restore -----------------------------

namespace {

struct GeneratedHeader {
  Bytes sof0;
  Bytes sos;
  FrameHeader frame;
  ScanHeader scan;
  std::size_t entropy_begin = 0;
};

// Parses the header of model-generated canonical bytes: SOI, SOF0, SOS,
// nothing else. Dimensions are the only free fields; everything structural
// must match the blessed 4:2:0 baseline layout or nothing downstream can
// decode.
GeneratedHeader parse_generated_header(ByteSpan raw) {
  if (raw.size() < 4 || raw[0] != kMarkerPrefix || raw[1] != kSOI)
    throw UnrecoverableStream("generated bytes lack SOI");
  std::size_t pos = 2;
  GeneratedHeader gh;
  bool have_sof = false;
  while (pos + 4 <= raw.size()) {
    if (raw[pos] != kMarkerPrefix) throw UnrecoverableStream("garbage between header segments");
    const std::uint8_t code = raw[pos + 1];
    const std::size_t length = be16(raw.data() + pos + 2);
    const std::size_t end = pos + 2 + length;
    if (length < 2 || end > raw.size()) throw UnrecoverableStream("truncated header segment");
    if (code == kSOF0) {
      if (have_sof) throw UnrecoverableStream("duplicate SOF0");
      gh.sof0.assign(raw.begin() + pos, raw.begin() + end);
      gh.frame = parse_sof0_fields(gh.sof0);
      have_sof = true;
    } else if (code == kSOS) {
      if (!have_sof) throw UnrecoverableStream("SOS before SOF0");
      gh.sos.assign(raw.begin() + pos, raw.begin() + end);
      gh.scan = parse_sos_fields(gh.sos);
      gh.entropy_begin = end;
      return gh;
    } else {
      throw UnrecoverableStream("unexpected segment in generated header");
    }
    pos = end;
  }
  throw UnrecoverableStream("generated bytes lack a scan header");
}

void check_generated_header(const GeneratedHeader& gh) {
  const FrameHeader& fh = gh.frame;
  if (!is_420_rgb_layout(fh)) throw UnrecoverableStream("generated frame is not 4:2:0");
  if (fh.width < 1 || fh.height < 1 || fh.width > 4096 || fh.height > 4096)
    throw UnrecoverableStream("generated dimensions out of range");
  if (gh.scan.comps.size() != 3) throw UnrecoverableStream("generated scan is not 3-component");
  for (std::size_t i = 0; i < 3; ++i)
    if (gh.scan.comps[i].id != fh.comps[i].id)
      throw UnrecoverableStream("scan/frame component mismatch");
}

}  // namespace

RestoreResult restore(ByteSpan raw_bytes, const TableSet& tables) {
  if (tables.dri.empty() || tables.dht.empty() || tables.dqt.empty())
    throw MalformedStream("table set is incomplete");
  const auto interval = static_cast<std::size_t>(parse_dri_interval(tables.dri));

  GeneratedHeader gh = parse_generated_header(raw_bytes);
  check_generated_header(gh);

  const std::size_t mcus = mcus_for(gh.frame.width, gh.frame.height);
  const std::size_t total_segments = (mcus + interval - 1) / interval;

  const EntropyScan scan = scan_entropy(raw_bytes, gh.entropy_begin);
  std::size_t usable = std::min(scan.segments.size(), total_segments);
  if (usable == 0) throw UnrecoverableStream("no decodable entropy prefix");

  const bool exact = scan.segments.size() == total_segments && scan.saw_eoi &&
                     !scan.trailing_garbage && !scan.truncated_tail &&
                     scan.eoi_pos == scan.segments.back().second;

  RestoreResult result;
  result.status = exact ? RestoreStatus::clean : RestoreStatus::salvaged;
  result.mcus_kept = std::min(usable * interval, mcus);
  result.mcus_filled = mcus - result.mcus_kept;

  Bytes entropy;
  for (std::size_t i = 0; i < usable; ++i) {
    if (i > 0) append_rst(entropy, i - 1);
    entropy.insert(entropy.end(), raw_bytes.begin() + scan.segments[i].first,
                   raw_bytes.begin() + scan.segments[i].second);
  }
  if (usable < total_segments) {
    const HuffTables huff = parse_dht_tables(tables.dht);
    for (std::size_t i = usable; i < total_segments; ++i) {
      const std::size_t mcus_here = std::min(interval, mcus - i * interval);
      append_rst(entropy, i - 1);
      const Bytes gray = gray_segment_bytes(gh.frame, gh.scan, huff, mcus_here);
      entropy.insert(entropy.end(), gray.begin(), gray.end());
    }
  }

  Bytes& out = result.file;
  out.reserve(raw_bytes.size() + tables.concatenated().size() + 64);
  out.push_back(kMarkerPrefix);
  out.push_back(kSOI);
  for (const Bytes* part : {&tables.app, &tables.com, &tables.dqt})
    out.insert(out.end(), part->begin(), part->end());
  out.insert(out.end(), gh.sof0.begin(), gh.sof0.end());
  for (const Bytes* part : {&tables.dht, &tables.dri})
    out.insert(out.end(), part->begin(), part->end());
  out.insert(out.end(), gh.sos.begin(), gh.sos.end());
  out.insert(out.end(), entropy.begin(), entropy.end());
  out.push_back(kMarkerPrefix);
  out.push_back(kEOI);
  return result;
}

RestoreResult restore(const CanonicalStream& stream, const TableSet& tables) {
  return restore(ByteSpan(stream.bytes), tables);
}

// ----------------------------- inspect -----------------------------

std::string describe_stream(ByteSpan file) {
  const auto segments = parse_segments(file);
  std::ostringstream os;
  os << "offset     marker  kind      size\n";
  std::size_t rst_count = 0;
  std::size_t entropy_bytes = 0;
  const Segment* sof0 = nullptr;
  const Segment* dri = nullptr;
  for (const auto& seg : segments) {
    char line[80];
    if (seg.kind == SegmentKind::entropy) {
      std::snprintf(line, sizeof(line), "%08zx   ....    %-8s  %zu\n", seg.offset,
                    segment_kind_name(seg.kind), seg.bytes.size());
      entropy_bytes += seg.bytes.size();
    } else {
      std::snprintf(line, sizeof(line), "%08zx   0x%04x  %-8s  %zu\n", seg.offset, seg.marker,
                    segment_kind_name(seg.kind), seg.bytes.size());
    }
    os << line;
    if (seg.kind == SegmentKind::rst) ++rst_count;
    if (seg.kind == SegmentKind::sof0) sof0 = &seg;
    if (seg.kind == SegmentKind::dri) dri = &seg;
  }
  os << "total bytes: " << file.size() << "\n";
  os << "entropy bytes: " << entropy_bytes << "\n";
  os << "restart markers: " << rst_count << "\n";
  if (sof0) {
    const FrameHeader fh = parse_sof0_fields(sof0->bytes);
    os << "frame: " << fh.width << "x" << fh.height << ", " << fh.comps.size()
       << " components\n";
    os << "mcu count: " << mcus_for(fh.width, fh.height) << "\n";
  }
  if (dri) os << "restart interval: " << parse_dri_interval(dri->bytes) << " MCUs\n";
  return os.str();
}

}  // namespace codeclm
