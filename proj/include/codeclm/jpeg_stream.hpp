#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "codeclm/common.hpp"
#include "codeclm/image.hpp"

namespace codeclm {

// ----------------------------- profile -----------------------------

/// Fixed encoding parameters that define the canonical byte form of an image.
/// Chroma subsampling is always 4:2:0 and the scan is baseline sequential;
/// only quality and the restart interval vary.
struct CodecProfile {
  int quality = 25;               // 1..100, libjpeg quality scaling
  int restart_interval_mcus = 1;  // restart marker after every N MCUs
  bool pad_to_mcu = false;        // center-pad with edge replication instead of rejecting

  void validate() const;
  /// Hash over the byte-form-relevant fields (padding policy excluded).
  std::uint64_t hash() const;
  std::string describe() const;
};

// ----------------------------- segments -----------------------------

enum class SegmentKind {
  soi,
  app,
  com,
  dqt,
  dht,
  sof0,
  dri,
  sos,
  rst,
  eoi,
  entropy,
  other,
};

const char* segment_kind_name(SegmentKind kind);

/// One marker segment (or one run of entropy-coded data) of a JPEG file.
/// `bytes` includes the marker itself; concatenating all segments in file
/// order reproduces the input byte-for-byte.
struct Segment {
  std::uint16_t marker = 0;  // 0xFFxx, 0 for entropy data
  std::size_t offset = 0;    // position in the source file
  SegmentKind kind = SegmentKind::other;
  Bytes bytes;
};

std::vector<Segment> parse_segments(ByteSpan file);

// ----------------------------- canonical form -----------------------------

/// A JPEG stream with every per-corpus-redundant segment removed:
/// SOI + SOF0 + SOS + entropy data (with restart markers) + EOI.
struct CanonicalStream {
  Bytes bytes;
  /// Positions of each RSTn marker, ascending, relative to entropy_begin.
  std::vector<std::size_t> mcu_offsets;
  int width = 0;
  int height = 0;
  std::size_t entropy_begin = 0;  // first entropy byte, within `bytes`
  std::size_t entropy_end = 0;    // position of the EOI marker, within `bytes`
  CodecProfile profile;

  std::size_t mcu_count() const;
  std::size_t entropy_size() const { return entropy_end - entropy_begin; }
};

/// The segments stripped by canonicalize, grouped by kind in file order.
/// One TableSet per CodecProfile serves every image under that profile.
struct TableSet {
  Bytes app;  // JFIF APP0 header bytes
  Bytes com;
  Bytes dqt;
  Bytes dht;
  Bytes dri;
  std::uint64_t profile_hash = 0;

  /// Exact concatenation of the removed segment bytes, reinsertion order.
  Bytes concatenated() const;
};

void save_tables(const std::string& path, const TableSet& tables);
TableSet load_tables(const std::string& path);

// ----------------------------- codec (libjpeg-backed) -----------------------------

/// Deterministic baseline-sequential JPEG encoding of an RGB buffer.
/// Dimensions must be positive multiples of 16 unless profile.pad_to_mcu.
Bytes encode_image(const Image& pixels, const CodecProfile& profile);

/// Reference decode. Throws MalformedStream on any decoder error; if
/// `warnings` is given it receives the decoder's corrupt-data warning count.
Image decode_jpeg(ByteSpan file, int* warnings = nullptr);

// ----------------------------- operations -----------------------------

std::pair<CanonicalStream, TableSet> canonicalize(ByteSpan file);

enum class RestoreStatus { clean, salvaged };

struct RestoreResult {
  Bytes file;
  RestoreStatus status = RestoreStatus::clean;
  std::size_t mcus_kept = 0;
  std::size_t mcus_filled = 0;
};

/// Reassembles a standards-compliant file from a canonical stream (or raw
/// model-generated bytes in the same shape) and the stripped tables. Applies
/// the salvage policy to malformed entropy data: keep the longest prefix of
/// well-formed restart-delimited MCU segments, fill the rest with mid-gray,
/// terminate with EOI. Throws UnrecoverableStream when no decodable prefix
/// exists.
RestoreResult restore(const CanonicalStream& stream, const TableSet& tables);
RestoreResult restore(ByteSpan raw_bytes, const TableSet& tables);

/// Byte offset (relative to the start of entropy data) just after the restart
/// marker closing MCU number floor(r_prompt * mcu_count). 0 below the first
/// MCU; the full entropy length at r_prompt = 1. r_prompt is clamped to [0,1].
std::size_t prefix_at_ratio(const CanonicalStream& stream, double r_prompt);

/// Human-readable segment table plus MCU map, used by the `inspect` command.
std::string describe_stream(ByteSpan file);

}  // namespace codeclm
