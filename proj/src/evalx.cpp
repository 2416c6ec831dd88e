#include "codeclm/evalx.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace codeclm {

const char* const kFeatureExtractorId = "lum8x8.hist64x3.dctband15.v1";

// ----------------------------- features -----------------------------

namespace {

// Orthonormal 2D DCT-II of one 8x8 block.
void dct8x8(const double in[64], double out[64]) {
  static const double* basis = [] {
    static double b[8 * 8];
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        b[u * 8 + x] = std::cos((2 * x + 1) * u * M_PI / 16.0) *
                       (u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0));
    return b;
  }();
  double tmp[64];
  for (int u = 0; u < 8; ++u)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += basis[u * 8 + y] * in[x * 8 + y];
      tmp[x * 8 + u] = acc;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += basis[v * 8 + x] * tmp[x * 8 + u];
      out[v * 8 + u] = acc;
    }
}

}  // namespace

Eigen::VectorXd extract_features(const Image& image) {
  if (image.width < 8 || image.height < 8)
    throw DimensionError("feature extraction needs at least 8x8 pixels");
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kFeatureDim);

  std::vector<double> luma(static_cast<std::size_t>(image.width) * image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.pixel(x, y);
      luma[static_cast<std::size_t>(y) * image.width + x] =
          (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
    }

  // 8x8 box-downsampled luminance.
  for (int cy = 0; cy < 8; ++cy)
    for (int cx = 0; cx < 8; ++cx) {
      const int x0 = cx * image.width / 8, x1 = (cx + 1) * image.width / 8;
      const int y0 = cy * image.height / 8, y1 = (cy + 1) * image.height / 8;
      double acc = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) acc += luma[static_cast<std::size_t>(y) * image.width + x];
      f(cy * 8 + cx) = acc / ((x1 - x0) * (y1 - y0));
    }

  // 64-bin per-channel histograms.
  const double inv_pixels = 1.0 / (static_cast<double>(image.width) * image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.pixel(x, y);
      for (int c = 0; c < 3; ++c) f(64 + c * 64 + p[c] / 4) += inv_pixels;
    }

  // Mean |DCT coefficient| per u+v band over all full 8x8 luminance blocks.
  const int bx = image.width / 8, by = image.height / 8;
  double band_acc[15] = {0};
  int band_count[15] = {0};
  double block[64], coef[64];
  for (int cy = 0; cy < by; ++cy)
    for (int cx = 0; cx < bx; ++cx) {
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          block[x * 8 + y] = luma[static_cast<std::size_t>(cy * 8 + y) * image.width + cx * 8 + x];
      dct8x8(block, coef);
      for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) {
          band_acc[u + v] += std::abs(coef[v * 8 + u]);
          band_count[u + v] += 1;
        }
    }
  for (int band = 0; band < 15; ++band)
    f(64 + 192 + band) = band_count[band] ? band_acc[band] / band_count[band] : 0.0;

  return f;
}

FeatureStats feature_stats(const Eigen::MatrixXd& rows, const std::string& extractor_id) {
  if (rows.rows() < 2) throw DimensionError("need at least two samples for covariance");
  FeatureStats stats;
  stats.extractor_id = extractor_id;
  stats.n = rows.rows();
  stats.mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - stats.mean.transpose();
  stats.cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  stats.cov = ((stats.cov + stats.cov.transpose()) / 2.0).eval();
  return stats;
}

FeatureStats stats_from_images(const std::vector<Image>& images) {
  if (images.empty()) throw EmptyCorpus("no images for feature statistics");
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(images.size()), kFeatureDim);
  for (std::size_t i = 0; i < images.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = extract_features(images[i]).transpose();
  return feature_stats(rows, kFeatureExtractorId);
}

Eigen::MatrixXd matrix_sqrt_spd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("matrix square root needs a square matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  Eigen::VectorXd eig = solver.eigenvalues().cwiseMax(0.0);
  return solver.eigenvectors() * eig.cwiseSqrt().asDiagonal() *
         solver.eigenvectors().transpose();
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.extractor_id != b.extractor_id)
    throw DimensionMismatch("feature extractor mismatch: " + a.extractor_id + " vs " +
                            b.extractor_id);
  if (a.mean.size() != b.mean.size())
    throw DimensionMismatch("feature dimension mismatch");
  const auto dim = a.mean.size();
  if (a.n <= dim || b.n <= dim)
    throw DimensionMismatch("need more than dim samples per side for a usable covariance");

  const double mean_term = (a.mean - b.mean).squaredNorm();
  // Tr((S1 S2)^1/2) computed via the symmetric form S1^1/2 S2 S1^1/2.
  const Eigen::MatrixXd sqrt_a = matrix_sqrt_spd(a.cov);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sqrt_a * b.cov * sqrt_a);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const double tr_sqrt = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

// ----------------------------- embeddings io -----------------------------

void save_embeddings(const std::string& path, const Eigen::MatrixXd& rows,
                     const std::string& extractor_id) {
  std::ostringstream header;
  header << "codeclm-embeddings v1\n"
         << "n " << rows.rows() << "\n"
         << "dim " << rows.cols() << "\n"
         << "extractor " << extractor_id << "\n";
  Bytes out(header.str().begin(), header.str().end());
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      const auto v = static_cast<float>(rows(i, j));
      const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
      out.insert(out.end(), p, p + sizeof(float));
    }
  write_file(path, out);
}

Eigen::MatrixXd load_embeddings(const std::string& path, std::string* extractor_id) {
  const Bytes raw = read_file(path);
  // Header is the first four text lines; binary rows follow immediately.
  std::size_t pos = 0;
  auto next_line = [&raw, &pos]() {
    std::string line;
    while (pos < raw.size() && raw[pos] != '\n') line.push_back(static_cast<char>(raw[pos++]));
    if (pos < raw.size()) ++pos;
    return line;
  };
  if (next_line() != "codeclm-embeddings v1") throw MalformedStream("bad embeddings header");
  long n = 0, dim = 0;
  std::string key, extractor;
  {
    std::istringstream ls(next_line());
    if (!(ls >> key >> n) || key != "n") throw MalformedStream("bad embeddings n");
  }
  {
    std::istringstream ls(next_line());
    if (!(ls >> key >> dim) || key != "dim") throw MalformedStream("bad embeddings dim");
  }
  {
    std::istringstream ls(next_line());
    if (!(ls >> key >> extractor) || key != "extractor")
      throw MalformedStream("bad embeddings extractor");
  }
  if (n < 1 || dim < 1 || pos + static_cast<std::size_t>(n) * dim * sizeof(float) > raw.size())
    throw MalformedStream("embeddings file truncated");
  Eigen::MatrixXd rows(n, dim);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < dim; ++j) {
      float v;
      std::memcpy(&v, raw.data() + pos, sizeof(float));
      pos += sizeof(float);
      rows(i, j) = v;
    }
  if (extractor_id) *extractor_id = extractor;
  return rows;
}

// ----------------------------- model metrics -----------------------------

double bits_per_byte(const Params<float>& params, const TokenStore& heldout,
                     const BpeVocab& vocab, int batch_rows) {
  if (heldout.vocab_hash != vocab.hash())
    throw VocabMismatch("held-out store was built with a different vocabulary");
  if (heldout.vocab_size != static_cast<std::uint32_t>(params.config.vocab_size))
    throw VocabMismatch("held-out store vocab size does not match the model");
  const std::size_t chunks = heldout.chunk_count();
  if (chunks == 0) throw EmptyCorpus("held-out store has no full chunks");

  const int T = static_cast<int>(heldout.context_len);
  double total_nats = 0.0;
  std::uint64_t total_bytes = 0;
  for (std::size_t begin = 0; begin < chunks; begin += static_cast<std::size_t>(batch_rows)) {
    const std::size_t end = std::min(chunks, begin + static_cast<std::size_t>(batch_rows));
    const int rows = static_cast<int>(end - begin);
    std::span<const TokenId> tokens(heldout.tokens.data() + begin * heldout.context_len,
                                    static_cast<std::size_t>(rows) * heldout.context_len);
    const std::vector<double> nats = token_cross_entropy(params, tokens, rows, T);
    for (double n : nats) total_nats += n;
    for (int b = 0; b < rows; ++b)
      for (int t = 1; t < T; ++t)
        total_bytes += vocab.expansion(tokens[static_cast<std::size_t>(b) * T + t]).size();
  }
  if (total_bytes == 0) throw EmptyCorpus("held-out targets expand to zero bytes");
  return total_nats / std::log(2.0) / static_cast<double>(total_bytes);
}

DecodeRateReport decode_success_rate(const Params<float>& params, const SampleConfig& cfg,
                                     int n_samples, const BpeVocab& vocab,
                                     const TableSet& tables) {
  if (n_samples < 1) throw ConfigError("n_samples must be positive");
  DecodeRateReport report;
  TokenSequence bos;
  bos.ids.push_back(BpeVocab::bos_id);
  for (int i = 0; i < n_samples; ++i) {
    SampleConfig per_sample = cfg;
    per_sample.seed = splitmix64(cfg.seed + static_cast<std::uint64_t>(i));
    const TokenSequence gen = generate(params, bos, per_sample);
    const Bytes bytes = bpe_decode(gen, vocab);
    try {
      const RestoreResult restored = restore(ByteSpan(bytes), tables);
      int warnings = 0;
      decode_jpeg(restored.file, &warnings);
      if (restored.status == RestoreStatus::clean && warnings == 0) {
        report.clean += 1;
      } else {
        report.salvaged += 1;
      }
    } catch (const UnrecoverableStream&) {
      report.unrecoverable += 1;
    } catch (const MalformedStream&) {
      report.unrecoverable += 1;
    }
  }
  return report;
}

}  // namespace codeclm
