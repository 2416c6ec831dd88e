#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "codeclm/corpus.hpp"
#include "codeclm/image.hpp"
#include "codeclm/lm_core.hpp"
#include "codeclm/sample.hpp"

namespace codeclm {

// ----------------------------- features -----------------------------

/// Deterministic, dependency-free image embedding: 8x8 box-downsampled
/// luminance (64), 64-bin per-channel color histograms (192), and mean
/// absolute 8x8 DCT coefficient per u+v frequency band (15).
inline constexpr int kFeatureDim = 271;
extern const char* const kFeatureExtractorId;

Eigen::VectorXd extract_features(const Image& image);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased, symmetrized
  std::string extractor_id;
  std::int64_t n = 0;
};

/// Row-per-sample embedding matrix -> mean and unbiased covariance.
FeatureStats feature_stats(const Eigen::MatrixXd& rows, const std::string& extractor_id);
FeatureStats stats_from_images(const std::vector<Image>& images);

/// Principal square root of a symmetric positive semi-definite matrix.
Eigen::MatrixXd matrix_sqrt_spd(const Eigen::MatrixXd& m);

/// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^1/2). Requires matching extractors
/// and n > dim samples on both sides.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

void save_embeddings(const std::string& path, const Eigen::MatrixXd& rows,
                     const std::string& extractor_id);
Eigen::MatrixXd load_embeddings(const std::string& path, std::string* extractor_id = nullptr);

// ----------------------------- model metrics -----------------------------

/// Held-out cross-entropy converted to bits per canonical byte: total nats
/// over all chunk target positions divided by the byte expansion length of
/// those targets (specials expand to zero bytes).
double bits_per_byte(const Params<float>& params, const TokenStore& heldout,
                     const BpeVocab& vocab, int batch_rows = 4);

struct DecodeRateReport {
  int clean = 0;
  int salvaged = 0;
  int unrecoverable = 0;

  int total() const { return clean + salvaged + unrecoverable; }
  double clean_rate() const { return total() == 0 ? 0.0 : static_cast<double>(clean) / total(); }
};

/// Unconditional generation decode health over n seeded samples. clean means
/// the restored file needed no salvage and decodes without warnings.
DecodeRateReport decode_success_rate(const Params<float>& params, const SampleConfig& cfg,
                                     int n_samples, const BpeVocab& vocab,
                                     const TableSet& tables);

}  // namespace codeclm
