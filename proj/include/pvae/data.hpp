#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pvae/numkit.hpp"

namespace pvae {

struct DatasetMeta {
  std::string source;
  int patch_size = 0;  // 0 for full images
  std::string preprocessing;
  std::uint64_t checksum = 0;  // FNV-1a of the cache payload

  bool operator==(const DatasetMeta&) const = default;
};

struct DatasetSplit {
  Matrix samples;  // N x M
  std::optional<IntVector> labels;
  DatasetMeta meta;

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index dim() const { return samples.cols(); }
  /// Throws DataError on non-finite samples or a label count mismatch.
  void validate() const;
  /// First `n` samples (or all when n exceeds the size).
  DatasetSplit head(Eigen::Index n) const;
};

/// IDX pair (images magic 0x00000803, labels 0x00000801). Pixels scaled to [0, 1].
DatasetSplit load_mnist_idx(const std::string& images_path, const std::string& labels_path);

/// Binary (P5) or ASCII (P2) graymap scaled to [0, 1]; rows x cols.
Matrix read_pgm(const std::string& path);
/// 8-bit P5 output; values are clamped to [0, 255] after rounding.
void write_pgm(const std::string& path, const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic,
                                                            Eigen::RowMajor>& pixels);

/// Every *.pgm file in `dir`, sorted by file name.
std::vector<Matrix> load_image_directory(const std::string& dir);

struct WhiteningTransform {
  Vector mean;         // M
  Matrix whitening;    // symmetric M x M
  Matrix unwhitening;  // inverse of `whitening`
  double epsilon = 0.0;
  std::string contrast;  // contrast-normalization descriptor

  Matrix apply(const Matrix& centered_patches) const;
  Matrix invert(const Matrix& whitened) const;
  std::string descriptor() const;
};

struct PatchOptions {
  int patch_size = 16;
  Eigen::Index count = 10000;
  double contrast_floor = 1e-2;  // minimum per-patch standard deviation
  double epsilon_scale = 5e-3;   // whitening regularizer relative to the mean eigenvalue
};

struct PatchExtraction {
  DatasetSplit split;
  WhiteningTransform transform;
  Eigen::Index dropped = 0;  // constant patches rejected
  double condition_number = 0.0;  // of the regularized covariance
};

/// Random crops, per-patch mean removal and contrast normalization.
/// Constant patches are dropped and redrawn; the total attempts are bounded.
Matrix sample_normalized_patches(const std::vector<Matrix>& images, const PatchOptions& opts, RngStream& rng,
                                 Eigen::Index* dropped);

/// Fits a zero-phase whitening transform on the extracted patches, or reuses
/// `fitted` (validation data must use the training transform).
PatchExtraction extract_whitened_patches(const std::vector<Matrix>& images, const PatchOptions& opts, RngStream& rng,
                                         const WhiteningTransform* fitted = nullptr);

WhiteningTransform fit_whitening(const Matrix& patches, double epsilon_scale, std::string contrast);

/// PVLB cache:
///   "PVLB" | u16 version | u16 flags (bit 0: labels) | u64 N | u64 M |
///   u64 patch size | u64 metadata length | metadata JSON | N*M f32 |
///   N i32 labels (when flagged) | u64 FNV-1a of the f32 and label bytes.
void export_patch_archive(const std::string& path, const DatasetSplit& split);
std::string serialize_patch_archive(const DatasetSplit& split);
DatasetSplit import_patch_archive(const std::string& path);
DatasetSplit parse_patch_archive(std::string_view bytes, const std::string& source);

struct SyntheticSparse {
  DatasetSplit split;
  Matrix dictionary;  // M x K_true, unit columns
  Matrix codes;       // N x K_true
};

/// x = phi z + noise, with `k_active` distinct atoms per sample carrying
/// Exponential(1) coefficients.
SyntheticSparse synth_sparse_dataset(Eigen::Index input_dim, Eigen::Index atoms, Eigen::Index k_active,
                                     Eigen::Index n, double noise_sigma, RngStream& rng);

}  // namespace pvae
