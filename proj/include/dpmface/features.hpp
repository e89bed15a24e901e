#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpmface/image.hpp"
#include "dpmface/imgproc.hpp"

namespace dpmface {

enum class Modality { source, target, mapped_source };

const char* to_string(Modality m);
Modality modality_from_string(const std::string& s);

namespace features {

inline constexpr int kCellsPerSide = 4;
inline constexpr int kOrientationBins = 8;
inline constexpr int kDescriptorDims = kCellsPerSide * kCellsPerSide * kOrientationBins;  // 128
inline constexpr int kPositionDims = 2;
inline constexpr double kClipThreshold = 0.2;

struct BlockCenter {
  double cx = 0.0;  ///< pixels from the image center, +x to the right
  double cy = 0.0;  ///< pixels from the image center, +y downward
};

/// Square blocks laid out row-major from the top-left corner.
struct BlockGrid {
  int width = 0;
  int height = 0;
  int block = 0;
  int stride = 0;
  int cols = 0;
  int rows = 0;
  std::vector<BlockCenter> positions;

  std::size_t size() const { return positions.size(); }
  int origin_x(std::size_t i) const { return static_cast<int>(i % cols) * stride; }
  int origin_y(std::size_t i) const { return static_cast<int>(i / cols) * stride; }
};

BlockGrid make_grid(int width, int height, int block, int stride);

struct RawDescriptor {
  Eigen::VectorXd values;  ///< kDescriptorDims entries
  BlockCenter center;
  int scale_index = 0;
};

/// Gradient-orientation histogram of one block of an already smoothed image.
Eigen::VectorXd block_descriptor(const GrayImage& smoothed, int x0, int y0, int block);

/// One descriptor per (scale, block): every scale-0 block row-major, then
/// every scale-1 block, and so on.
std::vector<RawDescriptor> extract_dense(const GrayImage& img, const BlockGrid& grid,
                                         const std::vector<double>& scales);

class PcaModel {
 public:
  PcaModel() = default;
  PcaModel(Eigen::VectorXd mean, Eigen::MatrixXd basis, Eigen::VectorXd explained_variance);

  const Eigen::VectorXd& mean() const { return mean_; }
  /// out_dims x input_dims, orthonormal rows.
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Eigen::VectorXd& explained_variance() const { return explained_variance_; }
  int input_dims() const { return static_cast<int>(basis_.cols()); }
  int output_dims() const { return static_cast<int>(basis_.rows()); }

  Eigen::VectorXd project(const Eigen::VectorXd& v) const;
  Eigen::VectorXd reconstruct(const Eigen::VectorXd& coeffs) const;

  std::vector<unsigned char> serialize() const;
  static PcaModel deserialize(std::vector<unsigned char> bytes);
  void save(const std::filesystem::path& path) const;
  static PcaModel load(const std::filesystem::path& path);

  /// Content hash of the serialized model.
  std::string id() const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd explained_variance_;
};

/// Covariance eigendecomposition of row samples. Each basis vector is signed
/// so its largest-magnitude component is positive.
PcaModel pca_fit(const Eigen::MatrixXd& samples, int out_dims);

struct EmbeddedDescriptor {
  Eigen::VectorXd values;  ///< PCA coefficients then (cx_norm, cy_norm)
  BlockCenter center;
};

EmbeddedDescriptor embed(const RawDescriptor& desc, const PcaModel& pca, int width, int height);

/// Per-image descriptor matrix, one row per block in canonical order.
struct DescriptorSet {
  std::string image_id;
  std::int64_t subject_id = 0;
  Modality modality = Modality::source;
  int width = 0;
  int height = 0;
  Eigen::MatrixXd values;
  std::vector<BlockCenter> centers;

  Eigen::Index count() const { return values.rows(); }
  Eigen::Index dims() const { return values.cols(); }

  void save(const std::filesystem::path& path) const;
  static DescriptorSet load(const std::filesystem::path& path);
};

struct FeatureConfig {
  imgproc::PreprocessConfig preprocess;
  int block = 20;
  int stride = 8;
  std::vector<double> scales{0.6, 1.0};
  int pca_dims = 64;
};

/// Preprocess and extract raw descriptors for one image.
std::vector<RawDescriptor> raw_descriptors(const GrayImage& img, const FeatureConfig& config);

/// Stack raw descriptor values as rows.
Eigen::MatrixXd stack_values(const std::vector<RawDescriptor>& descs);

DescriptorSet embed_all(const std::vector<RawDescriptor>& descs, const PcaModel& pca, int width,
                        int height, std::string image_id, std::int64_t subject_id,
                        Modality modality);

}  // namespace features
}  // namespace dpmface
