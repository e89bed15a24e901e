#include "dpmface/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dpmface/container.hpp"
#include "dpmface/error.hpp"

namespace dpmface {

const char* to_string(Modality m) {
  switch (m) {
    case Modality::source:
      return "source";
    case Modality::target:
      return "target";
    case Modality::mapped_source:
      return "mapped-source";
  }
  return "?";
}

Modality modality_from_string(const std::string& s) {
  if (s == "source" || s == "visible") return Modality::source;
  if (s == "target" || s == "thermal") return Modality::target;
  if (s == "mapped-source") return Modality::mapped_source;
  throw InvalidInput("unknown modality '" + s + "'");
}

namespace features {

BlockGrid make_grid(int width, int height, int block, int stride) {
  if (block < kCellsPerSide || stride < 1) {
    throw InvalidParameter("block must be >= 4 pixels and stride >= 1");
  }
  if (block > width || block > height) {
    throw InvalidParameter("block size exceeds image dimensions");
  }
  BlockGrid grid;
  grid.width = width;
  grid.height = height;
  grid.block = block;
  grid.stride = stride;
  grid.cols = (width - block) / stride + 1;
  grid.rows = (height - block) / stride + 1;
  const double center_x = (width - 1) / 2.0;
  const double center_y = (height - 1) / 2.0;
  const double half_block = (block - 1) / 2.0;
  grid.positions.reserve(static_cast<std::size_t>(grid.cols) * grid.rows);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      grid.positions.push_back({c * stride + half_block - center_x, r * stride + half_block - center_y});
    }
  }
  return grid;
}

Eigen::VectorXd block_descriptor(const GrayImage& smoothed, int x0, int y0, int block) {
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(kDescriptorDims);
  const double cell = static_cast<double>(block) / kCellsPerSide;
  constexpr double kBinsPerRadian = kOrientationBins / (2.0 * std::numbers::pi);

  for (int py = 0; py < block; ++py) {
    const int y = y0 + py;
    // Continuous cell coordinate with cell centers at integers.
    const double fy = (py + 0.5) / cell - 0.5;
    const int cy0 = static_cast<int>(std::floor(fy));
    const double wy1 = fy - cy0;
    for (int px = 0; px < block; ++px) {
      const int x = x0 + px;
      const double gx = 0.5 * (smoothed.clamped(x + 1, y) - smoothed.clamped(x - 1, y));
      const double gy = 0.5 * (smoothed.clamped(x, y + 1) - smoothed.clamped(x, y - 1));
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;

      double theta = std::atan2(gy, gx);
      if (theta < 0.0) theta += 2.0 * std::numbers::pi;
      const double fo = theta * kBinsPerRadian;
      int o0 = static_cast<int>(std::floor(fo));
      const double wo1 = fo - o0;
      o0 %= kOrientationBins;
      const int o1 = (o0 + 1) % kOrientationBins;

      const double fx = (px + 0.5) / cell - 0.5;
      const int cx0 = static_cast<int>(std::floor(fx));
      const double wx1 = fx - cx0;

      for (int dy = 0; dy < 2; ++dy) {
        const int cy = cy0 + dy;
        if (cy < 0 || cy >= kCellsPerSide) continue;
        const double wy = dy ? wy1 : 1.0 - wy1;
        for (int dx = 0; dx < 2; ++dx) {
          const int cx = cx0 + dx;
          if (cx < 0 || cx >= kCellsPerSide) continue;
          const double w = mag * wy * (dx ? wx1 : 1.0 - wx1);
          const int base = (cy * kCellsPerSide + cx) * kOrientationBins;
          hist[base + o0] += w * (1.0 - wo1);
          hist[base + o1] += w * wo1;
        }
      }
    }
  }

  const double norm = hist.norm();
  if (norm <= 1e-12) return Eigen::VectorXd::Zero(kDescriptorDims);
  hist /= norm;
  hist = hist.cwiseMin(kClipThreshold);
  const double clipped_norm = hist.norm();
  if (clipped_norm > 0.0) hist /= clipped_norm;
  return hist;
}

std::vector<RawDescriptor> extract_dense(const GrayImage& img, const BlockGrid& grid,
                                         const std::vector<double>& scales) {
  if (scales.empty()) throw InvalidParameter("at least one smoothing scale is required");
  if (img.width() != grid.width || img.height() != grid.height) {
    throw InvalidInput("grid was built for different image dimensions");
  }
  std::vector<RawDescriptor> out;
  out.reserve(scales.size() * grid.size());
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const GrayImage smoothed = imgproc::gaussian_smooth(img, scales[s]);
    for (std::size_t b = 0; b < grid.size(); ++b) {
      out.push_back({block_descriptor(smoothed, grid.origin_x(b), grid.origin_y(b), grid.block),
                     grid.positions[b], static_cast<int>(s)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

namespace {
constexpr std::uint32_t kPcaVersion = 1;
}

PcaModel::PcaModel(Eigen::VectorXd mean, Eigen::MatrixXd basis, Eigen::VectorXd explained_variance)
    : mean_(std::move(mean)), basis_(std::move(basis)), explained_variance_(std::move(explained_variance)) {
  if (basis_.cols() != mean_.size() || basis_.rows() != explained_variance_.size()) {
    throw InvalidInput("inconsistent PCA model shapes");
  }
}

Eigen::VectorXd PcaModel::project(const Eigen::VectorXd& v) const {
  if (v.size() != mean_.size()) throw InvalidInput("PCA input dimension mismatch");
  return basis_ * (v - mean_);
}

Eigen::VectorXd PcaModel::reconstruct(const Eigen::VectorXd& coeffs) const {
  return mean_ + basis_.transpose() * coeffs;
}

std::vector<unsigned char> PcaModel::serialize() const {
  BinaryWriter w(kPcaMagic, kPcaVersion);
  w.vec(mean_);
  w.mat(basis_);
  w.vec(explained_variance_);
  return w.bytes();
}

PcaModel PcaModel::deserialize(std::vector<unsigned char> bytes) {
  BinaryReader r(std::move(bytes), kPcaMagic, kPcaVersion);
  Eigen::VectorXd mean = r.vec();
  Eigen::MatrixXd basis = r.mat();
  Eigen::VectorXd var = r.vec();
  r.expect_end();
  return PcaModel(std::move(mean), std::move(basis), std::move(var));
}

void PcaModel::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

PcaModel PcaModel::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::string PcaModel::id() const { return content_id(serialize()); }

PcaModel pca_fit(const Eigen::MatrixXd& samples, int out_dims) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index dims = samples.cols();
  if (out_dims < 1 || out_dims > dims) throw InvalidParameter("PCA out_dims must be in [1, input dims]");
  if (n <= out_dims) throw InvalidParameter("PCA needs more samples than output dimensions");

  Eigen::VectorXd mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalFailure("PCA eigendecomposition failed");

  // Eigenvalues come back ascending.
  Eigen::MatrixXd basis(out_dims, dims);
  Eigen::VectorXd variance(out_dims);
  for (int k = 0; k < out_dims; ++k) {
    const Eigen::Index col = dims - 1 - k;
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    basis.row(k) = v.transpose();
    variance[k] = std::max(solver.eigenvalues()[col], 0.0);
  }
  return PcaModel(std::move(mean), std::move(basis), std::move(variance));
}

EmbeddedDescriptor embed(const RawDescriptor& desc, const PcaModel& pca, int width, int height) {
  const int k = pca.output_dims();
  EmbeddedDescriptor out;
  out.values.resize(k + kPositionDims);
  out.values.head(k) = pca.project(desc.values);
  const double half_w = (width - 1) / 2.0;
  const double half_h = (height - 1) / 2.0;
  out.values[k] = half_w > 0 ? desc.center.cx / half_w : 0.0;
  out.values[k + 1] = half_h > 0 ? desc.center.cy / half_h : 0.0;
  out.center = desc.center;
  return out;
}

// ---------------------------------------------------------------------------
// Descriptor sets

namespace {
constexpr std::uint32_t kDescriptorVersion = 1;
}

void DescriptorSet::save(const std::filesystem::path& path) const {
  BinaryWriter w(kDescriptorMagic, kDescriptorVersion);
  w.str(image_id);
  w.i64(subject_id);
  w.str(to_string(modality));
  w.i64(width);
  w.i64(height);
  w.mat(values);
  w.u64(centers.size());
  for (const auto& c : centers) {
    w.f64(c.cx);
    w.f64(c.cy);
  }
  w.save(path);
}

DescriptorSet DescriptorSet::load(const std::filesystem::path& path) {
  BinaryReader r(path, kDescriptorMagic, kDescriptorVersion);
  DescriptorSet d;
  d.image_id = r.str();
  d.subject_id = r.i64();
  d.modality = modality_from_string(r.str());
  d.width = static_cast<int>(r.i64());
  d.height = static_cast<int>(r.i64());
  d.values = r.mat();
  const std::uint64_t n = r.u64();
  if (n != static_cast<std::uint64_t>(d.values.rows())) throw IoError(path.string() + ": center count mismatch");
  d.centers.resize(n);
  for (auto& c : d.centers) {
    c.cx = r.f64();
    c.cy = r.f64();
  }
  r.expect_end();
  return d;
}

std::vector<RawDescriptor> raw_descriptors(const GrayImage& img, const FeatureConfig& config) {
  const BlockGrid grid = make_grid(img.width(), img.height(), config.block, config.stride);
  return extract_dense(imgproc::preprocess(img, config.preprocess), grid, config.scales);
}

Eigen::MatrixXd stack_values(const std::vector<RawDescriptor>& descs) {
  if (descs.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(descs.size()), descs.front().values.size());
  for (std::size_t i = 0; i < descs.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = descs[i].values.transpose();
  return m;
}

DescriptorSet embed_all(const std::vector<RawDescriptor>& descs, const PcaModel& pca, int width,
                        int height, std::string image_id, std::int64_t subject_id,
                        Modality modality) {
  DescriptorSet out;
  out.image_id = std::move(image_id);
  out.subject_id = subject_id;
  out.modality = modality;
  out.width = width;
  out.height = height;
  out.values.resize(static_cast<Eigen::Index>(descs.size()), pca.output_dims() + kPositionDims);
  out.centers.reserve(descs.size());
  for (std::size_t i = 0; i < descs.size(); ++i) {
    const EmbeddedDescriptor e = embed(descs[i], pca, width, height);
    out.values.row(static_cast<Eigen::Index>(i)) = e.values.transpose();
    out.centers.push_back(e.center);
  }
  return out;
}

}  // namespace features
}  // namespace dpmface
