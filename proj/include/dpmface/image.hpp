#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dpmface {

/// Single-channel real-valued raster, row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, double fill = 0.0);
  GrayImage(int width, int height, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }

  double& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  /// Border-replicating access: coordinates are clamped into the raster.
  double clamped(int x, int y) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// 8 or 16 when loaded from an integer file; 0 for computed images.
  int bit_depth_origin() const { return bit_depth_origin_; }
  void set_bit_depth_origin(int bits) { bit_depth_origin_ = bits; }

  bool operator==(const GrayImage& other) const {
    return width_ == other.width_ && height_ == other.height_ && data_ == other.data_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
  int bit_depth_origin_ = 0;
};

/// Raw integer samples of a binary (P5) PGM. Samples are kept exactly as
/// stored so that read -> write is byte-identical.
struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint16_t> samples;

  int bit_depth() const { return maxval > 255 ? 16 : 8; }
};

PgmImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const PgmImage& pgm);

/// Linear map of integer samples onto [0,1] (divide by maxval).
GrayImage to_gray(const PgmImage& pgm);

/// Quantize [0,1] intensities (clipped) to the given bit depth.
PgmImage quantize(const GrayImage& img, int bit_depth);

/// Debug dump: min-max stretched to 8 bits.
void write_pgm_debug(const std::filesystem::path& path, const GrayImage& img);

GrayImage load_gray(const std::filesystem::path& path);

}  // namespace dpmface
