#pragma once

#include "dpmface/image.hpp"

/// Shape-preserving, deterministic image filters. All borders are handled by
/// clamped (replicated) indexing.
namespace dpmface::imgproc {

/// Median of the (2r+1)^2 window around each pixel.
/// Throws InvalidParameter if radius < 1 or radius > min(width, height) / 2.
GrayImage median_filter(const GrayImage& img, int radius);

/// Subtracts the global mean.
GrayImage zero_mean(const GrayImage& img);

/// Normalized Gaussian kernel of half-width ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur. Throws InvalidParameter for sigma <= 0.
GrayImage gaussian_smooth(const GrayImage& img, double sigma);

/// gaussian_smooth(inner) - gaussian_smooth(outer); requires 0 < inner < outer.
GrayImage dog_filter(const GrayImage& img, double sigma_inner, double sigma_outer);

struct PreprocessConfig {
  int median_radius = 1;
  double dog_inner = 1.0;
  double dog_outer = 2.0;
};

/// median -> zero-mean -> DoG, the sequence applied to both modalities.
GrayImage preprocess(const GrayImage& img, const PreprocessConfig& config = {});

}  // namespace dpmface::imgproc
