#include "dpmface/imgproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpmface/error.hpp"

namespace dpmface::imgproc {

GrayImage median_filter(const GrayImage& img, int radius) {
  if (radius < 1 || 2 * radius > std::min(img.width(), img.height())) {
    throw InvalidParameter("median radius must be in [1, min(width, height) / 2]");
  }
  GrayImage out(img.width(), img.height());
  const int side = 2 * radius + 1;
  std::vector<double> window(static_cast<std::size_t>(side) * side);
  const auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      std::size_t k = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          window[k++] = img.clamped(x + dx, y + dy);
        }
      }
      std::nth_element(window.begin(), mid, window.end());
      out.at(x, y) = *mid;
    }
  }
  return out;
}

GrayImage zero_mean(const GrayImage& img) {
  const auto src = img.data();
  const double mean = std::accumulate(src.begin(), src.end(), 0.0) / static_cast<double>(src.size());
  GrayImage out(img.width(), img.height());
  auto dst = out.data();
  std::transform(src.begin(), src.end(), dst.begin(), [mean](double v) { return v - mean; });
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw InvalidParameter("gaussian sigma must be positive");
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * half + 1);
  for (int i = -half; i <= half; ++i) {
    k[i + half] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  }
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= sum;
  return k;
}

GrayImage gaussian_smooth(const GrayImage& img, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int half = static_cast<int>(kernel.size() / 2);
  const int w = img.width();
  const int h = img.height();

  GrayImage rows(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -half; i <= half; ++i) acc += kernel[i + half] * img.clamped(x + i, y);
      rows.at(x, y) = acc;
    }
  }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -half; i <= half; ++i) acc += kernel[i + half] * rows.clamped(x, y + i);
      out.at(x, y) = acc;
    }
  }
  return out;
}

GrayImage dog_filter(const GrayImage& img, double sigma_inner, double sigma_outer) {
  if (!(sigma_inner > 0.0) || !(sigma_inner < sigma_outer)) {
    throw InvalidParameter("DoG requires 0 < sigma_inner < sigma_outer");
  }
  const GrayImage inner = gaussian_smooth(img, sigma_inner);
  const GrayImage outer = gaussian_smooth(img, sigma_outer);
  GrayImage out(img.width(), img.height());
  auto dst = out.data();
  const auto a = inner.data();
  const auto b = outer.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a[i] - b[i];
  return out;
}

GrayImage preprocess(const GrayImage& img, const PreprocessConfig& config) {
  return dog_filter(zero_mean(median_filter(img, config.median_radius)), config.dog_inner,
                    config.dog_outer);
}

}  // namespace dpmface::imgproc
