#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dpmface/error.hpp"
#include "dpmface/imgproc.hpp"
#include "test_support.hpp"

using namespace dpmface;

namespace {

// Sort-based median over the clamped window, independent of nth_element.
double brute_median(const GrayImage& img, int x, int y, int r) {
  std::vector<double> w;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int xx = std::clamp(x + dx, 0, img.width() - 1);
      const int yy = std::clamp(y + dy, 0, img.height() - 1);
      w.push_back(img.at(xx, yy));
    }
  }
  std::sort(w.begin(), w.end());
  return w[w.size() / 2];
}

// Direct 2-D convolution with a freshly computed Gaussian.
double brute_gaussian(const GrayImage& img, int x, int y, double sigma) {
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  double acc = 0.0, norm = 0.0;
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) {
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      const int xx = std::clamp(x + dx, 0, img.width() - 1);
      const int yy = std::clamp(y + dy, 0, img.height() - 1);
      acc += g * img.at(xx, yy);
      norm += g;
    }
  }
  return acc / norm;
}

}  // namespace

TEST(Median, MatchesSortOracle) {
  const GrayImage img = support::random_image(17, 13, 3);
  for (int r : {1, 2}) {
    const GrayImage out = imgproc::median_filter(img, r);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) EXPECT_EQ(out.at(x, y), brute_median(img, x, y, r));
    }
  }
}

TEST(Median, RemovesIsolatedImpulse) {
  GrayImage img(9, 9, 0.25);
  img.at(4, 4) = 1.0;
  const GrayImage out = imgproc::median_filter(img, 1);
  for (double v : out.data()) EXPECT_EQ(v, 0.25);
}

TEST(Median, RejectsBadRadius) {
  const GrayImage img(6, 6);
  EXPECT_THROW(imgproc::median_filter(img, 0), InvalidParameter);
  EXPECT_THROW(imgproc::median_filter(img, 4), InvalidParameter);
}

TEST(ZeroMean, MeanIsZero) {
  const GrayImage out = imgproc::zero_mean(support::random_image(20, 30, 4));
  double sum = 0.0;
  for (double v : out.data()) sum += v;
  EXPECT_NEAR(sum / static_cast<double>(out.size()), 0.0, 1e-15);
}

TEST(Gaussian, KernelSumsToOneAndIsSymmetric) {
  for (double sigma : {0.6, 1.0, 2.0}) {
    const auto k = imgproc::gaussian_kernel(sigma);
    EXPECT_EQ(k.size(), 2 * static_cast<std::size_t>(std::ceil(3.0 * sigma)) + 1);
    double sum = 0.0;
    for (double v : k) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-14);
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_DOUBLE_EQ(k[i], k[k.size() - 1 - i]);
  }
}

TEST(Gaussian, SeparableEqualsDirectConvolution) {
  const GrayImage img = support::random_image(23, 19, 5);
  const double sigma = 1.3;
  const GrayImage out = imgproc::gaussian_smooth(img, sigma);
  // Border clamping is not separable-invariant, so compare the interior.
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  for (int y = half; y < img.height() - half; ++y) {
    for (int x = half; x < img.width() - half; ++x) {
      EXPECT_NEAR(out.at(x, y), brute_gaussian(img, x, y, sigma), 1e-12);
    }
  }
}

TEST(Gaussian, ConstantImageUnchanged) {
  const GrayImage img(15, 11, 0.7);
  const GrayImage out = imgproc::gaussian_smooth(img, 2.0);
  for (double v : out.data()) EXPECT_NEAR(v, 0.7, 1e-14);
}

TEST(Gaussian, RejectsNonPositiveSigma) {
  const GrayImage img(8, 8);
  EXPECT_THROW(imgproc::gaussian_smooth(img, 0.0), InvalidParameter);
  EXPECT_THROW(imgproc::gaussian_kernel(-1.0), InvalidParameter);
}

TEST(Dog, DifferenceOfSmoothings) {
  const GrayImage img = support::random_image(21, 21, 6);
  const GrayImage dog = imgproc::dog_filter(img, 1.0, 2.0);
  const GrayImage a = imgproc::gaussian_smooth(img, 1.0);
  const GrayImage b = imgproc::gaussian_smooth(img, 2.0);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(dog.data()[i], a.data()[i] - b.data()[i], 1e-15);
  EXPECT_THROW(imgproc::dog_filter(img, 2.0, 1.0), InvalidParameter);
}

TEST(Dog, ConstantImageGivesZero) {
  const GrayImage dog = imgproc::dog_filter(GrayImage(16, 16, 0.3), 1.0, 2.0);
  for (double v : dog.data()) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Preprocess, ComposesStagesAndKeepsShape) {
  const GrayImage img = support::random_image(30, 40, 7);
  const GrayImage out = imgproc::preprocess(img);
  const GrayImage expect = imgproc::dog_filter(imgproc::zero_mean(imgproc::median_filter(img, 1)), 1.0, 2.0);
  ASSERT_EQ(out.width(), 30);
  ASSERT_EQ(out.height(), 40);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out.data()[i], expect.data()[i]);
}

TEST(Preprocess, InvariantToGlobalOffset) {
  const GrayImage img = support::random_image(24, 24, 8);
  GrayImage shifted = img;
  for (double& v : shifted.data()) v += 0.2;
  const GrayImage a = imgproc::preprocess(img);
  const GrayImage b = imgproc::preprocess(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}
