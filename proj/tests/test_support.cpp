#include "test_support.hpp"

#include "dpmface/rng.hpp"

namespace dpmface::support {

GrayImage random_image(int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  GrayImage img(width, height);
  for (double& v : img.data()) v = uniform01(rng);
  return img;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dpmface_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dpmface::support
