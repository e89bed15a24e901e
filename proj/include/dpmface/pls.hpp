#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

/// NIPALS partial least squares between the two modality descriptor spaces.
///
/// X (source) is deflated by its scores t and Y (target) by its own scores u,
/// so both blocks decompose as X = T P' + E and Y = U Q' + F and each side has
/// an exact projection onto its latent scores:
///   T = Xc W (P'W)^-1,   U = Yc C (Q'C)^-1.
namespace dpmface::pls {

enum class Side { source, target };

/// How the m x m regression operators are formed.
enum class RegressionForm {
  /// B_v = W (P'W)^-1 D' with D the least-squares loadings of Y on T (and
  /// symmetrically for B_t). With p = rank(X) this is ordinary least squares.
  standard,
  /// The bare rotations B_v = W (P'W)^-1 and B_t = W (Q'W)^-1 (m x p).
  literal,
};

struct PlsModel {
  int components = 0;
  Eigen::VectorXd x_mean;
  Eigen::VectorXd y_mean;
  Eigen::MatrixXd x_weights;   ///< W, m x p, unit columns
  Eigen::MatrixXd x_loadings;  ///< P, m x p
  Eigen::MatrixXd y_weights;   ///< C, m x p, unit columns
  Eigen::MatrixXd y_loadings;  ///< Q, m x p
  Eigen::MatrixXd y_on_t;      ///< D = Y'T (T'T)^-1, m x p
  Eigen::MatrixXd x_on_u;      ///< E = X'U (U'U)^-1, m x p

  /// W (P'W)^-1
  Eigen::MatrixXd x_rotation() const;
  /// C (Q'C)^-1
  Eigen::MatrixXd y_rotation() const;

  /// Source -> target regression operator B_v.
  Eigen::MatrixXd b_v(RegressionForm form = RegressionForm::standard) const;
  /// Target -> source regression operator B_t.
  Eigen::MatrixXd b_t(RegressionForm form = RegressionForm::standard) const;

  /// The model of the first `p` components; equal to refitting with p since
  /// NIPALS extracts components one at a time.
  PlsModel truncated(int p) const;

  void save(const std::filesystem::path& path) const;
  static PlsModel load(const std::filesystem::path& path);
};

struct NipalsOptions {
  double tolerance = 1e-10;
  int max_iterations = 500;
};

struct PlsFit {
  PlsModel model;
  Eigen::MatrixXd x_scores;  ///< T, n x p
  Eigen::MatrixXd y_scores;  ///< U, n x p
  /// ||E||_F and ||F||_F after each component (index 0 = centered input).
  std::vector<double> x_residual_norms;
  std::vector<double> y_residual_norms;
  std::vector<int> iterations;
};

/// Rows of X and Y are paired samples. Throws InvalidParameter unless
/// 1 <= p <= m and n > p; NumericalFailure if a component collapses or P'W
/// is singular.
PlsFit pls_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int p, const NipalsOptions& options = {});

/// Latent scores of one sample.
Eigen::VectorXd pls_project(const PlsModel& model, const Eigen::VectorXd& v, Side side);

/// Latent scores of every row.
Eigen::MatrixXd pls_project_rows(const PlsModel& model, const Eigen::MatrixXd& rows, Side side);

/// y_hat = y_mean + (x - x_mean) B_v, row-wise.
Eigen::MatrixXd predict_rows(const PlsModel& model, const Eigen::MatrixXd& x_rows);

}  // namespace dpmface::pls
