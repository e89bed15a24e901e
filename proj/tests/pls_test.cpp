#include <cmath>

#include <gtest/gtest.h>

#include "dpmface/error.hpp"
#include "dpmface/pls.hpp"
#include "test_support.hpp"

using namespace dpmface;
using namespace dpmface::pls;

namespace {

double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(Nipals, FullRankEqualsLeastSquares) {
  const int n = 300, m = 8;
  const Eigen::MatrixXd x = support::random_matrix(n, m, 1);
  const Eigen::MatrixXd b_true = support::random_matrix(m, m, 2);
  const Eigen::MatrixXd y = x * b_true;
  const PlsFit fit = pls_fit(x, y, m);
  EXPECT_LT(rel_error(predict_rows(fit.model, x), y), 1e-6);

  // Least squares on centered data, solved independently.
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd ols = xc.colPivHouseholderQr().solve(yc);
  EXPECT_LT(rel_error(fit.model.b_v(), ols), 1e-6);
}

TEST(Nipals, NoisyFullRankStillMatchesOls) {
  const int n = 400, m = 6;
  const Eigen::MatrixXd x = support::random_matrix(n, m, 3);
  const Eigen::MatrixXd y = x * support::random_matrix(m, m, 4) + 0.3 * support::random_matrix(n, m, 5);
  const PlsFit fit = pls_fit(x, y, m);
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  EXPECT_LT(rel_error(fit.model.b_v(), xc.colPivHouseholderQr().solve(yc)), 1e-6);
}

TEST(Nipals, ScoresOrthogonalAndWeightsUnit) {
  const Eigen::MatrixXd x = support::random_matrix(200, 10, 6);
  const Eigen::MatrixXd y = x.leftCols(7) * support::random_matrix(7, 9, 7) + 0.5 * support::random_matrix(200, 9, 8);
  const PlsFit fit = pls_fit(x, y, 6);
  const Eigen::MatrixXd t = fit.x_scores;
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(fit.model.x_weights.col(i).norm(), 1.0, 1e-12);
    for (int j = 0; j < i; ++j) {
      EXPECT_NEAR(t.col(i).dot(t.col(j)) / (t.col(i).norm() * t.col(j).norm()), 0.0, 1e-8);
      EXPECT_NEAR(fit.model.x_weights.col(i).dot(fit.model.x_weights.col(j)), 0.0, 1e-8);
    }
  }
  // Residual norms never grow.
  for (std::size_t k = 1; k < fit.x_residual_norms.size(); ++k) {
    EXPECT_LE(fit.x_residual_norms[k], fit.x_residual_norms[k - 1] + 1e-9);
  }
}

TEST(Nipals, ProjectionReproducesTrainingScores) {
  const Eigen::MatrixXd x = support::random_matrix(150, 7, 9);
  const Eigen::MatrixXd y = x * support::random_matrix(7, 7, 10) + support::random_matrix(150, 7, 11);
  const PlsFit fit = pls_fit(x, y, 4);
  EXPECT_LT((pls_project_rows(fit.model, x, Side::source) - fit.x_scores).norm(), 1e-8 * fit.x_scores.norm());
  EXPECT_LT(pls_project(fit.model, fit.model.x_mean, Side::source).norm(), 1e-14);
  EXPECT_LT(pls_project(fit.model, fit.model.y_mean, Side::target).norm(), 1e-14);
}

TEST(Nipals, IdenticalBlocksProjectAlike) {
  const Eigen::MatrixXd x = support::random_matrix(120, 6, 12);
  const PlsFit fit = pls_fit(x, x, 6);
  for (int it : fit.iterations) EXPECT_LT(it, NipalsOptions{}.max_iterations);
  const Eigen::MatrixXd px = pls_project_rows(fit.model, x, Side::source);
  const Eigen::MatrixXd py = pls_project_rows(fit.model, x, Side::target);
  EXPECT_LT((px - py).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Nipals, TruncationEqualsRefit) {
  const Eigen::MatrixXd x = support::random_matrix(180, 9, 13);
  const Eigen::MatrixXd y = x * support::random_matrix(9, 9, 14) + support::random_matrix(180, 9, 15);
  const PlsModel full = pls_fit(x, y, 9).model;
  const PlsModel three = pls_fit(x, y, 3).model;
  const PlsModel cut = full.truncated(3);
  EXPECT_LT((cut.x_rotation() - three.x_rotation()).norm(), 1e-10);
  EXPECT_LT((cut.y_rotation() - three.y_rotation()).norm(), 1e-10);
  EXPECT_LT((cut.b_v() - three.b_v()).norm(), 1e-10);
  EXPECT_LT((cut.b_t() - three.b_t()).norm(), 1e-10);
  EXPECT_THROW(full.truncated(10), InvalidParameter);
}

TEST(Regression, LiteralFormIsTheBareRotation) {
  const Eigen::MatrixXd x = support::random_matrix(100, 5, 16);
  const Eigen::MatrixXd y = support::random_matrix(100, 5, 17);
  const PlsModel model = pls_fit(x, y, 3).model;
  const Eigen::MatrixXd lit = model.b_v(RegressionForm::literal);
  EXPECT_EQ(lit.rows(), 5);
  EXPECT_EQ(lit.cols(), 3);
  const Eigen::MatrixXd w = model.x_weights;
  const Eigen::MatrixXd p = model.x_loadings;
  EXPECT_LT((lit - w * (p.transpose() * w).inverse()).norm(), 1e-12);
  EXPECT_EQ(model.b_v().rows(), 5);
  EXPECT_EQ(model.b_v().cols(), 5);
}

TEST(Fit, Preconditions) {
  const Eigen::MatrixXd x = support::random_matrix(10, 4, 18);
  EXPECT_THROW(pls_fit(x, x, 0), InvalidParameter);
  EXPECT_THROW(pls_fit(x, x, 5), InvalidParameter);
  EXPECT_THROW(pls_fit(x, support::random_matrix(9, 4, 19), 2), InvalidInput);
  EXPECT_THROW(pls_fit(x.topRows(3), x.topRows(3), 3), InvalidParameter);
}

TEST(Fit, DegenerateInputFailsNumerically) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(20, 4);
  EXPECT_THROW(pls_fit(x, support::random_matrix(20, 4, 20), 1), NumericalFailure);
}

TEST(Model, FileRoundTrip) {
  const Eigen::MatrixXd x = support::random_matrix(60, 5, 21);
  const PlsModel model = pls_fit(x, x * 2.0 + support::random_matrix(60, 5, 22), 3).model;
  const auto path = support::scratch_dir("pls") / "m.pls";
  model.save(path);
  const PlsModel back = PlsModel::load(path);
  EXPECT_EQ(back.components, 3);
  EXPECT_EQ(back.x_weights, model.x_weights);
  EXPECT_EQ(back.y_on_t, model.y_on_t);
  EXPECT_EQ(back.x_mean, model.x_mean);
}
