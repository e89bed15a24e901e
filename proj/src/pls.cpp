#include "dpmface/pls.hpp"

#include <cmath>
#include <string>

#include "dpmface/container.hpp"
#include "dpmface/error.hpp"

namespace dpmface::pls {

namespace {

constexpr std::uint32_t kPlsVersion = 1;

Eigen::MatrixXd rotation(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& loadings) {
  const Eigen::MatrixXd inner = loadings.transpose() * weights;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(inner);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw NumericalFailure("P'W is singular after " + std::to_string(lu.rank()) + " components",
                           static_cast<int>(lu.rank()));
  }
  return weights * lu.inverse();
}

Eigen::Index widest_column(const Eigen::MatrixXd& m) {
  Eigen::Index arg = 0;
  m.colwise().squaredNorm().maxCoeff(&arg);
  return arg;
}

}  // namespace

Eigen::MatrixXd PlsModel::x_rotation() const { return rotation(x_weights, x_loadings); }

Eigen::MatrixXd PlsModel::y_rotation() const { return rotation(y_weights, y_loadings); }

Eigen::MatrixXd PlsModel::b_v(RegressionForm form) const {
  if (form == RegressionForm::literal) return x_rotation();
  return x_rotation() * y_on_t.transpose();
}

Eigen::MatrixXd PlsModel::b_t(RegressionForm form) const {
  if (form == RegressionForm::literal) return rotation(x_weights, y_loadings);
  return y_rotation() * x_on_u.transpose();
}

PlsModel PlsModel::truncated(int p) const {
  if (p < 1 || p > components) {
    throw InvalidParameter("cannot keep " + std::to_string(p) + " of " + std::to_string(components) + " components");
  }
  PlsModel m = *this;
  m.components = p;
  for (auto* mat : {&m.x_weights, &m.x_loadings, &m.y_weights, &m.y_loadings, &m.y_on_t, &m.x_on_u}) {
    *mat = mat->leftCols(p).eval();
  }
  return m;
}

void PlsModel::save(const std::filesystem::path& path) const {
  BinaryWriter w(kPlsMagic, kPlsVersion);
  w.i64(components);
  w.vec(x_mean);
  w.vec(y_mean);
  w.mat(x_weights);
  w.mat(x_loadings);
  w.mat(y_weights);
  w.mat(y_loadings);
  w.mat(y_on_t);
  w.mat(x_on_u);
  w.save(path);
}

PlsModel PlsModel::load(const std::filesystem::path& path) {
  BinaryReader r(path, kPlsMagic, kPlsVersion);
  PlsModel m;
  m.components = static_cast<int>(r.i64());
  m.x_mean = r.vec();
  m.y_mean = r.vec();
  m.x_weights = r.mat();
  m.x_loadings = r.mat();
  m.y_weights = r.mat();
  m.y_loadings = r.mat();
  m.y_on_t = r.mat();
  m.x_on_u = r.mat();
  r.expect_end();
  for (const auto* mat : {&m.x_weights, &m.x_loadings, &m.x_on_u}) {
    if (mat->cols() != m.components || mat->rows() != m.x_mean.size()) {
      throw IoError(path.string() + ": inconsistent PLS model shapes");
    }
  }
  for (const auto* mat : {&m.y_weights, &m.y_loadings, &m.y_on_t}) {
    if (mat->cols() != m.components || mat->rows() != m.y_mean.size()) {
      throw IoError(path.string() + ": inconsistent PLS model shapes");
    }
  }
  return m;
}

PlsFit pls_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int p, const NipalsOptions& options) {
  const Eigen::Index n = x.rows();
  const Eigen::Index mx = x.cols();
  const Eigen::Index my = y.cols();
  if (y.rows() != n) throw InvalidInput("X and Y must have the same number of rows");
  if (p < 1 || p > mx || p > my) throw InvalidParameter("PLS components must be in [1, m]");
  if (n <= p) throw InvalidParameter("PLS needs more samples than components");

  PlsFit fit;
  PlsModel& model = fit.model;
  model.components = p;
  model.x_mean = x.colwise().mean().transpose();
  model.y_mean = y.colwise().mean().transpose();
  Eigen::MatrixXd e = x.rowwise() - model.x_mean.transpose();
  Eigen::MatrixXd f = y.rowwise() - model.y_mean.transpose();
  const Eigen::MatrixXd x0 = e;
  const Eigen::MatrixXd y0 = f;

  model.x_weights.resize(mx, p);
  model.x_loadings.resize(mx, p);
  model.y_weights.resize(my, p);
  model.y_loadings.resize(my, p);
  fit.x_scores.resize(n, p);
  fit.y_scores.resize(n, p);
  fit.x_residual_norms.push_back(e.norm());
  fit.y_residual_norms.push_back(f.norm());

  const double scale_x = std::max(e.norm(), 1e-300);
  const double scale_y = std::max(f.norm(), 1e-300);

  // Cross-product of the residual blocks, kept current through deflation. Its
  // leading singular pair is the fixed point of the inner loop, so starting
  // there avoids slow power iteration when the leading values are close.
  Eigen::MatrixXd cross = e.transpose() * f;

  for (int j = 0; j < p; ++j) {
    if (f.col(widest_column(f)).norm() <= 1e-12 * scale_y) throw NumericalFailure("Y block exhausted", j);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeThinV);
    Eigen::VectorXd u = f * svd.matrixV().col(0);
    if (u.norm() <= 1e-14 * scale_y) u = f.col(widest_column(f));
    Eigen::VectorXd w = Eigen::VectorXd::Zero(mx);
    Eigen::VectorXd c, t;
    int iter = 0;
    for (; iter < options.max_iterations; ++iter) {
      Eigen::VectorXd w_new = e.transpose() * u;
      const double wn = w_new.norm();
      if (wn <= 1e-14 * scale_x) throw NumericalFailure("X block exhausted", j);
      w_new /= wn;
      t = e * w_new;
      c = f.transpose() * t;
      const double cn = c.norm();
      if (cn <= 1e-14 * scale_y) throw NumericalFailure("no remaining X/Y covariance", j);
      c /= cn;
      u = f * c;
      const double change = (w_new - w).norm();
      w = std::move(w_new);
      if (change < options.tolerance) {
        ++iter;
        break;
      }
    }
    fit.iterations.push_back(iter);

    const double tt = t.squaredNorm();
    const double uu = u.squaredNorm();
    if (tt <= 0.0 || uu <= 0.0) throw NumericalFailure("degenerate latent scores", j);
    const Eigen::VectorXd p_load = e.transpose() * t / tt;
    const Eigen::VectorXd q_load = f.transpose() * u / uu;
    const Eigen::VectorXd eu = e.transpose() * u;
    const Eigen::VectorXd ft = f.transpose() * t;
    cross += t.dot(u) * p_load * q_load.transpose() - eu * q_load.transpose() - p_load * ft.transpose();
    e -= t * p_load.transpose();
    f -= u * q_load.transpose();

    model.x_weights.col(j) = w;
    model.x_loadings.col(j) = p_load;
    model.y_weights.col(j) = c;
    model.y_loadings.col(j) = q_load;
    fit.x_scores.col(j) = t;
    fit.y_scores.col(j) = u;
    fit.x_residual_norms.push_back(e.norm());
    fit.y_residual_norms.push_back(f.norm());
  }

  // Least-squares loadings of each block on the other block's scores. The
  // score columns are mutually orthogonal, so this is a per-column division.
  const Eigen::VectorXd t_sq = fit.x_scores.colwise().squaredNorm().transpose();
  const Eigen::VectorXd u_sq = fit.y_scores.colwise().squaredNorm().transpose();
  model.y_on_t = (y0.transpose() * fit.x_scores) * t_sq.cwiseInverse().asDiagonal();
  model.x_on_u = (x0.transpose() * fit.y_scores) * u_sq.cwiseInverse().asDiagonal();

  // Surface singular P'W now rather than at projection time.
  (void)model.x_rotation();
  (void)model.y_rotation();
  return fit;
}

Eigen::VectorXd pls_project(const PlsModel& model, const Eigen::VectorXd& v, Side side) {
  return pls_project_rows(model, v.transpose(), side).row(0).transpose();
}

Eigen::MatrixXd pls_project_rows(const PlsModel& model, const Eigen::MatrixXd& rows, Side side) {
  const Eigen::VectorXd& mean = side == Side::source ? model.x_mean : model.y_mean;
  if (rows.cols() != mean.size()) throw InvalidInput("PLS projection dimension mismatch");
  const Eigen::MatrixXd rot = side == Side::source ? model.x_rotation() : model.y_rotation();
  return (rows.rowwise() - mean.transpose()) * rot;
}

Eigen::MatrixXd predict_rows(const PlsModel& model, const Eigen::MatrixXd& x_rows) {
  if (x_rows.cols() != model.x_mean.size()) throw InvalidInput("PLS input dimension mismatch");
  return ((x_rows.rowwise() - model.x_mean.transpose()) * model.b_v()).rowwise() + model.y_mean.transpose();
}

}  // namespace dpmface::pls
