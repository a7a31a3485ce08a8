#include "unidd/objectives.hpp"

#include <cmath>
#include <algorithm>
#include <sstream>

namespace unidd::objectives {

namespace {

constexpr double kRcondFloor = 1e-12;

void check_instance(const Matrix& x, const Matrix& y, const Matrix& xs,
                    const Matrix& ys) {
  if (x.cols() != xs.cols()) {
    throw ShapeMismatch("objective: feature dimensions of X and Xs differ");
  }
  if (y.cols() != ys.cols()) {
    throw ShapeMismatch("objective: class counts of Y and Ys differ");
  }
  if (x.rows() != y.rows() || xs.rows() != ys.rows()) {
    throw ShapeMismatch("objective: sample counts of inputs and labels differ");
  }
}

void check_beta(double beta) {
  if (!(beta > 0.0)) throw InvalidConfig("objective: beta must be positive");
}

Matrix sym(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Solve (M + beta I) Z = rhs for symmetric PSD M.
Matrix shifted_solve(const Matrix& m, double beta, const Matrix& rhs) {
  const Matrix shifted =
      m + beta * Matrix::Identity(m.rows(), m.cols());
  Eigen::LDLT<Matrix> ldlt(shifted);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < kRcondFloor) {
    throw SingularSystem("objective: shifted system is numerically singular");
  }
  Matrix z = ldlt.solve(rhs);
  if (!z.allFinite()) {
    throw SingularSystem("objective: shifted solve produced non-finite values");
  }
  return z;
}

double top_eigenvalue(const Matrix& ffc) {
  return spectral::eig_psd(spectral::PsdMatrix(sym(ffc))).eigvals(0);
}

void check_step(double alpha, const Matrix& ffc) {
  if (!(alpha > 0.0)) throw InvalidConfig("trajectory: alpha must be positive");
  const double top = top_eigenvalue(ffc);
  if (alpha * top >= 1.0) {
    std::ostringstream os;
    os << "trajectory: alpha*lambda_1 = " << alpha * top << " >= 1";
    throw UnstableFilter(os.str());
  }
}

}  // namespace

double unified_loss(const spectral::FilterSpec& f, GMode g, const Matrix& x,
                    const Matrix& y, const Matrix& xs, const Matrix& ys) {
  check_instance(x, y, xs, ys);
  const Index d = x.cols();
  const spectral::PsdMatrix ffc(sym(x.transpose() * x));
  const spectral::PsdMatrix ffc_s(sym(xs.transpose() * xs));
  const Matrix sig = g == GMode::Identity ? Matrix(Matrix::Identity(d, d))
                                          : Matrix(x.transpose() * y);
  const Matrix sig_s = g == GMode::Identity ? Matrix(Matrix::Identity(d, d))
                                            : Matrix(xs.transpose() * ys);
  const Matrix a = spectral::apply_filter_spectral(f, ffc, sig);
  const Matrix b = spectral::apply_filter_spectral(f, ffc_s, sig_s);
  return (a - b).squaredNorm();
}

double dm_loss(const Matrix& x, const Matrix& y, const Matrix& xs,
               const Matrix& ys) {
  check_instance(x, y, xs, ys);
  const Matrix a = x.transpose() * y;
  const Matrix b = xs.transpose() * ys;
  return (a - b).squaredNorm();
}

double srel_bn_loss(const Matrix& x, const Matrix& xs) {
  if (x.cols() != xs.cols()) {
    throw ShapeMismatch("srel_bn_loss: feature dimensions differ");
  }
  const Vector var_gap = (x.transpose() * x).diagonal() -
                         (xs.transpose() * xs).diagonal();
  const Eigen::RowVectorXd mean_gap =
      x.colwise().mean() - xs.colwise().mean();
  return var_gap.squaredNorm() + mean_gap.squaredNorm();
}

Matrix grad_classifier(const Matrix& x, const Matrix& y, const LinearModel& w) {
  if (x.cols() != w.w.rows() || y.cols() != w.w.cols() ||
      x.rows() != y.rows()) {
    throw ShapeMismatch("grad_classifier: inconsistent shapes");
  }
  return x.transpose() * (x * w.w - y);
}

GradMatchDecomposition gradient_match_decomposition(const Matrix& x,
                                                    const Matrix& y,
                                                    const Matrix& xs,
                                                    const Matrix& ys,
                                                    const LinearModel& w) {
  check_instance(x, y, xs, ys);
  const Matrix g = grad_classifier(x, y, w);
  const Matrix gs = grad_classifier(xs, ys, w);
  const Matrix dffc = x.transpose() * x - xs.transpose() * xs;
  const Matrix dflc = x.transpose() * y - xs.transpose() * ys;

  GradMatchDecomposition out;
  out.native = (g - gs).squaredNorm();
  out.ffc_term = w.w.squaredNorm() * dffc.squaredNorm();
  out.flc_term = dflc.squaredNorm();
  out.identity_residual =
      ((g - gs) - (dffc * w.w - dflc)).cwiseAbs().maxCoeff();
  return out;
}

LinearModel gd_trajectory(const Matrix& x, const Matrix& y,
                          const TrajectoryConfig& cfg, int k) {
  if (k < 0) throw InvalidConfig("gd_trajectory: k must be non-negative");
  if (x.cols() != cfg.w0.rows() || y.cols() != cfg.w0.cols()) {
    throw ShapeMismatch("gd_trajectory: W0 shape mismatch");
  }
  const Matrix ffc = x.transpose() * x;
  check_step(cfg.alpha, ffc);
  Matrix w = cfg.w0;
  const Matrix flc = x.transpose() * y;
  for (int i = 0; i < k; ++i) {
    w = w - cfg.alpha * (ffc * w - flc);
  }
  return LinearModel{std::move(w)};
}

LinearModel gd_closed_form(const Matrix& x, const Matrix& y,
                           const TrajectoryConfig& cfg, int k) {
  if (k < 0) throw InvalidConfig("gd_closed_form: k must be non-negative");
  if (x.cols() != cfg.w0.rows() || y.cols() != cfg.w0.cols()) {
    throw ShapeMismatch("gd_closed_form: W0 shape mismatch");
  }
  const Index d = x.cols();
  const Matrix ffc = x.transpose() * x;
  check_step(cfg.alpha, ffc);
  const Matrix a = Matrix::Identity(d, d) - cfg.alpha * ffc;
  const Matrix flc = x.transpose() * y;

  Matrix a_pow = Matrix::Identity(d, d);  // A^j
  Matrix sum = Matrix::Zero(d, y.cols());
  for (int j = 0; j < k; ++j) {
    sum += cfg.alpha * (a_pow * flc);
    a_pow = a * a_pow;
  }
  return LinearModel{a_pow * cfg.w0 + sum};
}

MttDecomposition mtt_decomposition(const Matrix& x, const Matrix& y,
                                   const Matrix& xs, const Matrix& ys,
                                   const TrajectoryConfig& cfg) {
  check_instance(x, y, xs, ys);
  if (cfg.p < 1 || cfg.q < 1) {
    throw InvalidConfig("mtt_decomposition: P and Q must be >= 1");
  }
  const Index d = x.cols();
  const Matrix ffc = x.transpose() * x;
  const Matrix ffc_s = xs.transpose() * xs;
  check_step(cfg.alpha, ffc);
  check_step(cfg.alpha, ffc_s);

  const LinearModel wp = gd_closed_form(x, y, cfg, cfg.p);
  const LinearModel wq = gd_closed_form(xs, ys, cfg, cfg.q);

  const Matrix a = Matrix::Identity(d, d) - cfg.alpha * ffc;
  const Matrix b = Matrix::Identity(d, d) - cfg.alpha * ffc_s;
  const Matrix flc = x.transpose() * y;
  const Matrix flc_s = xs.transpose() * ys;

  // Interleave the two signal sums so identical trajectories cancel exactly.
  Matrix ap = Matrix::Identity(d, d);  // ends as A^P
  Matrix bq = Matrix::Identity(d, d);  // ends as B^Q
  Matrix signal_gap = Matrix::Zero(d, y.cols());
  for (int j = 0; j < std::max(cfg.p, cfg.q); ++j) {
    if (j < cfg.p) signal_gap += ap * flc;
    if (j < cfg.q) signal_gap -= bq * flc_s;
    if (j < cfg.p) ap = a * ap;
    if (j < cfg.q) bq = b * bq;
  }

  MttDecomposition out;
  out.native = (wp.w - wq.w).squaredNorm();
  out.operator_term = (ap - bq).squaredNorm();
  out.signal_gap_sq = signal_gap.squaredNorm();
  out.signal_term = cfg.alpha * out.signal_gap_sq;
  out.w0_norm_sq = cfg.w0.squaredNorm();
  out.alpha = cfg.alpha;
  out.identity_residual =
      ((wp.w - wq.w) - ((ap - bq) * cfg.w0 + cfg.alpha * signal_gap))
          .cwiseAbs()
          .maxCoeff();
  return out;
}

double krr_loss_gram(const Matrix& x, const Matrix& y, const Matrix& xs,
                     const Matrix& ys, double beta) {
  check_instance(x, y, xs, ys);
  check_beta(beta);
  const Matrix gram_ss = xs * xs.transpose();  // m x m
  const Matrix z = shifted_solve(gram_ss, beta, ys);
  const Matrix pred = x * (xs.transpose() * z);
  return (y - pred).squaredNorm();
}

double krr_loss_unified(const Matrix& x, const Matrix& y, const Matrix& xs,
                        const Matrix& ys, double beta) {
  check_instance(x, y, xs, ys);
  check_beta(beta);
  const Matrix w = shifted_solve(x.transpose() * x, beta, x.transpose() * y);
  const Matrix ws =
      shifted_solve(xs.transpose() * xs, beta, xs.transpose() * ys);
  return (w - ws).squaredNorm();
}

double verify_identity_transform(const Matrix& xs, double beta) {
  check_beta(beta);
  // lhs = Xs^T (Xs Xs^T + beta I)^{-1}; transpose of a symmetric solve.
  const Matrix lhs =
      shifted_solve(xs * xs.transpose(), beta, xs).transpose();
  const Matrix rhs =
      shifted_solve(xs.transpose() * xs, beta, Matrix(xs.transpose()));
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

LinearModel krr_ridge_solution(const Matrix& x, const Matrix& y, double beta) {
  if (x.rows() != y.rows()) {
    throw ShapeMismatch("krr_ridge_solution: sample counts differ");
  }
  check_beta(beta);
  return LinearModel{
      shifted_solve(x.transpose() * x, beta, x.transpose() * y)};
}

}  // namespace unidd::objectives
