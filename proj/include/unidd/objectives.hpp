#pragma once

#include "unidd/errors.hpp"
#include "unidd/spectral.hpp"
#include "unidd/types.hpp"

namespace unidd::objectives {

struct LinearModel {
  Matrix w;  // d x c
};

// Shared-initialization full-batch GD trajectory parameters. alpha must keep
// alpha * lambda_1 < 1 for every FFC it is applied to.
struct TrajectoryConfig {
  double alpha = 0.1;
  int p = 1;  // real-trajectory steps
  int q = 1;  // synthetic-trajectory steps
  Matrix w0;  // shared initialization, d x c
};

// g(.) of the unified objective: either the identity matrix or the FLC.
enum class GMode { Identity, Flc };

// ||grad - grad_s||^2 against the two statistic gaps, plus the residual of
// the exact identity grad - grad_s = dFFC * W - dFLC.
struct GradMatchDecomposition {
  double native = 0.0;      // ||grad - grad_s||_F^2
  double ffc_term = 0.0;    // ||W||_F^2 * ||dFFC||_F^2
  double flc_term = 0.0;    // ||dFLC||_F^2
  double identity_residual = 0.0;  // max-abs of the identity mismatch
};

// ||W^P - W_s^Q||^2 against the operator and signal gaps of the trajectory
// closed form, plus the residual of the exact identity
// W^P - W_s^Q = (A^P - B^Q) W0 + alpha * signal_gap.
struct MttDecomposition {
  double native = 0.0;         // ||W^P - W_s^Q||_F^2
  double operator_term = 0.0;  // ||A^P - B^Q||_F^2
  double signal_term = 0.0;    // alpha * ||signal gap||_F^2
  double identity_residual = 0.0;
  double w0_norm_sq = 0.0;     // ||W0||_F^2 (for the factor-2 bound)
  double signal_gap_sq = 0.0;  // ||signal gap||_F^2 unscaled
  double alpha = 0.0;
};

// || f(X^T X) g(X^T Y) - f(Xs^T Xs) g(Xs^T Ys) ||_F^2 via the spectral path.
double unified_loss(const spectral::FilterSpec& f, GMode g, const Matrix& x,
                    const Matrix& y, const Matrix& xs, const Matrix& ys);

// || X^T Y - Xs^T Ys ||_F^2 (distribution matching).
double dm_loss(const Matrix& x, const Matrix& y, const Matrix& xs,
               const Matrix& ys);

// || diag(X^T X) - diag(Xs^T Xs) ||^2 + || avg(X) - avg(Xs) ||^2
// (the BN mean/variance matching loss).
double srel_bn_loss(const Matrix& x, const Matrix& xs);

// X^T (X W - Y). Note: the squared-residual objective differentiates to twice
// this value; the factor 2 is dropped by convention here so the GD closed
// forms below hold verbatim.
Matrix grad_classifier(const Matrix& x, const Matrix& y, const LinearModel& w);

GradMatchDecomposition gradient_match_decomposition(const Matrix& x,
                                                    const Matrix& y,
                                                    const Matrix& xs,
                                                    const Matrix& ys,
                                                    const LinearModel& w);

// K iterations of W <- (I - alpha X^T X) W + alpha X^T Y from cfg.w0.
LinearModel gd_trajectory(const Matrix& x, const Matrix& y,
                          const TrajectoryConfig& cfg, int k);

// W^K = A^K W0 + sum_{j<K} alpha A^j X^T Y with A = I - alpha X^T X.
LinearModel gd_closed_form(const Matrix& x, const Matrix& y,
                           const TrajectoryConfig& cfg, int k);

MttDecomposition mtt_decomposition(const Matrix& x, const Matrix& y,
                                   const Matrix& xs, const Matrix& ys,
                                   const TrajectoryConfig& cfg);

// || Y - X Xs^T (Xs Xs^T + beta I)^{-1} Ys ||_F^2 (Gram form).
double krr_loss_gram(const Matrix& x, const Matrix& y, const Matrix& xs,
                     const Matrix& ys, double beta);

// || (X^T X + beta I)^{-1} X^T Y - (Xs^T Xs + beta I)^{-1} Xs^T Ys ||_F^2
// (FFC form).
double krr_loss_unified(const Matrix& x, const Matrix& y, const Matrix& xs,
                        const Matrix& ys, double beta);

// Max-abs difference of Xs^T (Xs Xs^T + beta I)^{-1} and
// (Xs^T Xs + beta I)^{-1} Xs^T, both sides computed by factorization solves.
double verify_identity_transform(const Matrix& xs, double beta);

// W* = (X^T X + beta I)^{-1} X^T Y.
LinearModel krr_ridge_solution(const Matrix& x, const Matrix& y, double beta);

}  // namespace unidd::objectives
