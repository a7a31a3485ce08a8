#pragma once

#include <string>
#include <variant>
#include <vector>

#include "unidd/errors.hpp"
#include "unidd/types.hpp"

namespace unidd::spectral {

// Dense symmetric positive semi-definite matrix. Symmetry is checked at
// construction; semi-definiteness is checked where the eigenvalues become
// available (eig_psd).
class PsdMatrix {
 public:
  explicit PsdMatrix(Matrix m);

  const Matrix& matrix() const { return m_; }
  Index dim() const { return m_.rows(); }

 private:
  Matrix m_;
};

// Eigendecomposition M = U diag(eigvals) U^T with eigenvalues sorted
// descending. Small negative eigenvalues (within -1e-8 * max(1, lambda_1) of
// zero) are clamped to 0 so downstream filter powers stay real.
struct Spectrum {
  Matrix eigvecs;  // columns are eigenvectors, ordered to match eigvals
  Vector eigvals;  // descending

  Matrix reconstruct() const {
    return eigvecs * eigvals.asDiagonal() * eigvecs.transpose();
  }
};

// Scalar filter functions on the eigenvalue axis. Large eigenvalues are the
// low-frequency end, so a response that decays in lambda is a high-pass
// filter.
struct AllPass {};                                          // f(l) = 1
struct LowPassLinear {};                                    // f(l) = l
struct HighPassPower {                                      // f(l) = (1 - a*l)^p
  double alpha = 0.0;
  int exponent = 1;
};
struct HighPassShiftInverse {                               // f(l) = 1 / (l + b)
  double beta = 0.0;
};
struct TrajectoryPolySum {                                  // f(l) = sum_{p<P} (1 - a*l)^p
  double alpha = 0.0;
  int horizon = 1;
};

using FilterSpec = std::variant<AllPass, LowPassLinear, HighPassPower,
                                HighPassShiftInverse, TrajectoryPolySum>;

std::string filter_name(const FilterSpec& spec);

enum class FilterClass { AllPass, LowPass, HighPass, Mixed };

std::string to_string(FilterClass c);

// Symmetric eigendecomposition with PSD validation and descending order.
// Throws NotPsd when the smallest eigenvalue sits below the tolerance band,
// NoConvergence when the backend fails.
Spectrum eig_psd(const PsdMatrix& m);

// Scalar response f(lambda). For the polynomial filters, alpha*lambda > 1
// leaves the convergent range and raises UnstableFilter; the boundary
// alpha*lambda == 1 evaluates to the closed form (base 0).
double filter_response(const FilterSpec& spec, double lambda);

// U f(Lambda) U^T S through the eigendecomposition. AllPass is the identity
// operator and returns the signal unchanged. For the polynomial filters the
// guard is alpha * lambda_1 < 1 (strict), per the gradient-descent step-size
// analysis they encode.
Matrix apply_filter_spectral(const FilterSpec& spec, const PsdMatrix& m,
                             const Matrix& signal);

// f(M) S by direct matrix algebra (identity, product, shifted solve, matrix
// power, polynomial sum). No eigendecomposition on this path; it is the
// independent counterpart to apply_filter_spectral.
Matrix apply_filter_direct(const FilterSpec& spec, const PsdMatrix& m,
                           const Matrix& signal);

// Taxonomy by measured monotonicity of the response over the grid:
// constant 1 -> all-pass, non-decreasing -> low-pass, non-increasing and
// non-constant -> high-pass, anything else -> mixed.
FilterClass classify_filter(const FilterSpec& spec,
                            const std::vector<double>& lambda_grid);

// Response table as CSV with header "lambda,response".
std::string response_grid_csv(const FilterSpec& spec,
                              const std::vector<double>& lambda_grid);

}  // namespace unidd::spectral
