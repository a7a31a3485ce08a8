#include "unidd/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace unidd::spectral {

namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kPsdTol = 1e-8;
constexpr double kRcondFloor = 1e-12;

void check_filter_params(const FilterSpec& spec) {
  if (const auto* p = std::get_if<HighPassPower>(&spec)) {
    if (!(p->alpha > 0.0)) throw InvalidConfig("HighPassPower: alpha must be positive");
    if (p->exponent < 0) throw InvalidConfig("HighPassPower: exponent must be non-negative");
  } else if (const auto* s = std::get_if<HighPassShiftInverse>(&spec)) {
    if (!(s->beta >= 0.0)) throw InvalidConfig("HighPassShiftInverse: beta must be non-negative");
  } else if (const auto* t = std::get_if<TrajectoryPolySum>(&spec)) {
    if (!(t->alpha > 0.0)) throw InvalidConfig("TrajectoryPolySum: alpha must be positive");
    if (t->horizon < 1) throw InvalidConfig("TrajectoryPolySum: horizon must be positive");
  }
}

// Strict spectrum-level stability guard for the polynomial filters.
void check_stable_on_spectrum(const FilterSpec& spec, double lambda_max) {
  double alpha = 0.0;
  if (const auto* p = std::get_if<HighPassPower>(&spec)) {
    alpha = p->alpha;
  } else if (const auto* t = std::get_if<TrajectoryPolySum>(&spec)) {
    alpha = t->alpha;
  } else {
    return;
  }
  if (alpha * lambda_max >= 1.0) {
    std::ostringstream os;
    os << "polynomial filter divergent: alpha*lambda_1 = " << alpha * lambda_max << " >= 1";
    throw UnstableFilter(os.str());
  }
}

double int_pow(double base, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= base;
  return r;
}

}  // namespace

PsdMatrix::PsdMatrix(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols()) {
    throw NotSymmetric("PsdMatrix: matrix is not square");
  }
  const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
  const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTol * scale) {
    std::ostringstream os;
    os << "PsdMatrix: asymmetry " << asym << " exceeds " << kSymmetryTol * scale;
    throw NotSymmetric(os.str());
  }
}

std::string filter_name(const FilterSpec& spec) {
  struct Namer {
    std::string operator()(const AllPass&) const { return "all-pass"; }
    std::string operator()(const LowPassLinear&) const { return "low-pass-linear"; }
    std::string operator()(const HighPassPower& f) const {
      std::ostringstream os;
      os << "high-pass-power(alpha=" << f.alpha << ",p=" << f.exponent << ")";
      return os.str();
    }
    std::string operator()(const HighPassShiftInverse& f) const {
      std::ostringstream os;
      os << "high-pass-shift-inverse(beta=" << f.beta << ")";
      return os.str();
    }
    std::string operator()(const TrajectoryPolySum& f) const {
      std::ostringstream os;
      os << "trajectory-poly-sum(alpha=" << f.alpha << ",horizon=" << f.horizon << ")";
      return os.str();
    }
  };
  return std::visit(Namer{}, spec);
}

std::string to_string(FilterClass c) {
  switch (c) {
    case FilterClass::AllPass: return "all-pass";
    case FilterClass::LowPass: return "low-pass";
    case FilterClass::HighPass: return "high-pass";
    case FilterClass::Mixed: return "mixed";
  }
  return "unknown";
}

Spectrum eig_psd(const PsdMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m.matrix());
  if (solver.info() != Eigen::Success) {
    throw NoConvergence("eig_psd: eigensolver did not converge");
  }

  // Eigen returns ascending order; flip to descending.
  const Index d = m.dim();
  Spectrum s;
  s.eigvals = solver.eigenvalues().reverse();
  s.eigvecs = solver.eigenvectors().rowwise().reverse();

  const double lambda_max = d > 0 ? s.eigvals(0) : 0.0;
  const double tol = kPsdTol * std::max(1.0, lambda_max);
  for (Index i = 0; i < d; ++i) {
    if (s.eigvals(i) < -tol) {
      std::ostringstream os;
      os << "eig_psd: eigenvalue " << s.eigvals(i) << " below -" << tol;
      throw NotPsd(os.str());
    }
    if (s.eigvals(i) < 0.0) s.eigvals(i) = 0.0;
  }
  return s;
}

double filter_response(const FilterSpec& spec, double lambda) {
  check_filter_params(spec);
  if (!(lambda >= 0.0)) throw OutOfRange("filter_response: lambda must be non-negative");

  struct Eval {
    double lambda;
    double operator()(const AllPass&) const { return 1.0; }
    double operator()(const LowPassLinear&) const { return lambda; }
    double operator()(const HighPassPower& f) const {
      if (f.alpha * lambda > 1.0) {
        throw UnstableFilter("filter_response: alpha*lambda exceeds 1");
      }
      return int_pow(1.0 - f.alpha * lambda, f.exponent);
    }
    double operator()(const HighPassShiftInverse& f) const {
      const double denom = lambda + f.beta;
      if (denom <= 0.0) {
        throw SingularSystem("filter_response: lambda + beta is not positive");
      }
      return 1.0 / denom;
    }
    double operator()(const TrajectoryPolySum& f) const {
      if (f.alpha * lambda > 1.0) {
        throw UnstableFilter("filter_response: alpha*lambda exceeds 1");
      }
      const double base = 1.0 - f.alpha * lambda;
      double sum = 0.0;
      double term = 1.0;
      for (int p = 0; p < f.horizon; ++p) {
        sum += term;
        term *= base;
      }
      return sum;
    }
  };
  return std::visit(Eval{lambda}, spec);
}

Matrix apply_filter_spectral(const FilterSpec& spec, const PsdMatrix& m,
                             const Matrix& signal) {
  check_filter_params(spec);
  if (signal.rows() != m.dim()) {
    throw ShapeMismatch("apply_filter_spectral: signal row count does not match matrix dimension");
  }
  // f(M) is the identity operator for the all-pass filter, independent of M.
  if (std::holds_alternative<AllPass>(spec)) return signal;

  const Spectrum s = eig_psd(m);
  check_stable_on_spectrum(spec, s.eigvals.size() > 0 ? s.eigvals(0) : 0.0);

  Vector responses(s.eigvals.size());
  for (Index i = 0; i < s.eigvals.size(); ++i) {
    responses(i) = filter_response(spec, s.eigvals(i));
  }
  return s.eigvecs * (responses.asDiagonal() * (s.eigvecs.transpose() * signal));
}

Matrix apply_filter_direct(const FilterSpec& spec, const PsdMatrix& m,
                           const Matrix& signal) {
  check_filter_params(spec);
  if (signal.rows() != m.dim()) {
    throw ShapeMismatch("apply_filter_direct: signal row count does not match matrix dimension");
  }
  const Index d = m.dim();

  struct Eval {
    const Matrix& mat;
    const Matrix& sig;
    Index d;

    Matrix operator()(const AllPass&) const { return sig; }
    Matrix operator()(const LowPassLinear&) const { return mat * sig; }
    Matrix operator()(const HighPassPower& f) const {
      const Matrix a = Matrix::Identity(d, d) - f.alpha * mat;
      Matrix out = sig;
      for (int p = 0; p < f.exponent; ++p) out = a * out;
      return out;
    }
    Matrix operator()(const HighPassShiftInverse& f) const {
      const Matrix shifted = mat + f.beta * Matrix::Identity(d, d);
      Eigen::LDLT<Matrix> ldlt(shifted);
      if (ldlt.info() != Eigen::Success || ldlt.rcond() < kRcondFloor) {
        throw SingularSystem("apply_filter_direct: shifted system is numerically singular");
      }
      Matrix out = ldlt.solve(sig);
      if (!out.allFinite()) {
        throw SingularSystem("apply_filter_direct: shifted solve produced non-finite values");
      }
      return out;
    }
    Matrix operator()(const TrajectoryPolySum& f) const {
      const Matrix a = Matrix::Identity(d, d) - f.alpha * mat;
      Matrix acc = Matrix::Zero(sig.rows(), sig.cols());
      Matrix term = sig;
      for (int p = 0; p < f.horizon; ++p) {
        acc += term;
        term = a * term;
      }
      return acc;
    }
  };
  return std::visit(Eval{m.matrix(), signal, d}, spec);
}

FilterClass classify_filter(const FilterSpec& spec,
                            const std::vector<double>& lambda_grid) {
  if (lambda_grid.size() < 2) {
    throw InvalidConfig("classify_filter: grid needs at least 2 points");
  }
  for (std::size_t i = 1; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] > lambda_grid[i - 1])) {
      throw InvalidConfig("classify_filter: grid must be strictly ascending");
    }
  }
  std::vector<double> r(lambda_grid.size());
  double rmax = 0.0;
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    r[i] = filter_response(spec, lambda_grid[i]);
    rmax = std::max(rmax, std::abs(r[i]));
  }
  const double eps = 1e-12 * std::max(1.0, rmax);

  bool all_one = true;
  bool non_decreasing = true;
  bool non_increasing = true;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (std::abs(r[i] - 1.0) > eps) all_one = false;
    if (i > 0) {
      if (r[i] < r[i - 1] - eps) non_decreasing = false;
      if (r[i] > r[i - 1] + eps) non_increasing = false;
    }
  }
  if (all_one) return FilterClass::AllPass;
  if (non_decreasing) return FilterClass::LowPass;
  if (non_increasing) return FilterClass::HighPass;
  return FilterClass::Mixed;
}

std::string response_grid_csv(const FilterSpec& spec,
                              const std::vector<double>& lambda_grid) {
  std::ostringstream os;
  os.precision(12);
  os << "lambda,response\n";
  for (double l : lambda_grid) {
    os << l << ',' << filter_response(spec, l) << '\n';
  }
  return os.str();
}

}  // namespace unidd::spectral
