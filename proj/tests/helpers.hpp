#pragma once

#include "unidd/rng.hpp"
#include "unidd/types.hpp"

namespace unidd::test {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Random PSD matrix G^T G with G of shape k x d; rank min(k, d).
inline Matrix random_psd(Rng& rng, Index d, Index k) {
  const Matrix g = random_matrix(rng, k, d);
  return g.transpose() * g;
}

inline double rel_err(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / std::max(1.0, want.norm());
}

}  // namespace unidd::test
