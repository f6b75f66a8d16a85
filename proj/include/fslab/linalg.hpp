#pragma once

#include <array>
#include <vector>

namespace fslab {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n*n).
// Returns eigenvalues in descending order with matching eigenvectors
// (eigenvectors[k] is the k-th eigenvector).
struct EigenResult {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
};
EigenResult jacobi_eigh(const std::vector<double>& matrix, int n);

// Singular values of an arbitrary rows*cols matrix via the Gram matrix,
// descending.
std::vector<double> singular_values(const std::vector<double>& matrix, int rows, int cols);

// Projection of row vectors onto their top-2 principal components. Signs are
// fixed deterministically (largest-magnitude coefficient positive).
std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& rows);

}  // namespace fslab
