#pragma once
#include <cstddef>
#include <string>
#include <vector>

namespace qpe::numerics {

struct EigResult {
    std::vector<double> values;              // ascending
    std::vector<std::vector<double>> vectors; // vectors[j] pairs with values[j]
};

// Dense symmetric eigensolve (ascending eigenvalues, orthonormal vectors).
// a is row-major n*n. Throws ShapeError if not square-symmetric within
// 1e-12 * max|a|.
EigResult eig_sym(const std::vector<double>& a, std::size_t n);

// Symmetric tridiagonal helpers used by the spectral module: the number of
// eigenvalues below `shift` via the Sturm/LDL inertia count, eigenvalue by
// index via bisection, eigenvector by inverse iteration.
int tridiag_count_below(const std::vector<double>& diag,
                        const std::vector<double>& off, double shift);

double tridiag_eigenvalue(const std::vector<double>& diag,
                          const std::vector<double>& off, std::size_t index,
                          double lo, double hi, double tol = 0.0);

std::vector<double> tridiag_eigenvector(const std::vector<double>& diag,
                                        const std::vector<double>& off,
                                        double eigenvalue);

// Solve (T - shift) x = rhs for symmetric tridiagonal T, partial pivoting.
std::vector<double> tridiag_solve(const std::vector<double>& diag,
                                  const std::vector<double>& off,
                                  const std::vector<double>& rhs,
                                  double shift = 0.0);

} // namespace qpe::numerics
