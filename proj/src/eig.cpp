#include "qpe/numerics/eig.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "qpe/errors.hpp"

namespace qpe::numerics {

EigResult eig_sym(const std::vector<double>& a, std::size_t n) {
    if (a.size() != n * n)
        throw ShapeError("eig_sym: buffer size " + std::to_string(a.size()) +
                         " does not match n*n");
    Eigen::MatrixXd M(n, n);
    double amax = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            M(i, j) = a[i * n + j];
            amax = std::max(amax, std::abs(M(i, j)));
        }
    const double tol = 1e-12 * (amax > 0 ? amax : 1.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(M(i, j) - M(j, i)) > tol)
                throw ShapeError("eig_sym: matrix not symmetric at (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
    EigResult r;
    r.values.resize(n);
    r.vectors.assign(n, std::vector<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
        r.values[j] = es.eigenvalues()(j);
        for (std::size_t i = 0; i < n; ++i) r.vectors[j][i] = es.eigenvectors()(i, j);
    }
    return r;
}

int tridiag_count_below(const std::vector<double>& diag,
                        const std::vector<double>& off, double shift) {
    // LDL^T inertia scan; the classic guarded Sturm sequence.
    const std::size_t n = diag.size();
    int count = 0;
    double d = 1.0;
    const double tiny = std::numeric_limits<double>::min();
    for (std::size_t i = 0; i < n; ++i) {
        double e2 = (i == 0) ? 0.0 : off[i - 1] * off[i - 1];
        d = diag[i] - shift - e2 / d;
        if (d == 0.0) d = tiny;
        if (d < 0.0) ++count;
    }
    return count;
}

double tridiag_eigenvalue(const std::vector<double>& diag,
                          const std::vector<double>& off, std::size_t index,
                          double lo, double hi, double tol) {
    if (tol <= 0.0) {
        double scale = std::max(std::abs(lo), std::abs(hi));
        tol = 8.0 * std::numeric_limits<double>::epsilon() * std::max(scale, 1.0);
    }
    while (tridiag_count_below(diag, off, lo) > int(index)) lo -= (hi - lo);
    while (tridiag_count_below(diag, off, hi) <= int(index)) hi += (hi - lo);
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        if (tridiag_count_below(diag, off, mid) > int(index))
            hi = mid;
        else
            lo = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<double> tridiag_solve(const std::vector<double>& diag,
                                  const std::vector<double>& off,
                                  const std::vector<double>& rhs_in,
                                  double shift) {
    // Gaussian elimination with partial pivoting between adjacent rows
    const std::size_t n = diag.size();
    if (off.size() + 1 != n || rhs_in.size() != n)
        throw ShapeError("tridiag_solve: band/rhs sizes inconsistent");
    std::vector<double> a(n), b(n - 1), c(n > 1 ? n - 2 : 0, 0.0), rhs = rhs_in;
    for (std::size_t i = 0; i < n; ++i) a[i] = diag[i] - shift;
    std::vector<double> lower(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        lower[i] = off[i];
        b[i] = off[i];
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (std::abs(lower[i]) > std::abs(a[i])) {
            std::swap(a[i], lower[i]);
            double bn = a[i + 1];
            a[i + 1] = b[i];
            b[i] = bn;
            if (i + 2 < n) {
                c[i] = b[i + 1];
                b[i + 1] = 0.0;
            }
            std::swap(rhs[i], rhs[i + 1]);
        }
        double m = lower[i] / a[i];
        a[i + 1] -= m * b[i];
        if (i + 2 < n) b[i + 1] -= m * (i < c.size() ? c[i] : 0.0);
        rhs[i + 1] -= m * rhs[i];
    }
    std::vector<double> y(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = rhs[ii];
        if (ii + 1 < n) s -= b[ii] * y[ii + 1];
        if (ii + 2 < n && ii < c.size()) s -= c[ii] * y[ii + 2];
        double piv = a[ii];
        if (piv == 0.0) piv = std::numeric_limits<double>::min();
        y[ii] = s / piv;
    }
    return y;
}

std::vector<double> tridiag_eigenvector(const std::vector<double>& diag,
                                        const std::vector<double>& off,
                                        double eigenvalue) {
    const std::size_t n = diag.size();
    std::vector<double> x(n, 1.0);
    // two inverse-iteration sweeps with a slightly perturbed shift
    double scale = 0.0;
    for (double v : diag) scale = std::max(scale, std::abs(v));
    const double mu = eigenvalue * (1.0 + 8.0 * std::numeric_limits<double>::epsilon()) +
                      1e-14 * scale;
    for (int sweep = 0; sweep < 2; ++sweep) {
        std::vector<double> y = tridiag_solve(diag, off, x, mu);
        double nrm = 0.0;
        for (double v : y) nrm += v * v;
        nrm = std::sqrt(nrm);
        if (!(nrm > 0.0) || !std::isfinite(nrm))
            throw SingularOperatorError("tridiag_eigenvector: inverse iteration failed");
        for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / nrm;
    }
    return x;
}

} // namespace qpe::numerics
