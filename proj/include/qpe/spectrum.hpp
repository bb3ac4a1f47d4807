#pragma once
#include <string>
#include <vector>

#include "qpe/errors.hpp"
#include "qpe/numerics/grid.hpp"
#include "qpe/potential.hpp"

namespace qpe::spectrum {

// Even-sector spectrum of L = -d^2/dy^2 + Q on [-1,1] with Dirichlet walls.
// Eigenvalues ascend; frequencies are sqrt(-mu_j) for the first kappa0
// eigenvalues (descending in j); omega_vec is the same set sorted ascending,
// the convention every downstream consumer uses.
struct Spectrum {
    numerics::Grid1D grid;                       // [-1,1], 2n+1 nodes
    std::vector<double> eigenvalues;             // mu_1 < mu_2 < ...
    std::vector<std::vector<double>> eigenfunctions;  // [j][node], L2-normalized
    int negative_count = 0;
    int kappa0 = 0;
    std::vector<double> frequencies;             // lambda_j = sqrt(-mu_j), j <= kappa0
    std::vector<double> omega_vec;               // ascending copy of frequencies
};

// Roots of the limit secular equation with their asymptotic data. lambdas[j-1]
// is the root seeded at E cos(pi alpha0(j)), descending in j.
struct SecularRoots {
    std::vector<double> lambdas;
    std::vector<double> alpha0;
    std::vector<double> alpha2;
    std::vector<double> beta;
};

// F(lambda) = lambda cos(r s) coth((1-r) lambda) - s sin(r s), s = sqrt(E^2-lambda^2)
double secular_eval(double E, double r, double lambda);

// alpha0(j) in (0, 1/2) solving sin(pi a) = (j - 1/2 - a)/(kappa0 + 1/4)
double alpha0_root(int j, int kappa0);

SecularRoots secular_roots(double E, double r, int kappa0);

// FD discretization: Neumann closure at 0 (even sector), Dirichlet at 1,
// n interior steps; eigenvalues Richardson-extrapolated from (n, 2n).
// n = 0 picks a resolution from the spec. Throws SpectralCountError when the
// negative count falls below kappa0 or mu_1 <= -E^2 (m below threshold);
// gated = false skips those two gates for convergence diagnostics at small m.
Spectrum compute_spectrum(const potential::PotentialSpec& spec,
                          const potential::Corrector& corr, int k_max,
                          std::size_t n = 0, bool gated = true);

// piecewise cos/sinh eigenfunction of the limit operator, L2-normalized,
// positive at 0; throws DomainError when lambda does not satisfy the
// matching (derivative jump) condition
double limit_eigenfunction(double E, double r, double lambda, double y);

// solve -u'' + Q u = f, u even, u(+-1) = 0, on the uniform symmetric grid
// carrying f (odd node count); condition estimate guards the solve
std::vector<double> apply_Lm_inverse(const potential::PotentialSpec& spec,
                                     const potential::Corrector& corr,
                                     const std::vector<double>& f);

// ascending positive frequency vector (lambda_kappa0, ..., lambda_1)
std::vector<double> frequency_vector(const Spectrum& sp);

std::string to_json(const Spectrum& sp);
void write_csv(const Spectrum& sp, const std::string& path);

} // namespace qpe::spectrum
