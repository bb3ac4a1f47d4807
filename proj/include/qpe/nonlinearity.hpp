#pragma once
#include <cstddef>
#include <string>
#include <vector>

#include "qpe/errors.hpp"
#include "qpe/numerics/grid.hpp"
#include "qpe/numerics/interp.hpp"
#include "qpe/shear.hpp"

namespace qpe::nonlinearity {

// Even Taylor data of psi' about a critical point yt. psi(yt+d) is even in d
// up to the kill order; the first surviving odd coefficient (u_taylor back())
// is the seam mismatch between the two adjacent strips.
struct EdgeChart {
    double y_crit = 0.0;
    double psi_crit = 0.0;
    std::vector<double> u_taylor;  // Taylor coeffs of psi' in d = y - y_crit
    double span = 0.0;             // validity half-width in psi
};

// One strip I_p between consecutive critical points (positive side): the
// nonlinearity F_p with F_p(psi(y)) = psi''(y), represented as a cubic
// Hermite interpolant over a uniform psi grid with exact slope data
// F_p'(psi(y)) = Q(y).
struct StripNonlinearity {
    int p = 0;
    double y_lo = 0.0, y_hi = 0.0;
    double psi_lo = 0.0, psi_hi = 0.0;  // sorted range of psi over the strip
    int direction = 0;                  // sign of psi' inside the strip
    numerics::CubicHermite F;
};

struct StripSet {
    shear::ShearEquilibrium eq;
    std::vector<StripNonlinearity> strips;  // p = 0..kappa0
    std::vector<EdgeChart> charts;          // charts[p] at critical point p
    double eta_bar = 0.0;                   // largest admissible blend width
};

StripSet build_strip_nonlinearities(const shear::ShearEquilibrium& eq,
                                    std::size_t samples_per_strip = 16384);

int strip_of_y(const StripSet& s, double y);
double y_from_psi(const StripSet& s, int p, double psi);

// F_p(psi); values slightly beyond a critical-value endpoint continue through
// the edge chart (analytic in delta^2), beyond the wall endpoint it throws
double eval_F(const StripSet& s, int p, double psi);

// n-th psi derivative, n <= S; n = 1 at psi(y) reproduces Q(y)
double eval_F_derivative(const StripSet& s, int p, double psi, int n);

// C-infinity cutoff: 1 on |t|<=1, 0 on |t|>=2, strictly monotone between
double cutoff_chi(double t);
double cutoff_chi_prime(double t);

// Blend family F_{p,eta} plus the shift data the rescaled system needs.
struct RegularizedFamily {
    StripSet strips;
    double eta = 0.0;
    int S = 0;
    numerics::Grid1D grid;         // [-1,1] nodes carrying forcing/shift
    std::vector<double> forcing;   // f_eta = F_{p,eta}(psi_m) - psi_m''
    std::vector<double> shift;     // h_eta
    std::vector<double> dshift;    // h_eta'
    std::vector<double> d2shift;   // h_eta''
    bool has_shift = false;

    double eval_shift(double y) const;
    double eval_dshift(double y) const;
};

RegularizedFamily regularize(const StripSet& s, double eta);

double eval_F_eta(const RegularizedFamily& fam, int p, double psi);
double eval_F_eta_derivative(const RegularizedFamily& fam, int p, double psi);

// Picard iteration h = (-L_m)^{-1}(f_eta + g_eta(., h)); fills the shift
// fields of fam and returns the grid samples of h_eta
std::vector<double> solve_shift(RegularizedFamily& fam,
                                std::size_t n_half = 4096);

// g_eta(y, phi) = F_eta(psi_m + phi) - F_eta(psi_m) - Q phi, evaluated in the
// cancellation-free preimage form
double eval_g_eta(const RegularizedFamily& fam, double y, double phi);

// q_eps(y, zeta) = eps^{-3/2} (g_eta(y, h+eps zeta) - g_eta(y, h))
double eval_q_eps(const RegularizedFamily& fam, double eps, double y,
                  double zeta);
// partial derivative in zeta
double eval_q_eps_dzeta(const RegularizedFamily& fam, double eps, double y,
                        double zeta);

void write_strip_csv(const StripSet& s, const std::string& path);

} // namespace qpe::nonlinearity
