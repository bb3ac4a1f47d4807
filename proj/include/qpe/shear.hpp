#pragma once
#include <string>
#include <utility>
#include <vector>

#include "qpe/errors.hpp"
#include "qpe/numerics/grid.hpp"
#include "qpe/potential.hpp"

namespace qpe::shear {

// Even stream function psi solving psi''' = Q psi' with Couette-like far
// field, sampled with derivatives on a symmetric grid. u = psi' is odd and
// satisfies u'' = Q u; all arrays extend the half-channel solve by parity.
struct ShearEquilibrium {
    potential::PotentialSpec spec;
    potential::Corrector corrector;
    numerics::Grid1D grid;                 // [-1, 1], 2n+1 nodes
    std::vector<double> psi, dpsi, d2psi, d3psi;
    std::vector<double> critical_points;   // 0 = yt_0 < yt_1 < ... < yt_kappa0
    double A = 0.0;                        // outer shift r - 1/E^2
    double B = 0.0;                        // inner amplitude 1/(E^2 sin(Er))
    std::vector<std::pair<double, double>> strips;  // |y| bands between criticals

    // C1 evaluation off the grid (cubic Hermite with exact node derivatives)
    double eval_psi(double y) const;
    double eval_dpsi(double y) const;
    double eval_d2psi(double y) const;
};

// number of half-channel steps: >= 4096, power of two, resolves both the
// transition width 1/m and the oscillation wavelength 2*pi/E
std::size_t grid_size(const potential::PotentialSpec& spec);

// n_half = 0 picks grid_size(spec); an explicit value overrides it for
// resolution studies
ShearEquilibrium solve_shear(const potential::PotentialSpec& spec,
                             const potential::Corrector& corr,
                             std::size_t n_half = 0);

// positive zeros of psi' in (0, r - gamma), refined on the C1 interpolant;
// returns {0} followed by the kappa0 interior points
std::vector<double> find_critical_points(const ShearEquilibrium& eq);

// closes the circularity: corrector anchors must be the critical points of
// the equilibrium the corrector itself produces
std::pair<potential::Corrector, ShearEquilibrium>
fixed_point_equilibrium(const potential::PotentialSpec& spec);

// discrete H^3 distance between psi and the Couette stream function y^2/2
double couette_distance(const ShearEquilibrium& eq);

// even Taylor coefficients psi^(2n)(yt_p)/(2n)! for n = 0..order, from the
// ODE recurrence seeded by the interpolated slope at the critical point
std::vector<double> taylor_at_critical(const ShearEquilibrium& eq, int p,
                                       int order);

void write_csv(const ShearEquilibrium& eq, const std::string& path);
std::string manifest_json(const ShearEquilibrium& eq);

} // namespace qpe::shear
