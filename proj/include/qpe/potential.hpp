#pragma once
#include <cstddef>
#include <string>
#include <vector>

#include "qpe/errors.hpp"
#include "qpe/numerics/jet.hpp"

namespace qpe::potential {

// Parameters of the engineered shear potential
//   Q(y) = -E^2 ( h_m(y/r) + g(y/r) ),
// where h_m is a wall-to-well profile with transition at |y| = r and g is an
// even polynomial corrector that kills odd derivatives of Q at the anchors.
struct PotentialSpec {
    double E = 0.0;   // well depth scale, Q ~ -E^2 inside |y| < r
    double r = 0.0;   // half-width of the well, in (0,1)
    int m = 0;        // transition sharpness
    int S = 3;        // number of odd derivative orders killed per anchor
    int kappa0 = 1;   // number of interior critical points per half-channel
    double T = 0.0;   // corrector far root, > 1/r

    double gamma() const;      // protection radius r^5 around |y| = r
    void validate() const;

    // E chosen from the resonance constraint E * r = (kappa0 + 1/4) * pi
    static PotentialSpec constrained(int kappa0, double r, int m, int S = 3);
};

// Even polynomial corrector in the scaled variable z = y/r, stored in product
// form: per positive anchor zt_j, coefficients a_{j,2k-1} of the basis
//   f_{j,2k-1}(z) = (z - zt_j)^{2k-1}/(2k-1)! * fhat_j(z),
//   fhat_j(z)     = (z^2 - T^2)^{2S} * prod_{signed anchors b != j} (z - z_b)^{2S},
// mirrored to -zt_j with flipped sign so the total is even.
struct Corrector {
    std::vector<double> anchors;                    // positive anchors in y units
    std::vector<std::vector<double>> coefficients;  // [anchor][k-1] = a_{j,2k-1}
    int degree = 0;                                 // polynomial degree of g
};

// Wall profile h_m(z) = ((cosh z / cosh 1)^m + 1)^{-1}, evaluated in the
// overflow-safe sigmoid form. h_m(1) = 1/2 exactly for any m.
double h_profile(double z, double m);
numerics::Jet h_profile(const numerics::Jet& z, double m);

// Solve the lower-triangular Hermite conditions so that all odd derivatives
// of Q up to order 2S-1 vanish at the (signed) anchors. Anchors are given in
// y units, must be distinct positive values below r.
Corrector build_corrector(const PotentialSpec& spec,
                          const std::vector<double>& anchors);

// corrector polynomial g and derivatives at scaled argument z (jets)
numerics::Jet eval_corrector(const PotentialSpec& spec, const Corrector& corr,
                             const numerics::Jet& z);

// Q and derivatives with respect to y up to order n (n <= 2S+1)
numerics::Jet eval_Q(const PotentialSpec& spec, const Corrector& corr, double y,
                     std::size_t n);
// value-only fast path for integrators
double eval_Q_value(const PotentialSpec& spec, const Corrector& corr, double y);

// limit potential: 0 outside |y| > r, -E^2 inside, undefined at |y| = r
double eval_Q_infty(const PotentialSpec& spec, double y);

std::string to_json(const PotentialSpec& spec, const Corrector& corr);
void from_json(const std::string& text, PotentialSpec& spec, Corrector& corr);

} // namespace qpe::potential
