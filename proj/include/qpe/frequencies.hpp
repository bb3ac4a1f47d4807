#pragma once
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "qpe/errors.hpp"

namespace qpe::frequencies {

// Diophantine condition |omega . l| >= upsilon <l>^{-tau} for all nonzero
// integer vectors l, truncated at |l|_inf <= L_max. The bracket <l> is
// max(1, |l|_2).
struct DiophantineSpec {
    double upsilon = 0.0;
    double tau = 1.0;
    int L_max = 100;
    void validate() const;
};

struct DiophantineResult {
    bool pass = false;
    std::vector<long> worst_ell;  // minimizer of |omega.l| <l>^tau
    double worst_scaled = 0.0;    // min value of |omega.l| <l>^tau
    double worst_raw = 0.0;       // |omega.l| at the minimizer
};

DiophantineResult is_diophantine(const std::vector<double>& omega,
                                 const DiophantineSpec& d);

// frequency vector of the linearized operator at well depth E (all other
// potential parameters fixed); recomputes equilibrium and spectrum
std::vector<double> omega_of_E(int kappa0, double r, int m, int S, double E);

struct EScanEntry {
    double E = 0.0;
    bool pass = false;
    std::vector<long> worst_ell;
    double worst_scaled = 0.0;
};

struct EScan {
    std::vector<EScanEntry> entries;
    double failing_fraction = 0.0;
};

EScan scan_E_diophantine(int kappa0, double r, int m, int S, double E_lo,
                         double E_hi, double upsilon_bar, double tau_bar,
                         int n_grid, int L_max = 100);

struct ResonanceReport {
    double window_lo = 0.0, window_hi = 0.0;
    int samples = 0;
    double failing_fraction = 0.0;
    std::vector<std::pair<double, std::vector<long>>> worst_pairs;  // (A, l)
    std::vector<double> worst_values;  // |omega.l| per recorded failure
    double rho0_estimate = 0.0;
    int m0_used = -1;  // derivative order achieving the floor
};

// empirical transversality floor: min over lattice directions of
// max_{0<=n<=n_max} |d^n/dE^n (omega(E) . l)| / <l>, derivatives from a
// 5-point stencil with Richardson cross-validation
ResonanceReport transversality_probe(int kappa0, double r, int m, int S,
                                     double E, double h, int n_max,
                                     int L_probe = 10);

// sample the auxiliary window [E - sqrt(eps), E + sqrt(eps)] uniformly and
// check the Diophantine condition per sample; omega_map defaults to the
// unperturbed spectral frequencies
ResonanceReport resonance_measure(
    int kappa0, double r, int m, int S, double E, double eps,
    const DiophantineSpec& d, int n_samples,
    const std::function<std::vector<double>(double)>& omega_map = {});

std::string report_json(const ResonanceReport& rep);

} // namespace qpe::frequencies
