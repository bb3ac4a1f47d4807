#include "qpe/frequencies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "qpe/potential.hpp"
#include "qpe/shear.hpp"
#include "qpe/spectrum.hpp"

namespace qpe::frequencies {
namespace {

double bracket_norm(const std::vector<long>& ell) {
    double s = 0.0;
    for (long v : ell) s += double(v) * double(v);
    return std::max(1.0, std::sqrt(s));
}

// iterate all nonzero lattice vectors with |l|_inf <= L, visiting each
// once; fn(l) is called with a reusable buffer
template <typename Fn>
void for_each_ell(int dim, int L, Fn&& fn) {
    std::vector<long> ell(std::size_t(dim), -long(L));
    const long lo = -long(L), hi = long(L);
    while (true) {
        bool zero = true;
        for (long v : ell)
            if (v != 0) { zero = false; break; }
        if (!zero) fn(ell);
        int k = dim - 1;
        while (k >= 0) {
            if (ell[std::size_t(k)] < hi) { ++ell[std::size_t(k)]; break; }
            ell[std::size_t(k)] = lo;
            --k;
        }
        if (k < 0) break;
    }
}

} // namespace

void DiophantineSpec::validate() const {
    if (!(upsilon > 0.0 && upsilon < 1.0))
        throw DomainError("upsilon must lie in (0,1)");
    if (!(tau >= 1.0)) throw DomainError("tau must be at least 1");
    if (L_max < 10) throw DomainError("L_max must be at least 10");
}

DiophantineResult is_diophantine(const std::vector<double>& omega,
                                 const DiophantineSpec& d) {
    d.validate();
    if (omega.empty()) throw DomainError("omega must be nonempty");
    double norm = 0.0;
    for (double w : omega) norm += w * w;
    if (!(norm > 0.0)) throw DomainError("omega must be nonzero");

    DiophantineResult res;
    res.worst_scaled = std::numeric_limits<double>::infinity();
    for_each_ell(int(omega.size()), d.L_max, [&](const std::vector<long>& ell) {
        double dot = 0.0;
        for (std::size_t i = 0; i < omega.size(); ++i)
            dot += omega[i] * double(ell[i]);
        const double scaled =
            std::abs(dot) * std::pow(bracket_norm(ell), d.tau);
        if (scaled < res.worst_scaled) {
            res.worst_scaled = scaled;
            res.worst_raw = std::abs(dot);
            res.worst_ell = ell;
        }
    });
    res.pass = res.worst_scaled >= d.upsilon;
    return res;
}

std::vector<double> omega_of_E(int kappa0, double r, int m, int S, double E) {
    potential::PotentialSpec spec =
        potential::PotentialSpec::constrained(kappa0, r, m, S);
    spec.E = E;  // auxiliary-parameter excursion off the constraint
    spec.validate();
    auto [corr, eq] = shear::fixed_point_equilibrium(spec);
    const auto sp = spectrum::compute_spectrum(spec, corr, kappa0 + 3);
    return spectrum::frequency_vector(sp);
}

EScan scan_E_diophantine(int kappa0, double r, int m, int S, double E_lo,
                         double E_hi, double upsilon_bar, double tau_bar,
                         int n_grid, int L_max) {
    if (!(E_hi > E_lo)) throw DomainError("empty E range");
    if (n_grid < 2) throw DomainError("n_grid must be at least 2");
    if (!(tau_bar >= double(kappa0)))
        throw DomainError("tau_bar below the transversality order bound");
    DiophantineSpec d{upsilon_bar, tau_bar, L_max};
    EScan scan;
    int failing = 0;
    for (int i = 0; i < n_grid; ++i) {
        EScanEntry e;
        e.E = E_lo + (E_hi - E_lo) * double(i) / double(n_grid - 1);
        std::vector<double> omega;
        try {
            omega = omega_of_E(kappa0, r, m, S, e.E);
        } catch (const std::runtime_error& err) {
            throw DomainError("spectral pipeline failed at E = " +
                              std::to_string(e.E) + ": " + err.what());
        }
        const auto res = is_diophantine(omega, d);
        e.pass = res.pass;
        e.worst_ell = res.worst_ell;
        e.worst_scaled = res.worst_scaled;
        if (!e.pass) ++failing;
        scan.entries.push_back(std::move(e));
    }
    scan.failing_fraction = double(failing) / double(n_grid);
    return scan;
}

ResonanceReport transversality_probe(int kappa0, double r, int m, int S,
                                     double E, double h, int n_max,
                                     int L_probe) {
    if (n_max < 0 || n_max > 4)
        throw DomainError("n_max must lie in [0,4] for a 5-point stencil");
    if (!(h > 0.0) || !(E - 2.0 * h > 0.0))
        throw DomainError("stencil leaves the admissible E range");
    if (L_probe < 1) throw DomainError("L_probe must be positive");

    // omega at E + k h for k = -2..2
    std::vector<std::vector<double>> w(5);
    for (int k = -2; k <= 2; ++k)
        w[std::size_t(k + 2)] = omega_of_E(kappa0, r, m, S, E + double(k) * h);
    const std::size_t dim = w[2].size();

    // derivative tables d[n][i], n = 0..n_max, with second-order central
    // stencils; wide-step variants cross-validate orders 1 and 2
    std::vector<std::vector<double>> d(std::size_t(n_max) + 1,
                                       std::vector<double>(dim, 0.0));
    double scale = 0.0;
    for (std::size_t i = 0; i < dim; ++i) scale = std::max(scale, std::abs(w[2][i]));
    for (std::size_t i = 0; i < dim; ++i) {
        d[0][i] = w[2][i];
        if (n_max >= 1) d[1][i] = (w[3][i] - w[1][i]) / (2.0 * h);
        if (n_max >= 2) d[2][i] = (w[3][i] - 2.0 * w[2][i] + w[1][i]) / (h * h);
        if (n_max >= 3)
            d[3][i] = (w[4][i] - 2.0 * w[3][i] + 2.0 * w[1][i] - w[0][i]) /
                      (2.0 * h * h * h);
        if (n_max >= 4)
            d[4][i] = (w[4][i] - 4.0 * w[3][i] + 6.0 * w[2][i] - 4.0 * w[1][i] +
                       w[0][i]) /
                      (h * h * h * h);

        if (n_max >= 1) {
            const double wide1 = (w[4][i] - w[0][i]) / (4.0 * h);
            if (std::abs(wide1 - d[1][i]) >
                0.25 * std::max(std::abs(wide1), std::abs(d[1][i])) + 1e-7 * scale)
                throw StepSizeError("first derivative stencil disagreement at "
                                    "component " + std::to_string(i));
        }
        if (n_max >= 2) {
            const double wide2 =
                (w[4][i] - 2.0 * w[2][i] + w[0][i]) / (4.0 * h * h);
            if (std::abs(wide2 - d[2][i]) >
                0.4 * std::max(std::abs(wide2), std::abs(d[2][i])) +
                    1e-5 * scale / h)
                throw StepSizeError("second derivative stencil disagreement at "
                                    "component " + std::to_string(i));
        }
    }

    ResonanceReport rep;
    rep.window_lo = E - 2.0 * h;
    rep.window_hi = E + 2.0 * h;
    rep.rho0_estimate = std::numeric_limits<double>::infinity();
    int count = 0;
    for_each_ell(int(dim), L_probe, [&](const std::vector<long>& ell) {
        ++count;
        const double br = bracket_norm(ell);
        double best = 0.0;
        int best_n = 0;
        for (int n = 0; n <= n_max; ++n) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i)
                dot += d[std::size_t(n)][i] * double(ell[i]);
            const double v = std::abs(dot) / br;
            if (v > best) { best = v; best_n = n; }
        }
        if (best < rep.rho0_estimate) {
            rep.rho0_estimate = best;
            rep.m0_used = best_n;
        }
    });
    rep.samples = count;
    return rep;
}

ResonanceReport resonance_measure(
    int kappa0, double r, int m, int S, double E, double eps,
    const DiophantineSpec& d, int n_samples,
    const std::function<std::vector<double>(double)>& omega_map) {
    d.validate();
    if (!(eps > 0.0)) throw DomainError("eps must be positive");
    if (n_samples < 2) throw DomainError("need at least 2 samples");
    const double half = std::sqrt(eps);

    ResonanceReport rep;
    rep.window_lo = E - half;
    rep.window_hi = E + half;
    rep.samples = n_samples;
    int failing = 0;
    for (int i = 0; i < n_samples; ++i) {
        const double A =
            rep.window_lo + (rep.window_hi - rep.window_lo) *
                                (double(i) + 0.5) / double(n_samples);
        const std::vector<double> omega =
            omega_map ? omega_map(A) : omega_of_E(kappa0, r, m, S, A);
        const auto res = is_diophantine(omega, d);
        if (!res.pass) {
            ++failing;
            if (rep.worst_pairs.size() < 16) {
                rep.worst_pairs.emplace_back(A, res.worst_ell);
                rep.worst_values.push_back(res.worst_raw);
            }
        }
    }
    rep.failing_fraction = double(failing) / double(n_samples);
    return rep;
}

std::string report_json(const ResonanceReport& rep) {
    std::ostringstream os;
    os.precision(16);
    os << "{\"window\":[" << rep.window_lo << "," << rep.window_hi << "],"
       << "\"samples\":" << rep.samples << ","
       << "\"failing_fraction\":" << rep.failing_fraction << ","
       << "\"rho0_estimate\":" << rep.rho0_estimate << ","
       << "\"m0_used\":" << rep.m0_used << ",\"worst_pairs\":[";
    for (std::size_t i = 0; i < rep.worst_pairs.size(); ++i) {
        if (i) os << ",";
        os << "{\"A\":" << rep.worst_pairs[i].first << ",\"ell\":[";
        for (std::size_t k = 0; k < rep.worst_pairs[i].second.size(); ++k) {
            if (k) os << ",";
            os << rep.worst_pairs[i].second[k];
        }
        os << "],\"value\":" << rep.worst_values[i] << "}";
    }
    os << "]}";
    return os.str();
}

} // namespace qpe::frequencies
