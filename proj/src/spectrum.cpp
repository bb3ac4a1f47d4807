#include "qpe/spectrum.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "qpe/numerics/eig.hpp"
#include "qpe/numerics/roots.hpp"

namespace qpe::spectrum {

using numerics::Grid1D;

double secular_eval(double E, double r, double lambda) {
    if (!(lambda > 0.0 && lambda < E))
        throw DomainError("secular equation defined on 0 < lambda < E");
    const double s = std::sqrt(E * E - lambda * lambda);
    const double coth = 1.0 / std::tanh((1.0 - r) * lambda);
    return lambda * std::cos(r * s) * coth - s * std::sin(r * s);
}

double alpha0_root(int j, int kappa0) {
    if (j < 1) throw DomainError("asymptotic index j starts at 1");
    return numerics::find_root(
        [&](double a) {
            return std::sin(std::numbers::pi * a) -
                   (double(j) - 0.5 - a) / (double(kappa0) + 0.25);
        },
        0.0, 0.5, 1e-15);
}

SecularRoots secular_roots(double E, double r, int kappa0) {
    const double target = (double(kappa0) + 0.25) * std::numbers::pi;
    if (std::abs(E * r - target) > 1e-12 * std::max(1.0, target))
        throw DomainError("parameters violate the constraint E r = (kappa0+1/4) pi");

    // full sign scan of (0, E)
    const int panels = 10000;
    const double eps = 1e-9 * E;
    std::vector<double> all;
    double prev_x = eps, prev_f = secular_eval(E, r, prev_x);
    for (int i = 1; i <= panels; ++i) {
        const double x = eps + (E - 2.0 * eps) * double(i) / double(panels);
        const double f = secular_eval(E, r, x);
        if (prev_f * f < 0.0)
            all.push_back(numerics::find_root(
                [&](double t) { return secular_eval(E, r, t); }, prev_x, x, 1e-14));
        prev_x = x;
        prev_f = f;
    }

    SecularRoots out;
    std::vector<bool> used(all.size(), false);
    for (int j = 1; j <= kappa0; ++j) {
        const double a0 = alpha0_root(j, kappa0);
        const double seed = E * std::cos(std::numbers::pi * a0);
        std::size_t best = all.size();
        double gap = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (used[i]) continue;
            const double g = std::abs(all[i] - seed);
            if (g < gap) {
                gap = g;
                best = i;
            }
        }
        if (best == all.size() || gap > 0.25 * E)
            throw RootCountError("no secular root near the asymptotic seed for j=" +
                                 std::to_string(j));
        used[best] = true;
        const double ca = std::cos(std::numbers::pi * a0);
        const double sa = std::sin(std::numbers::pi * a0);
        const double sign = (j % 2 == 1) ? 1.0 : -1.0;
        out.lambdas.push_back(all[best]);
        out.alpha0.push_back(a0);
        out.alpha2.push_back(-2.0 * ca * std::cos(target * sa) /
                             (sign * std::numbers::pi * (1.0 + target * ca)));
        out.beta.push_back(std::exp((target - E) * ca));
    }
    for (std::size_t j = 0; j + 1 < out.alpha0.size(); ++j)
        if (!(out.alpha0[j] < out.alpha0[j + 1]))
            throw RootCountError("alpha0 sequence not increasing");
    return out;
}

namespace {

struct HalfOperator {
    std::vector<double> d, e;  // symmetric tridiagonal after Neumann similarity
    double h = 0.0;
};

// even sector on [0,1]: nodes i*h, i=0..n-1 are the unknowns, Dirichlet node
// y=1 eliminated; ghost reflection at 0 symmetrized by scaling row 0
HalfOperator half_operator(const potential::PotentialSpec& spec,
                           const potential::Corrector& corr, std::size_t n) {
    HalfOperator op;
    op.h = 1.0 / double(n);
    op.d.resize(n);
    op.e.assign(n - 1, -1.0 / (op.h * op.h));
    op.e[0] = -std::numbers::sqrt2 / (op.h * op.h);
    for (std::size_t i = 0; i < n; ++i)
        op.d[i] = 2.0 / (op.h * op.h) +
                  potential::eval_Q_value(spec, corr, double(i) * op.h);
    return op;
}

std::vector<double> lowest_eigenvalues(const HalfOperator& op, int k) {
    double lo = op.d[0], hi = op.d[0];
    for (std::size_t i = 0; i < op.d.size(); ++i) {
        const double band = (i > 0 ? std::abs(op.e[i - 1]) : 0.0) +
                            (i + 1 < op.d.size() ? std::abs(op.e[i]) : 0.0);
        lo = std::min(lo, op.d[i] - band);
        hi = std::max(hi, op.d[i] + band);
    }
    std::vector<double> w(std::size_t(k), 0.0);
    for (int j = 0; j < k; ++j)
        w[std::size_t(j)] = numerics::tridiag_eigenvalue(op.d, op.e, std::size_t(j), lo, hi);
    return w;
}

std::size_t default_resolution(const potential::PotentialSpec& spec) {
    return std::bit_ceil(std::max<std::size_t>(8192, std::size_t(4 * spec.m)));
}

} // namespace

Spectrum compute_spectrum(const potential::PotentialSpec& spec,
                          const potential::Corrector& corr, int k_max,
                          std::size_t n, bool gated) {
    spec.validate();
    if (k_max < spec.kappa0 + 3)
        throw DomainError("k_max must be at least kappa0 + 3");
    if (n == 0) n = default_resolution(spec);

    const HalfOperator op = half_operator(spec, corr, n);
    const HalfOperator op2 = half_operator(spec, corr, 2 * n);
    const std::vector<double> w1 = lowest_eigenvalues(op, k_max);
    const std::vector<double> w2 = lowest_eigenvalues(op2, k_max);

    Spectrum sp;
    sp.kappa0 = spec.kappa0;
    sp.grid = Grid1D::uniform(-1.0, 1.0, 2 * n + 1);
    sp.eigenvalues.resize(std::size_t(k_max));
    for (int j = 0; j < k_max; ++j)
        sp.eigenvalues[std::size_t(j)] =
            (4.0 * w2[std::size_t(j)] - w1[std::size_t(j)]) / 3.0;

    // negative count on the fine operator (exact inertia at 0)
    sp.negative_count = numerics::tridiag_count_below(op2.d, op2.e, 0.0);
    if (gated && sp.negative_count < spec.kappa0)
        throw SpectralCountError("negative eigenvalue count " +
                                 std::to_string(sp.negative_count) +
                                 " fell below kappa0 (m too small)");
    if (gated && !(sp.eigenvalues[0] > -spec.E * spec.E))
        throw SpectralCountError("ground eigenvalue at or below -E^2 (m too small)");

    sp.eigenfunctions.assign(std::size_t(k_max), {});
    for (int j = 0; j < k_max; ++j) {
        std::vector<double> v =
            numerics::tridiag_eigenvector(op.d, op.e, w1[std::size_t(j)]);
        v[0] *= std::numbers::sqrt2;  // undo the Neumann similarity scaling
        // extend evenly to [-1,1] and L2-normalize by trapezoid quadrature
        std::vector<double> full(2 * n + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            full[n + i] = v[i];
            full[n - i] = v[i];
        }
        std::vector<double> sq(full.size());
        for (std::size_t i = 0; i < full.size(); ++i) sq[i] = full[i] * full[i];
        const double nrm = std::sqrt(sp.grid.integrate(sq));
        if (!(nrm > 0.0))
            throw NormalizationError("eigenfunction has zero norm");
        double sgn = full[n] >= 0.0 ? 1.0 : -1.0;
        for (auto& x : full) x *= sgn / nrm;
        sp.eigenfunctions[std::size_t(j)] = std::move(full);
    }

    for (int j = 0; j < spec.kappa0; ++j) {
        const double mu = sp.eigenvalues[std::size_t(j)];
        if (!(mu < 0.0)) {
            if (gated)
                throw SpectralCountError("tangential eigenvalue is not negative");
            break;
        }
        sp.frequencies.push_back(std::sqrt(-mu));
    }
    sp.omega_vec = sp.frequencies;
    std::sort(sp.omega_vec.begin(), sp.omega_vec.end());
    return sp;
}

double limit_eigenfunction(double E, double r, double lambda, double y) {
    if (!(lambda > 0.0 && lambda < E))
        throw DomainError("limit eigenfunction needs 0 < lambda < E");
    if (std::abs(y) > 1.0) throw DomainError("limit eigenfunction defined on |y| <= 1");
    const double s = std::sqrt(E * E - lambda * lambda);
    const double c2 = std::cos(s * r) / std::sinh(lambda * (1.0 - r));
    // derivative matching is the secular condition; reject non-roots
    const double mismatch =
        -s * std::sin(s * r) + c2 * lambda * std::cosh(lambda * (1.0 - r));
    if (std::abs(mismatch) > 1e-6 * E * E)
        throw DomainError("lambda is not a root of the secular equation");
    // L2 norm on [-1,1] by the closed forms of both pieces
    const double inner = r / 2.0 + std::sin(2.0 * s * r) / (4.0 * s);
    const double outer =
        c2 * c2 * (std::sinh(2.0 * lambda * (1.0 - r)) / (4.0 * lambda) - (1.0 - r) / 2.0);
    const double nrm = std::sqrt(2.0 * (inner + outer));
    const double a = std::abs(y);
    const double val = a < r ? std::cos(s * a) : c2 * std::sinh(lambda * (1.0 - a));
    return val / nrm;
}

std::vector<double> apply_Lm_inverse(const potential::PotentialSpec& spec,
                                     const potential::Corrector& corr,
                                     const std::vector<double>& f) {
    if (f.size() < 33 || f.size() % 2 == 0)
        throw ShapeError("apply_Lm_inverse expects an odd node count >= 33");
    const std::size_t n = (f.size() - 1) / 2;
    const double fmax = [&] {
        double v = 0.0;
        for (double x : f) v = std::max(v, std::abs(x));
        return std::max(v, 1e-300);
    }();
    for (std::size_t i = 0; i <= n; ++i)
        if (std::abs(f[n + i] - f[n - i]) > 1e-10 * fmax)
            throw DomainError("apply_Lm_inverse expects an even right-hand side");
    if (std::abs(f.front()) > 1e-10 * fmax || std::abs(f.back()) > 1e-10 * fmax)
        throw DomainError("apply_Lm_inverse expects f to vanish at the walls");

    const HalfOperator op = half_operator(spec, corr, n);

    // condition guard: distance of the spectrum to zero vs operator scale
    double opscale = 0.0;
    for (std::size_t i = 0; i < n; ++i) opscale = std::max(opscale, std::abs(op.d[i]));
    const int below = numerics::tridiag_count_below(op.d, op.e, 0.0);
    double lo = -opscale * 2.0, hi = opscale * 2.0;
    const double mu_above = numerics::tridiag_eigenvalue(op.d, op.e, std::size_t(below), lo, hi);
    double nearest = std::abs(mu_above);
    if (below > 0) {
        const double mu_below =
            numerics::tridiag_eigenvalue(op.d, op.e, std::size_t(below - 1), lo, hi);
        nearest = std::min(nearest, std::abs(mu_below));
    }
    if (!(nearest > 0.0) || opscale / nearest > 1e12)
        throw SingularOperatorError("L_m is numerically singular at this resolution");

    // fold to the similarity-scaled half problem (row 0 scaled by 1/sqrt(2))
    std::vector<double> rhs(n);
    rhs[0] = f[n] / std::numbers::sqrt2;
    for (std::size_t i = 1; i < n; ++i) rhs[i] = f[n + i];
    std::vector<double> x = numerics::tridiag_solve(op.d, op.e, rhs);
    x[0] *= std::numbers::sqrt2;

    // residual of the unsymmetrized stencil on the half grid
    const double h2 = op.h * op.h;
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double left = (i == 0) ? x[1] : x[i - 1];
        const double right = (i + 1 < n) ? x[i + 1] : 0.0;
        const double qi = op.d[i] - 2.0 / h2;
        const double ax = (2.0 * x[i] - left - right) / h2 + qi * x[i];
        res = std::max(res, std::abs(ax - f[n + i]));
    }
    if (res > 1e-8 * fmax)
        throw SingularOperatorError("inverse solve residual exceeds tolerance");

    std::vector<double> u(f.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        u[n + i] = x[i];
        u[n - i] = x[i];
    }
    return u;
}

std::vector<double> frequency_vector(const Spectrum& sp) {
    if (int(sp.frequencies.size()) != sp.kappa0)
        throw ShapeError("spectrum lacks tangential frequencies");
    return sp.omega_vec;
}

std::string to_json(const Spectrum& sp) {
    nlohmann::json j;
    j["eigenvalues"] = sp.eigenvalues;
    j["negative_count"] = sp.negative_count;
    j["frequencies"] = sp.frequencies;
    j["omega_vec"] = sp.omega_vec;
    return j.dump(2);
}

void write_csv(const Spectrum& sp, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot open " + path + " for writing");
    out.precision(17);
    out << "y";
    for (std::size_t j = 0; j < sp.eigenfunctions.size(); ++j) out << ",phi" << j + 1;
    out << '\n';
    for (std::size_t i = 0; i < sp.grid.size(); ++i) {
        out << sp.grid[i];
        for (const auto& v : sp.eigenfunctions) out << ',' << v[i];
        out << '\n';
    }
}

} // namespace qpe::spectrum
