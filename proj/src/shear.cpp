#include "qpe/shear.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "qpe/numerics/interp.hpp"
#include "qpe/numerics/roots.hpp"

namespace qpe::shear {

using numerics::CubicHermite;
using numerics::Grid1D;

namespace {

CubicHermite interp_u(const ShearEquilibrium& eq) {
    return CubicHermite(-1.0, 1.0, eq.dpsi, eq.d2psi);
}

} // namespace

double ShearEquilibrium::eval_psi(double y) const {
    return CubicHermite(-1.0, 1.0, psi, dpsi)(y);
}
double ShearEquilibrium::eval_dpsi(double y) const {
    return CubicHermite(-1.0, 1.0, dpsi, d2psi)(y);
}
double ShearEquilibrium::eval_d2psi(double y) const {
    return CubicHermite(-1.0, 1.0, d2psi, d3psi)(y);
}

std::size_t grid_size(const potential::PotentialSpec& spec) {
    const double waves = 64.0 * spec.E / (2.0 * std::numbers::pi);
    std::size_t n = std::max<std::size_t>(4096, std::size_t(8 * spec.m));
    n = std::max(n, std::size_t(std::ceil(waves)));
    return std::bit_ceil(n);
}

ShearEquilibrium solve_shear(const potential::PotentialSpec& spec,
                             const potential::Corrector& corr,
                             std::size_t n_half) {
    spec.validate();
    const std::size_t n = n_half ? n_half : grid_size(spec);
    const double h = 1.0 / double(n);

    // Q on nodes and midpoints of [0,1]; RK4 stages hit exactly these points
    std::vector<double> qtab(2 * n + 1);
    for (std::size_t i = 0; i <= 2 * n; ++i)
        qtab[i] = potential::eval_Q_value(spec, corr, double(i) * (h / 2.0));

    std::vector<double> u(n + 1), du(n + 1);
    u[0] = 0.0;
    du[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q0 = qtab[2 * i], qh = qtab[2 * i + 1], q1 = qtab[2 * i + 2];
        const double a = u[i], b = du[i];
        const double k1a = b, k1b = q0 * a;
        const double k2a = b + 0.5 * h * k1b, k2b = qh * (a + 0.5 * h * k1a);
        const double k3a = b + 0.5 * h * k2b, k3b = qh * (a + 0.5 * h * k2a);
        const double k4a = b + h * k3b, k4b = q1 * (a + h * k3a);
        u[i + 1] = a + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        du[i + 1] = b + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        if (!std::isfinite(u[i + 1]) || !std::isfinite(du[i + 1]))
            throw NonFiniteStateError("shear integration overflowed at node " +
                                      std::to_string(i + 1));
    }
    const double scale = du[n];
    if (std::abs(scale) < 1e-12)
        throw NormalizationError("outer slope u'(1) vanishes");
    for (std::size_t i = 0; i <= n; ++i) {
        u[i] /= scale;
        du[i] /= scale;
    }

    // psi on [0,1]: Hermite-corrected trapezoid, then anchor at the wall
    std::vector<double> psi_half(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        psi_half[i + 1] = psi_half[i] + 0.5 * h * (u[i] + u[i + 1]) +
                          h * h / 12.0 * (du[i] - du[i + 1]);
    const double A = spec.r - 1.0 / (spec.E * spec.E);
    const double anchor = 0.5 * (1.0 - A) * (1.0 - A);
    const double shift = anchor - psi_half[n];
    for (auto& v : psi_half) v += shift;

    ShearEquilibrium eq;
    eq.spec = spec;
    eq.corrector = corr;
    eq.A = A;
    eq.B = 1.0 / (spec.E * spec.E * std::sin(spec.E * spec.r));
    eq.grid = Grid1D::uniform(-1.0, 1.0, 2 * n + 1);
    eq.psi.resize(2 * n + 1);
    eq.dpsi.resize(2 * n + 1);
    eq.d2psi.resize(2 * n + 1);
    eq.d3psi.resize(2 * n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        const double d3 = qtab[2 * i] * u[i];
        eq.psi[n + i] = psi_half[i];
        eq.dpsi[n + i] = u[i];
        eq.d2psi[n + i] = du[i];
        eq.d3psi[n + i] = d3;
        eq.psi[n - i] = psi_half[i];
        eq.dpsi[n - i] = -u[i];
        eq.d2psi[n - i] = du[i];
        eq.d3psi[n - i] = -d3;
    }
    return eq;
}

std::vector<double> find_critical_points(const ShearEquilibrium& eq) {
    const auto& spec = eq.spec;
    const std::size_t n = (eq.grid.size() - 1) / 2;
    const double gamma = spec.gamma();
    const double lim = spec.r - gamma;
    const CubicHermite uh = interp_u(eq);

    std::vector<double> pts{0.0};
    for (std::size_t i = n; i + 1 < eq.grid.size(); ++i) {
        const double y0 = eq.grid[i], y1 = eq.grid[i + 1];
        if (y0 >= lim) break;
        const double a = eq.dpsi[i], b = eq.dpsi[i + 1];
        if (y0 > 0.0 && a == 0.0)
            pts.push_back(y0);
        else if (a * b < 0.0)
            pts.push_back(numerics::find_root([&](double y) { return uh(y); },
                                              y0, std::min(y1, lim), 1e-13));
    }
    // strict monotonicity through the transition collar [r - gamma, r + gamma]
    for (std::size_t i = n; i + 1 < eq.grid.size(); ++i) {
        const double y0 = eq.grid[i];
        if (y0 < lim) continue;
        if (y0 > spec.r + gamma) break;
        if (eq.dpsi[i] * eq.dpsi[i + 1] < 0.0)
            throw StripMonotonicityError("sign change of psi' inside the transition collar");
    }
    if (pts.size() != std::size_t(spec.kappa0) + 1)
        throw SpectralCountError("found " + std::to_string(pts.size() - 1) +
                                 " interior critical points, expected " +
                                 std::to_string(spec.kappa0));
    return pts;
}

std::pair<potential::Corrector, ShearEquilibrium>
fixed_point_equilibrium(const potential::PotentialSpec& spec) {
    std::vector<double> anchors(std::size_t(spec.kappa0));
    for (int p = 1; p <= spec.kappa0; ++p)
        anchors[std::size_t(p) - 1] = double(p) * std::numbers::pi / spec.E;

    for (int it = 0; it < 20; ++it) {
        potential::Corrector corr = potential::build_corrector(spec, anchors);
        ShearEquilibrium eq = solve_shear(spec, corr);
        eq.critical_points = find_critical_points(eq);
        double move = 0.0;
        for (int p = 1; p <= spec.kappa0; ++p)
            move = std::max(move, std::abs(eq.critical_points[std::size_t(p)] -
                                           anchors[std::size_t(p) - 1]));
        for (int p = 1; p <= spec.kappa0; ++p)
            anchors[std::size_t(p) - 1] = eq.critical_points[std::size_t(p)];
        if (move < 1e-10) {
            eq.strips.clear();
            std::vector<double> edges = eq.critical_points;
            edges.push_back(1.0);
            for (std::size_t p = 0; p + 1 < edges.size(); ++p)
                eq.strips.emplace_back(edges[p], edges[p + 1]);
            return {corr, eq};
        }
    }
    throw FixedPointError("anchor iteration did not settle in 20 rounds");
}

double couette_distance(const ShearEquilibrium& eq) {
    const auto& g = eq.grid;
    auto norm2 = [&](auto&& f) {
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = f(i);
            v[i] = d * d;
        }
        return g.integrate(v);
    };
    double s = 0.0;
    s += norm2([&](std::size_t i) { return eq.psi[i] - 0.5 * g[i] * g[i]; });
    s += norm2([&](std::size_t i) { return eq.dpsi[i] - g[i]; });
    s += norm2([&](std::size_t i) { return eq.d2psi[i] - 1.0; });
    s += norm2([&](std::size_t i) { return eq.d3psi[i]; });
    return std::sqrt(s);
}

std::vector<double> taylor_at_critical(const ShearEquilibrium& eq, int p,
                                       int order) {
    if (p < 1 || p > eq.spec.kappa0)
        throw DomainError("strip index out of range");
    if (eq.critical_points.empty())
        throw DomainError("equilibrium has no located critical points");
    const double yt = eq.critical_points[std::size_t(p)];
    const std::size_t N = std::size_t(2 * order);

    // Taylor coefficients of Q at yt drive the u'' = Q u recurrence
    const numerics::Jet qj = potential::eval_Q(eq.spec, eq.corrector, yt,
                                               N >= 2 ? N - 2 : 0);
    std::vector<double> uc(N + 1, 0.0);
    uc[0] = 0.0;  // critical point: psi'(yt) = 0
    if (N >= 1) uc[1] = CubicHermite(-1.0, 1.0, eq.d2psi, eq.d3psi)(yt);
    for (std::size_t k = 0; k + 2 <= N; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i <= k; ++i) s += qj.coeff(i) * uc[k - i];
        uc[k + 2] = s / (double(k + 2) * double(k + 1));
    }

    std::vector<double> psic(N + 2, 0.0);
    psic[0] = eq.eval_psi(yt);
    for (std::size_t k = 0; k <= N; ++k) psic[k + 1] = uc[k] / double(k + 1);

    double scale = 0.0;
    for (double c : psic) scale = std::max(scale, std::abs(c));
    for (std::size_t k = 1; k + 1 < psic.size(); k += 2)
        if (std::abs(psic[k]) > 1e-8 * std::max(1.0, scale))
            throw ChartError("odd Taylor coefficient survives at critical point");

    std::vector<double> even(std::size_t(order) + 1);
    for (int nn = 0; nn <= order; ++nn) even[std::size_t(nn)] = psic[std::size_t(2 * nn)];
    return even;
}

void write_csv(const ShearEquilibrium& eq, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot open " + path + " for writing");
    out.precision(17);
    out << "y,psi,dpsi,d2psi,d3psi\n";
    for (std::size_t i = 0; i < eq.grid.size(); ++i)
        out << eq.grid[i] << ',' << eq.psi[i] << ',' << eq.dpsi[i] << ','
            << eq.d2psi[i] << ',' << eq.d3psi[i] << '\n';
}

std::string manifest_json(const ShearEquilibrium& eq) {
    nlohmann::json j;
    j["critical_points"] = eq.critical_points;
    j["A"] = eq.A;
    j["B"] = eq.B;
    j["couette_distance"] = couette_distance(eq);
    j["grid_nodes"] = eq.grid.size();
    return j.dump(2);
}

} // namespace qpe::shear
