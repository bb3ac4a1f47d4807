#include "qpe/nonlinearity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "qpe/numerics/jet.hpp"
#include "qpe/numerics/roots.hpp"
#include "qpe/potential.hpp"
#include "qpe/spectrum.hpp"

namespace qpe::nonlinearity {
namespace {

constexpr double kChartGuardFrac = 0.05;

// Gauss-Legendre 8-point rule on [-1,1]
constexpr double kGx[8] = {
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
    -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
    0.7966664774136267,  0.9602898564975363};
constexpr double kGw[8] = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
    0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
    0.2223810344533745, 0.1012285362903763};

// Taylor coefficients of psi' about y0 from the recurrence u'' = Q u, seeded
// by the interpolated slope and curvature. Coefficients of Q beyond the jet
// cap only ever multiply the (vanishing) leading u coefficient.
std::vector<double> u_taylor_at(const shear::ShearEquilibrium& eq, double y0,
                                std::size_t ord) {
    const std::size_t qcap = std::size_t(2 * eq.spec.S + 1);
    const numerics::Jet q =
        potential::eval_Q(eq.spec, eq.corrector, y0, std::min(qcap, ord));
    std::vector<double> uc(ord + 1, 0.0);
    uc[0] = eq.eval_dpsi(y0);
    if (ord >= 1) uc[1] = eq.eval_d2psi(y0);
    for (std::size_t k = 0; k + 2 <= ord; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i <= std::min(k, qcap); ++i)
            s += q.coeff(i) * uc[k - i];
        uc[k + 2] = s / double((k + 2) * (k + 1));
    }
    return uc;
}

// split the psi-series about the chart point into even/odd parts in delta:
//   psi(yc + d) - psi(yc) = sum_j pe[j] t^j + d * sum_j po[j] t^j,  t = d^2
// and the same for F = psi''(yc + d) (fe, fo).
struct ChartSeries {
    std::vector<double> pe, po, fe, fo;
};

ChartSeries chart_series(const EdgeChart& ch) {
    const std::size_t n = ch.u_taylor.size();  // uc_0 .. uc_{n-1}
    ChartSeries s;
    // psi coefficients pc_{k+1} = uc_k / (k+1); pc_0 dropped (relative value)
    // F coefficients fc_k = (k+1) uc_{k+1}
    const std::size_t top = n + 1;
    s.pe.assign(top / 2 + 2, 0.0);
    s.po.assign(top / 2 + 2, 0.0);
    s.fe.assign(top / 2 + 2, 0.0);
    s.fo.assign(top / 2 + 2, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double pc = ch.u_taylor[k] / double(k + 1);  // coeff of d^{k+1}
        if ((k + 1) % 2 == 0) s.pe[(k + 1) / 2] += pc;
        else s.po[k / 2] += pc;
    }
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double fc = double(k + 1) * ch.u_taylor[k + 1];  // coeff of d^k
        if (k % 2 == 0) s.fe[k / 2] += fc;
        else s.fo[(k - 1) / 2] += fc;
    }
    return s;
}

double poly_eval(const std::vector<double>& c, double x) {
    double r = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) r = r * x + c[i];
    return r;
}

double poly_eval_derivative(const std::vector<double>& c, double x) {
    double r = 0.0;
    for (std::size_t i = c.size(); i-- > 1;) r = r * x + double(i) * c[i];
    return r;
}

numerics::Jet poly_eval(const std::vector<double>& c, const numerics::Jet& x) {
    numerics::Jet r = numerics::Jet::constant(x.order(), 0.0);
    for (std::size_t i = c.size(); i-- > 0;) r = r * x + c[i];
    return r;
}

// Solve sum_{j>=1} pe[j] t^j = w for t. Continues analytically to t < 0,
// which is how values beyond a critical extremum are represented.
double chart_solve_t(const ChartSeries& s, double w) {
    const double lead = s.pe.size() > 1 ? s.pe[1] : 0.0;
    if (std::abs(lead) < 1e-300)
        throw ChartError("chart has vanishing quadratic coefficient");
    double t = w / lead;
    for (int it = 0; it < 60; ++it) {
        const double f = poly_eval(s.pe, t) - s.pe[0] - w;
        const double df = poly_eval_derivative(s.pe, t);
        if (std::abs(df) < 1e-300)
            throw ChartError("chart inversion stalled at flat slope");
        const double dt = f / df;
        t -= dt;
        if (std::abs(dt) <= 1e-16 * (std::abs(t) + 1e-30)) break;
    }
    if (!std::isfinite(t)) throw ChartError("chart inversion diverged");
    return t;
}

// F value through the chart. side selects the branch of delta = side sqrt(t)
// carrying the odd tail; for t <= 0 the tail vanishes (shared continuation).
double chart_value(const ChartSeries& s, double w, int side) {
    const double t = chart_solve_t(s, w);
    double v = poly_eval(s.fe, t);
    if (t > 0.0) v += double(side) * std::sqrt(t) * poly_eval(s.fo, t);
    return v;
}

double chart_value_derivative(const ChartSeries& s, double w) {
    const double t = chart_solve_t(s, w);
    const double dw = poly_eval_derivative(s.pe, t);
    return poly_eval_derivative(s.fe, t) / dw;
}

// coefficients c of v as a power series in w, where v and w are power series
// in a common parameter with w(0) = 0 and w'(0) != 0
std::vector<double> series_invert(const std::vector<double>& w,
                                  const std::vector<double>& v,
                                  std::size_t n) {
    if (w.size() < n + 1 || v.size() < n + 1)
        throw ShapeError("series_invert: input series too short");
    if (std::abs(w[1]) < 1e-300)
        throw SingularJetError("series_invert: vanishing first coefficient");
    // wp[i] = coefficients of w^i, truncated at order n
    std::vector<std::vector<double>> wp(n + 1, std::vector<double>(n + 1, 0.0));
    wp[0][0] = 1.0;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t k = 0; k <= n; ++k) {
            double s = 0.0;
            for (std::size_t a = 0; a <= k; ++a)
                if (k - a < w.size()) s += wp[i - 1][a] * w[k - a];
            wp[i][k] = s;
        }
    std::vector<double> c(n + 1, 0.0);
    c[0] = v[0];
    for (std::size_t k = 1; k <= n; ++k) {
        double s = v[k];
        for (std::size_t i = 1; i < k; ++i) s -= c[i] * wp[i][k];
        c[k] = s / wp[k][k];
    }
    return c;
}

const StripNonlinearity& strip_at(const StripSet& s, int p) {
    if (p < 0 || std::size_t(p) >= s.strips.size())
        throw DomainError("strip index " + std::to_string(p) + " out of range");
    return s.strips[std::size_t(p)];
}

// edge chart index at the given endpoint of strip p, or -1 for the wall
int edge_chart_index(const StripSet& s, int p, bool upper) {
    const int e = upper ? p + 1 : p;
    return std::size_t(e) < s.charts.size() ? e : -1;
}

// approach side of strip p at edge e: +1 if the strip lies at y > y_crit
int edge_side(const StripSet& s, int p, int e) {
    return s.charts[std::size_t(e)].y_crit <= s.strips[std::size_t(p)].y_lo + 1e-300 ? +1 : -1;
}

// which endpoint (psi_lo or psi_hi) the value psi exceeded, as a chart index
// and signed overshoot; throws for wall-side excursions
struct Excursion {
    int chart = -1;
    double w = 0.0;  // psi - psi_crit
    int side = 0;
};

Excursion classify_excursion(const StripSet& s, int p, double psi) {
    const auto& sp = strip_at(s, p);
    const bool below = psi < sp.psi_lo;
    // map the exceeded range endpoint back to a y-side of the strip
    const bool at_y_lo = (sp.direction > 0) == below;
    const int e = edge_chart_index(s, p, !at_y_lo);
    if (e < 0)
        throw DomainError("psi = " + std::to_string(psi) +
                          " beyond the wall endpoint of strip " + std::to_string(p));
    Excursion ex;
    ex.chart = e;
    ex.w = psi - s.charts[std::size_t(e)].psi_crit;
    ex.side = edge_side(s, p, e);
    if (std::abs(ex.w) > s.charts[std::size_t(e)].span)
        throw DomainError("psi excursion " + std::to_string(ex.w) +
                          " exceeds chart span of edge " + std::to_string(e));
    return ex;
}

} // namespace

StripSet build_strip_nonlinearities(const shear::ShearEquilibrium& eq,
                                    std::size_t samples_per_strip) {
    if (eq.critical_points.size() != std::size_t(eq.spec.kappa0) + 1)
        throw DomainError("equilibrium carries no critical point data");
    if (samples_per_strip < 64)
        throw ShapeError("samples_per_strip must be at least 64");

    StripSet set;
    set.eq = eq;
    const int kappa0 = eq.spec.kappa0;
    std::vector<double> edges = eq.critical_points;
    edges.push_back(1.0);

    const double hgrid = eq.grid.spacing();
    for (int p = 0; p <= kappa0; ++p) {
        StripNonlinearity sp;
        sp.p = p;
        sp.y_lo = edges[std::size_t(p)];
        sp.y_hi = edges[std::size_t(p) + 1];
        const double pl = eq.eval_psi(sp.y_lo), ph = eq.eval_psi(sp.y_hi);
        sp.direction = eq.eval_dpsi(0.5 * (sp.y_lo + sp.y_hi)) > 0.0 ? 1 : -1;

        // psi' must keep one sign strictly inside the strip
        for (std::size_t i = 0; i < eq.grid.size(); ++i) {
            const double y = eq.grid[i];
            if (y <= sp.y_lo + hgrid || y >= sp.y_hi - hgrid) continue;
            if (eq.dpsi[i] * double(sp.direction) <= 0.0)
                throw StripMonotonicityError(
                    "psi' changes sign inside strip " + std::to_string(p) +
                    " at y = " + std::to_string(y));
        }

        sp.psi_lo = std::min(pl, ph);
        sp.psi_hi = std::max(pl, ph);
        if (!(sp.psi_hi - sp.psi_lo > 1e-12 * std::max(1.0, std::abs(ph))))
            throw StripMonotonicityError("degenerate psi range on strip " +
                                         std::to_string(p));

        const std::size_t N = samples_per_strip;
        std::vector<double> F(N + 1), dF(N + 1);
        const double dpsi_step = (sp.psi_hi - sp.psi_lo) / double(N);
        for (std::size_t k = 0; k <= N; ++k) {
            double y;
            if (k == 0) y = sp.direction > 0 ? sp.y_lo : sp.y_hi;
            else if (k == N) y = sp.direction > 0 ? sp.y_hi : sp.y_lo;
            else {
                const double target = sp.psi_lo + dpsi_step * double(k);
                y = numerics::invert_monotone(
                    [&](double yy) { return eq.eval_psi(yy); }, target, sp.y_lo,
                    sp.y_hi);
            }
            F[k] = eq.eval_d2psi(y);
            dF[k] = potential::eval_Q_value(eq.spec, eq.corrector, y);
        }
        sp.F = numerics::CubicHermite(sp.psi_lo, sp.psi_hi, std::move(F),
                                      std::move(dF));
        set.strips.push_back(std::move(sp));
    }

    // charts at the critical points, with the first surviving odd coefficient
    const std::size_t chart_ord = std::size_t(2 * eq.spec.S + 4);
    for (int p = 0; p <= kappa0; ++p) {
        EdgeChart ch;
        ch.y_crit = eq.critical_points[std::size_t(p)];
        ch.psi_crit = eq.eval_psi(ch.y_crit);
        ch.u_taylor = u_taylor_at(eq, ch.y_crit, chart_ord);
        double wmin = set.strips[std::size_t(p)].y_hi - set.strips[std::size_t(p)].y_lo;
        if (p > 0)
            wmin = std::min(wmin, set.strips[std::size_t(p) - 1].y_hi -
                                      set.strips[std::size_t(p) - 1].y_lo);
        const double dbar = 0.2 * wmin;
        const ChartSeries cs = chart_series(ch);
        ch.span = std::abs(poly_eval(cs.pe, dbar * dbar) - cs.pe[0]);
        set.charts.push_back(std::move(ch));
    }

    // largest admissible blend half-width: quarter of the smallest psi range
    // adjacent to an interior critical value
    double eta_bar = std::numeric_limits<double>::infinity();
    for (int p = 1; p <= kappa0; ++p) {
        const auto& a = set.strips[std::size_t(p) - 1];
        const auto& b = set.strips[std::size_t(p)];
        eta_bar = std::min(eta_bar, (a.psi_hi - a.psi_lo) / 4.0);
        eta_bar = std::min(eta_bar, (b.psi_hi - b.psi_lo) / 4.0);
    }
    set.eta_bar = eta_bar;
    return set;
}

int strip_of_y(const StripSet& s, double y) {
    const double ya = std::abs(y);
    if (ya > 1.0 + 1e-12) throw DomainError("y outside the channel");
    for (std::size_t p = 0; p + 1 < s.strips.size(); ++p)
        if (ya < s.strips[p].y_hi) return int(p);
    return int(s.strips.size()) - 1;
}

double y_from_psi(const StripSet& s, int p, double psi) {
    const auto& sp = strip_at(s, p);
    if (psi < sp.psi_lo || psi > sp.psi_hi)
        throw DomainError("psi outside range of strip " + std::to_string(p));
    const double plo = s.eq.eval_psi(sp.y_lo);
    if (psi == plo) return sp.y_lo;
    if (psi == s.eq.eval_psi(sp.y_hi)) return sp.y_hi;
    return numerics::invert_monotone(
        [&](double yy) { return s.eq.eval_psi(yy); }, psi, sp.y_lo, sp.y_hi);
}

double eval_F(const StripSet& s, int p, double psi) {
    const auto& sp = strip_at(s, p);
    if (psi >= sp.psi_lo && psi <= sp.psi_hi) return sp.F(psi);
    const Excursion ex = classify_excursion(s, p, psi);
    return chart_value(chart_series(s.charts[std::size_t(ex.chart)]), ex.w,
                       ex.side);
}

double eval_F_derivative(const StripSet& s, int p, double psi, int n) {
    if (n < 0 || n > s.eq.spec.S)
        throw DomainError("derivative order " + std::to_string(n) +
                          " exceeds S = " + std::to_string(s.eq.spec.S));
    if (n == 0) return eval_F(s, p, psi);
    const auto& sp = strip_at(s, p);
    if (psi < sp.psi_lo || psi > sp.psi_hi)
        throw DomainError("derivatives only inside the strip range");

    // near a chart the y-preimage degenerates; invert the even series in
    // t = delta^2 instead, which stays regular through the critical point.
    // The chart truncation grows fast in |w| while the interior series stays
    // conditioned down to an eighth of the calibration radius, hence /64.
    for (bool upper : {false, true}) {
        const int e = edge_chart_index(s, p, upper);
        if (e < 0) continue;
        const auto& ch = s.charts[std::size_t(e)];
        const double w = psi - ch.psi_crit;
        const double guard =
            std::min(kChartGuardFrac * (sp.psi_hi - sp.psi_lo), ch.span) / 64.0;
        if (std::abs(w) >= guard) continue;
        const ChartSeries cs = chart_series(ch);
        const double tstar = chart_solve_t(cs, w);
        const numerics::Jet tv = numerics::Jet::variable(std::size_t(n), tstar);
        const numerics::Jet wj = poly_eval(cs.pe, tv);
        const numerics::Jet vj = poly_eval(cs.fe, tv);
        std::vector<double> wc(wj.coeffs()), vc(vj.coeffs());
        wc[0] = 0.0;  // relative to the query point by construction of tstar
        const auto c = series_invert(wc, vc, std::size_t(n));
        double fact = 1.0;
        for (int i = 2; i <= n; ++i) fact *= double(i);
        return fact * c[std::size_t(n)];
    }

    const double y = y_from_psi(s, p, psi);
    const auto uc = u_taylor_at(s.eq, y, std::size_t(n) + 1);
    std::vector<double> wc(std::size_t(n) + 1, 0.0), vc(std::size_t(n) + 1, 0.0);
    for (std::size_t k = 1; k <= std::size_t(n); ++k) wc[k] = uc[k - 1] / double(k);
    for (std::size_t k = 0; k <= std::size_t(n); ++k)
        vc[k] = double(k + 1) * uc[k + 1];
    const auto c = series_invert(wc, vc, std::size_t(n));
    double fact = 1.0;
    for (int i = 2; i <= n; ++i) fact *= double(i);
    return fact * c[std::size_t(n)];
}

namespace {
double bump(double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; }
double bump_prime(double x) {
    return x > 0.0 ? std::exp(-1.0 / x) / (x * x) : 0.0;
}
}

double cutoff_chi(double t) {
    const double u = std::abs(t);
    if (u <= 1.0) return 1.0;
    if (u >= 2.0) return 0.0;
    const double a = bump(2.0 - u), b = bump(u - 1.0);
    return a / (a + b);
}

double cutoff_chi_prime(double t) {
    const double u = std::abs(t);
    if (u <= 1.0 || u >= 2.0) return 0.0;
    const double a = bump(2.0 - u), b = bump(u - 1.0);
    const double da = -bump_prime(2.0 - u), db = bump_prime(u - 1.0);
    const double d = (da * b - a * db) / ((a + b) * (a + b));
    return t >= 0.0 ? d : -d;
}

RegularizedFamily regularize(const StripSet& s, double eta) {
    if (!(eta > 0.0)) throw DomainError("eta must be positive");
    if (eta > s.eta_bar)
        throw EtaTooLargeError("eta = " + std::to_string(eta) +
                               " exceeds eta_bar = " + std::to_string(s.eta_bar));
    RegularizedFamily fam;
    fam.strips = s;
    fam.eta = eta;
    fam.S = s.eq.spec.S;
    return fam;
}

namespace {

// interior critical values whose blend band contains psi, as chart indices
// adjacent to strip p (at most one can be active when eta <= eta_bar)
struct BlendTerm {
    int chart;      // interior edge index
    int adj;        // adjacent strip index
    double tt;      // |psi - v| / eta
    double w;       // psi - v
};

std::vector<BlendTerm> active_blends(const RegularizedFamily& fam, int p,
                                     double psi) {
    std::vector<BlendTerm> out;
    const int kappa0 = int(fam.strips.charts.size()) - 1;
    for (int e : {p, p + 1}) {
        if (e < 1 || e > kappa0) continue;
        const double v = fam.strips.charts[std::size_t(e)].psi_crit;
        const double tt = std::abs(psi - v) / fam.eta;
        if (tt < 2.0)
            out.push_back({e, e == p ? p - 1 : p + 1, tt, psi - v});
    }
    return out;
}

} // namespace

double eval_F_eta(const RegularizedFamily& fam, int p, double psi) {
    const double fp = eval_F(fam.strips, p, psi);
    const auto blends = active_blends(fam, p, psi);
    double out = fp;
    for (const auto& b : blends) {
        const double fq = eval_F(fam.strips, b.adj, psi);
        if (b.tt <= 1.0) out = 0.5 * (fp + fq);  // symmetric: both strips agree bitwise
        else out += 0.5 * cutoff_chi(b.tt) * (fq - fp);
    }
    return out;
}

double eval_F_eta_derivative(const RegularizedFamily& fam, int p, double psi) {
    const auto& sp = strip_at(fam.strips, p);
    double dfp, fp;
    if (psi >= sp.psi_lo && psi <= sp.psi_hi) {
        fp = sp.F(psi);
        dfp = sp.F.derivative(psi);
    } else {
        const Excursion ex = classify_excursion(fam.strips, p, psi);
        const ChartSeries cs = chart_series(fam.strips.charts[std::size_t(ex.chart)]);
        fp = chart_value(cs, ex.w, ex.side);
        dfp = chart_value_derivative(cs, ex.w);
    }
    double out = dfp;
    for (const auto& b : active_blends(fam, p, psi)) {
        const auto& sq = strip_at(fam.strips, b.adj);
        double fq, dfq;
        if (psi >= sq.psi_lo && psi <= sq.psi_hi) {
            fq = sq.F(psi);
            dfq = sq.F.derivative(psi);
        } else {
            const Excursion ex = classify_excursion(fam.strips, b.adj, psi);
            const ChartSeries cs = chart_series(fam.strips.charts[std::size_t(ex.chart)]);
            fq = chart_value(cs, ex.w, ex.side);
            dfq = chart_value_derivative(cs, ex.w);
        }
        const double chi = cutoff_chi(b.tt);
        const double dchi =
            cutoff_chi_prime(b.tt) * (b.w >= 0.0 ? 1.0 : -1.0) / fam.eta;
        out += 0.5 * (dchi * (fq - fp) + chi * (dfq - dfp));
    }
    return out;
}

double eval_g_eta(const RegularizedFamily& fam, double y, double phi) {
    const int p = strip_of_y(fam.strips, y);
    const double psi0 = fam.strips.eq.eval_psi(y);
    const double q = potential::eval_Q_value(fam.strips.eq.spec,
                                             fam.strips.eq.corrector, y);
    return eval_F_eta(fam, p, psi0 + phi) - eval_F_eta(fam, p, psi0) - q * phi;
}

std::vector<double> solve_shift(RegularizedFamily& fam, std::size_t n_half) {
    const auto& eq = fam.strips.eq;
    const std::size_t nn = 2 * n_half + 1;
    fam.grid = numerics::Grid1D::uniform(-1.0, 1.0, nn);

    // forcing f_eta = F_eta(psi_m) - F_m(psi_m): exactly zero outside the
    // blend bands, so evaluate it as the blend delta
    fam.forcing.assign(nn, 0.0);
    std::vector<int> strip_idx(nn);
    std::vector<double> psi0(nn), qy(nn);
    for (std::size_t i = 0; i < nn; ++i) {
        const double y = fam.grid[i];
        strip_idx[i] = strip_of_y(fam.strips, y);
        psi0[i] = eq.eval_psi(y);
        qy[i] = potential::eval_Q_value(eq.spec, eq.corrector, y);
        const int p = strip_idx[i];
        for (const auto& b : active_blends(fam, p, psi0[i])) {
            const double fp = eval_F(fam.strips, p, psi0[i]);
            const double fq = eval_F(fam.strips, b.adj, psi0[i]);
            fam.forcing[i] += 0.5 * cutoff_chi(b.tt) * (fq - fp);
        }
    }

    std::vector<double> h(nn, 0.0), rhs(nn), hn;
    double prev_step = std::numeric_limits<double>::infinity();
    int growth = 0;
    bool converged = false;
    for (int it = 0; it < 60; ++it) {
        for (std::size_t i = 0; i < nn; ++i) {
            double g = 0.0;
            if (h[i] != 0.0) {
                const int p = strip_idx[i];
                g = eval_F_eta(fam, p, psi0[i] + h[i]) -
                    eval_F_eta(fam, p, psi0[i]) - qy[i] * h[i];
            }
            rhs[i] = -(fam.forcing[i] + g);
        }
        // enforce exact evenness and wall zeros against rounding drift
        for (std::size_t i = 0; i < n_half; ++i)
            rhs[i] = rhs[nn - 1 - i] = 0.5 * (rhs[i] + rhs[nn - 1 - i]);
        hn = spectrum::apply_Lm_inverse(eq.spec, eq.corrector, rhs);
        double step = 0.0;
        for (std::size_t i = 0; i < nn; ++i)
            step = std::max(step, std::abs(hn[i] - h[i]));
        h.swap(hn);
        if (step < 1e-12) { converged = true; break; }
        if (step >= prev_step) {
            if (++growth >= 2)
                throw ContractionError("shift iteration grew twice: step = " +
                                       std::to_string(step));
        } else growth = 0;
        prev_step = step;
    }
    if (!converged)
        throw ContractionError("shift iteration did not reach 1e-12");

    // discrete residual of -(h'' ) + Q h + f + g = 0
    const double dy = fam.grid.spacing();
    double res = 0.0, rhs_scale = 1.0;
    for (std::size_t i = 1; i + 1 < nn; ++i) {
        const int p = strip_idx[i];
        const double g = eval_F_eta(fam, p, psi0[i] + h[i]) -
                         eval_F_eta(fam, p, psi0[i]) - qy[i] * h[i];
        const double lh =
            -(h[i - 1] - 2.0 * h[i] + h[i + 1]) / (dy * dy) + qy[i] * h[i];
        res = std::max(res, std::abs(lh + fam.forcing[i] + g));
        rhs_scale = std::max(rhs_scale, std::abs(fam.forcing[i] + g));
    }
    if (res > 1e-10 * rhs_scale)
        throw ContractionError("shift residual " + std::to_string(res) +
                               " exceeds tolerance");

    fam.shift = h;
    fam.dshift.assign(nn, 0.0);
    for (std::size_t i = 0; i < nn; ++i) {
        if (i >= 2 && i + 2 < nn)
            fam.dshift[i] = (-h[i + 2] + 8.0 * h[i + 1] - 8.0 * h[i - 1] + h[i - 2]) /
                            (12.0 * dy);
        else if (i == 0)
            fam.dshift[i] = (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * dy);
        else if (i == nn - 1)
            fam.dshift[i] = (3.0 * h[nn - 1] - 4.0 * h[nn - 2] + h[nn - 3]) / (2.0 * dy);
        else if (i == 1)
            fam.dshift[i] = (h[2] - h[0]) / (2.0 * dy);
        else
            fam.dshift[i] = (h[nn - 1] - h[nn - 3]) / (2.0 * dy);
    }
    fam.d2shift.assign(nn, 0.0);
    for (std::size_t i = 0; i < nn; ++i) {
        const int p = strip_idx[i];
        const double g = eval_F_eta(fam, p, psi0[i] + h[i]) -
                         eval_F_eta(fam, p, psi0[i]) - qy[i] * h[i];
        fam.d2shift[i] = qy[i] * h[i] + fam.forcing[i] + g;
    }
    fam.has_shift = true;
    return h;
}

namespace {
double hermite_eval(const numerics::Grid1D& g, const std::vector<double>& v,
                    const std::vector<double>& d, double y) {
    if (y < g.front() - 1e-12 || y > g.back() + 1e-12)
        throw DomainError("shift query outside the channel");
    const double hh = g.spacing();
    double s = (y - g.front()) / hh;
    std::size_t i = std::min<std::size_t>(g.size() - 2,
                                          std::size_t(std::max(0.0, std::floor(s))));
    const double t = s - double(i);
    const double h00 = (1 + 2 * t) * (1 - t) * (1 - t);
    const double h10 = t * (1 - t) * (1 - t);
    const double h01 = t * t * (3 - 2 * t);
    const double h11 = t * t * (t - 1);
    return h00 * v[i] + h10 * hh * d[i] + h01 * v[i + 1] + h11 * hh * d[i + 1];
}
}

double RegularizedFamily::eval_shift(double y) const {
    if (!has_shift) throw DomainError("shift not solved yet");
    return hermite_eval(grid, shift, dshift, y);
}

double RegularizedFamily::eval_dshift(double y) const {
    if (!has_shift) throw DomainError("shift not solved yet");
    return hermite_eval(grid, dshift, d2shift, y);
}

namespace {

// cancellation-free increment F_p(psi_b) - F_p(psi_a) - qy (psi_b - psi_a)
// with both values inside the strip range, via the preimage integral
//   int_{ya}^{yb} (Q(xi) - Q(y)) psi'(xi) dxi
double increment_in_range(const RegularizedFamily& fam, double ya,
                          double yb, double qy) {
    const auto& eq = fam.strips.eq;
    if (ya == yb) return 0.0;
    const double feature =
        std::max(eq.spec.r / (2.0 * double(std::max(eq.spec.m, 1))), 1e-6);
    const std::size_t panels = std::min<std::size_t>(
        512, std::max<std::size_t>(1, std::size_t(std::ceil(std::abs(yb - ya) / feature))));
    const double hp = (yb - ya) / double(panels);
    double acc = 0.0;
    for (std::size_t k = 0; k < panels; ++k) {
        const double c = ya + (double(k) + 0.5) * hp;
        double s = 0.0;
        for (int g = 0; g < 8; ++g) {
            const double xi = c + 0.5 * hp * kGx[g];
            const double dq =
                potential::eval_Q_value(eq.spec, eq.corrector, xi) - qy;
            s += kGw[g] * dq * eq.eval_dpsi(xi);
        }
        acc += 0.5 * hp * s;
    }
    return acc;
}

// preimage of psi inside strip p, Newton-refined from a nearby seed
double preimage_near(const RegularizedFamily& fam, int p, double psi,
                     double seed) {
    const auto& eq = fam.strips.eq;
    const auto& sp = fam.strips.strips[std::size_t(p)];
    double y = std::clamp(seed, sp.y_lo, sp.y_hi);
    bool ok = false;
    for (int it = 0; it < 40; ++it) {
        const double f = eq.eval_psi(y) - psi;
        const double df = eq.eval_dpsi(y);
        if (std::abs(df) < 1e-14) break;
        const double dy = f / df;
        const double ynew = std::clamp(y - dy, sp.y_lo, sp.y_hi);
        const bool small = std::abs(ynew - y) <= 1e-15 * (1.0 + std::abs(y));
        y = ynew;
        if (small) { ok = true; break; }
    }
    if (!ok) y = y_from_psi(fam.strips, p, psi);
    return y;
}

// blend part of F_eta at psi, through the exact two-preimage difference;
// returns 0 when no band is active or the value sits beyond the extremum
double blend_delta_exact(const RegularizedFamily& fam, int p, double psi) {
    double out = 0.0;
    for (const auto& b : active_blends(fam, p, psi)) {
        const auto& sp = fam.strips.strips[std::size_t(p)];
        const auto& sq = fam.strips.strips[std::size_t(b.adj)];
        if (psi < sp.psi_lo || psi > sp.psi_hi || psi < sq.psi_lo ||
            psi > sq.psi_hi)
            continue;  // shared chart continuation: the two branches coincide
        const auto& eq = fam.strips.eq;
        const double yc = fam.strips.charts[std::size_t(b.chart)].y_crit;
        const double yp = preimage_near(fam, p, psi, yc);
        const double yq = preimage_near(fam, b.adj, psi, yc);
        const double delta = eq.eval_d2psi(yq) - eq.eval_d2psi(yp);
        out += 0.5 * cutoff_chi(b.tt) * delta;
    }
    return out;
}

// F_eta(psi_b) - F_eta(psi_a) - qy (psi_b - psi_a) for strip p, stable under
// eps^{-3/2} amplification
double stable_increment(const RegularizedFamily& fam, int p, double psi_a,
                        double psi_b, double qy, double y_seed) {
    const auto& sp = fam.strips.strips[std::size_t(p)];
    const auto in_range = [&](double v) {
        return v >= sp.psi_lo && v <= sp.psi_hi;
    };
    double main = 0.0;
    if (in_range(psi_a) && in_range(psi_b)) {
        const double ya = preimage_near(fam, p, psi_a, y_seed);
        const double yb = preimage_near(fam, p, psi_b, ya);
        main = increment_in_range(fam, ya, yb, qy);
    } else {
        // at least one endpoint continues through a chart; split the path at
        // the strip endpoint nearest the excursion
        const double lo_v = sp.psi_lo, hi_v = sp.psi_hi;
        const double edge_v = (psi_a < lo_v || psi_b < lo_v) ? lo_v : hi_v;
        const double in_v = in_range(psi_a) ? psi_a : psi_b;
        const double out_v = in_range(psi_a) ? psi_b : psi_a;
        const double sign = (in_range(psi_a)) ? 1.0 : -1.0;
        if (!in_range(in_v)) {
            // both beyond: difference of two chart values
            const Excursion ea = classify_excursion(fam.strips, p, psi_a);
            const Excursion eb = classify_excursion(fam.strips, p, psi_b);
            if (ea.chart != eb.chart)
                throw DomainError("increment spans the whole strip range");
            const ChartSeries cs =
                chart_series(fam.strips.charts[std::size_t(ea.chart)]);
            main = chart_value(cs, eb.w, eb.side) - chart_value(cs, ea.w, ea.side) -
                   qy * (psi_b - psi_a);
        } else {
            const double y_in = preimage_near(fam, p, in_v, y_seed);
            const double y_edge =
                edge_v == lo_v
                    ? (sp.direction > 0 ? sp.y_lo : sp.y_hi)
                    : (sp.direction > 0 ? sp.y_hi : sp.y_lo);
            const double part1 = increment_in_range(fam, y_in, y_edge, qy);
            const Excursion ex = classify_excursion(fam.strips, p, out_v);
            const ChartSeries cs =
                chart_series(fam.strips.charts[std::size_t(ex.chart)]);
            const double part2 = chart_value(cs, ex.w, ex.side) -
                                 chart_value(cs, 0.0, ex.side) -
                                 qy * (out_v - edge_v);
            main = sign * (part1 + part2);
        }
    }
    return main + blend_delta_exact(fam, p, psi_b) -
           blend_delta_exact(fam, p, psi_a);
}

} // namespace

double eval_q_eps(const RegularizedFamily& fam, double eps, double y,
                  double zeta) {
    if (!fam.has_shift) throw DomainError("solve the shift before q_eps");
    if (!(eps > 0.0)) throw DomainError("eps must be positive");
    const int p = strip_of_y(fam.strips, y);
    const auto& eq = fam.strips.eq;
    const double psi_a = eq.eval_psi(y) + fam.eval_shift(y);
    const double psi_b = psi_a + eps * zeta;
    const double qy = potential::eval_Q_value(eq.spec, eq.corrector, y);
    const double w = stable_increment(fam, p, psi_a, psi_b, qy, std::abs(y));
    return w / (eps * std::sqrt(eps));
}

double eval_q_eps_dzeta(const RegularizedFamily& fam, double eps, double y,
                        double zeta) {
    if (!fam.has_shift) throw DomainError("solve the shift before q_eps");
    if (!(eps > 0.0)) throw DomainError("eps must be positive");
    const int p = strip_of_y(fam.strips, y);
    const auto& eq = fam.strips.eq;
    const double psi = eq.eval_psi(y) + fam.eval_shift(y) + eps * zeta;
    const double qy = potential::eval_Q_value(eq.spec, eq.corrector, y);
    const auto& sp = fam.strips.strips[std::size_t(p)];

    double dfp;
    if (psi >= sp.psi_lo && psi <= sp.psi_hi) {
        const double yb = preimage_near(fam, p, psi, std::abs(y));
        dfp = potential::eval_Q_value(eq.spec, eq.corrector, yb) - qy;
    } else {
        const Excursion ex = classify_excursion(fam.strips, p, psi);
        const ChartSeries cs =
            chart_series(fam.strips.charts[std::size_t(ex.chart)]);
        dfp = chart_value_derivative(cs, ex.w) - qy;
    }

    double blend = 0.0;
    for (const auto& b : active_blends(fam, p, psi)) {
        const auto& sq = fam.strips.strips[std::size_t(b.adj)];
        if (psi < sp.psi_lo || psi > sp.psi_hi || psi < sq.psi_lo ||
            psi > sq.psi_hi)
            continue;
        const double yc = fam.strips.charts[std::size_t(b.chart)].y_crit;
        const double yp = preimage_near(fam, p, psi, yc);
        const double yq = preimage_near(fam, b.adj, psi, yc);
        const double delta = eq.eval_d2psi(yq) - eq.eval_d2psi(yp);
        const double ddelta = potential::eval_Q_value(eq.spec, eq.corrector, yq) -
                              potential::eval_Q_value(eq.spec, eq.corrector, yp);
        const double chi = cutoff_chi(b.tt);
        const double dchi =
            cutoff_chi_prime(b.tt) * (b.w >= 0.0 ? 1.0 : -1.0) / fam.eta;
        blend += 0.5 * (dchi * delta + chi * ddelta);
    }
    return (dfp + blend) / std::sqrt(eps);
}

void write_strip_csv(const StripSet& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot open " + path);
    out << "strip,psi,F,dF\n";
    char buf[160];
    for (const auto& sp : s.strips) {
        const int M = 512;
        for (int k = 0; k <= M; ++k) {
            const double psi =
                sp.psi_lo + (sp.psi_hi - sp.psi_lo) * double(k) / double(M);
            std::snprintf(buf, sizeof buf, "%d,%.12e,%.12e,%.12e\n", sp.p, psi,
                          sp.F(psi), sp.F.derivative(psi));
            out << buf;
        }
    }
}

} // namespace qpe::nonlinearity
