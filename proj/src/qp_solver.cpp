#include "qpe/qp_solver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "qpe/potential.hpp"

namespace qpe::qp_solver {

namespace {

std::vector<long> canonical(std::vector<long> l) {
    for (long c : l) {
        if (c > 0) return l;
        if (c < 0) break;
    }
    for (auto& c : l) c = -c;
    return l;
}

bool is_canonical_rep(const std::vector<long>& l) {
    for (long c : l) {
        if (c > 0) return true;
        if (c < 0) return false;
    }
    return true;  // the zero site
}

double dot_omega(const std::vector<double>& omega, const std::vector<long>& l) {
    double s = 0.0;
    for (std::size_t k = 0; k < omega.size(); ++k) s += omega[k] * double(l[k]);
    return s;
}

} // namespace

long Lattice::index_of(std::vector<long> l) const {
    l = canonical(std::move(l));
    auto it = std::lower_bound(ells.begin(), ells.end(), l);
    if (it == ells.end() || *it != l) return -1;
    return long(it - ells.begin());
}

Lattice make_half_lattice(int kappa0, int K) {
    if (kappa0 < 1 || K < 1) throw DomainError("lattice needs kappa0 >= 1, K >= 1");
    Lattice lat;
    lat.kappa0 = kappa0;
    lat.K = K;
    std::vector<long> l(std::size_t(kappa0), -long(K));
    while (true) {
        if (is_canonical_rep(l)) lat.ells.push_back(l);
        int d = kappa0 - 1;
        while (d >= 0 && l[std::size_t(d)] == K) { l[std::size_t(d)] = -long(K); --d; }
        if (d < 0) break;
        ++l[std::size_t(d)];
    }
    std::sort(lat.ells.begin(), lat.ells.end());
    return lat;
}

long CoefficientState::pinned_site(int k) const {
    std::vector<long> e(std::size_t(kappa0), 0);
    e[std::size_t(k)] = 1;
    return lattice.index_of(e);
}

CoefficientState linear_solution(const spectrum::Spectrum& sp,
                                 const std::vector<double>& xi, double eps,
                                 int K, int J) {
    const int kappa0 = sp.kappa0;
    if (J == 0) J = kappa0;
    if (int(xi.size()) != kappa0) throw ShapeError("xi size must equal kappa0");
    for (double x : xi)
        if (!(x > 0.0)) throw DomainError("amplitudes xi must be positive");
    if (J < kappa0 || J > int(sp.eigenvalues.size()))
        throw ShapeError("J must lie in [kappa0, computed eigenpairs]");
    CoefficientState st;
    st.kappa0 = kappa0;
    st.K = K;
    st.J = J;
    st.lattice = make_half_lattice(kappa0, K);
    st.u.assign(st.lattice.size() * std::size_t(J), 0.0);
    st.omega = sp.omega_vec;
    st.eps = eps;
    st.xi = xi;
    if (eps > 0.0) {
        for (int k = 0; k < kappa0; ++k)
            st.at(std::size_t(st.pinned_site(k)), st.eigen_slot(k)) =
                std::sqrt(xi[std::size_t(k)]);
    }
    return st;
}

namespace {

// pseudo-spectral workspace tied to one (state shape, family, spectrum) triple
struct Workspace {
    const spectrum::Spectrum* sp = nullptr;
    const nonlinearity::RegularizedFamily* fam = nullptr;
    int M = 0;          // theta samples per angle
    std::size_t T = 0;  // M^kappa0
    std::vector<std::size_t> mirror;  // index of -theta node
    Eigen::MatrixXd C;                // T x L, cos(l . theta_t)
    Eigen::MatrixXd C2;               // T x L2 over the doubled lattice
    Lattice lat2;                     // |nu|_inf <= 2K, for cosine products
    std::vector<int> pair_minus, pair_plus;  // L x L -> lat2 indices
    std::vector<double> yh;           // half grid y >= 0
    std::vector<double> wq;           // trapezoid weights times parity factor
    Eigen::MatrixXd phi;              // Ny x J eigenfunction samples
    std::vector<double> mu;
};

Workspace make_workspace(const CoefficientState& st,
                         const nonlinearity::RegularizedFamily& fam,
                         const spectrum::Spectrum& sp) {
    Workspace w;
    w.sp = &sp;
    w.fam = &fam;
    const int kappa0 = st.kappa0;
    if (sp.kappa0 != kappa0) throw ShapeError("spectrum kappa0 mismatch");
    if (st.J > int(sp.eigenvalues.size())) throw ShapeError("J exceeds computed eigenpairs");
    w.M = 4 * (st.K + 1);
    w.T = 1;
    for (int d = 0; d < kappa0; ++d) w.T *= std::size_t(w.M);

    std::vector<std::vector<long>> tidx(w.T, std::vector<long>(std::size_t(kappa0), 0));
    for (std::size_t t = 1; t < w.T; ++t) {
        tidx[t] = tidx[t - 1];
        int d = kappa0 - 1;
        while (true) {
            if (++tidx[t][std::size_t(d)] < w.M) break;
            tidx[t][std::size_t(d)] = 0;
            --d;
        }
    }
    w.mirror.resize(w.T);
    for (std::size_t t = 0; t < w.T; ++t) {
        std::size_t m = 0;
        for (int d = 0; d < kappa0; ++d) {
            long r = (w.M - tidx[t][std::size_t(d)]) % w.M;
            m = m * std::size_t(w.M) + std::size_t(r);
        }
        w.mirror[t] = m;
    }

    const double dth = 2.0 * std::numbers::pi / double(w.M);
    auto fill_cos = [&](const Lattice& lat, Eigen::MatrixXd& C) {
        C.resize(long(w.T), long(lat.size()));
        for (std::size_t t = 0; t < w.T; ++t)
            for (std::size_t li = 0; li < lat.size(); ++li) {
                double a = 0.0;
                for (int d = 0; d < kappa0; ++d)
                    a += double(lat.ells[li][std::size_t(d)]) *
                         double(tidx[t][std::size_t(d)]) * dth;
                C(long(t), long(li)) = std::cos(a);
            }
        // cos(l . theta) is even under theta -> -theta; enforce it bitwise so the
        // sine-leakage check downstream only fires on genuine symmetry breakage
        for (std::size_t t = 0; t < w.T; ++t)
            if (w.mirror[t] > t) C.row(long(w.mirror[t])) = C.row(long(t));
    };
    fill_cos(st.lattice, w.C);
    w.lat2 = make_half_lattice(kappa0, 2 * st.K);
    fill_cos(w.lat2, w.C2);

    const std::size_t L = st.lattice.size();
    w.pair_minus.assign(L * L, -1);
    w.pair_plus.assign(L * L, -1);
    for (std::size_t a = 0; a < L; ++a)
        for (std::size_t b = 0; b < L; ++b) {
            std::vector<long> dm(st.lattice.ells[a]), dp(st.lattice.ells[a]);
            for (int d = 0; d < kappa0; ++d) {
                dm[std::size_t(d)] -= st.lattice.ells[b][std::size_t(d)];
                dp[std::size_t(d)] += st.lattice.ells[b][std::size_t(d)];
            }
            w.pair_minus[a * L + b] = int(w.lat2.index_of(dm));
            w.pair_plus[a * L + b] = int(w.lat2.index_of(dp));
        }

    const auto& g = sp.grid;
    const std::size_t n = (g.size() - 1) / 2;
    const double h = g.spacing();
    w.yh.resize(n + 1);
    w.wq.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        w.yh[i] = g[n + i];
        w.wq[i] = 2.0 * h * ((i == 0 || i == n) ? 0.5 : 1.0);
    }
    w.phi.resize(long(n + 1), st.J);
    for (int j = 0; j < st.J; ++j)
        for (std::size_t i = 0; i <= n; ++i)
            w.phi(long(i), j) = sp.eigenfunctions[std::size_t(j)][n + i];
    w.mu.assign(sp.eigenvalues.begin(), sp.eigenvalues.begin() + st.J);
    return w;
}

struct GridEval {
    Eigen::MatrixXd q;   // T x Ny
    Eigen::MatrixXd dq;  // T x Ny, only when requested
    double sup_q = 0.0;
};

GridEval eval_on_grid(const Workspace& w, const CoefficientState& st, double eps,
                      bool want_dq) {
    const std::size_t Ny = w.yh.size();
    Eigen::Map<const Eigen::MatrixXd> U(st.u.data(), st.J, long(st.lattice.size()));
    Eigen::MatrixXd A = w.C * U.transpose();       // T x J
    Eigen::MatrixXd zeta = A * w.phi.transpose();  // T x Ny

    GridEval ge;
    ge.q.resize(long(w.T), long(Ny));
    if (want_dq) ge.dq.resize(long(w.T), long(Ny));
    for (std::size_t t = 0; t < w.T; ++t)
        for (std::size_t i = 0; i < Ny; ++i) {
            const double y = w.yh[i];
            const double z = zeta(long(t), long(i));
            const double qv = nonlinearity::eval_q_eps(*w.fam, eps, y, z);
            ge.q(long(t), long(i)) = qv;
            ge.sup_q = std::max(ge.sup_q, std::abs(qv));
            if (want_dq)
                ge.dq(long(t), long(i)) = nonlinearity::eval_q_eps_dzeta(*w.fam, eps, y, z);
        }

    // cosine sector preserved: q inherits evenness of zeta in theta
    double leak = 0.0;
    for (std::size_t t = 0; t < w.T; ++t) {
        std::size_t m = w.mirror[t];
        if (m <= t) continue;
        for (std::size_t i = 0; i < Ny; ++i)
            leak = std::max(leak, std::abs(ge.q(long(t), long(i)) - ge.q(long(m), long(i))));
    }
    if (leak > 1e-13 * std::max(1.0, ge.sup_q)) {
        std::ostringstream os;
        os << "sine-sector leakage above tolerance: " << std::scientific << leak;
        throw DomainError(os.str());
    }
    return ge;
}

Eigen::MatrixXd project_modes(const Workspace& w, const Eigen::MatrixXd& f) {
    const std::size_t Ny = w.yh.size();
    Eigen::VectorXd wy = Eigen::VectorXd::Zero(long(Ny));
    for (std::size_t i = 0; i < Ny; ++i) wy(long(i)) = w.wq[i];
    Eigen::MatrixXd B = f * (wy.asDiagonal() * w.phi);  // T x J
    Eigen::MatrixXd P = w.C.transpose() * B;            // L x J
    const double invT = 1.0 / double(w.T);
    for (long li = 0; li < P.rows(); ++li) P.row(li) *= (li == 0 ? 1.0 : 2.0) * invT;
    return P;
}

void check_alias(const Workspace& w, const CoefficientState& st,
                 const Eigen::MatrixXd& q, double sup_q,
                 std::vector<std::string>* warnings) {
    if (!warnings) return;
    const int Kcut = (3 * st.K) / 2;
    const int Lhi = w.M / 2 - 1;
    if (Lhi <= Kcut) return;
    const std::size_t Ny = w.yh.size();
    const std::size_t ys[5] = {0, Ny / 4, Ny / 2, (3 * Ny) / 4, Ny - 1};
    const double dth = 2.0 * std::numbers::pi / double(w.M);
    double worst = 0.0;
    for (int d = 0; d < st.kappa0; ++d) {
        std::size_t stride = 1;
        for (int dd = st.kappa0 - 1; dd > d; --dd) stride *= std::size_t(w.M);
        for (std::size_t iy : ys)
            for (int lp = Kcut + 1; lp <= Lhi; ++lp) {
                double c = 0.0;
                for (int t = 0; t < w.M; ++t)
                    c += q(long(std::size_t(t) * stride), long(iy)) * std::cos(lp * t * dth);
                worst = std::max(worst, std::abs(2.0 * c / double(w.M)));
            }
    }
    if (worst > 1e-9 * std::max(1.0, sup_q)) {
        const std::string msg = "AliasWarning: nonlinear image beyond 3K/2 at level " +
                                std::to_string(worst);
        if (warnings->empty() || warnings->back() != msg) warnings->push_back(msg);
    }
}

// divisor of mode (l, j); alpha (if nonempty) replaces tangential eigenvalues
double divisor_of(const CoefficientState& st, const std::vector<double>& mu,
                  const std::vector<long>& l, int j, const std::vector<double>& alpha) {
    const double wl = dot_omega(st.omega, l);
    double muj = mu[std::size_t(j)];
    if (!alpha.empty() && j < st.kappa0) {
        const int k = st.kappa0 - 1 - j;  // frequency slot paired with eigen slot j
        muj = -alpha[std::size_t(k)] * alpha[std::size_t(k)];
    }
    return -(wl * wl + muj);
}

std::vector<double> residual_impl(const CoefficientState& st,
                                  const Workspace& w, double eps,
                                  const std::vector<double>& alpha,
                                  std::vector<std::string>* warnings,
                                  Eigen::MatrixXd* dq_out) {
    for (double c : st.u)
        if (!std::isfinite(c)) throw NonFiniteStateError("coefficient state not finite");
    GridEval ge = eval_on_grid(w, st, eps, dq_out != nullptr);
    if (dq_out) *dq_out = std::move(ge.dq);
    check_alias(w, st, ge.q, ge.sup_q, warnings);
    Eigen::MatrixXd P = project_modes(w, ge.q);
    const double se = std::sqrt(std::max(eps, 0.0));
    std::vector<double> R(st.u.size(), 0.0);
    for (std::size_t li = 0; li < st.lattice.size(); ++li)
        for (int j = 0; j < st.J; ++j) {
            const double div = divisor_of(st, w.mu, st.lattice.ells[li], j, alpha);
            R[li * std::size_t(st.J) + std::size_t(j)] =
                div * st.at(li, j) - se * P(long(li), j);
        }
    return R;
}

struct UnknownMap {
    // columns: active non-pinned coefficients, then kappa0 frequency/counterterm slots
    std::vector<std::pair<std::size_t, int>> cols;
    std::vector<long> col_of_entry;  // mode entry -> column, -1 if pinned/frozen
    std::vector<char> pinned;
    std::vector<char> active;
};

UnknownMap make_unknown_map(const CoefficientState& st, int K_active) {
    UnknownMap m;
    m.pinned.assign(st.u.size(), 0);
    m.active.assign(st.u.size(), 1);
    m.col_of_entry.assign(st.u.size(), -1);
    for (int k = 0; k < st.kappa0; ++k) {
        const long li = st.pinned_site(k);
        m.pinned[std::size_t(li) * std::size_t(st.J) + std::size_t(st.eigen_slot(k))] = 1;
    }
    for (std::size_t li = 0; li < st.lattice.size(); ++li) {
        long linf = 0;
        for (long c : st.lattice.ells[li]) linf = std::max(linf, std::abs(c));
        if (linf > K_active)
            for (int j = 0; j < st.J; ++j)
                m.active[li * std::size_t(st.J) + std::size_t(j)] = 0;
    }
    for (std::size_t li = 0; li < st.lattice.size(); ++li)
        for (int j = 0; j < st.J; ++j) {
            const std::size_t e = li * std::size_t(st.J) + std::size_t(j);
            if (m.active[e] && !m.pinned[e]) {
                m.col_of_entry[e] = long(m.cols.size());
                m.cols.push_back({li, j});
            }
        }
    return m;
}

// one Newton step; alpha empty => omega unknown, else alpha unknown
void newton_step(CoefficientState& st, std::vector<double>& alpha,
                 const Workspace& w, double eps, const UnknownMap& um,
                 const std::vector<double>& R, const Eigen::MatrixXd& dq) {
    const std::size_t L = st.lattice.size();
    const int J = st.J;
    const int kappa0 = st.kappa0;
    const bool alpha_mode = !alpha.empty();
    const std::size_t Ny = w.yh.size();

    // Gram blocks G_t(j,j') = int dq(theta_t, y) phi_j phi_j' dy, then their
    // cosine transform over the doubled lattice for the Toeplitz product rule
    Eigen::VectorXd wy = Eigen::VectorXd::Zero(long(Ny));
    for (std::size_t i = 0; i < Ny; ++i) wy(long(i)) = w.wq[i];
    const std::size_t L2 = w.lat2.size();
    std::vector<Eigen::MatrixXd> Gh(L2, Eigen::MatrixXd::Zero(J, J));
    for (std::size_t t = 0; t < w.T; ++t) {
        Eigen::VectorXd dmask = (dq.row(long(t)).transpose().array() * wy.array()).matrix();
        Eigen::MatrixXd Gt = w.phi.transpose() * dmask.asDiagonal() * w.phi;
        for (std::size_t nu = 0; nu < L2; ++nu) {
            const double c = w.C2(long(t), long(nu));
            if (c != 0.0) Gh[nu] += c * Gt;
        }
    }

    std::vector<std::size_t> rows;
    rows.reserve(st.u.size());
    for (std::size_t e = 0; e < st.u.size(); ++e)
        if (um.active[e]) rows.push_back(e);
    const std::size_t NR = rows.size();
    const std::size_t NC = um.cols.size() + std::size_t(kappa0);
    if (NR != NC) throw ShapeError("newton system not square");

    Eigen::MatrixXd Jm = Eigen::MatrixXd::Zero(long(NR), long(NC));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(long(NR));
    const double invT = 1.0 / double(w.T);
    const double se = std::sqrt(std::max(eps, 0.0));

    for (std::size_t ri = 0; ri < NR; ++ri) {
        const std::size_t e = rows[ri];
        const std::size_t li = e / std::size_t(J);
        const int j = int(e % std::size_t(J));
        const auto& l = st.lattice.ells[li];
        rhs(long(ri)) = -R[e];
        const double cfac = (li == 0 ? 1.0 : 2.0) * invT * 0.5;

        for (std::size_t ci = 0; ci < um.cols.size(); ++ci) {
            const auto [lj, jp] = um.cols[ci];
            const int im = w.pair_minus[li * L + lj];
            const int ip = w.pair_plus[li * L + lj];
            double v = -se * cfac *
                       (Gh[std::size_t(im)](j, jp) + Gh[std::size_t(ip)](j, jp));
            if (li == lj && j == jp) v += divisor_of(st, w.mu, l, j, alpha);
            Jm(long(ri), long(ci)) = v;
        }
        if (alpha_mode) {
            if (j < kappa0) {
                const int k = kappa0 - 1 - j;
                Jm(long(ri), long(um.cols.size() + std::size_t(k))) +=
                    2.0 * alpha[std::size_t(k)] * st.at(li, j);
            }
        } else {
            const double wl = dot_omega(st.omega, l);
            for (int k = 0; k < kappa0; ++k)
                Jm(long(ri), long(um.cols.size() + std::size_t(k))) +=
                    -2.0 * wl * double(l[std::size_t(k)]) * st.at(li, j);
        }
    }

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Jm);
    Eigen::VectorXd delta = lu.solve(rhs);
    if (!delta.allFinite())
        throw SingularOperatorError("newton system produced a non-finite step");

    for (std::size_t ci = 0; ci < um.cols.size(); ++ci) {
        const auto [li, j] = um.cols[ci];
        st.at(li, j) += delta(long(ci));
    }
    for (int k = 0; k < kappa0; ++k) {
        const double d = delta(long(um.cols.size() + std::size_t(k)));
        if (alpha_mode)
            alpha[std::size_t(k)] += d;
        else
            st.omega[std::size_t(k)] += d;
    }
}

void scan_tangential_divisors(const CoefficientState& st, const std::vector<double>& mu,
                              const std::vector<double>& alpha, double floor_val) {
    for (std::size_t li = 0; li < st.lattice.size(); ++li)
        for (int j = 0; j < st.kappa0; ++j) {
            const int k = st.kappa0 - 1 - j;
            if (long(li) == st.pinned_site(k)) continue;
            const double div = divisor_of(st, mu, st.lattice.ells[li], j, alpha);
            if (std::abs(div) < floor_val) {
                std::ostringstream os;
                os << "tangential divisor " << div << " below floor at l=(";
                for (int d = 0; d < st.kappa0; ++d)
                    os << st.lattice.ells[li][std::size_t(d)] << (d + 1 < st.kappa0 ? "," : "");
                os << "), j=" << (j + 1);
                throw SmallDivisorError(os.str());
            }
        }
}

double min_divisor_of(const CoefficientState& st, const std::vector<double>& mu,
                      const std::vector<double>& alpha) {
    double md = std::numeric_limits<double>::infinity();
    for (std::size_t li = 0; li < st.lattice.size(); ++li)
        for (int j = 0; j < st.J; ++j) {
            bool pinned = false;
            for (int k = 0; k < st.kappa0; ++k)
                if (long(li) == st.pinned_site(k) && j == st.eigen_slot(k)) pinned = true;
            if (pinned) continue;
            md = std::min(md, std::abs(divisor_of(st, mu, st.lattice.ells[li], j, alpha)));
        }
    return md;
}

SolveResult solve_driver(const NewtonConfig& cfg,
                         const nonlinearity::RegularizedFamily& fam,
                         const spectrum::Spectrum& sp,
                         bool counterterm_mode,
                         const std::vector<double>& omega_fixed) {
    if (!(cfg.eps >= 0.0)) throw DomainError("eps must be nonnegative");
    if (cfg.tol <= 0.0 || cfg.max_iter < 1) throw DomainError("bad newton controls");
    const double floor_val = cfg.divisor_floor > 0.0 ? cfg.divisor_floor
                                                     : 0.25 * cfg.upsilon * cfg.upsilon;

    frequencies::DiophantineSpec dspec;
    dspec.upsilon = cfg.upsilon;
    dspec.tau = cfg.tau;
    dspec.L_max = cfg.L_max;
    const std::vector<double>& omega0 = counterterm_mode ? omega_fixed : sp.omega_vec;
    if (int(omega0.size()) != sp.kappa0) throw ShapeError("frequency vector size mismatch");
    if (!frequencies::is_diophantine(omega0, dspec).pass)
        throw DomainError("base frequency vector fails the Diophantine test");

    CoefficientState st = linear_solution(sp, cfg.xi, cfg.eps, cfg.K, cfg.J);
    if (counterterm_mode) st.omega = omega_fixed;
    std::vector<double> alpha;
    if (counterterm_mode) {
        alpha.resize(std::size_t(sp.kappa0));
        for (int k = 0; k < sp.kappa0; ++k)
            alpha[std::size_t(k)] =
                std::sqrt(-sp.eigenvalues[std::size_t(st.eigen_slot(k))]);
    }

    SolveResult res;
    if (cfg.eps == 0.0) {
        res.state = st;
        res.omega_tilde = st.omega;
        res.alpha = alpha;
        res.min_divisor = min_divisor_of(
            st, std::vector<double>(sp.eigenvalues.begin(), sp.eigenvalues.begin() + st.J),
            alpha);
        res.euler_residual = verify_euler(res, fam, sp, 32);
        return res;
    }

    Workspace w = make_workspace(st, fam, sp);
    scan_tangential_divisors(st, w.mu, alpha, floor_val);

    const int steps = std::max(1, cfg.continuation_steps);
    const double ratio = steps > 1 ? std::pow(8.0, 1.0 / double(steps - 1)) : 1.0;
    for (int stage = 0; stage < steps; ++stage) {
        const double eps_i =
            steps > 1 ? cfg.eps / 8.0 * std::pow(ratio, double(stage)) : cfg.eps;
        st.eps = eps_i;
        int K_active = st.K;
        if (cfg.schedule && steps > 1) {
            const double f = double(stage + 1) / double(steps);
            K_active = std::min(st.K, std::max(2, int(std::ceil(std::pow(double(st.K), f)))));
        }
        UnknownMap um = make_unknown_map(st, K_active);

        const bool final_stage = (stage == steps - 1);
        std::vector<double>* hist = final_stage ? &res.residual_history : nullptr;

        // diagonal preconditioner supplies the stage's opening correction
        {
            std::vector<double> R0 = residual_impl(st, w, eps_i, alpha, &res.warnings, nullptr);
            std::vector<double> d0 = diag_inverse(sp, st, R0, floor_val, nullptr);
            for (std::size_t e = 0; e < st.u.size(); ++e)
                if (um.active[e] && !um.pinned[e]) st.u[e] += d0[e];
        }

        double best = std::numeric_limits<double>::infinity();
        int flat = 0;
        for (int it = 0; it <= cfg.max_iter; ++it) {
            Eigen::MatrixXd dq;
            std::vector<double> R = residual_impl(st, w, eps_i, alpha, &res.warnings, &dq);
            double rn = 0.0;
            for (std::size_t e = 0; e < st.u.size(); ++e)
                if (um.active[e]) rn = std::max(rn, std::abs(R[e]));
            if (hist) hist->push_back(rn);
            if (rn < cfg.tol) break;
            if (it == cfg.max_iter)
                throw StagnationError("newton iteration limit at residual " +
                                      std::to_string(rn));
            if (rn < 0.1 * best) {
                flat = 0;
            } else if (++flat >= 3) {
                throw StagnationError("3 newton steps without a tenfold residual drop at " +
                                      std::to_string(rn));
            }
            best = std::min(best, rn);
            newton_step(st, alpha, w, eps_i, um, R, dq);
            scan_tangential_divisors(st, w.mu, alpha, floor_val);
            for (double c : st.omega)
                if (!std::isfinite(c)) throw NonFiniteStateError("frequency iterate not finite");
        }
    }

    double edge = 0.0;
    for (std::size_t li = 0; li < st.lattice.size(); ++li) {
        long linf = 0;
        for (long c : st.lattice.ells[li]) linf = std::max(linf, std::abs(c));
        for (int j = 0; j < st.J; ++j)
            if (linf == st.K || j == st.J - 1)
                edge = std::max(edge, std::abs(st.at(li, j)));
    }
    if (edge > 1e-10)
        res.warnings.push_back("TruncationWarning: boundary coefficient " +
                               std::to_string(edge));

    res.state = st;
    res.omega_tilde = st.omega;
    res.alpha = alpha;
    res.min_divisor = min_divisor_of(st, w.mu, alpha);
    res.euler_residual = verify_euler(res, fam, sp, 96);
    return res;
}

} // namespace

std::vector<double> residual(const CoefficientState& state,
                             const nonlinearity::RegularizedFamily& fam,
                             const spectrum::Spectrum& sp,
                             std::vector<std::string>* warnings) {
    Workspace w = make_workspace(state, fam, sp);
    return residual_impl(state, w, state.eps, {}, warnings, nullptr);
}

std::vector<double> diag_inverse(const spectrum::Spectrum& sp,
                                 const CoefficientState& shape,
                                 const std::vector<double>& rhs,
                                 double divisor_floor,
                                 std::vector<std::pair<long, int>>* zeroed) {
    if (rhs.size() != shape.u.size()) throw ShapeError("rhs does not match state shape");
    std::vector<double> out(rhs.size(), 0.0);
    for (std::size_t li = 0; li < shape.lattice.size(); ++li)
        for (int j = 0; j < shape.J; ++j) {
            const double wl = dot_omega(shape.omega, shape.lattice.ells[li]);
            const double div = -(wl * wl + sp.eigenvalues[std::size_t(j)]);
            const std::size_t e = li * std::size_t(shape.J) + std::size_t(j);
            if (j < shape.kappa0 && std::abs(div) < divisor_floor) {
                out[e] = 0.0;
                if (zeroed) zeroed->push_back({long(li), j});
            } else {
                out[e] = rhs[e] / div;
            }
        }
    return out;
}

SolveResult newton_solve(const NewtonConfig& cfg,
                         const nonlinearity::RegularizedFamily& fam,
                         const spectrum::Spectrum& sp) {
    return solve_driver(cfg, fam, sp, false, {});
}

SolveResult solve_with_counterterm(const NewtonConfig& cfg,
                                   const nonlinearity::RegularizedFamily& fam,
                                   const spectrum::Spectrum& sp,
                                   const std::vector<double>& omega_fixed) {
    return solve_driver(cfg, fam, sp, true, omega_fixed);
}

ActionAngle action_angle_pack(const CoefficientState& state) {
    ActionAngle aa;
    aa.z = state;
    for (int k = 0; k < state.kappa0; ++k) {
        const long li = state.pinned_site(k);
        const int j = state.eigen_slot(k);
        const double a = state.at(std::size_t(li), j);
        const double amp2 = a * a;  // sine sector is identically empty
        if (!(amp2 > 0.0))
            throw ChartError("action-angle chart needs I_k + xi_k > 0 at slot " +
                             std::to_string(k + 1));
        aa.theta.push_back(a >= 0.0 ? 0.0 : std::numbers::pi);
        aa.action.push_back(amp2 - state.xi[std::size_t(k)]);
        aa.z.at(std::size_t(li), j) = 0.0;
    }
    return aa;
}

CoefficientState action_angle_unpack(const ActionAngle& aa) {
    CoefficientState st = aa.z;
    for (int k = 0; k < st.kappa0; ++k) {
        const double amp2 = aa.action[std::size_t(k)] + st.xi[std::size_t(k)];
        if (!(amp2 > 0.0)) throw ChartError("amplitude collapse in action-angle unpack");
        st.at(std::size_t(st.pinned_site(k)), st.eigen_slot(k)) =
            std::sqrt(amp2) * std::cos(aa.theta[std::size_t(k)]);
    }
    return st;
}

double verify_euler(const SolveResult& result,
                    const nonlinearity::RegularizedFamily& fam,
                    const spectrum::Spectrum& sp, int nx) {
    const auto& st = result.state;
    const auto& eq = fam.strips.eq;
    const auto& g = sp.grid;
    const std::size_t Ny = g.size();
    const double h = g.spacing();
    const double eps = st.eps;
    const int J = st.J;
    const std::size_t L = st.lattice.size();

    double wmin = std::numeric_limits<double>::infinity();
    for (double wk : result.omega_tilde) wmin = std::min(wmin, std::abs(wk));
    if (!std::isfinite(wmin) || wmin <= 0.0) wmin = 1.0;
    const double X = 2.0 * (2.0 * std::numbers::pi / wmin);
    nx = std::max(nx, 8);

    // background profile and its exact Laplacian (shift satisfies the
    // regularized ODE, so psi_bar'' = B_eta(psi_bar) pointwise)
    std::vector<double> pb(Ny), pb2(Ny), Qv(Ny);
    for (std::size_t i = 0; i < Ny; ++i) {
        const double y = g[i];
        const double base = eq.eval_psi(y);
        const double shift = fam.has_shift ? fam.eval_shift(y) : 0.0;
        pb[i] = base + shift;
        pb2[i] = fam.has_shift
                     ? nonlinearity::eval_F_eta(fam, nonlinearity::strip_of_y(fam.strips, y),
                                                base + shift)
                     : eq.eval_d2psi(y);
        Qv[i] = potential::eval_Q_value(eq.spec, eq.corrector, y);
    }

    // per-mode scalars
    std::vector<double> wl(L);
    for (std::size_t li = 0; li < L; ++li)
        wl[li] = dot_omega(result.omega_tilde, st.lattice.ells[li]);

    const std::size_t Jsz = std::size_t(J);
    std::vector<double> psi(Ny), dpsi_x(Ny), lap(Ny), dlap_x(Ny);
    std::vector<double> aj(Jsz), bj(Jsz), s1(Jsz), s3(Jsz);
    double sup_bracket = 0.0, sup_grad_psi = 0.0, sup_grad_lap = 0.0;

    for (int s = 0; s < nx; ++s) {
        const double x = X * double(s) / double(nx);
        std::fill(aj.begin(), aj.end(), 0.0);
        std::fill(bj.begin(), bj.end(), 0.0);
        std::fill(s1.begin(), s1.end(), 0.0);
        std::fill(s3.begin(), s3.end(), 0.0);
        for (std::size_t li = 0; li < L; ++li) {
            const double c = std::cos(wl[li] * x), sn = std::sin(wl[li] * x);
            for (int j = 0; j < J; ++j) {
                const double u = st.at(li, j);
                if (u == 0.0) continue;
                aj[std::size_t(j)] += u * c;
                bj[std::size_t(j)] += u * wl[li] * wl[li] * c;
                s1[std::size_t(j)] += u * wl[li] * sn;
                s3[std::size_t(j)] += u * wl[li] * wl[li] * wl[li] * sn;
            }
        }
        for (std::size_t i = 0; i < Ny; ++i) {
            double f = 0.0, fx = 0.0, lp = 0.0, lpx = 0.0;
            for (int j = 0; j < J; ++j) {
                const double ph = sp.eigenfunctions[std::size_t(j)][i];
                if (ph == 0.0) continue;
                const double qm = Qv[i] - sp.eigenvalues[std::size_t(j)];
                f += ph * aj[std::size_t(j)];
                fx -= ph * s1[std::size_t(j)];
                lp += ph * (qm * aj[std::size_t(j)] - bj[std::size_t(j)]);
                lpx -= ph * (qm * s1[std::size_t(j)] - s3[std::size_t(j)]);
            }
            psi[i] = pb[i] + eps * f;
            dpsi_x[i] = eps * fx;
            lap[i] = pb2[i] + eps * lp;
            dlap_x[i] = eps * lpx;
        }
        // 4th-order centered y-derivatives; outermost two nodes excluded
        for (std::size_t i = 2; i + 2 < Ny; ++i) {
            const double py =
                (-psi[i + 2] + 8.0 * psi[i + 1] - 8.0 * psi[i - 1] + psi[i - 2]) / (12.0 * h);
            const double ly =
                (-lap[i + 2] + 8.0 * lap[i + 1] - 8.0 * lap[i - 1] + lap[i - 2]) / (12.0 * h);
            const double br = dpsi_x[i] * ly - py * dlap_x[i];
            sup_bracket = std::max(sup_bracket, std::abs(br));
            sup_grad_psi = std::max(sup_grad_psi, std::hypot(dpsi_x[i], py));
            sup_grad_lap = std::max(sup_grad_lap, std::hypot(dlap_x[i], ly));
        }
    }
    const double norm = sup_grad_psi * sup_grad_lap;
    if (!(norm > 0.0)) return 0.0;
    return sup_bracket / norm;
}

std::string manifest_json(const SolveResult& res) {
    std::ostringstream os;
    os.precision(17);
    os << "{\n  \"kappa0\": " << res.state.kappa0 << ",\n  \"K\": " << res.state.K
       << ",\n  \"J\": " << res.state.J << ",\n  \"eps\": " << res.state.eps
       << ",\n  \"omega_tilde\": [";
    for (std::size_t k = 0; k < res.omega_tilde.size(); ++k)
        os << (k ? ", " : "") << res.omega_tilde[k];
    os << "],\n  \"alpha\": [";
    for (std::size_t k = 0; k < res.alpha.size(); ++k) os << (k ? ", " : "") << res.alpha[k];
    os << "],\n  \"residual_history\": [";
    for (std::size_t k = 0; k < res.residual_history.size(); ++k)
        os << (k ? ", " : "") << res.residual_history[k];
    os << "],\n  \"min_divisor\": " << res.min_divisor
       << ",\n  \"euler_residual\": " << res.euler_residual << ",\n  \"warnings\": [";
    for (std::size_t k = 0; k < res.warnings.size(); ++k)
        os << (k ? ", " : "") << '"' << res.warnings[k] << '"';
    os << "]\n}\n";
    return os.str();
}

void write_coeff_csv(const CoefficientState& state, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot open " + path);
    out.precision(17);
    for (int d = 0; d < state.kappa0; ++d) out << "l" << (d + 1) << ",";
    out << "j,u\n";
    for (std::size_t li = 0; li < state.lattice.size(); ++li)
        for (int j = 0; j < state.J; ++j) {
            for (int d = 0; d < state.kappa0; ++d)
                out << state.lattice.ells[li][std::size_t(d)] << ",";
            out << (j + 1) << "," << state.at(li, j) << "\n";
        }
}

} // namespace qpe::qp_solver
