#include "qpe/flowfield.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "qpe/frequencies.hpp"
#include "qpe/potential.hpp"
#include "qpe/shear.hpp"

namespace qpe::flowfield {

namespace {

std::vector<double> fd4_derivative(const std::vector<double>& v, double h) {
    const std::size_t n = v.size();
    std::vector<double> d(n, 0.0);
    if (n < 5) throw ShapeError("grid too small for derivative samples");
    for (std::size_t i = 2; i + 2 < n; ++i)
        d[i] = (-v[i + 2] + 8.0 * v[i + 1] - 8.0 * v[i - 1] + v[i - 2]) / (12.0 * h);
    d[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
    d[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h);
    d[n - 1] = (25.0 * v[n - 1] - 48.0 * v[n - 2] + 36.0 * v[n - 3] - 16.0 * v[n - 4] +
                3.0 * v[n - 5]) /
               (12.0 * h);
    d[n - 2] = (3.0 * v[n - 1] + 10.0 * v[n - 2] - 18.0 * v[n - 3] + 6.0 * v[n - 4] -
                v[n - 5]) /
               (12.0 * h);
    return d;
}

} // namespace

FieldSynth::Point FieldSynth::eval(double x, double y) const {
    Point p;
    p.psi = psibar(y);
    p.u = dpsibar(y);
    p.v = 0.0;
    p.vorticity = -d2psibar(y);
    if (eps == 0.0) return p;
    const double Qy = Qbar(y);
    for (std::size_t li = 0; li < ells.size(); ++li) {
        const double c = std::cos(wl[li] * x), s = std::sin(wl[li] * x);
        for (int j = 0; j < J; ++j) {
            const double a = coeff[li * std::size_t(J) + std::size_t(j)];
            if (a == 0.0) continue;
            const double ph = phi[std::size_t(j)](y);
            const double dph = phi[std::size_t(j)].derivative(y);
            p.psi += eps * a * c * ph;
            p.u += eps * a * c * dph;
            p.v += eps * a * wl[li] * s * ph;
            p.vorticity -= eps * a * c * ((Qy - mu[std::size_t(j)]) - wl[li] * wl[li]) * ph;
        }
    }
    return p;
}

std::array<double, 4> FieldSynth::velocity_gradient(double x, double y) const {
    double ux = 0.0, uy = d2psibar(y), vx = 0.0;
    if (eps != 0.0) {
        const double Qy = Qbar(y);
        for (std::size_t li = 0; li < ells.size(); ++li) {
            const double c = std::cos(wl[li] * x), s = std::sin(wl[li] * x);
            for (int j = 0; j < J; ++j) {
                const double a = coeff[li * std::size_t(J) + std::size_t(j)];
                if (a == 0.0) continue;
                const double ph = phi[std::size_t(j)](y);
                const double dph = phi[std::size_t(j)].derivative(y);
                const double ddph = (Qy - mu[std::size_t(j)]) * ph;
                ux -= eps * a * wl[li] * s * dph;
                uy += eps * a * c * ddph;
                vx += eps * a * wl[li] * wl[li] * c * ph;
            }
        }
    }
    return {ux, uy, vx, -ux};
}

FieldSynth make_synth(const qp_solver::SolveResult& result,
                      const nonlinearity::RegularizedFamily& fam,
                      const spectrum::Spectrum& sp) {
    const auto& st = result.state;
    const auto& eq = fam.strips.eq;
    FieldSynth fs;
    fs.kappa0 = st.kappa0;
    fs.eps = st.eps;
    fs.omega = result.omega_tilde;
    fs.ells = st.lattice.ells;
    fs.coeff = st.u;
    fs.J = st.J;
    fs.mu.assign(sp.eigenvalues.begin(), sp.eigenvalues.begin() + st.J);
    fs.wl.resize(fs.ells.size());
    for (std::size_t li = 0; li < fs.ells.size(); ++li) {
        double s = 0.0;
        for (std::size_t k = 0; k < fs.omega.size(); ++k)
            s += fs.omega[k] * double(fs.ells[li][k]);
        fs.wl[li] = s;
    }

    const auto& g = sp.grid;
    const std::size_t Ny = g.size();
    const double h = g.spacing();
    std::vector<double> pb(Ny), pb1(Ny), pb2(Ny), Qv(Ny);
    for (std::size_t i = 0; i < Ny; ++i) {
        const double y = g[i];
        const double shift = fam.has_shift ? fam.eval_shift(y) : 0.0;
        const double dshift = fam.has_shift ? fam.eval_dshift(y) : 0.0;
        pb[i] = eq.eval_psi(y) + shift;
        pb1[i] = eq.eval_dpsi(y) + dshift;
        pb2[i] = fam.has_shift
                     ? nonlinearity::eval_F_eta(fam, nonlinearity::strip_of_y(fam.strips, y),
                                                pb[i])
                     : eq.eval_d2psi(y);
        Qv[i] = potential::eval_Q_value(eq.spec, eq.corrector, y);
    }
    fs.psibar = numerics::CubicHermite(g.front(), g.back(), pb, pb1);
    fs.dpsibar = numerics::CubicHermite(g.front(), g.back(), pb1, pb2);
    fs.d2psibar = numerics::CubicHermite(g.front(), g.back(), pb2, fd4_derivative(pb2, h));
    fs.Qbar = numerics::CubicHermite(g.front(), g.back(), Qv, fd4_derivative(Qv, h));

    for (int j = 0; j < st.J; ++j) {
        const auto& ph = sp.eigenfunctions[std::size_t(j)];
        fs.phi.push_back(numerics::CubicHermite(g.front(), g.back(), ph,
                                                fd4_derivative(ph, h)));
    }
    return fs;
}

FlowField assemble_flow(const qp_solver::SolveResult& result,
                        const nonlinearity::RegularizedFamily& fam,
                        const spectrum::Spectrum& sp,
                        std::size_t nx, std::size_t ny) {
    if (nx < 16 || ny < 16) throw ShapeError("flow grid needs at least 16 samples per axis");
    FlowField f;
    f.synth = make_synth(result, fam, sp);

    double wmin = std::numeric_limits<double>::infinity();
    for (double wk : f.synth.omega) wmin = std::min(wmin, std::abs(wk));
    if (!std::isfinite(wmin) || wmin <= 0.0) wmin = 1.0;
    f.X_max = 4.0 * 2.0 * std::numbers::pi / wmin;

    f.xs.resize(nx);
    f.ys.resize(ny);
    for (std::size_t i = 0; i < nx; ++i)
        f.xs[i] = f.X_max * double(i) / double(nx - 1);
    for (std::size_t i = 0; i < ny; ++i)
        f.ys[i] = -1.0 + 2.0 * double(i) / double(ny - 1);
    f.ys.front() = -1.0;
    f.ys.back() = 1.0;

    f.psi.resize(nx * ny);
    f.u.resize(nx * ny);
    f.v.resize(nx * ny);
    f.vorticity.resize(nx * ny);
    double wall_v = 0.0;
    for (std::size_t ix = 0; ix < nx; ++ix)
        for (std::size_t iy = 0; iy < ny; ++iy) {
            const auto p = f.synth.eval(f.xs[ix], f.ys[iy]);
            const std::size_t e = ix * ny + iy;
            f.psi[e] = p.psi;
            f.u[e] = p.u;
            f.v[e] = p.v;
            f.vorticity[e] = p.vorticity;
            if (iy == 0 || iy == ny - 1) wall_v = std::max(wall_v, std::abs(p.v));
        }
    if (wall_v > 1e-10)
        f.warnings.push_back("impermeability violation at walls: " + std::to_string(wall_v));
    return f;
}

StagnationReport find_stagnation(const FlowField& f) {
    StagnationReport rep;
    bool trivial = (f.synth.eps == 0.0);
    if (!trivial) {
        trivial = true;
        for (double c : f.synth.coeff)
            if (c != 0.0) { trivial = false; break; }
    }
    if (trivial) {
        rep.warnings.push_back("DegenerateFieldWarning: pure shear field has no isolated "
                               "stagnation points");
        return rep;
    }

    const std::size_t nx = f.nx(), ny = f.ny();
    const double dx = f.xs[1] - f.xs[0], dy = f.ys[1] - f.ys[0];
    double vscale = 0.0;
    for (std::size_t e = 0; e < f.u.size(); ++e)
        vscale = std::max(vscale, std::hypot(f.u[e], f.v[e]));

    auto sign_change = [&](const std::vector<double>& g, std::size_t ix, std::size_t iy) {
        const double a = f.at(g, ix, iy), b = f.at(g, ix + 1, iy);
        const double c = f.at(g, ix, iy + 1), d = f.at(g, ix + 1, iy + 1);
        const double mn = std::min(std::min(a, b), std::min(c, d));
        const double mx = std::max(std::max(a, b), std::max(c, d));
        return mn <= 0.0 && mx >= 0.0;
    };

    int skipped = 0;
    for (std::size_t ix = 0; ix + 1 < nx; ++ix)
        for (std::size_t iy = 0; iy + 1 < ny; ++iy) {
            if (!sign_change(f.u, ix, iy) || !sign_change(f.v, ix, iy)) continue;
            double x = 0.5 * (f.xs[ix] + f.xs[ix + 1]);
            double y = 0.5 * (f.ys[iy] + f.ys[iy + 1]);
            bool ok = false;
            for (int it = 0; it < 40; ++it) {
                const auto p = f.synth.eval(x, y);
                if (std::hypot(p.u, p.v) <= 1e-12 * std::max(1.0, vscale)) { ok = true; break; }
                const auto g = f.synth.velocity_gradient(x, y);
                const double det = g[0] * g[3] - g[1] * g[2];
                const double nrm = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3];
                if (!(std::abs(det) > 1e-14 * nrm)) break;
                x -= (g[3] * p.u - g[1] * p.v) / det;
                y -= (-g[2] * p.u + g[0] * p.v) / det;
                if (y < -1.0 || y > 1.0 || x < -dx || x > f.X_max + dx) break;
                if (!std::isfinite(x) || !std::isfinite(y)) break;
            }
            if (!ok) { ++skipped; continue; }
            const auto p = f.synth.eval(x, y);
            if (std::abs(p.u) > 1e-9 || std::abs(p.v) > 1e-9) { ++skipped; continue; }
            bool dup = false;
            for (const auto& q : rep.points)
                if (std::abs(q.x - x) < 0.5 * dx && std::abs(q.y - y) < 0.5 * dy) dup = true;
            if (dup) continue;

            StagnationPoint sp;
            sp.x = x;
            sp.y = y;
            sp.psi = p.psi;
            const auto g = f.synth.velocity_gradient(x, y);
            sp.det = g[0] * g[3] - g[1] * g[2];
            sp.trace = g[0] + g[3];
            const double nrm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]);
            if (std::abs(sp.trace) > 1e-6 * nrm)
                rep.warnings.push_back("velocity-gradient trace not conservative at x=" +
                                       std::to_string(x));
            sp.type = sp.det < 0.0 ? "saddle" : "center";
            rep.points.push_back(sp);
        }
    if (skipped > 0)
        rep.warnings.push_back(std::to_string(skipped) + " divergent stagnation seeds skipped");
    std::sort(rep.points.begin(), rep.points.end(),
              [](const StagnationPoint& a, const StagnationPoint& b) {
                  return a.x != b.x ? a.x < b.x : a.y < b.y;
              });
    return rep;
}

namespace {

using EdgeKey = std::uint64_t;

EdgeKey hkey(std::size_t ix, std::size_t iy) {
    return (EdgeKey(0) << 62) | (EdgeKey(ix) << 24) | EdgeKey(iy);
}
EdgeKey vkey(std::size_t ix, std::size_t iy) {
    return (EdgeKey(1) << 62) | (EdgeKey(ix) << 24) | EdgeKey(iy);
}

} // namespace

std::vector<LevelCurve> trace_level_sets(const FlowField& f,
                                         const std::vector<double>& levels) {
    const std::size_t nx = f.nx(), ny = f.ny();
    std::vector<LevelCurve> out;
    for (double lvl : levels) {
        LevelCurve curve;
        curve.level = lvl;
        std::unordered_map<EdgeKey, std::array<double, 2>> pts;
        std::vector<std::pair<EdgeKey, EdgeKey>> segs;

        auto cross_h = [&](std::size_t ix, std::size_t iy) {
            const double va = f.at(f.psi, ix, iy), vb = f.at(f.psi, ix + 1, iy);
            const double t = (lvl - va) / (vb - va);
            const EdgeKey k = hkey(ix, iy);
            pts[k] = {f.xs[ix] + t * (f.xs[ix + 1] - f.xs[ix]), f.ys[iy]};
            return k;
        };
        auto cross_v = [&](std::size_t ix, std::size_t iy) {
            const double va = f.at(f.psi, ix, iy), vb = f.at(f.psi, ix, iy + 1);
            const double t = (lvl - va) / (vb - va);
            const EdgeKey k = vkey(ix, iy);
            pts[k] = {f.xs[ix], f.ys[iy] + t * (f.ys[iy + 1] - f.ys[iy])};
            return k;
        };

        for (std::size_t ix = 0; ix + 1 < nx; ++ix)
            for (std::size_t iy = 0; iy + 1 < ny; ++iy) {
                const double vA = f.at(f.psi, ix, iy), vB = f.at(f.psi, ix + 1, iy);
                const double vC = f.at(f.psi, ix + 1, iy + 1), vD = f.at(f.psi, ix, iy + 1);
                int mask = (vA > lvl ? 1 : 0) | (vB > lvl ? 2 : 0) | (vC > lvl ? 4 : 0) |
                           (vD > lvl ? 8 : 0);
                if (mask == 0 || mask == 15) continue;
                auto eb = [&] { return cross_h(ix, iy); };
                auto et = [&] { return cross_h(ix, iy + 1); };
                auto el = [&] { return cross_v(ix, iy); };
                auto er = [&] { return cross_v(ix + 1, iy); };
                switch (mask) {
                    case 1: case 14: segs.push_back({el(), eb()}); break;
                    case 2: case 13: segs.push_back({eb(), er()}); break;
                    case 3: case 12: segs.push_back({el(), er()}); break;
                    case 4: case 11: segs.push_back({er(), et()}); break;
                    case 6: case 9: segs.push_back({eb(), et()}); break;
                    case 7: case 8: segs.push_back({el(), et()}); break;
                    case 5: {
                        const double ctr = 0.25 * (vA + vB + vC + vD);
                        if (ctr > lvl) {
                            segs.push_back({eb(), er()});
                            segs.push_back({el(), et()});
                        } else {
                            segs.push_back({el(), eb()});
                            segs.push_back({er(), et()});
                        }
                        break;
                    }
                    case 10: {
                        const double ctr = 0.25 * (vA + vB + vC + vD);
                        if (ctr > lvl) {
                            segs.push_back({el(), eb()});
                            segs.push_back({er(), et()});
                        } else {
                            segs.push_back({eb(), er()});
                            segs.push_back({el(), et()});
                        }
                        break;
                    }
                    default: break;
                }
            }

        // chain segments through shared edge crossings
        std::unordered_map<EdgeKey, std::vector<std::size_t>> touch;
        for (std::size_t s = 0; s < segs.size(); ++s) {
            touch[segs[s].first].push_back(s);
            touch[segs[s].second].push_back(s);
        }
        std::vector<char> used(segs.size(), 0);
        auto walk = [&](std::size_t s0, EdgeKey start) {
            std::vector<EdgeKey> chain;
            chain.push_back(start);
            std::size_t s = s0;
            EdgeKey cur = start;
            while (true) {
                used[s] = 1;
                cur = segs[s].first == cur ? segs[s].second : segs[s].first;
                chain.push_back(cur);
                std::size_t nxt = std::size_t(-1);
                for (std::size_t c : touch[cur])
                    if (!used[c]) { nxt = c; break; }
                if (nxt == std::size_t(-1)) break;
                s = nxt;
            }
            return chain;
        };
        auto emit = [&](const std::vector<EdgeKey>& chain) {
            std::vector<std::array<double, 2>> poly;
            poly.reserve(chain.size());
            for (EdgeKey k : chain) poly.push_back(pts[k]);
            curve.closed.push_back(chain.size() > 2 && chain.front() == chain.back());
            curve.polylines.push_back(std::move(poly));
        };
        for (std::size_t s = 0; s < segs.size(); ++s) {
            if (used[s]) continue;
            const bool a_open = touch[segs[s].first].size() == 1;
            const bool b_open = touch[segs[s].second].size() == 1;
            if (a_open || b_open) emit(walk(s, a_open ? segs[s].first : segs[s].second));
        }
        for (std::size_t s = 0; s < segs.size(); ++s)
            if (!used[s]) emit(walk(s, segs[s].first));
        out.push_back(std::move(curve));
    }
    return out;
}

void write_flow_csv(const FlowField& f, const std::string& path) {
    std::ofstream outf(path);
    if (!outf) throw DomainError("cannot open " + path);
    outf.precision(12);
    outf << "x,y,psi,u,v,vorticity\n";
    for (std::size_t ix = 0; ix < f.nx(); ++ix)
        for (std::size_t iy = 0; iy < f.ny(); ++iy) {
            const std::size_t e = ix * f.ny() + iy;
            outf << f.xs[ix] << "," << f.ys[iy] << "," << f.psi[e] << "," << f.u[e] << ","
                 << f.v[e] << "," << f.vorticity[e] << "\n";
        }
}

void write_levelsets_csv(const std::vector<LevelCurve>& curves, const std::string& path) {
    std::ofstream outf(path);
    if (!outf) throw DomainError("cannot open " + path);
    outf.precision(12);
    outf << "level,curve,closed,x,y\n";
    for (const auto& c : curves)
        for (std::size_t p = 0; p < c.polylines.size(); ++p)
            for (const auto& pt : c.polylines[p])
                outf << c.level << "," << p << "," << (c.closed[p] ? 1 : 0) << "," << pt[0]
                     << "," << pt[1] << "\n";
}

std::string stagnation_json(const StagnationReport& rep) {
    nlohmann::json j;
    j["points"] = nlohmann::json::array();
    for (const auto& p : rep.points)
        j["points"].push_back({{"x", p.x},
                               {"y", p.y},
                               {"type", p.type},
                               {"psi", p.psi},
                               {"det", p.det},
                               {"trace", p.trace}});
    j["warnings"] = rep.warnings;
    return j.dump(2);
}

PipelineConfig load_config(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw UsageError("cannot open config " + json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw UsageError(std::string("config parse failure: ") + e.what());
    }
    PipelineConfig c;
    try {
        c.kappa0 = j.value("kappa0", c.kappa0);
        c.r = j.value("r", c.r);
        c.m = j.value("m", c.m);
        c.S = j.value("S", c.S);
        c.eps = j.value("eps", c.eps);
        if (j.contains("xi")) c.xi = j["xi"].get<std::vector<double>>();
        c.K = j.value("K", c.K);
        c.J = j.value("J", c.J);
        c.upsilon = j.value("upsilon", c.upsilon);
        c.tau = j.value("tau", c.tau);
        c.L_max = j.value("Lmax", c.L_max);
        c.eta = j.value("eta", c.eta);
        c.seed = j.value("seed", c.seed);
        c.nx = j.value("nx", c.nx);
        c.ny = j.value("ny", c.ny);
        c.measure_samples = j.value("measure_samples", c.measure_samples);
        c.out_dir = j.value("out", c.out_dir);
    } catch (const std::exception& e) {
        throw UsageError(std::string("config field type mismatch: ") + e.what());
    }
    if (c.kappa0 < 1 || !(c.r > 0.0 && c.r < 1.0) || c.m < 1 || c.S < 2)
        throw UsageError("config needs kappa0 >= 1, 0 < r < 1, m >= 1, S >= 2");
    if (c.eps < 0.0 || c.K < 1 || c.J < c.kappa0)
        throw UsageError("config needs eps >= 0, K >= 1, J >= kappa0");
    if (!(c.upsilon > 0.0 && c.upsilon < 1.0) || c.tau < 1.0 || c.L_max < 10)
        throw UsageError("config needs upsilon in (0,1), tau >= 1, Lmax >= 10");
    if (c.xi.empty()) c.xi.assign(std::size_t(c.kappa0), 1.0);
    if (int(c.xi.size()) != c.kappa0) throw UsageError("xi must have kappa0 entries");
    return c;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot open " + path);
    out << text;
}

} // namespace

void run_pipeline(const PipelineConfig& cfg_in, const std::string& stage) {
    namespace fs = std::filesystem;
    PipelineConfig cfg = cfg_in;
    if (cfg.xi.empty()) cfg.xi.assign(std::size_t(cfg.kappa0), 1.0);
    const bool all = stage == "all";
    auto want = [&](const std::string& s) { return all || stage == s; };
    const bool need_solve = want("solve") || want("flow");
    const bool need_nl = need_solve || want("nonlinearity");
    const bool need_sp = need_solve || want("spectrum") || want("diophantine");
    const bool need_eq = need_sp || need_nl || want("equilibrium");
    if (!need_eq && !want("secular") && !want("measure"))
        throw UsageError("unknown stage: " + stage);

    fs::create_directories(cfg.out_dir);
    auto path = [&](const char* name) { return (fs::path(cfg.out_dir) / name).string(); };

    nlohmann::json man;
    man["config"] = {{"kappa0", cfg.kappa0}, {"r", cfg.r},       {"m", cfg.m},
                     {"S", cfg.S},           {"eps", cfg.eps},   {"K", cfg.K},
                     {"J", cfg.J},           {"upsilon", cfg.upsilon},
                     {"tau", cfg.tau},       {"Lmax", cfg.L_max}, {"eta", cfg.eta},
                     {"seed", cfg.seed},     {"xi", cfg.xi}};
    man["stages"] = nlohmann::json::array();
    auto mark = [&](const std::string& s) { man["stages"].push_back(s); };
    auto flush_manifest = [&] { write_text(path("manifest.json"), man.dump(2) + "\n"); };

    try {
        const auto spec = potential::PotentialSpec::constrained(cfg.kappa0, cfg.r, cfg.m, cfg.S);
        man["config"]["E"] = spec.E;

        if (want("secular")) {
            const auto sr = spectrum::secular_roots(spec.E, spec.r, cfg.kappa0);
            nlohmann::json js;
            js["lambdas"] = sr.lambdas;
            js["alpha0"] = sr.alpha0;
            js["alpha2"] = sr.alpha2;
            js["beta"] = sr.beta;
            write_text(path("secular.json"), js.dump(2) + "\n");
            mark("secular");
        }
        if (want("measure")) {
            frequencies::DiophantineSpec d{cfg.upsilon, cfg.tau, cfg.L_max};
            const auto meas = frequencies::resonance_measure(
                cfg.kappa0, cfg.r, cfg.m, cfg.S, spec.E, std::max(cfg.eps, 1e-8), d,
                cfg.measure_samples);
            write_text(path("measure.json"), frequencies::report_json(meas));
            const auto trans = frequencies::transversality_probe(
                cfg.kappa0, cfg.r, cfg.m, cfg.S, spec.E, 0.02, cfg.kappa0 + 1);
            write_text(path("transversality.json"), frequencies::report_json(trans));
            mark("measure");
        }
        if (!need_eq) {
            flush_manifest();
            return;
        }

        auto [corr, eq] = shear::fixed_point_equilibrium(spec);
        (void)corr;
        shear::write_csv(eq, path("equilibrium.csv"));
        write_text(path("equilibrium.json"), shear::manifest_json(eq));
        mark("equilibrium");
        if (stage == "equilibrium") {
            flush_manifest();
            return;
        }

        spectrum::Spectrum sp;
        if (need_sp) {
            sp = spectrum::compute_spectrum(eq.spec, eq.corrector,
                                            std::max(cfg.J, cfg.kappa0 + 3));
            spectrum::write_csv(sp, path("spectrum.csv"));
            nlohmann::json js;
            js["eigenvalues"] = sp.eigenvalues;
            js["frequencies"] = sp.frequencies;
            js["omega"] = sp.omega_vec;
            js["negative_count"] = sp.negative_count;
            const auto sr = spectrum::secular_roots(spec.E, spec.r, cfg.kappa0);
            js["limit_lambdas"] = sr.lambdas;
            write_text(path("spectrum.json"), js.dump(2) + "\n");
            mark("spectrum");
        }
        if (want("diophantine")) {
            frequencies::DiophantineSpec d{cfg.upsilon, cfg.tau, cfg.L_max};
            const auto res = frequencies::is_diophantine(sp.omega_vec, d);
            nlohmann::json js;
            js["pass"] = res.pass;
            js["omega"] = sp.omega_vec;
            js["worst_ell"] = res.worst_ell;
            js["worst_scaled"] = res.worst_scaled;
            js["worst_raw"] = res.worst_raw;
            js["upsilon"] = cfg.upsilon;
            js["tau"] = cfg.tau;
            write_text(path("diophantine.json"), js.dump(2) + "\n");
            mark("diophantine");
        }
        if (!need_nl) {
            flush_manifest();
            return;
        }

        auto strips = nonlinearity::build_strip_nonlinearities(eq);
        double eta = cfg.eta;
        if (eta <= 0.0) {
            eta = 0.5 * strips.eta_bar;
            if (cfg.eps > 0.0)
                eta = std::min(std::pow(cfg.eps, 1.0 / double(cfg.S)), eta);
        }
        auto fam = nonlinearity::regularize(strips, eta);
        nonlinearity::solve_shift(fam);
        nonlinearity::write_strip_csv(fam.strips, path("strips.csv"));
        {
            double hs = 0.0;
            for (double v : fam.shift) hs = std::max(hs, std::abs(v));
            nlohmann::json js;
            js["eta"] = eta;
            js["eta_bar"] = strips.eta_bar;
            js["shift_sup"] = hs;
            js["critical_points"] = fam.strips.eq.critical_points;
            write_text(path("nonlinearity.json"), js.dump(2) + "\n");
        }
        mark("nonlinearity");
        if (!need_solve) {
            flush_manifest();
            return;
        }

        qp_solver::NewtonConfig ncfg;
        ncfg.eps = cfg.eps;
        ncfg.xi = cfg.xi;
        ncfg.K = cfg.K;
        ncfg.J = cfg.J;
        ncfg.upsilon = cfg.upsilon;
        ncfg.tau = cfg.tau;
        ncfg.L_max = cfg.L_max;
        const auto result = qp_solver::newton_solve(ncfg, fam, sp);
        write_text(path("solve.json"), qp_solver::manifest_json(result));
        qp_solver::write_coeff_csv(result.state, path("coefficients.csv"));
        mark("solve");
        if (!want("flow")) {
            flush_manifest();
            return;
        }

        const auto field = assemble_flow(result, fam, sp, cfg.nx, cfg.ny);
        write_flow_csv(field, path("flow.csv"));
        const auto stag = find_stagnation(field);
        write_text(path("stagnation.json"), stagnation_json(stag) + "\n");
        std::vector<double> levels;
        {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (double v : field.psi) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            for (int i = 1; i < 20; ++i)
                levels.push_back(lo + (hi - lo) * double(i) / 20.0);
            for (const auto& p : stag.points) levels.push_back(p.psi);
        }
        const auto curves = trace_level_sets(field, levels);
        write_levelsets_csv(curves, path("levelsets.csv"));
        {
            nlohmann::json js;
            js["X_max"] = field.X_max;
            js["nx"] = field.xs.size();
            js["ny"] = field.ys.size();
            js["stagnation_count"] = stag.points.size();
            js["warnings"] = field.warnings;
            write_text(path("flow.json"), js.dump(2) + "\n");
        }
        mark("flow");
        flush_manifest();
    } catch (const std::exception& e) {
        man["error"] = e.what();
        man["failed_after"] = man["stages"];
        flush_manifest();
        throw;
    }
}

} // namespace qpe::flowfield
