#pragma once
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "qpe/errors.hpp"
#include "qpe/nonlinearity.hpp"
#include "qpe/numerics/interp.hpp"
#include "qpe/qp_solver.hpp"
#include "qpe/spectrum.hpp"

namespace qpe::flowfield {

// self-contained evaluator of the reconstructed stream function
//   psi(x,y) = psi_bar(y) + eps sum u_{l,j} cos(l . omega x) phi_j(y)
// with (u,v) = (psi_y, -psi_x) and vorticity -Delta psi (x-part analytic)
struct FieldSynth {
    int kappa0 = 1;
    double eps = 0.0;
    std::vector<double> omega;
    std::vector<double> wl;            // omega . l per lattice site
    std::vector<std::vector<long>> ells;
    std::vector<double> coeff;         // [l * J + j]
    int J = 0;
    std::vector<double> mu;
    std::vector<numerics::CubicHermite> phi;  // per j, with derivative data
    numerics::CubicHermite psibar, dpsibar, d2psibar, Qbar;

    struct Point {
        double psi = 0.0, u = 0.0, v = 0.0, vorticity = 0.0;
    };
    Point eval(double x, double y) const;
    // velocity gradient [u_x, u_y, v_x, v_y]; v_y = -u_x exactly
    std::array<double, 4> velocity_gradient(double x, double y) const;
};

FieldSynth make_synth(const qp_solver::SolveResult& result,
                      const nonlinearity::RegularizedFamily& fam,
                      const spectrum::Spectrum& sp);

struct FlowField {
    double X_max = 0.0;
    std::vector<double> xs, ys;
    std::vector<double> psi, u, v, vorticity;  // [ix * ny + iy]
    FieldSynth synth;
    std::vector<std::string> warnings;

    std::size_t nx() const { return xs.size(); }
    std::size_t ny() const { return ys.size(); }
    double at(const std::vector<double>& f, std::size_t ix, std::size_t iy) const {
        return f[ix * ys.size() + iy];
    }
};

// window X_max = 4 periods of the slowest angle
FlowField assemble_flow(const qp_solver::SolveResult& result,
                        const nonlinearity::RegularizedFamily& fam,
                        const spectrum::Spectrum& sp,
                        std::size_t nx = 193, std::size_t ny = 257);

struct StagnationPoint {
    double x = 0.0, y = 0.0;
    std::string type;  // "saddle" or "center"
    double psi = 0.0;
    double det = 0.0, trace = 0.0;
};

struct StagnationReport {
    std::vector<StagnationPoint> points;
    std::vector<std::string> warnings;
};

// Newton refinement from sign-change cells; divergent seeds are skipped and
// logged; a pure shear field yields no isolated zeros
StagnationReport find_stagnation(const FlowField& f);

struct LevelCurve {
    double level = 0.0;
    std::vector<std::vector<std::array<double, 2>>> polylines;
    std::vector<bool> closed;
};

std::vector<LevelCurve> trace_level_sets(const FlowField& f,
                                         const std::vector<double>& levels);

void write_flow_csv(const FlowField& f, const std::string& path);
void write_levelsets_csv(const std::vector<LevelCurve>& curves, const std::string& path);
std::string stagnation_json(const StagnationReport& rep);

struct PipelineConfig {
    int kappa0 = 1;
    double r = 0.5;  // E is derived: (kappa0 + 1/4) pi / r
    int m = 320;
    int S = 3;
    double eps = 1e-4;
    std::vector<double> xi;  // defaults to all ones
    int K = 12;
    int J = 24;
    double upsilon = 0.05;
    double tau = 1.5;
    int L_max = 100;
    double eta = 0.0;  // 0 selects min(eps^{1/S}, eta_bar / 2)
    long seed = 0;
    std::size_t nx = 193, ny = 257;
    int measure_samples = 16;
    std::string out_dir = "out";
};

PipelineConfig load_config(const std::string& json_path);  // UsageError on bad input

// stage in {equilibrium, spectrum, secular, nonlinearity, diophantine,
// measure, solve, flow, all}; prerequisites run first, artifacts land in
// out_dir and survive a later-stage failure
void run_pipeline(const PipelineConfig& cfg, const std::string& stage);

} // namespace qpe::flowfield
