#pragma once
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "qpe/errors.hpp"
#include "qpe/frequencies.hpp"
#include "qpe/nonlinearity.hpp"
#include "qpe/spectrum.hpp"

namespace qpe::qp_solver {

// Half-lattice of Fourier sites l in Z^kappa0 with |l|_inf <= K: one
// representative per {l, -l} pair (first nonzero component positive),
// site 0 included once. Cosine coefficients live on these sites.
struct Lattice {
    int kappa0 = 1;
    int K = 0;
    std::vector<std::vector<long>> ells;  // ells[0] = 0

    std::size_t size() const { return ells.size(); }
    // index of the canonical representative of l, or -1 if outside
    long index_of(std::vector<long> l) const;
};

Lattice make_half_lattice(int kappa0, int K);

// Coefficients of the rescaled unknown zeta in the basis
// cos(l . theta) phi_j(y); the physical perturbation of the stream function
// is eps * zeta plus the shift h_eta. Frequency slots are ascending, so
// slot k pairs with eigenfunction index kappa0-1-k (mu ascending).
struct CoefficientState {
    int kappa0 = 1;
    int K = 0;
    int J = 0;
    Lattice lattice;
    std::vector<double> u;       // [l_idx * J + j]
    std::vector<double> omega;   // ascending frequencies
    double eps = 0.0;
    std::vector<double> xi;      // amplitudes, aligned with omega slots

    double& at(std::size_t l_idx, int j) { return u[l_idx * std::size_t(J) + std::size_t(j)]; }
    double at(std::size_t l_idx, int j) const { return u[l_idx * std::size_t(J) + std::size_t(j)]; }
    int eigen_slot(int k) const { return kappa0 - 1 - k; }
    long pinned_site(int k) const;  // lattice index of e_k
};

struct SolveResult {
    CoefficientState state;
    std::vector<double> omega_tilde;
    std::vector<double> alpha;             // counterterm mode only
    std::vector<double> residual_history;  // final-stage sup norms
    double min_divisor = 0.0;
    double euler_residual = 0.0;
    std::vector<std::string> warnings;
};

// zero state at eps = 0; otherwise the linear ansatz with the kappa0
// tangential amplitudes pinned to sqrt(xi_k) and omega = spectral frequencies
CoefficientState linear_solution(const spectrum::Spectrum& sp,
                                 const std::vector<double>& xi, double eps,
                                 int K = 1, int J = 0);  // J = 0 means kappa0

// mode (l,j) entry: -((omega.l)^2 + mu_j) u_{l,j} - sqrt(eps) [q_eps]_{l,j},
// the nonlinear term projected pseudo-spectrally from a dealiased theta grid
std::vector<double> residual(const CoefficientState& state,
                             const nonlinearity::RegularizedFamily& fam,
                             const spectrum::Spectrum& sp,
                             std::vector<std::string>* warnings = nullptr);

// divide rhs modewise by -((omega.l)^2 + mu_j); tangential entries with
// |divisor| < divisor_floor are zeroed and reported
std::vector<double> diag_inverse(const spectrum::Spectrum& sp,
                                 const CoefficientState& shape,
                                 const std::vector<double>& rhs,
                                 double divisor_floor,
                                 std::vector<std::pair<long, int>>* zeroed = nullptr);

struct NewtonConfig {
    double eps = 0.0;
    std::vector<double> xi;
    int K = 8;
    int J = 12;
    double tol = 1e-11;
    int continuation_steps = 4;
    bool schedule = false;        // optional K_n truncation ladder
    double upsilon = 0.05;
    double tau = 1.5;
    int L_max = 100;
    double divisor_floor = 0.0;   // default upsilon^2 / 4 when 0
    int max_iter = 25;
};

// Newton-continuation with pinned amplitudes and unknown frequency vector;
// the kappa0 equations at the pinned sites close the system for omega
SolveResult newton_solve(const NewtonConfig& cfg,
                         const nonlinearity::RegularizedFamily& fam,
                         const spectrum::Spectrum& sp);

// fixed omega; the counterterm alpha replaces the tangential eigenvalues
// (mu_{j_k} -> -alpha_k^2) and the pinned-site equations determine alpha
SolveResult solve_with_counterterm(const NewtonConfig& cfg,
                                   const nonlinearity::RegularizedFamily& fam,
                                   const spectrum::Spectrum& sp,
                                   const std::vector<double>& omega_fixed);

// action-angle coordinates on the tangential sites (Z = 1):
// u_{e_k, j_k} = sqrt(I_k + xi_k) cos(theta_k), sine sector empty
struct ActionAngle {
    std::vector<double> theta, action;
    CoefficientState z;  // state with tangential sites zeroed
};

ActionAngle action_angle_pack(const CoefficientState& state);
CoefficientState action_angle_unpack(const ActionAngle& aa);

// sup |psi_x (D psi)_y - psi_y (D psi)_x| / (||grad psi|| ||grad D psi||)
// on an x-resolved verification grid, D the quasi-periodic Laplacian
double verify_euler(const SolveResult& result,
                    const nonlinearity::RegularizedFamily& fam,
                    const spectrum::Spectrum& sp, int nx = 192);

std::string manifest_json(const SolveResult& res);
void write_coeff_csv(const CoefficientState& state, const std::string& path);

} // namespace qpe::qp_solver
