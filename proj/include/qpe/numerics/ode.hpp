#pragma once
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "qpe/errors.hpp"
#include "qpe/numerics/grid.hpp"

namespace qpe::numerics {

// Fixed-step classical RK4 for systems of dimension d <= 8 on a uniform grid.
// Deterministic evaluation pattern: the right-hand side is called at nodes and
// midpoints only, so coefficient-costly RHS can be precomputed by the caller.
template <std::size_t D>
struct OdeSolution {
    std::vector<double> t;
    std::vector<std::array<double, D>> state; // state[i] at t[i]
};

template <std::size_t D, typename RHS>
OdeSolution<D> integrate_ode(RHS&& f, std::array<double, D> y0, double t0,
                             double t1, std::size_t n_steps) {
    static_assert(D >= 1 && D <= 8, "integrate_ode supports dimensions 1..8");
    if (n_steps == 0) throw ShapeError("integrate_ode: zero steps");
    OdeSolution<D> sol;
    sol.t.resize(n_steps + 1);
    sol.state.resize(n_steps + 1);
    const double h = (t1 - t0) / double(n_steps);
    std::array<double, D> y = y0;
    sol.t[0] = t0;
    sol.state[0] = y;
    std::array<double, D> k1, k2, k3, k4, tmp;
    for (std::size_t i = 0; i < n_steps; ++i) {
        const double t = t0 + h * double(i);
        k1 = f(t, y);
        for (std::size_t j = 0; j < D; ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
        k2 = f(t + 0.5 * h, tmp);
        for (std::size_t j = 0; j < D; ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
        k3 = f(t + 0.5 * h, tmp);
        for (std::size_t j = 0; j < D; ++j) tmp[j] = y[j] + h * k3[j];
        k4 = f(t + h, tmp);
        for (std::size_t j = 0; j < D; ++j)
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        for (std::size_t j = 0; j < D; ++j)
            if (!std::isfinite(y[j]))
                throw NonFiniteStateError("integrate_ode: non-finite state at node " +
                                          std::to_string(i + 1));
        sol.t[i + 1] = t0 + h * double(i + 1);
        sol.state[i + 1] = y;
    }
    sol.t.back() = t1;
    return sol;
}

} // namespace qpe::numerics
