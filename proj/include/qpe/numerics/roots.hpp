#pragma once
#include <cmath>
#include <cstddef>
#include <string>

#include "qpe/errors.hpp"

namespace qpe::numerics {

// Bracketed root finding: secant/interpolation accelerated bisection.
// The bracket is maintained at every step, so convergence is guaranteed;
// accepted interpolation steps only speed it up.
template <typename F>
double find_root(F&& f, double a, double b, double xtol = 1e-14,
                 std::size_t max_iter = 200) {
    double fa = f(a), fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if ((fa > 0.0) == (fb > 0.0))
        throw BracketError("find_root: no sign change on [" + std::to_string(a) +
                           ", " + std::to_string(b) + "]");
    for (std::size_t it = 0; it < max_iter; ++it) {
        double mid = 0.5 * (a + b);
        // secant proposal from the bracket endpoints
        double sec = b - fb * (b - a) / (fb - fa);
        double x = (sec > a && sec < b) ? sec : mid;
        // keep strictly interior
        if (!(x > a && x < b)) x = mid;
        double fx = f(x);
        if (fx == 0.0 || (b - a) < xtol) return x;
        if ((fx > 0.0) == (fa > 0.0)) {
            a = x; fa = fx;
        } else {
            b = x; fb = fx;
        }
        // stagnation guard: force bisection every other step
        if ((it & 1u) == 1u) {
            mid = 0.5 * (a + b);
            double fm = f(mid);
            if (fm == 0.0) return mid;
            if ((fm > 0.0) == (fa > 0.0)) {
                a = mid; fa = fm;
            } else {
                b = mid; fb = fm;
            }
        }
        if ((b - a) < xtol) return 0.5 * (a + b);
    }
    return 0.5 * (a + b);
}

} // namespace qpe::numerics
