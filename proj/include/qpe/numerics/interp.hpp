#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "qpe/errors.hpp"
#include "qpe/numerics/roots.hpp"

namespace qpe::numerics {

// Cubic Hermite interpolant on a uniform grid with exact node derivatives
// supplied by the caller (h^4 accurate where the derivatives are exact).
class CubicHermite {
public:
    CubicHermite() = default;
    CubicHermite(double a, double b, std::vector<double> values,
                 std::vector<double> derivs)
        : a_(a), b_(b), v_(std::move(values)), d_(std::move(derivs)) {
        if (v_.size() != d_.size() || v_.size() < 2)
            throw ShapeError("CubicHermite: values/derivatives size mismatch");
        h_ = (b_ - a_) / double(v_.size() - 1);
    }

    double lo() const { return a_; }
    double hi() const { return b_; }

    double operator()(double x) const {
        auto [i, t] = locate(x);
        const double h00 = (1 + 2 * t) * (1 - t) * (1 - t);
        const double h10 = t * (1 - t) * (1 - t);
        const double h01 = t * t * (3 - 2 * t);
        const double h11 = t * t * (t - 1);
        return h00 * v_[i] + h10 * h_ * d_[i] + h01 * v_[i + 1] + h11 * h_ * d_[i + 1];
    }

    double derivative(double x) const {
        auto [i, t] = locate(x);
        const double dh00 = 6 * t * (t - 1);
        const double dh10 = (1 - t) * (1 - 3 * t);
        const double dh01 = -6 * t * (t - 1);
        const double dh11 = t * (3 * t - 2);
        return (dh00 * v_[i] + dh01 * v_[i + 1]) / h_ + dh10 * d_[i] + dh11 * d_[i + 1];
    }

private:
    std::pair<std::size_t, double> locate(double x) const {
        if (x < a_ - 1e-12 * (b_ - a_) || x > b_ + 1e-12 * (b_ - a_))
            throw DomainError("CubicHermite: query outside data range");
        double s = (x - a_) / h_;
        std::size_t i = std::min<std::size_t>(v_.size() - 2,
                                              std::size_t(std::max(0.0, std::floor(s))));
        return {i, s - double(i)};
    }
    double a_ = 0, b_ = 1, h_ = 1;
    std::vector<double> v_, d_;
};

// Strictly monotone interpolant inversion: solve f(x)=target on [lo,hi].
template <typename F>
double invert_monotone(F&& f, double target, double lo, double hi,
                       double xtol = 1e-14) {
    return find_root([&](double x) { return f(x) - target; }, lo, hi, xtol);
}

} // namespace qpe::numerics
