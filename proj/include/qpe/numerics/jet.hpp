#pragma once
#include <cmath>
#include <cstddef>
#include <vector>

#include "qpe/errors.hpp"

namespace qpe::numerics {

// Truncated Taylor series of fixed order: coefficients c[k] = f^(k)(x0)/k!.
// All operations close at the stored order, so products of exact polynomials
// evaluated as jets reproduce their derivatives exactly (no cancellation from
// finite differencing).
class Jet {
public:
    Jet() : c_(1, 0.0) {}
    Jet(std::size_t order, double value) : c_(order + 1, 0.0) { c_[0] = value; }

    static Jet variable(std::size_t order, double x0, double dx = 1.0) {
        Jet j(order, x0);
        if (order >= 1) j.c_[1] = dx;
        return j;
    }
    static Jet constant(std::size_t order, double v) { return Jet(order, v); }

    std::size_t order() const { return c_.size() - 1; }
    double value() const { return c_[0]; }
    double coeff(std::size_t k) const { return k < c_.size() ? c_[k] : 0.0; }
    double& coeff(std::size_t k) { return c_[k]; }

    // k-th derivative at the expansion point
    double derivative(std::size_t k) const {
        if (k >= c_.size()) return 0.0;
        double f = 1.0;
        for (std::size_t i = 2; i <= k; ++i) f *= double(i);
        return c_[k] * f;
    }

    Jet operator-() const {
        Jet r = *this;
        for (auto& x : r.c_) x = -x;
        return r;
    }
    Jet& operator+=(const Jet& o) {
        for (std::size_t k = 0; k < c_.size(); ++k) c_[k] += o.coeff(k);
        return *this;
    }
    Jet& operator-=(const Jet& o) {
        for (std::size_t k = 0; k < c_.size(); ++k) c_[k] -= o.coeff(k);
        return *this;
    }
    friend Jet operator+(Jet a, const Jet& b) { return a += b; }
    friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
    friend Jet operator+(Jet a, double s) { a.c_[0] += s; return a; }
    friend Jet operator-(Jet a, double s) { a.c_[0] -= s; return a; }
    friend Jet operator*(const Jet& a, double s) {
        Jet r = a;
        for (auto& x : r.c_) x *= s;
        return r;
    }
    friend Jet operator*(double s, const Jet& a) { return a * s; }

    friend Jet operator*(const Jet& a, const Jet& b) {
        Jet r(a.order(), 0.0);
        for (std::size_t k = 0; k <= a.order(); ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i <= k; ++i) s += a.coeff(i) * b.coeff(k - i);
            r.c_[k] = s;
        }
        return r;
    }

    const std::vector<double>& coeffs() const { return c_; }

private:
    std::vector<double> c_;
};

inline Jet pow_int(const Jet& a, unsigned n) {
    Jet r = Jet::constant(a.order(), 1.0);
    Jet base = a;
    while (n > 0) {
        if (n & 1u) r = r * base;
        base = base * base;
        n >>= 1u;
    }
    return r;
}

inline Jet reciprocal(const Jet& a) {
    if (a.value() == 0.0)
        throw SingularJetError("reciprocal of jet with zero value");
    const std::size_t N = a.order();
    Jet r(N, 1.0 / a.value());
    for (std::size_t k = 1; k <= N; ++k) {
        double s = 0.0;
        for (std::size_t i = 1; i <= k; ++i) s += a.coeff(i) * r.coeff(k - i);
        r.coeff(k) = -s / a.value();
    }
    return r;
}

inline Jet operator/(const Jet& a, const Jet& b) { return a * reciprocal(b); }

// Lift of an analytic scalar function with known derivative recursion:
// exp, log, sinh, cosh satisfy first-order ODEs, giving stable coefficient
// recurrences. c'[k] relations use f' = g * u' style identities.
inline Jet exp(const Jet& a) {
    const std::size_t N = a.order();
    Jet r(N, std::exp(a.value()));
    // r' = a' r  =>  (k) r_k = sum_{i=1..k} i a_i r_{k-i}
    for (std::size_t k = 1; k <= N; ++k) {
        double s = 0.0;
        for (std::size_t i = 1; i <= k; ++i) s += double(i) * a.coeff(i) * r.coeff(k - i);
        r.coeff(k) = s / double(k);
    }
    return r;
}

inline Jet log(const Jet& a) {
    if (a.value() <= 0.0)
        throw SingularJetError("log of jet with non-positive value");
    const std::size_t N = a.order();
    Jet r(N, std::log(a.value()));
    // a' = a r'  =>  k a_k = sum_{i=1..k} i r_i a_{k-i}
    for (std::size_t k = 1; k <= N; ++k) {
        double s = double(k) * a.coeff(k);
        for (std::size_t i = 1; i < k; ++i) s -= double(i) * r.coeff(i) * a.coeff(k - i);
        r.coeff(k) = s / (double(k) * a.value());
    }
    return r;
}

inline Jet cosh(const Jet& a) {
    const std::size_t N = a.order();
    Jet c(N, std::cosh(a.value()));
    Jet s(N, std::sinh(a.value()));
    for (std::size_t k = 1; k <= N; ++k) {
        double cs = 0.0, ss = 0.0;
        for (std::size_t i = 1; i <= k; ++i) {
            cs += double(i) * a.coeff(i) * s.coeff(k - i);
            ss += double(i) * a.coeff(i) * c.coeff(k - i);
        }
        c.coeff(k) = cs / double(k);
        s.coeff(k) = ss / double(k);
    }
    return c;
}

inline Jet sinh(const Jet& a) {
    const std::size_t N = a.order();
    Jet c(N, std::cosh(a.value()));
    Jet s(N, std::sinh(a.value()));
    for (std::size_t k = 1; k <= N; ++k) {
        double cs = 0.0, ss = 0.0;
        for (std::size_t i = 1; i <= k; ++i) {
            cs += double(i) * a.coeff(i) * s.coeff(k - i);
            ss += double(i) * a.coeff(i) * c.coeff(k - i);
        }
        c.coeff(k) = cs / double(k);
        s.coeff(k) = ss / double(k);
    }
    return s;
}

inline Jet sin(const Jet& a) {
    const std::size_t N = a.order();
    Jet s(N, std::sin(a.value()));
    Jet c(N, std::cos(a.value()));
    for (std::size_t k = 1; k <= N; ++k) {
        double ss = 0.0, cs = 0.0;
        for (std::size_t i = 1; i <= k; ++i) {
            ss += double(i) * a.coeff(i) * c.coeff(k - i);
            cs -= double(i) * a.coeff(i) * s.coeff(k - i);
        }
        s.coeff(k) = ss / double(k);
        c.coeff(k) = cs / double(k);
    }
    return s;
}

// Evaluate f as a jet of given order at x0 by seeding the identity variable.
template <typename F>
Jet jet_eval(F&& f, double x0, std::size_t order) {
    return f(Jet::variable(order, x0));
}

} // namespace qpe::numerics
