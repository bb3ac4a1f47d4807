#include "qpe/potential.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

namespace qpe::potential {

using numerics::Jet;

double PotentialSpec::gamma() const { return std::pow(r, 5); }

void PotentialSpec::validate() const {
    if (!(E > 0.0)) throw DomainError("well depth E must be positive");
    if (!(r > 0.0 && r < 1.0)) throw DomainError("half-width r must lie in (0,1)");
    if (m < 1) throw DomainError("sharpness m must be at least 1");
    if (S < 2) throw DomainError("kill order S must be at least 2");
    if (kappa0 < 1) throw DomainError("critical point count kappa0 must be at least 1");
    if (!(T > 1.0 / r)) throw DomainError("corrector far root T must exceed 1/r");
}

PotentialSpec PotentialSpec::constrained(int kappa0, double r, int m, int S) {
    PotentialSpec spec;
    spec.kappa0 = kappa0;
    spec.r = r;
    spec.m = m;
    spec.S = S;
    spec.E = (double(kappa0) + 0.25) * std::numbers::pi / r;
    spec.T = std::max(4.0, 4.0 / r);
    spec.validate();
    return spec;
}

namespace {

// log cosh without overflow for large |z|
double log_cosh(double z) {
    const double a = std::abs(z);
    return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

// scaled positive anchors, validated
std::vector<double> scaled_anchors(const PotentialSpec& spec,
                                   const std::vector<double>& anchors) {
    if (anchors.size() != std::size_t(spec.kappa0))
        throw ShapeError("anchor count must equal kappa0");
    std::vector<double> zt(anchors.size());
    for (std::size_t j = 0; j < anchors.size(); ++j) {
        if (!(anchors[j] > 0.0 && anchors[j] < spec.r))
            throw DomainError("anchors must lie strictly inside (0, r)");
        zt[j] = anchors[j] / spec.r;
    }
    for (std::size_t j = 0; j < zt.size(); ++j) {
        if (zt[j] < 1e-10)
            throw DegenerateAnchorError("anchor collides with its mirror image");
        for (std::size_t i = j + 1; i < zt.size(); ++i)
            if (std::abs(zt[i] - zt[j]) < 1e-10)
                throw DegenerateAnchorError("two anchors coincide");
    }
    return zt;
}

// shared factor (z^2 - T^2) * prod_{signed anchors b != j} (z - z_b); the
// corrector basis is its 2S-th power
Jet fhat_base(const Jet& z, const std::vector<double>& zt, std::size_t skip,
              double T) {
    Jet base = z * z - T * T;
    for (std::size_t b = 0; b < zt.size(); ++b) {
        if (b != skip) base = base * (z - zt[b]);
        base = base * (z + zt[b]);
    }
    return base;
}

double fhat_base(double z, const std::vector<double>& zt, std::size_t skip,
                 double T) {
    double base = z * z - T * T;
    for (std::size_t b = 0; b < zt.size(); ++b) {
        if (b != skip) base *= z - zt[b];
        base *= z + zt[b];
    }
    return base;
}

double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= double(i);
    return f;
}

// one-sided corrector term F_j at a jet argument
Jet corrector_term(const Jet& z, const std::vector<double>& zt, std::size_t j,
                   double T, int S, const std::vector<double>& a) {
    const Jet fhat = pow_int(fhat_base(z, zt, j, T), unsigned(2 * S));
    const Jet d = z - zt[j];
    const Jet d2 = d * d;
    Jet poly = Jet::constant(z.order(), a[std::size_t(S) - 1] / factorial(2 * S - 1));
    for (int k = S - 1; k >= 1; --k)
        poly = poly * d2 + a[std::size_t(k) - 1] / factorial(2 * k - 1);
    return poly * d * fhat;
}

double corrector_term(double z, const std::vector<double>& zt, std::size_t j,
                      double T, int S, const std::vector<double>& a) {
    const double fhat = std::pow(fhat_base(z, zt, j, T), 2 * S);
    const double d = z - zt[j];
    const double d2 = d * d;
    double poly = a[std::size_t(S) - 1] / factorial(2 * S - 1);
    for (int k = S - 1; k >= 1; --k)
        poly = poly * d2 + a[std::size_t(k) - 1] / factorial(2 * k - 1);
    return poly * d * fhat;
}

} // namespace

double h_profile(double z, double m) {
    const double t = m * (log_cosh(z) - log_cosh(1.0));
    if (t >= 0.0) {
        const double w = std::exp(-t);
        return w / (1.0 + w);
    }
    return 1.0 / (1.0 + std::exp(t));
}

Jet h_profile(const Jet& z, double m) {
    const Jet t = (log(cosh(z)) - log_cosh(1.0)) * m;
    if (t.value() >= 0.0) {
        const Jet w = exp(-t);
        return w * reciprocal(w + 1.0);
    }
    return reciprocal(exp(t) + 1.0);
}

Corrector build_corrector(const PotentialSpec& spec,
                          const std::vector<double>& anchors) {
    spec.validate();
    const std::vector<double> zt = scaled_anchors(spec, anchors);
    const int S = spec.S;
    const std::size_t ord = std::size_t(2 * S - 1);

    Corrector corr;
    corr.anchors = anchors;
    corr.degree = 2 * S * (2 * spec.kappa0 + 2) - 1;
    corr.coefficients.resize(zt.size());

    for (std::size_t j = 0; j < zt.size(); ++j) {
        const Jet z = Jet::variable(ord, zt[j]);
        const Jet fhat = pow_int(fhat_base(z, zt, j, spec.T), unsigned(2 * S));
        if (fhat.value() == 0.0)
            throw DegenerateAnchorError("kill basis vanishes at its own anchor");
        const Jet h = h_profile(z, double(spec.m));

        // lower-triangular system: row n targets the (2n-1)-th derivative,
        // column k contributes (2n-1)!/(2k-1)! * fhat_{2n-1-(2k-1)}
        std::vector<double> a(std::size_t(S), 0.0);
        for (int n = 1; n <= S; ++n) {
            double rhs = -h.derivative(std::size_t(2 * n - 1));
            for (int k = 1; k < n; ++k)
                rhs -= a[std::size_t(k) - 1] * factorial(2 * n - 1) /
                       factorial(2 * k - 1) * fhat.coeff(std::size_t(2 * (n - k)));
            a[std::size_t(n) - 1] = rhs / fhat.value();
        }
        corr.coefficients[j] = a;
    }

    // the kill conditions must close: odd derivatives of h + g at every anchor
    // cancel to roundoff relative to the h derivative being removed
    for (std::size_t j = 0; j < zt.size(); ++j) {
        const Jet z = Jet::variable(ord, zt[j]);
        const Jet total = h_profile(z, double(spec.m)) + eval_corrector(spec, corr, z);
        const Jet h = h_profile(z, double(spec.m));
        for (int n = 1; n <= S; ++n) {
            const double res = total.derivative(std::size_t(2 * n - 1));
            const double scale = std::max(1.0, std::abs(h.derivative(std::size_t(2 * n - 1))));
            if (!(std::abs(res) <= 1e-8 * scale))
                throw DegenerateAnchorError("kill conditions failed to close at an anchor");
        }
    }
    return corr;
}

Jet eval_corrector(const PotentialSpec& spec, const Corrector& corr,
                   const Jet& z) {
    const std::vector<double> zt = scaled_anchors(spec, corr.anchors);
    Jet g = Jet::constant(z.order(), 0.0);
    for (std::size_t j = 0; j < zt.size(); ++j) {
        const auto& a = corr.coefficients[j];
        g += corrector_term(z, zt, j, spec.T, spec.S, a);
        g += corrector_term(-z, zt, j, spec.T, spec.S, a);
    }
    return g;
}

Jet eval_Q(const PotentialSpec& spec, const Corrector& corr, double y,
           std::size_t n) {
    if (n > std::size_t(2 * spec.S + 1))
        throw DomainError("requested derivative order exceeds 2S+1");
    if (std::abs(y) > 1.0) throw DomainError("Q is defined on |y| <= 1");
    const Jet z = Jet::variable(n, y / spec.r, 1.0 / spec.r);
    const Jet q = h_profile(z, double(spec.m)) + eval_corrector(spec, corr, z);
    return q * (-spec.E * spec.E);
}

double eval_Q_value(const PotentialSpec& spec, const Corrector& corr, double y) {
    const double z = y / spec.r;
    // anchors were validated at build time; the hot path skips revalidation
    thread_local std::vector<double> zt;
    zt.resize(corr.anchors.size());
    for (std::size_t b = 0; b < zt.size(); ++b) zt[b] = corr.anchors[b] / spec.r;
    double g = 0.0;
    for (std::size_t j = 0; j < corr.anchors.size(); ++j) {
        const auto& a = corr.coefficients[j];
        g += corrector_term(z, zt, j, spec.T, spec.S, a);
        g += corrector_term(-z, zt, j, spec.T, spec.S, a);
    }
    return -spec.E * spec.E * (h_profile(z, double(spec.m)) + g);
}

double eval_Q_infty(const PotentialSpec& spec, double y) {
    const double a = std::abs(y);
    if (a > 1.0) throw DomainError("Q is defined on |y| <= 1");
    if (std::abs(a - spec.r) <= 4.0 * std::numeric_limits<double>::epsilon() * spec.r)
        throw SingularPointError("limit potential jumps at |y| = r");
    return a < spec.r ? -spec.E * spec.E : 0.0;
}

std::string to_json(const PotentialSpec& spec, const Corrector& corr) {
    nlohmann::json j;
    j["E"] = spec.E;
    j["r"] = spec.r;
    j["m"] = spec.m;
    j["S"] = spec.S;
    j["kappa0"] = spec.kappa0;
    j["T"] = spec.T;
    j["anchors"] = corr.anchors;
    j["coefficients"] = corr.coefficients;
    j["degree"] = corr.degree;
    return j.dump(2);
}

void from_json(const std::string& text, PotentialSpec& spec, Corrector& corr) {
    const nlohmann::json j = nlohmann::json::parse(text);
    spec.E = j.at("E").get<double>();
    spec.r = j.at("r").get<double>();
    spec.m = j.at("m").get<int>();
    spec.S = j.at("S").get<int>();
    spec.kappa0 = j.at("kappa0").get<int>();
    spec.T = j.at("T").get<double>();
    spec.validate();
    corr.anchors = j.at("anchors").get<std::vector<double>>();
    corr.coefficients = j.at("coefficients").get<std::vector<std::vector<double>>>();
    corr.degree = j.at("degree").get<int>();
    if (corr.coefficients.size() != corr.anchors.size())
        throw ShapeError("coefficient rows must match anchor count");
}

} // namespace qpe::potential
