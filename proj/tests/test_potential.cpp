#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "qpe/numerics/grid.hpp"
#include "qpe/potential.hpp"

using namespace qpe;
using potential::PotentialSpec;

TEST_CASE("wall profile is a half at the transition point for any m") {
    for (double m : {4.0, 40.0, 400.0, 4000.0})
        CHECK(potential::h_profile(1.0, m) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("wall profile tends to one at the center, monotone in m") {
    double prev = 0.0;
    for (double m : {10.0, 20.0, 40.0, 80.0, 160.0}) {
        const double v = potential::h_profile(0.0, m);
        CHECK(v > prev);
        CHECK(v < 1.0);
        prev = v;
    }
    CHECK(potential::h_profile(0.0, 160.0) > 1.0 - 1e-10);
}

TEST_CASE("wall profile decays past the transition at the documented rate") {
    // h_m(z) <= (cosh z / cosh 1)^{-m} ~ e^{-m (|z| - 1)} for z away from 1
    const double v = potential::h_profile(2.0, 80.0);
    CHECK(v < std::exp(-40.0));
    CHECK(v > 0.0);
}

TEST_CASE("wall profile jet matches scalar value and is within [0,1]") {
    for (double z : {0.0, 0.5, 1.0, 1.7}) {
        auto j = potential::h_profile(numerics::Jet::variable(3, z), 80.0);
        CHECK(j.value() == doctest::Approx(potential::h_profile(z, 80.0)).epsilon(1e-14));
        CHECK(j.value() >= 0.0);
        CHECK(j.value() <= 1.0);
    }
}

TEST_CASE("first corrector coefficient is one forward-substitution step") {
    // triangular structure: a_1 = -h'(zt) / fhat(zt) independent of later rows
    auto spec = PotentialSpec::constrained(1, 0.5, 80, 2);
    std::vector<double> anchors = {0.4 * spec.r};
    auto corr = potential::build_corrector(spec, anchors);
    REQUIRE(corr.coefficients.size() == 1);
    REQUIRE(corr.coefficients[0].size() == std::size_t(spec.S));
    const double zt = anchors[0] / spec.r;
    auto hj = potential::h_profile(numerics::Jet::variable(1, zt), double(spec.m));
    const double t2 = spec.T * spec.T;
    const double fhat = std::pow(zt * zt - t2, 2.0 * spec.S) *
                        std::pow(2.0 * zt, 2.0 * spec.S);
    CHECK(corr.coefficients[0][0] ==
          doctest::Approx(-hj.derivative(1) / fhat).epsilon(1e-10));
}

TEST_CASE("zero right-hand side gives the zero corrector polynomial") {
    // with coefficients forced to zero the corrector evaluates to zero
    auto spec = PotentialSpec::constrained(1, 0.5, 80, 3);
    std::vector<double> anchors = {0.4 * spec.r};
    auto corr = potential::build_corrector(spec, anchors);
    for (auto& row : corr.coefficients)
        for (auto& c : row) c = 0.0;
    for (double z : {0.0, 0.3, 0.9, 1.4}) {
        auto g = potential::eval_corrector(spec, corr, numerics::Jet::variable(2, z));
        CHECK(g.value() == 0.0);
    }
}

TEST_CASE("anchor collision raises DegenerateAnchorError") {
    auto spec = PotentialSpec::constrained(1, 0.5, 80, 3);
    std::vector<double> anchors = {0.2, 0.2 + 1e-12};
    CHECK_THROWS_AS(potential::build_corrector(spec, anchors),
                    DegenerateAnchorError);
}

TEST_CASE("built corrector kills the first odd derivative at the anchor") {
    auto spec = PotentialSpec::constrained(1, 0.5, 80, 3);
    std::vector<double> anchors = {0.4 * spec.r};
    auto corr = potential::build_corrector(spec, anchors);
    auto q = potential::eval_Q(spec, corr, anchors[0], 2 * spec.S - 1);
    const double scale = spec.E * spec.E;
    for (int n = 1; n <= spec.S; ++n)
        CHECK(std::abs(q.derivative(std::size_t(2 * n - 1))) < 1e-8 * scale);
}

TEST_CASE("potential is even and its odd derivatives vanish at the origin") {
    auto spec = PotentialSpec::constrained(1, 0.5, 80, 3);
    auto corr = potential::build_corrector(spec, {0.4 * spec.r});
    auto q0 = potential::eval_Q(spec, corr, 0.0, 1);
    CHECK(std::abs(q0.derivative(1)) < 1e-10 * spec.E * spec.E);
    CHECK(potential::eval_Q_value(spec, corr, 1.0) ==
          doctest::Approx(potential::eval_Q_value(spec, corr, -1.0)).epsilon(1e-13));
    for (double y : {0.1, 0.33, 0.77}) {
        const double a = potential::eval_Q_value(spec, corr, y);
        const double b = potential::eval_Q_value(spec, corr, -y);
        CHECK(std::abs(a - b) <= 1e-13 * std::max(1.0, std::abs(a)));
    }
}

TEST_CASE("limit potential is the square well with singular transition points") {
    auto spec = PotentialSpec::constrained(1, 0.5, 80, 3);
    CHECK(potential::eval_Q_infty(spec, 0.0) == -spec.E * spec.E);
    CHECK(potential::eval_Q_infty(spec, 0.99) == 0.0);
    CHECK_THROWS_AS(potential::eval_Q_infty(spec, spec.r), SingularPointError);
    CHECK_THROWS_AS(potential::eval_Q_infty(spec, -spec.r), SingularPointError);
}

TEST_CASE("potential approaches the square well away from the transition") {
    auto spec0 = PotentialSpec::constrained(1, 0.5, 20, 3);
    double prev_sup = 1e300;
    for (int m : {20, 40, 80, 160}) {
        auto spec = PotentialSpec::constrained(1, 0.5, m, 3);
        auto corr = potential::build_corrector(spec, {0.4 * spec.r});
        const double g = spec.gamma();
        double sup = 0.0;
        for (int i = 0; i <= 400; ++i) {
            const double y = -1.0 + 2.0 * double(i) / 400.0;
            if (std::abs(std::abs(y) - spec.r) <= g) continue;
            sup = std::max(sup, std::abs(potential::eval_Q_value(spec, corr, y) -
                                         potential::eval_Q_infty(spec, y)));
        }
        CHECK(sup < prev_sup);
        prev_sup = sup;
    }
    (void)spec0;
}

TEST_CASE("uniform bound max|Q| <= 2 E^2 for all tested m") {
    for (int m : {20, 40, 80, 160, 320}) {
        auto spec = PotentialSpec::constrained(1, 0.5, m, 3);
        auto corr = potential::build_corrector(spec, {0.4 * spec.r});
        double sup = 0.0;
        for (int i = 0; i <= 1000; ++i) {
            const double y = -1.0 + 2.0 * double(i) / 1000.0;
            sup = std::max(sup, std::abs(potential::eval_Q_value(spec, corr, y)));
        }
        CHECK(sup <= 2.0 * spec.E * spec.E);
    }
}

TEST_CASE("L1 gap to the square well strictly decreases along m") {
    double prev = 1e300;
    for (int m : {20, 40, 80, 160}) {
        auto spec = PotentialSpec::constrained(1, 0.5, m, 3);
        auto corr = potential::build_corrector(spec, {0.4 * spec.r});
        auto g = numerics::Grid1D::uniform(-1.0, 1.0, 4001);
        std::vector<double> f(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = g[i];
            double qi;
            if (std::abs(std::abs(y) - spec.r) < 1e-9)
                qi = -0.5 * spec.E * spec.E;  // measure-zero midpoint convention
            else
                qi = potential::eval_Q_infty(spec, y);
            f[i] = std::abs(potential::eval_Q_value(spec, corr, y) - qi);
        }
        const double l1 = g.integrate(f);
        CHECK(l1 < prev);
        prev = l1;
    }
}

TEST_CASE("json round trip preserves the spec and corrector") {
    auto spec = PotentialSpec::constrained(2, 0.35, 80, 3);
    auto corr =
        potential::build_corrector(spec, {0.3 * spec.r, 0.7 * spec.r});
    auto text = potential::to_json(spec, corr);
    potential::PotentialSpec spec2;
    potential::Corrector corr2;
    potential::from_json(text, spec2, corr2);
    CHECK(spec2.E == doctest::Approx(spec.E).epsilon(1e-15));
    CHECK(spec2.m == spec.m);
    REQUIRE(corr2.coefficients.size() == corr.coefficients.size());
    CHECK(corr2.coefficients[0][0] ==
          doctest::Approx(corr.coefficients[0][0]).epsilon(1e-14));
}
