#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "qpe/shear.hpp"
#include "qpe/spectrum.hpp"

using namespace qpe;
using potential::Corrector;
using potential::PotentialSpec;

namespace {

constexpr double kLambdaDeep = 7.446950252535218;   // deepest limit root, r = 0.5
constexpr double kLambdaShallow = 3.181746205719149;
constexpr double kAlpha0 = 0.1029029736095732;

Corrector zero_corr() { return Corrector{{}, {}, 0}; }

const std::pair<Corrector, shear::ShearEquilibrium>& fp320() {
    static const auto pr =
        shear::fixed_point_equilibrium(PotentialSpec::constrained(1, 0.5, 320));
    return pr;
}

const spectrum::Spectrum& sp320() {
    static const spectrum::Spectrum sp = spectrum::compute_spectrum(
        PotentialSpec::constrained(1, 0.5, 320), fp320().first, 4);
    return sp;
}

} // namespace

TEST_CASE("secular function is positive at the upper endpoint") {
    const double E = 2.5 * std::numbers::pi, r = 0.5;
    const double v = spectrum::secular_eval(E, r, E * (1.0 - 1e-10));
    CHECK(v > 0.0);
    CHECK(v == doctest::Approx(E / std::tanh((1.0 - r) * E)).epsilon(1e-3));
}

TEST_CASE("secular function rejects arguments outside (0, E)") {
    const double E = 2.5 * std::numbers::pi;
    CHECK_THROWS_AS(spectrum::secular_eval(E, 0.5, 0.0), DomainError);
    CHECK_THROWS_AS(spectrum::secular_eval(E, 0.5, -1.0), DomainError);
    CHECK_THROWS_AS(spectrum::secular_eval(E, 0.5, E), DomainError);
    CHECK_THROWS_AS(spectrum::secular_eval(E, 0.5, 1.5 * E), DomainError);
}

TEST_CASE("secular function changes sign across both frozen roots") {
    const double E = 2.5 * std::numbers::pi, r = 0.5;
    for (double root : {kLambdaShallow, kLambdaDeep}) {
        const double a = spectrum::secular_eval(E, r, root - 1e-3);
        const double b = spectrum::secular_eval(E, r, root + 1e-3);
        CHECK(a * b < 0.0);
    }
}

TEST_CASE("angle equation root matches the frozen bisection value") {
    CHECK(std::abs(spectrum::alpha0_root(1, 1) - kAlpha0) < 1e-10);
    const double a = spectrum::alpha0_root(1, 1);
    CHECK(std::abs(std::sin(std::numbers::pi * a) - (0.5 - a) / 1.25) < 1e-12);
    CHECK_THROWS_AS(spectrum::alpha0_root(0, 1), DomainError);
}

TEST_CASE("angle sequence increases and stays below one half") {
    double prev = 0.0;
    for (int j = 1; j <= 3; ++j) {
        const double a = spectrum::alpha0_root(j, 3);
        CHECK(a > prev);
        CHECK(a < 0.5);
        prev = a;
    }
}

TEST_CASE("secular roots ride the asymptotic seeds") {
    const double E = 2.5 * std::numbers::pi, r = 0.5;
    auto sr = spectrum::secular_roots(E, r, 1);
    REQUIRE(sr.lambdas.size() == 1);
    CHECK(std::abs(sr.lambdas[0] - kLambdaDeep) < 1e-10);
    CHECK(std::abs(sr.lambdas[0] - E * std::cos(std::numbers::pi * sr.alpha0[0])) <
          1e-4 * E);
    CHECK(sr.alpha2[0] == doctest::Approx(-0.040597).epsilon(1e-3));
    CHECK(sr.beta[0] > 0.0);
    CHECK(sr.beta[0] < 1.0);
}

TEST_CASE("two-strip secular roots match the frozen grid values") {
    auto spec = PotentialSpec::constrained(2, 0.35, 320);
    auto sr = spectrum::secular_roots(spec.E, spec.r, 2);
    REQUIRE(sr.lambdas.size() == 2);
    CHECK(sr.lambdas[0] == doctest::Approx(19.810157).epsilon(1e-5));
    CHECK(sr.lambdas[1] == doctest::Approx(16.46255).epsilon(1e-5));
    CHECK(sr.alpha0[0] == doctest::Approx(0.062316816).epsilon(1e-5));
    CHECK(sr.alpha0[1] == doctest::Approx(0.19665938).epsilon(1e-5));
    CHECK(sr.beta[0] < sr.beta[1]);
}

TEST_CASE("secular roots demand the wavenumber constraint") {
    CHECK_THROWS_AS(spectrum::secular_roots(7.0, 0.5, 1), DomainError);
}

TEST_CASE("spectrum requires headroom above the tangential block") {
    CHECK_THROWS_AS(
        spectrum::compute_spectrum(PotentialSpec::constrained(1, 0.5, 320),
                                   zero_corr(), 3),
        DomainError);
}

TEST_CASE("free operator reproduces the even Dirichlet eigenvalues") {
    // extrapolation gain: raw second-order error at n=256 is ~8e-6
    PotentialSpec sp;
    sp.E = 1e-8; sp.r = 0.5; sp.m = 320; sp.S = 3; sp.kappa0 = 1; sp.T = 8.0;
    auto s = spectrum::compute_spectrum(sp, zero_corr(), 4, 256, false);
    for (int j = 0; j < 4; ++j) {
        const double exact = std::pow((j + 0.5) * std::numbers::pi, 2);
        CHECK(std::abs(s.eigenvalues[std::size_t(j)] - exact) < 1e-6);
    }
    CHECK(std::abs(s.eigenvalues[0] - std::pow(0.5 * std::numbers::pi, 2)) < 1e-8);
}

TEST_CASE("steep-wall spectrum approaches the limit eigenvalues") {
    auto spec = PotentialSpec::constrained(1, 0.5, 20000);
    auto s = spectrum::compute_spectrum(spec, zero_corr(), 4);
    CHECK(s.negative_count == 2);
    CHECK(std::abs(s.eigenvalues[0] - (-kLambdaDeep * kLambdaDeep)) < 1e-3);
    CHECK(std::abs(s.eigenvalues[1] - (-kLambdaShallow * kLambdaShallow)) < 1e-3);
}

TEST_CASE("steep-wall eigenfunction matches the closed-form limit profile") {
    auto spec = PotentialSpec::constrained(1, 0.5, 20000);
    auto s = spectrum::compute_spectrum(spec, zero_corr(), 4);
    double sup = 0.0;
    for (std::size_t i = 0; i < s.grid.size(); i += 16) {
        const double lf =
            spectrum::limit_eigenfunction(spec.E, spec.r, kLambdaDeep, s.grid[i]);
        sup = std::max(sup, std::abs(s.eigenfunctions[0][i] - lf));
    }
    CHECK(sup < 1e-6);
}

TEST_CASE("two-strip steep-wall frequencies are the sorted secular roots") {
    auto spec = PotentialSpec::constrained(2, 0.35, 20000);
    auto s = spectrum::compute_spectrum(spec, zero_corr(), 5);
    CHECK(s.negative_count == 3);
    REQUIRE(s.omega_vec.size() == 2);
    CHECK(s.omega_vec[0] < s.omega_vec[1]);
    auto sr = spectrum::secular_roots(spec.E, spec.r, 2);
    CHECK(s.omega_vec[0] == doctest::Approx(sr.lambdas[1]).epsilon(1e-4));
    CHECK(s.omega_vec[1] == doctest::Approx(sr.lambdas[0]).epsilon(1e-4));
}

TEST_CASE("working spectrum carries two negative modes and unit-norm functions") {
    const auto& s = sp320();
    CHECK(s.negative_count == 2);
    CHECK(s.eigenvalues[0] < s.eigenvalues[1]);
    CHECK(s.eigenvalues[1] < 0.0);
    CHECK(s.eigenvalues[2] > 0.0);
    REQUIRE(s.frequencies.size() == 1);
    CHECK(s.frequencies[0] == doctest::Approx(std::sqrt(-s.eigenvalues[0])).epsilon(1e-14));
    CHECK(std::abs(s.frequencies[0] - kLambdaDeep) < 1e-2 * 2.5 * std::numbers::pi);

    const std::size_t N = s.grid.size();
    std::vector<double> w(N);
    for (std::size_t i = 0; i < N; ++i) w[i] = s.eigenfunctions[0][i] * s.eigenfunctions[0][i];
    CHECK(s.grid.integrate(w) == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t i = 0; i < N; ++i) w[i] = s.eigenfunctions[0][i] * s.eigenfunctions[1][i];
    CHECK(std::abs(s.grid.integrate(w)) < 1e-8);
    CHECK(s.eigenfunctions[0][N / 2] > 0.0);
    CHECK(s.eigenfunctions[0][0] == 0.0);
    CHECK(s.eigenfunctions[0][N - 1] == 0.0);
}

TEST_CASE("eigenvalue drift to the limit shrinks as the wall steepens") {
    // nominal anchors; the two coarse rows are corrector-dominated
    std::vector<double> gaps;
    for (double m : {40.0, 80.0, 160.0}) {
        auto spec = PotentialSpec::constrained(1, 0.5, m);
        auto corr = potential::build_corrector(spec, {std::numbers::pi / spec.E});
        auto s = spectrum::compute_spectrum(spec, corr, 4, 0, false);
        gaps.push_back(std::abs(std::sqrt(-s.eigenvalues[0]) - kLambdaDeep));
    }
    CHECK(gaps[0] > gaps[1]);
    CHECK(gaps[1] > gaps[2]);
    CHECK(gaps[0] == doctest::Approx(778.825).epsilon(0.05));
    CHECK(gaps[1] == doctest::Approx(232.822).epsilon(0.05));
    CHECK(gaps[2] < 1e-2 * 2.5 * std::numbers::pi);
}

TEST_CASE("shallow transition fails the spectral gates") {
    auto spec = PotentialSpec::constrained(1, 0.5, 40);
    auto corr = potential::build_corrector(spec, {std::numbers::pi / spec.E});
    CHECK_THROWS_AS(spectrum::compute_spectrum(spec, corr, 4), SpectralCountError);
}

TEST_CASE("steep transition collapses onto the frozen external eigenvalues") {
    auto spec = PotentialSpec::constrained(1, 0.5, 160);
    auto [corr, eq] = shear::fixed_point_equilibrium(spec);
    auto s = spectrum::compute_spectrum(spec, corr, 4);
    CHECK(s.negative_count == 2);
    CHECK(s.eigenvalues[0] == doctest::Approx(-55.44616190876889).epsilon(1e-5));
    CHECK(s.eigenvalues[1] == doctest::Approx(-10.177265109310074).epsilon(1e-4));
    const double gap = std::abs(s.frequencies[0] - kLambdaDeep);
    CHECK(gap == doctest::Approx(7.32e-4).epsilon(0.1));
}

TEST_CASE("limit eigenfunction is an even continuous profile vanishing at walls") {
    const double E = 2.5 * std::numbers::pi, r = 0.5;
    CHECK(spectrum::limit_eigenfunction(E, r, kLambdaDeep, 1.0) == 0.0);
    CHECK(spectrum::limit_eigenfunction(E, r, kLambdaDeep, -1.0) == 0.0);
    CHECK(spectrum::limit_eigenfunction(E, r, kLambdaDeep, 0.0) > 0.0);
    for (double y : {0.2, 0.45, 0.8})
        CHECK(spectrum::limit_eigenfunction(E, r, kLambdaDeep, y) ==
              spectrum::limit_eigenfunction(E, r, kLambdaDeep, -y));
    const double below = spectrum::limit_eigenfunction(E, r, kLambdaDeep, r - 1e-9);
    const double above = spectrum::limit_eigenfunction(E, r, kLambdaDeep, r + 1e-9);
    CHECK(std::abs(below - above) < 1e-7);

    // closed-form normalization against quadrature
    const std::size_t N = 16385;
    numerics::Grid1D g = numerics::Grid1D::uniform(-1.0, 1.0, N);
    std::vector<double> w(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double v = spectrum::limit_eigenfunction(E, r, kLambdaDeep, g[i]);
        w[i] = v * v;
    }
    CHECK(g.integrate(w) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("limit eigenfunction rejects non-roots and bad arguments") {
    const double E = 2.5 * std::numbers::pi, r = 0.5;
    CHECK_THROWS_AS(spectrum::limit_eigenfunction(E, r, 5.0, 0.3), DomainError);
    CHECK_THROWS_AS(spectrum::limit_eigenfunction(E, r, -1.0, 0.3), DomainError);
    CHECK_THROWS_AS(spectrum::limit_eigenfunction(E, r, E, 0.3), DomainError);
    CHECK_THROWS_AS(spectrum::limit_eigenfunction(E, r, kLambdaDeep, 1.5), DomainError);
}

TEST_CASE("inverse of the zero right-hand side is zero") {
    const auto& [corr, eq] = fp320();
    std::vector<double> f(1025, 0.0);
    auto u = spectrum::apply_Lm_inverse(eq.spec, corr, f);
    for (double x : u) CHECK(x == 0.0);
}

TEST_CASE("inverse validates the shape and symmetry of the data") {
    const auto& [corr, eq] = fp320();
    CHECK_THROWS_AS(spectrum::apply_Lm_inverse(eq.spec, corr, std::vector<double>(31, 0.0)),
                    ShapeError);
    CHECK_THROWS_AS(spectrum::apply_Lm_inverse(eq.spec, corr, std::vector<double>(34, 0.0)),
                    ShapeError);
    std::vector<double> odd(1025), flat(1025, 1.0);
    for (std::size_t i = 0; i < odd.size(); ++i) odd[i] = -1.0 + double(i) / 512.0;
    CHECK_THROWS_AS(spectrum::apply_Lm_inverse(eq.spec, corr, odd), DomainError);
    CHECK_THROWS_AS(spectrum::apply_Lm_inverse(eq.spec, corr, flat), DomainError);
}

TEST_CASE("manufactured solution is recovered by the inverse") {
    const auto& [corr, eq] = fp320();
    const std::size_t n = 4096;
    const double pi = std::numbers::pi;
    std::vector<double> f(2 * n + 1), uex(2 * n + 1);
    for (std::size_t i = 0; i <= 2 * n; ++i) {
        const double y = -1.0 + double(i) / double(n);
        const double c = std::cos(0.5 * pi * y), s = std::sin(0.5 * pi * y);
        const double w = 1.0 - y * y;
        uex[i] = w * w * c;
        const double upp = (-4.0 + 12.0 * y * y) * c + 4.0 * pi * y * w * s -
                           0.25 * pi * pi * w * w * c;
        f[i] = -upp + potential::eval_Q_value(eq.spec, corr, y) * uex[i];
    }
    auto u = spectrum::apply_Lm_inverse(eq.spec, corr, f);
    double sup = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        sup = std::max(sup, std::abs(u[i] - uex[i]));
    CHECK(sup < 1e-6);
}

TEST_CASE("eigenfunctions invert onto themselves scaled by the eigenvalue") {
    const auto& [corr, eq] = fp320();
    const auto& s = sp320();
    auto u = spectrum::apply_Lm_inverse(eq.spec, corr, s.eigenfunctions[0]);
    double sup = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double want = s.eigenfunctions[0][i] / s.eigenvalues[0];
        sup = std::max(sup, std::abs(u[i] - want));
        scale = std::max(scale, std::abs(want));
    }
    CHECK(sup < 1e-6 * scale);
}

TEST_CASE("near-singular operator is refused") {
    // sweep E towards the ground-eigenvalue crossing until a guard fires
    const std::size_t n = 512;
    const double pi = std::numbers::pi;
    std::vector<double> f(2 * n + 1);
    for (std::size_t i = 0; i <= 2 * n; ++i) {
        const double y = -1.0 + double(i) / double(n);
        f[i] = (1.0 - y * y) * std::cos(0.5 * pi * y);
    }
    PotentialSpec sp;
    sp.r = 0.5; sp.m = 320; sp.S = 3; sp.kappa0 = 1; sp.T = 8.0;
    double lo = 1.0, hi = 7.0;
    bool thrown = false;
    for (int it = 0; it < 60 && !thrown; ++it) {
        sp.E = 0.5 * (lo + hi);
        try {
            auto u = spectrum::apply_Lm_inverse(sp, zero_corr(), f);
            if (u[n] > 0.0) lo = sp.E; else hi = sp.E;
        } catch (const SingularOperatorError&) {
            thrown = true;
        }
    }
    CHECK(thrown);
}

TEST_CASE("frequency vector is the ascending tangential set") {
    const auto& s = sp320();
    auto om = spectrum::frequency_vector(s);
    REQUIRE(om.size() == 1);
    CHECK(om[0] == s.frequencies[0]);
    spectrum::Spectrum crippled = s;
    crippled.frequencies.clear();
    CHECK_THROWS_AS(spectrum::frequency_vector(crippled), ShapeError);
}

TEST_CASE("json and csv exports carry the spectral data") {
    const auto& s = sp320();
    auto j = nlohmann::json::parse(spectrum::to_json(s));
    CHECK(j["negative_count"].get<int>() == 2);
    CHECK(j["eigenvalues"].size() == 4);
    CHECK(j["omega_vec"].size() == 1);

    const auto path =
        (std::filesystem::temp_directory_path() / "qpe_test_spectrum.csv").string();
    spectrum::write_csv(s, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("y", 0) == 0);
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == s.grid.size());
    std::remove(path.c_str());
}
