#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>

#include "negcurve/metric.hpp"
#include "reference_values.hpp"

using namespace negcurve;

namespace {
double max_rel_err_vs(const PolarMetric& pm, double (*exact)(double)) {
    double worst = 0;
    for (size_t j = 1; j < pm.rho.size(); ++j) {
        double e = exact(pm.rho[j]);
        worst = std::max(worst, std::abs(pm.G(0, int(j)) - e) / std::abs(e));
    }
    return worst;
}
} // namespace

TEST_CASE("unit curvature polar metric reproduces sinh", "[metric]") {
    auto spec = make_family("constant");
    auto t0 = std::chrono::steady_clock::now();
    auto pm = solve_polar_metric(spec, 5.0, 5001); // step 1e-3
    auto t1 = std::chrono::steady_clock::now();
    REQUIRE(std::chrono::duration<double>(t1 - t0).count() < 1.0);
    REQUIRE(max_rel_err_vs(pm, [](double r) { return std::sinh(r); }) <= 1e-8);
    double worst_gp = 0;
    for (size_t j = 0; j < pm.rho.size(); ++j) {
        double e = std::cosh(pm.rho[j]);
        worst_gp = std::max(worst_gp, std::abs(pm.Gp(0, int(j)) - e) / e);
    }
    REQUIRE(worst_gp <= 1e-8);
}

TEST_CASE("polar metric converges at fourth order", "[metric]") {
    auto spec = make_family("constant");
    double e1 = max_rel_err_vs(solve_polar_metric(spec, 5.0, 641),
                               [](double r) { return std::sinh(r); });
    double e2 = max_rel_err_vs(solve_polar_metric(spec, 5.0, 1281),
                               [](double r) { return std::sinh(r); });
    REQUIRE(std::log2(e1 / e2) >= 3.0);
}

TEST_CASE("critical-decay radial metric matches anchors", "[metric]") {
    auto spec = make_family("log_power", {{"g0", 1.0}, {"gamma", 0.9}});
    auto pm = solve_polar_metric(spec, 80.0, 80001);
    auto at = [&](double rho) { return int(std::lround(rho / 80.0 * 80000)); };
    REQUIRE(pm.G(0, at(10)) == Catch::Approx(refvals::lp_G_10).epsilon(1e-6));
    REQUIRE(pm.Gp(0, at(10)) == Catch::Approx(refvals::lp_Gp_10).epsilon(1e-6));
    REQUIRE(pm.G(0, at(40)) == Catch::Approx(refvals::lp_G_40).epsilon(1e-6));
    REQUIRE(pm.Gp(0, at(40)) == Catch::Approx(refvals::lp_Gp_40).epsilon(1e-6));
    REQUIRE(pm.G(0, at(80)) == Catch::Approx(refvals::lp_G_80).epsilon(1e-6));
    REQUIRE(pm.Gp(0, at(80)) == Catch::Approx(refvals::lp_Gp_80).epsilon(1e-6));
    // G = rho exactly while the curvature is off
    REQUIRE(pm.G(0, at(1)) == Catch::Approx(1.0).margin(1e-12));

    // excess log-derivative integral equals log(G/rho) when G(1) = 1
    Vec xs, ys;
    for (size_t j = 0; j < pm.rho.size(); ++j) {
        if (pm.rho[j] < 1.0) continue;
        xs.push_back(pm.rho[j]);
        ys.push_back(pm.Gp(0, int(j)) / pm.G(0, int(j)) - 1 / pm.rho[j]);
    }
    double lhs = trapz(xs, ys);
    double rhs = std::log(pm.G(0, at(80)) / 80.0);
    REQUIRE(lhs == Catch::Approx(rhs).margin(1e-5));
}

TEST_CASE("metric bounds and tail diagnostics on the critical family", "[metric]") {
    auto spec = make_family("log_power", {{"g0", 1.0}, {"gamma", 0.9}});
    Vec rho = linspace(0.0, 100.0, 100001);
    for (double r = 100.01; r <= 20000.0 + 1e-9; r += 0.01) rho.push_back(r);
    auto pm = solve_polar_metric(spec, rho);
    auto rep = verify_metric_bounds(spec, pm);
    REQUIRE(rep.ok);
    REQUIRE(rep.min_Gp_margin >= 0.0);
    REQUIRE(rep.min_G_margin >= -1e-9);
    REQUIRE(rep.min_logderiv_margin >= -1e-12);
    REQUIRE(rep.bound_exp == Catch::Approx(std::exp(refvals::log_power_total)).epsilon(1e-5));

    // quadrature settles: the last doubling moves the BV integral < 1%
    REQUIRE(rep.bv_last_doubling < 0.01);
    REQUIRE(rep.bv_integral == Catch::Approx(refvals::lp_bv_integral).epsilon(0.02));

    // G' climbs to its limit like 1/(2 log^2 rho); correct for the known
    // deficit and the far anchor must land
    double T = pm.rho.back();
    double gp_end = pm.Gp(0, int(pm.rho.size()) - 1);
    REQUIRE(gp_end < refvals::lp_Gp_inf);
    double deficit = refvals::lp_Gp_inf / (2 * sq(std::log(T)));
    REQUIRE(gp_end + deficit == Catch::Approx(refvals::lp_Gp_inf).epsilon(1e-3));

    // two routes to the total-curvature identity agree, and extrapolate to
    // the frozen limit
    REQUIRE(rep.j0_quadrature == Catch::Approx(rep.j0_over_2pi).epsilon(1e-4));
    REQUIRE(rep.j0_over_2pi + deficit ==
            Catch::Approx(refvals::lp_J0_over_2pi).epsilon(1e-3));
}

TEST_CASE("geodesic metric closed forms", "[metric]") {
    Vec x = linspace(-2.0, 2.0, 9);
    Vec t = linspace(0.0, 3.0, 3001);
    auto flat = solve_geodesic_metric([](double, double) { return 0.0; }, x, t);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 3001; ++j) {
            REQUIRE(flat.B(i, j) == 1.0);
            REQUIRE(flat.Bt(i, j) == 0.0);
        }
    auto hyp = solve_geodesic_metric([](double, double) { return 1.0; }, x, t);
    double worst = 0;
    for (int j = 0; j < 3001; ++j)
        worst = std::max(worst, std::abs(hyp.B(4, j) - std::cosh(t[j])) / std::cosh(t[j]));
    REQUIRE(worst <= 1e-8);
}

TEST_CASE("christoffel symbols satisfy the product identity", "[metric]") {
    auto spec = make_family("log_power", {{"g0", 1.0}, {"gamma", 0.9}});
    auto pm = solve_polar_metric(spec, 20.0, 2001);
    auto cf = polar_christoffels(pm);
    for (size_t j = 1; j < pm.rho.size(); j += 97) {
        double lhs = cf.g211(0, int(j)) * cf.g112(0, int(j));
        double rhs = -sq(pm.Gp(0, int(j)));
        REQUIRE(lhs == Catch::Approx(rhs).margin(1e-12 + 1e-12 * std::abs(rhs)));
    }
    // geodesic twin on the unit-curvature fiber: G111 = 0, G211 = -B Bt
    Vec x = linspace(-1.0, 1.0, 21);
    Vec t = linspace(0.0, 2.0, 201);
    auto gm = solve_geodesic_metric([](double, double) { return 1.0; }, x, t);
    auto gcf = geodesic_christoffels(gm);
    for (int j = 0; j < 201; ++j) {
        REQUIRE(gcf.g111(10, j) == Catch::Approx(0.0).margin(1e-10));
        REQUIRE(gcf.g211(10, j) ==
                Catch::Approx(-std::cosh(t[j]) * std::sinh(t[j])).epsilon(1e-7));
        REQUIRE(gcf.g112(10, j) == Catch::Approx(std::tanh(t[j])).epsilon(1e-7).margin(1e-12));
    }
}

TEST_CASE("theta-dependent oscillation produces per-ray metrics", "[metric]") {
    auto spec = make_family("pure_power", {{"gamma", 0.5}, {"eta", 0.1}});
    spec.osc.theta_free = false;
    spec.osc.value = [](double th, double rho) {
        return std::exp(0.2 * std::sin(th) * std::exp(-sq(rho - 3)));
    };
    spec.osc.dlog_drho = [](double th, double rho) {
        return -2 * (rho - 3) * 0.2 * std::sin(th) * std::exp(-sq(rho - 3));
    };
    spec.osc.dlog_dtheta = [](int i, double th, double rho) {
        double base = 0.2 * std::exp(-sq(rho - 3));
        double d = (i == 1) ? std::cos(th) : (i == 2) ? -std::sin(th) : -std::cos(th);
        return base * d;
    };
    auto pm = solve_polar_metric(spec, 8.0, 801, 16);
    REQUIRE_FALSE(pm.radial);
    REQUIRE(pm.theta.size() == 16);
    double spread = 0;
    int jend = int(pm.rho.size()) - 1;
    for (int i = 0; i < 16; ++i)
        for (int i2 = 0; i2 < 16; ++i2)
            spread = std::max(spread, std::abs(pm.G(i, jend) - pm.G(i2, jend)));
    REQUIRE(spread > 1e-3); // rays genuinely differ
    auto rep = verify_metric_bounds(spec, pm);
    REQUIRE(rep.ok);
}
