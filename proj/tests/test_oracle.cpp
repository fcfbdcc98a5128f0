#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <string>

#include "negcurve/oracle.hpp"
#include "reference_values.hpp"

using namespace negcurve;

namespace {

template <class F>
std::string thrown(F&& f) {
    try {
        f();
    } catch (const NegcurveError& e) {
        return e.code + "|" + e.what();
    }
    return "";
}

double rel(double got, double want) {
    return std::abs(got - want) / std::abs(want);
}

std::function<double(double)> power_k(double half_m) {
    return [half_m](double r) { return std::pow(r, -half_m); };
}

std::function<double(double)> power_dlogk(double half_m) {
    return [half_m](double r) { return -half_m / r; };
}

} // namespace

TEST_CASE("free-anchor ray reproduces its frozen profile", "[oracle]") {
    // k = rho^-1.6 with non-geometric anchor data G(10) = 1, G'(10) = 0.1.
    auto rm = make_radial_metric(power_k(1.6), 10.0, 1.0, 0.1, 20.0, 1e-3);
    REQUIRE(rel(rm.G.back(), refvals::d1_G_20) <= 1e-9);
    REQUIRE(rel(rm.Gp.back(), refvals::d1_Gp_20) <= 1e-9);

    auto closed = ode_closed_form(rm, regime_decreasing(), 0.1, 0.1);
    REQUIRE_FALSE(closed.truncated);
    REQUIRE(closed.rho_grid.size() == rm.rho.size());
    REQUIRE(rel(closed.c_ratio, refvals::d1_c_ratio) <= 1e-13);
    REQUIRE(rel(closed.u.back(), refvals::d1_u_20) <= 1e-8);
    REQUIRE(rel(closed.v.back(), refvals::d1_v_20) <= 1e-8);
    REQUIRE(std::abs(closed.disc.front() - 4.0) <= 1e-12);
    REQUIRE(closed.u.front() == 0.1);
    REQUIRE(closed.v.front() == Catch::Approx(0.1).margin(1e-15));

    // The uncorrected variant (anchor terms dropped) lands visibly off the
    // true flow through this data; the deviation is part of the contract.
    REQUIRE(rel(closed.u_uncorrected.back(), refvals::d1_printed_u_20) <= 1e-8);
    REQUIRE(rel(closed.v_uncorrected.back(), refvals::d1_printed_v_20) <= 1e-8);
    REQUIRE(std::abs(closed.uncorrected_dev.back() - refvals::d1_printed_drift) <= 1e-8);
    REQUIRE(closed.uncorrected_drift >= refvals::d1_printed_drift - 1e-8);

    // Independent fourth-order march through the same data.
    auto prof = radial_march(power_k(1.6), power_dlogk(1.6), regime_decreasing(),
                             10.0, 1.0, 0.1, 0.1, 0.1, 20.0, 1e-3);
    REQUIRE(prof.halvings == 0);
    REQUIRE(rel(prof.u.back(), refvals::d1_u_20) <= 1e-8);
    REQUIRE(rel(prof.v.back(), refvals::d1_v_20) <= 1e-8);
    REQUIRE(prof.closed_rel_dev <= 1e-8);
    REQUIRE(prof.c_ratio_cv <= 1e-10);

    // Existence: march the slope far out and bound the rest by quadrature.
    auto far = make_radial_metric(power_k(1.6), 10.0, 1.0, 0.1, 2000.0, 5e-3);
    auto eb = ode_existence_bound(far, regime_decreasing(), 0.1);
    REQUIRE(eb.satisfied);
    REQUIRE(eb.reason.empty());
    REQUIRE(rel(eb.gp_inf, refvals::d1_Gp_inf) <= 1e-4);
    REQUIRE(rel(eb.value, refvals::d1_existence) <= 1e-4);
}

TEST_CASE("blow-up data truncates the closed form and defeats the march", "[oracle]") {
    auto rm = make_radial_metric(power_k(1.6), 10.0, 1.0, 0.1, 20.0, 1e-3);

    // v0 large enough that the discriminant dies inside the range: the
    // closed form stops at the last live node, the march cannot cross it.
    auto closed = ode_closed_form(rm, regime_decreasing(), 0.1, 2.5);
    REQUIRE(closed.truncated);
    REQUIRE(closed.rho_grid.back() < 20.0);
    REQUIRE(closed.rho_grid.size() >= 2);
    for (double d : closed.disc) REQUIRE(d > 0);
    for (double v : closed.v) REQUIRE(v > 0);

    REQUIRE(thrown([&] {
                radial_march(power_k(1.6), power_dlogk(1.6), regime_decreasing(),
                             10.0, 1.0, 0.1, 0.1, 2.5, 20.0, 1e-3);
            }).find("Stiffness") == 0);

    // Sufficient condition fails without implying blow-up: this anchor sits
    // between the sharp threshold and the bound.
    auto far = make_radial_metric(power_k(1.6), 10.0, 1.0, 0.1, 2000.0, 5e-3);
    auto eb = ode_existence_bound(far, regime_decreasing(), 0.9);
    REQUIRE_FALSE(eb.satisfied);
    REQUIRE(eb.reason.empty());
    REQUIRE(eb.value > 2.0);
}

TEST_CASE("geometric increasing fixture matches its anchors", "[oracle]") {
    auto spec = make_family("log_power");
    auto prof = radial_reference(spec, regime_increasing(), 40.0, 0.02, 0.04, 80.0, 1e-3);

    REQUIRE(rel(prof.G.front(), refvals::lp_G_40) <= 1e-7);
    REQUIRE(rel(prof.dG.front(), refvals::lp_Gp_40) <= 1e-7);
    REQUIRE(rel(prof.G.back(), refvals::lp_G_80) <= 1e-7);
    REQUIRE(rel(prof.dG.back(), refvals::lp_Gp_80) <= 1e-7);
    REQUIRE(rel(prof.u.back(), refvals::d2_u_80) <= 1e-7);
    REQUIRE(rel(prof.v.back(), refvals::d2_v_80) <= 1e-7);
    REQUIRE(rel(prof.c_ratio, refvals::d2_c_ratio) <= 1e-7);

    // Fourth-order march against the exact first integral, and the conserved
    // ratio along the march itself.
    REQUIRE(prof.closed_rel_dev <= 1e-8);
    REQUIRE(prof.c_ratio_cv <= 1e-10);
    REQUIRE_FALSE(prof.truncated);
    REQUIRE(prof.halvings == 0);
    REQUIRE(std::abs(prof.disc.front() - 4.0) <= 1e-12);
    for (double d : prof.disc) REQUIRE(d > 0.01);

    // In this regime v rides the discriminant alone, so it barely moves.
    REQUIRE(prof.v.back() > 0.04);
    REQUIRE(prof.v.back() < 0.0401);
}

TEST_CASE("geometric decreasing fixture matches its anchors", "[oracle]") {
    auto spec = make_family("pure_power", {{"gamma", 0.9}, {"eta", 0.3}});
    auto prof = radial_reference(spec, regime_decreasing(), 20.0, 0.001, 0.002, 40.0, 1e-3);

    REQUIRE(rel(prof.G.front(), refvals::d3_G_20) <= 1e-7);
    REQUIRE(rel(prof.dG.front(), refvals::d3_Gp_20) <= 1e-7);
    REQUIRE(rel(prof.G.back(), refvals::d3_G_40) <= 1e-7);
    REQUIRE(rel(prof.dG.back(), refvals::d3_Gp_40) <= 1e-7);
    REQUIRE(rel(prof.u.back(), refvals::d3_u_40) <= 1e-6);
    REQUIRE(rel(prof.v.back(), refvals::d3_v_40) <= 1e-6);
    REQUIRE(rel(prof.c_ratio, refvals::d3_c_ratio) <= 1e-7);
    REQUIRE(prof.closed_rel_dev <= 1e-8);
    REQUIRE(prof.c_ratio_cv <= 1e-10);

    // Both components decay while the bound stays clear of 2.
    REQUIRE(prof.u.back() < 0.001);
    REQUIRE(prof.v.back() < 0.002);

    auto rm = make_radial_metric(spec.kstar, 40.0, prof.G.back(), prof.dG.back(),
                                 4000.0, 0.02, spec.breakpoints);
    // Re-anchor at 20 for the predicate's k(R) while keeping the long slope
    // history: splice the marched profile ahead of the extension.
    RadialMetric full;
    full.rho = prof.rho_grid;
    full.G = prof.G;
    full.Gp = prof.dG;
    for (std::size_t i = 1; i < rm.rho.size(); ++i) {
        full.rho.push_back(rm.rho[i]);
        full.G.push_back(rm.G[i]);
        full.Gp.push_back(rm.Gp[i]);
    }
    full.k = spec.kstar;
    auto eb = ode_existence_bound(full, regime_decreasing(), 0.002);
    REQUIRE(eb.satisfied);
    REQUIRE(rel(eb.gp_inf, refvals::d3_Gp_inf) <= 1e-4);
    REQUIRE(rel(eb.value, refvals::d3_existence) <= 1e-4);
}

TEST_CASE("existence bound classifies tails", "[oracle]") {
    // log_power ray from the axis: the slope limit and the v0 threshold it
    // induces. The affine tail correction is second order, so a grid to 5000
    // pins both to a few parts in ten thousand.
    auto spec = make_family("log_power");
    auto rm = make_radial_metric(spec.kstar, 0.0, 0.0, 1.0, 5000.0, 0.01,
                                 spec.breakpoints);
    auto eb = ode_existence_bound(rm, regime_increasing(), 1.0);
    REQUIRE(rel(eb.gp_inf, refvals::lp_Gp_inf) <= 1e-4);
    REQUIRE(rel(2.0 / eb.gp_inf, refvals::lp_exist_threshold) <= 1e-4);

    double thr = 2.0 / eb.gp_inf;
    REQUIRE(ode_existence_bound(rm, regime_increasing(), 0.9 * thr).satisfied);
    REQUIRE_FALSE(ode_existence_bound(rm, regime_increasing(), 1.1 * thr).satisfied);

    // k ~ 1/rho: G grows linearly, so int G k^2 diverges and the slope limit
    // does not exist. Not an error, a verdict.
    auto inv = make_radial_metric([](double r) { return 1.0 / r; }, 2.0, 2.0, 1.0,
                                  50.0, 1e-2);
    auto bad = ode_existence_bound(inv, regime_increasing(), 0.1);
    REQUIRE_FALSE(bad.satisfied);
    REQUIRE(bad.reason == "G' unbounded");
    REQUIRE_FALSE(std::isfinite(bad.gp_inf));

    // Constant curvature: exponential G, wildly divergent tail.
    auto cst = make_radial_metric([](double) { return 1.0; }, 1.0, 1.0, 1.0, 30.0, 1e-2);
    auto worse = ode_existence_bound(cst, regime_increasing(), 0.1);
    REQUIRE_FALSE(worse.satisfied);
    REQUIRE(worse.reason == "G' unbounded");

    // Decay just barely past 1/rho: convergent in principle, but the mass
    // sits too far out for the affine model to bound. Refusing to answer is
    // the contract here.
    auto slow = make_radial_metric(power_k(1.005), 2.0, 2.0, 1.0, 20.0, 1e-2);
    REQUIRE(thrown([&] { ode_existence_bound(slow, regime_increasing(), 0.1); })
                .find("InconclusiveTail") == 0);
}

TEST_CASE("oracle rejects bad anchor data", "[oracle]") {
    auto rm = make_radial_metric(power_k(1.6), 10.0, 1.0, 0.1, 12.0, 1e-2);

    REQUIRE(thrown([&] { ode_closed_form(rm, regime_decreasing(), 0.1, 0.0); })
                .find("InvalidConfig") == 0);
    REQUIRE(thrown([&] { ode_closed_form(rm, regime_decreasing(), 0.1, -0.2); })
                .find("InvalidConfig") == 0);
    REQUIRE(thrown([&] { ode_existence_bound(rm, regime_decreasing(), 0.0); })
                .find("InvalidConfig") == 0);

    // k(R) = 0 starves k^(beta-1) for beta != 1 but is harmless at beta = 1.
    auto dead = make_radial_metric([](double) { return 0.0; }, 1.0, 1.0, 1.0, 3.0, 1e-2);
    REQUIRE(thrown([&] { ode_closed_form(dead, regime_decreasing(), 0.0, 0.1); })
                .find("InvalidConfig") == 0);
    auto flat = ode_closed_form(dead, regime_increasing(), 0.0, 0.1);
    REQUIRE(flat.c_ratio == 0.0);
    for (double u : flat.u) REQUIRE(u == 0.0);
    for (double v : flat.v) REQUIRE(v > 0.0);

    REQUIRE(thrown([&] { make_radial_metric(power_k(1.0), 5.0, 1.0, 1.0, 4.0, 1e-2); })
                .find("InvalidConfig") == 0);
    REQUIRE(thrown([&] { make_radial_metric(power_k(1.0), 5.0, 1.0, 1.0, 8.0, 0.0); })
                .find("InvalidConfig") == 0);
    REQUIRE(thrown([&] { radial_reference(make_family("constant"), regime_increasing(),
                                          -1.0, 0.1, 0.1, 5.0, 1e-2); })
                .find("InvalidConfig") == 0);

    RadialMetric scrambled = rm;
    std::swap(scrambled.rho[3], scrambled.rho[4]);
    REQUIRE(thrown([&] { ode_closed_form(scrambled, regime_decreasing(), 0.1, 0.1); })
                .find("InvalidConfig") == 0);

    REQUIRE(regime_for(Monotonicity::Increasing).beta == 1.0);
    REQUIRE(regime_for(Monotonicity::Decreasing).alpha == 1.0);
    REQUIRE(thrown([] { regime_for(Monotonicity::Indefinite); })
                .find("IndefiniteRegime") == 0);
}

TEST_CASE("u0 = 0 rides the decoupled v equation", "[oracle]") {
    auto rm = make_radial_metric(power_k(1.6), 10.0, 1.0, 0.1, 20.0, 1e-3);
    auto closed = ode_closed_form(rm, regime_decreasing(), 0.0, 0.1);
    REQUIRE(closed.c_ratio == 0.0);
    for (double u : closed.u) REQUIRE(u == 0.0);
    for (double v : closed.v) REQUIRE(v > 0.0);

    auto prof = radial_march(power_k(1.6), power_dlogk(1.6), regime_decreasing(),
                             10.0, 1.0, 0.1, 0.0, 0.1, 20.0, 1e-3);
    for (double u : prof.u) REQUIRE(u == 0.0);
    REQUIRE(prof.closed_rel_dev <= 1e-8);
    REQUIRE(prof.c_ratio_cv == 0.0);
}

TEST_CASE("march recovers from a stiff coefficient dip", "[oracle]") {
    // k dips four orders of magnitude over a narrow window on a decaying
    // power baseline: log k swings at rate ~70, so the requested step is
    // violently unstable and the march must refine internally to get across.
    // The baseline must decay; on flat k the metric derivative grows like
    // sinh and the discriminant dies near rho ~ 13.7, a genuine blow-up no
    // refinement can cross.
    const double A = 1e4, B = 500.0, rc = 15.0;
    auto k = [=](double r) {
        return std::pow(r, -1.6) / (1.0 + A * std::exp(-B * sq(r - rc)));
    };
    auto dlogk = [=](double r) {
        double e = A * std::exp(-B * sq(r - rc));
        return -1.6 / r + 2.0 * B * (r - rc) * e / (1.0 + e);
    };
    auto prof = radial_march(k, dlogk, regime_decreasing(), 10.0, 1.0, 0.1, 0.1, 0.1,
                             20.0, 0.5);
    REQUIRE(prof.halvings >= 4);
    REQUIRE(prof.halvings <= 10);
    REQUIRE_FALSE(prof.truncated);
    REQUIRE(prof.closed_rel_dev <= 1e-4);
    for (double v : prof.v) {
        REQUIRE(std::isfinite(v));
        REQUIRE(v > 0.0);
    }
    // Acceptance is decided by the exact-form cross check, not bare
    // survival: the first stable step count still smears the dip, so the
    // accepted run must also meet a clean fine-step march at the far end.
    auto fine = radial_march(k, dlogk, regime_decreasing(), 10.0, 1.0, 0.1, 0.1, 0.1,
                             20.0, 1e-3);
    REQUIRE(fine.halvings == 0);
    REQUIRE(rel(prof.v.back(), fine.v.back()) <= 1e-3);
    REQUIRE(rel(prof.u.back(), fine.u.back()) <= 1e-3);
}
