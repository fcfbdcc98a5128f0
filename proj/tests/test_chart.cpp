#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "negcurve/chart.hpp"
#include "reference_values.hpp"

using namespace negcurve;

namespace {

CurvatureSpec flat_spec(double gamma = 0.5) {
    CurvatureSpec s;
    s.family_tag = "flat";
    s.gamma = gamma;
    s.kstar = [](double) { return 0.0; };
    s.dlog_kstar = [](double) { return 0.0; };
    s.osc = unit_oscillation();
    return s;
}

Vec two_sided(double lo, double hi, int n_per_side) {
    Vec left = linspace(-hi, -lo, n_per_side);
    Vec right = linspace(lo, hi, n_per_side);
    left.insert(left.end(), right.begin(), right.end());
    return left;
}

template <class F>
std::string thrown(F&& f) {
    try {
        f();
    } catch (const NegcurveError& e) {
        return e.code + "|" + e.what();
    }
    return "";
}

} // namespace

TEST_CASE("flat chart matches polar closed forms", "[chart]") {
    auto polar = solve_polar_metric(flat_spec(), 9.0, 9001);
    Vec xg{-2.0, -1.0, 1.0, 2.0};
    Vec tg = linspace(0.0, 5.0, 5001);
    auto cm = build_chart(polar, xg, tg, 1e-3);

    double worst = 0, worst_enc = 0;
    for (int i = 0; i < 4; ++i) {
        REQUIRE(cm.rho(i, 0) == std::abs(xg[i]));
        REQUIRE(cm.theta(i, 0) == (xg[i] > 0 ? 0.0 : M_PI));
        REQUIRE(cm.tanh_phi(i, 0) == 0.0);
        REQUIRE(cm.sech_phi(i, 0) == 1.0);
        double prev = cm.rho(i, 0);
        for (int j = 1; j < int(tg.size()); ++j) {
            double t = tg[j], ax = std::abs(xg[i]);
            double rho = std::hypot(xg[i], t);
            double theta = std::atan2(t, xg[i]);
            worst = std::max(worst, std::abs(cm.rho(i, j) - rho) / rho);
            worst = std::max(worst, std::abs(cm.theta(i, j) - theta) / theta);
            worst = std::max(worst, std::abs(cm.tanh_phi(i, j) - t / rho) / (t / rho));
            worst_enc = std::max(worst_enc, std::abs(sq(cm.tanh_phi(i, j))
                                                     + sq(cm.sech_phi(i, j)) - 1));
            // t <= rho <= t + |x| and rho >= |x|/2, strictly increasing in t
            REQUIRE(cm.rho(i, j) >= t - 1e-9);
            REQUIRE(cm.rho(i, j) <= t + ax + 1e-9);
            REQUIRE(cm.rho(i, j) >= ax / 2 - 1e-9);
            REQUIRE(cm.rho(i, j) > prev);
            prev = cm.rho(i, j);
        }
    }
    REQUIRE(worst <= 1e-8);
    REQUIRE(worst_enc <= 1e-12);
}

TEST_CASE("hyperbolic chart reproduces the law of cosines", "[chart]") {
    auto spec = make_family("constant");
    auto polar = solve_polar_metric(spec, 6.5, 6501);
    Vec xg{-1.0, 1.0};
    Vec tg = linspace(0.0, 5.0, 5001);
    auto cm = build_chart(polar, xg, tg, 1e-3);

    double worst = 0;
    for (int j = 0; j < int(tg.size()); ++j) {
        double lhs = std::cosh(cm.rho(1, j));
        double rhs = std::cosh(1.0) * std::cosh(tg[j]);
        worst = std::max(worst, std::abs(lhs - rhs) / rhs);
    }
    REQUIRE(worst <= 1e-6);

    for (const auto& st : refvals::hyper_x1) {
        int j = int(std::lround(st.t / 5.0 * 5000));
        REQUIRE(cm.rho(1, j) == Catch::Approx(st.rho).epsilon(1e-6));
        REQUIRE(cm.theta(1, j) == Catch::Approx(st.theta).epsilon(1e-6));
        REQUIRE(cm.tanh_phi(1, j) == Catch::Approx(st.tanh_phi).epsilon(1e-6));
    }
    REQUIRE(cm.theta(0, 1000) == Catch::Approx(refvals::hyper_xm1_t1_theta).epsilon(1e-6));
    // mirror symmetry of the two columns
    for (int j = 0; j < int(tg.size()); j += 100)
        REQUIRE(cm.theta(0, j) + cm.theta(1, j) == Catch::Approx(M_PI).margin(1e-9));

    // hyperbolic-angle envelope: e^Phi >= (t+|x|)/|x| and friends
    for (int i = 0; i < 2; ++i) {
        for (int j = 1; j < int(tg.size()); j += 7) {
            double t = tg[j], ax = 1.0;
            double tau = cm.tanh_phi(i, j), sig = cm.sech_phi(i, j);
            REQUIRE((1 + tau) / sig >= (t + ax) / ax * (1 - 1e-9));
            REQUIRE(1 - tau >= -1e-12);
            REQUIRE(1 - tau <= 2 * ax / (t + ax) + 1e-9);
            REQUIRE(tau / sig >= 0.5 * (t / ax + t / (t + ax)) * (1 - 1e-9));
            REQUIRE(1 / sig >= 0.5 * (t / ax + 1) * (1 - 1e-9));
        }
    }
}

TEST_CASE("chart rejects bad configurations", "[chart]") {
    auto polar = solve_polar_metric(flat_spec(), 4.0, 401);
    Vec tg = linspace(0.0, 2.0, 21);
    REQUIRE(thrown([&] { build_chart(polar, {5e-4}, tg, 1e-3); })
                .find("InvalidConfig") == 0);
    REQUIRE(thrown([&] { build_chart(polar, {0.05}, tg, 1e-3, 0.1); })
                .find("InvalidConfig") == 0);
    REQUIRE(thrown([&] { build_chart(polar, {1.0}, linspace(1.0, 2.0, 5), 1e-3); })
                .find("InvalidConfig") == 0);
    REQUIRE(thrown([&] { build_chart(polar, {1.0}, tg, 0.0); })
                .find("InvalidConfig") == 0);
    // rho range must reach t_max + |x|_max = 5.5
    REQUIRE(thrown([&] { build_chart(polar, {3.5}, tg, 1e-3); })
                .find("PolarRange") == 0);
}

TEST_CASE("verify_chart residuals vanish at first order", "[chart]") {
    auto polar = solve_polar_metric(flat_spec(), 8.0, 1601);
    auto zero = [](double, double) { return 0.0; };

    // columns kept off the origin: theta's x-curvature blows up like 1/rho^2
    // there, and a grid family that samples ever closer to the corner as h
    // shrinks would mask the stencil order with the growing derivative
    auto residuals = [&](int n_side, int n_t) {
        Vec xg = two_sided(1.0, 3.0, n_side);
        Vec tg = linspace(0.0, 3.0, n_t);
        auto cm = build_chart(polar, xg, tg, 5e-3);
        auto geo = solve_geodesic_metric(zero, xg, tg);
        return verify_chart(cm, polar, geo);
    };
    auto coarse = residuals(11, 16);
    auto fine = residuals(21, 31);

    REQUIRE(coarse.max_encoding <= 1e-12);
    REQUIRE(coarse.max_unit_speed <= 1e-12);
    REQUIRE(fine.min_jacobian_fd > 0);
    REQUIRE(std::log2(coarse.max_x_metric / fine.max_x_metric) >= 0.8);
    REQUIRE(std::log2(coarse.max_orthogonality / fine.max_orthogonality) >= 0.8);
    REQUIRE(std::log2(coarse.max_jacobian / fine.max_jacobian) >= 0.8);

    // curved chart: same relations, one grid, sanity scale
    auto spec = make_family("constant");
    auto hpolar = solve_polar_metric(spec, 4.0, 4001);
    Vec xg = two_sided(0.5, 1.5, 11);
    Vec tg = linspace(0.0, 2.0, 41);
    auto cm = build_chart(hpolar, xg, tg, 2e-3);
    auto geo = solve_geodesic_metric([](double, double) { return 1.0; }, xg, tg);
    auto r = verify_chart(cm, hpolar, geo);
    REQUIRE(r.max_unit_speed <= 1e-12);
    REQUIRE(r.min_jacobian_fd > 0);
    // x-relation residual scales with B^2 ~ cosh^2(t_max); allow ~10% of that
    REQUIRE(r.max_x_metric < 0.15 * sq(std::cosh(2.0)));
    REQUIRE(r.max_orthogonality < 0.1);
    REQUIRE(r.max_jacobian < 0.05);
}

TEST_CASE("slope transport matches the flat transform", "[chart]") {
    // closed-form sample at x = 1, t = 1: rho = sqrt(2), theta = pi/4
    double s2 = std::sqrt(2.0);
    ChartSample at{1 / s2, 0.5, 1 / s2, -0.5};
    double B = 1.0, G = s2;

    REQUIRE(push_slope(0.0, at) == Catch::Approx(1 / s2).margin(1e-15));
    REQUIRE(push_slope(1.0, at) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(at.theta_x / at.rho_x == Catch::Approx(-1 / s2).margin(1e-15));

    // order reversing with the chosen orientation:
    // push(z1) - push(z2) = -B (z1 - z2) / (G D1 D2)
    double pairs[4][2] = {{-0.5, 0.3}, {0.0, 1.0}, {0.2, 0.7}, {-0.3, -0.1}};
    for (auto& p : pairs) {
        double z1 = p[0], z2 = p[1];
        double d1 = at.rho_t + z1 * at.rho_x, d2 = at.rho_t + z2 * at.rho_x;
        double lhs = push_slope(z1, at) - push_slope(z2, at);
        REQUIRE(lhs == Catch::Approx(-B * (z1 - z2) / (G * d1 * d2)).margin(1e-14));
        REQUIRE(d1 > 0);
        REQUIRE(d2 > 0);
        REQUIRE(push_slope(std::min(z1, z2), at) > push_slope(std::max(z1, z2), at));
    }

    REQUIRE(thrown([&] { push_slope(-1.0, at); }).find("DegenerateDirection") == 0);
    REQUIRE(thrown([&] { pull_slope(at.theta_x / at.rho_x, at); })
                .find("DegenerateDirection") == 0);

    for (double z : {-0.5, 0.0, 0.5})
        REQUIRE(pull_slope(push_slope(z, at), at) == Catch::Approx(z).margin(1e-10));
    for (double m : {0.1, 0.5})
        REQUIRE(push_slope(pull_slope(m, at), at) == Catch::Approx(m).margin(1e-10));
    REQUIRE(pull_slope(push_slope(0.0, at), at) == Catch::Approx(0.0).margin(1e-15));

    // chart-derived sample: the same algebra holds with the fd determinant
    auto polar = solve_polar_metric(flat_spec(), 3.0, 3001);
    Vec xg{0.9, 1.0, 1.1};
    Vec tg = linspace(0.0, 1.0, 1001);
    auto cm = build_chart(polar, xg, tg, 1e-3);
    ChartSample cs = cm.sample(1, 1000, polar);
    REQUIRE(push_slope(0.0, cs) == Catch::Approx(1 / s2).epsilon(1e-8));
    double jfd = cs.rho_x * cs.theta_t - cs.rho_t * cs.theta_x;
    for (auto& p : pairs) {
        double z1 = p[0], z2 = p[1];
        double d1 = cs.rho_t + z1 * cs.rho_x, d2 = cs.rho_t + z2 * cs.rho_x;
        double lhs = push_slope(z1, cs) - push_slope(z2, cs);
        REQUIRE(lhs == Catch::Approx(-jfd * (z1 - z2) / (d1 * d2)).margin(1e-13));
    }
    for (double z : {-0.5, 0.0, 0.5})
        REQUIRE(pull_slope(push_slope(z, cs), cs) == Catch::Approx(z).margin(1e-10));
}

TEST_CASE("pull denominator stays clear of zero far out", "[chart]") {
    // flat closed forms on x = 1: the pull guard |theta_x - (m/G) rho_x|
    // dominates B/(2G) once t is a few units out
    for (double t : {5.0, 10.0, 20.0}) {
        double rho = std::hypot(1.0, t);
        ChartSample at{t / rho, 1 / sq(rho), 1 / rho, -t / sq(rho)};
        double B = 1.0, G = rho;
        for (double m : {-0.5, 0.0, 0.5})
            REQUIRE(std::abs(at.theta_x - (m / G) * at.rho_x) >= B / (2 * G));
    }
}

TEST_CASE("domain split reproduces the flat anchors", "[chart]") {
    auto polar = solve_polar_metric(flat_spec(), 46.0, 4601);
    auto spec = flat_spec(0.5); // delta = 1/4, mu = 1.6
    Vec xg = two_sided(0.1, 3.6, 36);
    Vec tg = linspace(0.0, 42.0, 841);
    auto cm = build_chart(polar, xg, tg, 2e-3);
    auto ds = build_domain_split(cm, spec, 5.0, 129);

    REQUIRE(ds.mu == Catch::Approx(1.6).margin(1e-15));
    REQUIRE(ds.t0(1.0) == Catch::Approx(refvals::flat_t0_x1).epsilon(1e-14));
    REQUIRE(ds.t0(2.0) == Catch::Approx(refvals::flat_t0_x2).epsilon(1e-14));
    REQUIRE(ds.t0(3.0) == Catch::Approx(refvals::flat_t0_x3).epsilon(1e-14));
    REQUIRE(ds.R1 == Catch::Approx(refvals::flat_R1).epsilon(1e-8));
    REQUIRE(ds.b_plus == Catch::Approx(2.0).margin(1e-9));
    REQUIRE(ds.b_minus == Catch::Approx(-2.0).margin(1e-9));
    REQUIRE(ds.R1 >= 2 * ds.R);
    REQUIRE(ds.c0 == Catch::Approx(ds.R1 / ds.R));

    // curve image anchors straight off the columns (no cross-rho resampling)
    int ir = -1, il = -1;
    for (int i = 0; i < int(xg.size()); ++i) {
        if (std::abs(xg[i] - 3.0) < 1e-9) ir = i;
        if (std::abs(xg[i] + 3.0) < 1e-9) il = i;
    }
    REQUIRE(ir >= 0);
    REQUIRE(il >= 0);
    auto colr = cm.column(ir), coll = cm.column(il);
    REQUIRE(colr.rho(ds.t0(3.0)) == Catch::Approx(refvals::flat_gamma_x3_rho).epsilon(1e-8));
    REQUIRE(colr.theta(ds.t0(3.0))
            == Catch::Approx(refvals::flat_gamma_x3_theta).epsilon(1e-8));
    REQUIRE(coll.theta(ds.t0(3.0))
            == Catch::Approx(refvals::flat_gamma_xm3_theta).epsilon(1e-8));

    // resampled boundary curves agree with the anchors to interpolation error
    REQUIRE(ds.rho.front() == ds.R1);
    REQUIRE(ds.theta2_of_rho(refvals::flat_gamma_x3_rho)
            == Catch::Approx(refvals::flat_gamma_x3_theta).epsilon(1e-4));
    REQUIRE(ds.theta1_of_rho(refvals::flat_gamma_x3_rho)
            == Catch::Approx(refvals::flat_gamma_xm3_theta).epsilon(1e-4));
    for (double th : ds.theta1) REQUIRE((th > M_PI / 2 && th < M_PI));
    for (double th : ds.theta2) REQUIRE((th > 0 && th < M_PI / 2));

    // rho |theta_i'| bounded and stable under refinement
    REQUIRE(ds.max_rho_dtheta1 < 1.0);
    REQUIRE(ds.max_rho_dtheta2 < 1.0);
    Vec xg2 = two_sided(0.05, 3.6, 72);
    Vec tg2 = linspace(0.0, 42.0, 1681);
    auto cm2 = build_chart(polar, xg2, tg2, 2e-3);
    auto ds2 = build_domain_split(cm2, spec, 5.0, 129);
    REQUIRE(ds.max_rho_dtheta1
            == Catch::Approx(ds2.max_rho_dtheta1).epsilon(0.05));
    REQUIRE(ds.max_rho_dtheta2
            == Catch::Approx(ds2.max_rho_dtheta2).epsilon(0.05));
}

TEST_CASE("domain split flags structural breaks", "[chart]") {
    auto spec = flat_spec(0.5);
    auto make_fake = [&](Vec targets_right, Vec targets_left) {
        // columns at +-{1, 2, 2.5, 3}; two t nodes; linear columns tuned so
        // the curve sample rho(x, t0(x)) hits the requested target
        Vec xs{-3.0, -2.5, -2.0, -1.0, 1.0, 2.0, 2.5, 3.0};
        Vec targets(8);
        for (int k = 0; k < 4; ++k) targets[k] = targets_left[3 - k];
        for (int k = 0; k < 4; ++k) targets[4 + k] = targets_right[k];
        ChartMap cmf;
        cmf.x = xs;
        cmf.t = {0.0, 8.0};
        cmf.xi.resize(8);
        cmf.rho = Field2(8, 2);
        cmf.theta = Field2(8, 2);
        cmf.tanh_phi = Field2(8, 2);
        cmf.sech_phi = Field2(8, 2, 1.0);
        cmf.jacobian = Field2(8, 2);
        double mu = 1.6, R = 1.0;
        for (int i = 0; i < 8; ++i) {
            double ax = std::abs(xs[i]);
            double t0 = R * std::pow(1 + ax * ax, 0.5 * mu);
            cmf.xi[i] = xs[i] > 0 ? 1.0 : -1.0;
            cmf.rho(i, 0) = ax;
            cmf.rho(i, 1) = ax + (targets[i] - ax) * 8.0 / t0;
            double th = xs[i] > 0 ? 0.3 + 0.01 * ax : 2.8 - 0.01 * ax;
            cmf.theta(i, 0) = th;
            cmf.theta(i, 1) = th;
        }
        return cmf;
    };

    // beyond b_plus the image dips back in rho
    auto bad = make_fake({5.0, 10.0, 12.0, 11.0}, {5.0, 10.0, 12.0, 14.0});
    auto msg = thrown([&] { build_domain_split(bad, spec, 1.0); });
    REQUIRE(msg.find("Structural") == 0);
    REQUIRE(msg.find("monotone") != std::string::npos);

    // the curve never exits rho <= R1 at all
    auto stuck = make_fake({5.0, 9.9, 9.0, 9.3}, {5.0, 9.95, 9.2, 9.4});
    msg = thrown([&] { build_domain_split(stuck, spec, 1.0); });
    REQUIRE(msg.find("Structural") == 0);
    REQUIRE(msg.find("exits") != std::string::npos);
}

TEST_CASE("jacobian field is deferred and positive once filled", "[chart]") {
    auto spec = make_family("constant");
    auto polar = solve_polar_metric(spec, 3.2, 3201);
    Vec xg{-1.1, -1.0, -0.9, 0.9, 1.0, 1.1};
    Vec tg = linspace(0.0, 2.0, 401);
    auto cm = build_chart(polar, xg, tg, 2e-3);
    REQUIRE_FALSE(cm.has_jacobian);
    REQUIRE(std::isnan(cm.jacobian(0, 0)));

    auto geo = solve_geodesic_metric([](double, double) { return 1.0; }, xg, tg);
    cm.fill_jacobian(geo, polar);
    REQUIRE(cm.has_jacobian);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 401; ++j) REQUIRE(cm.jacobian(i, j) > 0);

    // B/G against closed forms at (x, t) = (1, 2)
    double rho = refvals::hyper_x1[2].rho;
    REQUIRE(cm.jacobian(4, 400)
            == Catch::Approx(std::cosh(2.0) / std::sinh(rho)).epsilon(1e-6));

    auto r = verify_chart(cm, polar, geo);
    REQUIRE(r.max_jacobian < 0.05);
    REQUIRE(r.min_jacobian_fd > 0);
}
