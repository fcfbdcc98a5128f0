#ifndef NEGCURVE_CHART_HPP
#define NEGCURVE_CHART_HPP

#include <algorithm>
#include <cmath>
#include <string>

#include "negcurve/common.hpp"
#include "negcurve/curvature.hpp"
#include "negcurve/metric.hpp"

namespace negcurve {

// Pointwise (G, dG/drho) lookup on a solved polar metric. Within a ray the
// pair is read off one cubic Hermite built from the stored nodes, so the
// value and its derivative stay consistent; across rays a periodic linear
// blend is enough (theta dependence of the admissible families is mild).
struct PolarEval {
    const PolarMetric* pm;
    explicit PolarEval(const PolarMetric& m) : pm(&m) {}

    struct GG {
        double G, Gp;
    };

    GG ray(int i, double rho) const {
        const Vec& r = pm->rho;
        if (rho < r.front() - 1e-12 || rho > r.back() + 1e-9)
            fail("PolarRange", "polar lookup out of range: rho = " + std::to_string(rho));
        rho = std::clamp(rho, r.front(), r.back());
        size_t j = lower_index(r, rho);
        double h = r[j + 1] - r[j], u = (rho - r[j]) / h;
        double g0 = pm->G(i, int(j)), g1 = pm->G(i, int(j) + 1);
        double d0 = pm->Gp(i, int(j)) * h, d1 = pm->Gp(i, int(j) + 1) * h;
        double u2 = u * u, u3 = u2 * u;
        double G = (2 * u3 - 3 * u2 + 1) * g0 + (u3 - 2 * u2 + u) * d0
                   + (3 * u2 - 2 * u3) * g1 + (u3 - u2) * d1;
        double Gp = ((6 * u2 - 6 * u) * g0 + (3 * u2 - 4 * u + 1) * d0
                     + (6 * u - 6 * u2) * g1 + (3 * u2 - 2 * u) * d1) / h;
        return {G, Gp};
    }

    GG at(double theta, double rho) const {
        int nt = int(pm->theta.size());
        if (nt == 1) return ray(0, rho);
        double w = theta / (2 * M_PI) * nt;
        double m = w - nt * std::floor(w / nt);
        int i0 = std::min(int(m), nt - 1);
        double u = m - i0;
        int i1 = (i0 + 1) % nt;
        GG a = ray(i0, rho), b = ray(i1, rho);
        return {a.G + u * (b.G - a.G), a.Gp + u * (b.Gp - a.Gp)};
    }
};

// Partials of the transform at one grid node: t-derivatives are analytic
// (the fiber ODE right-hand side), x-derivatives come from column
// differences that never straddle the excluded x = 0 line.
struct ChartSample {
    double rho_t, theta_t, rho_x, theta_x;
};

// Monotone-cubic views of one column, for evaluating the transform between
// t nodes (the domain-split curve rarely hits a node).
struct ColumnCurve {
    Pchip rho, theta, tanh_phi, sech_phi;
};

// Transform F from the geodesic chart (x, t) to the polar chart (theta, rho),
// sampled on a grid. The angle Phi never materializes: only tanh Phi and
// sech Phi are stored, since e^Phi grows like (t + |x|)/|x| and overflows for
// small |x| long before the transform itself degenerates.
struct ChartMap {
    Vec x, t;
    Vec xi;
    Field2 rho, theta, tanh_phi, sech_phi;
    Field2 jacobian;
    bool has_jacobian = false;

    double sinh_phi(int i, int j) const { return tanh_phi(i, j) / sech_phi(i, j); }
    double cosh_phi(int i, int j) const { return 1.0 / sech_phi(i, j); }

    ColumnCurve column(int i) const {
        int nt = int(t.size());
        Vec r(nt), th(nt), ta(nt), sc(nt);
        for (int j = 0; j < nt; ++j) {
            r[j] = rho(i, j);
            th[j] = theta(i, j);
            ta[j] = tanh_phi(i, j);
            sc[j] = sech_phi(i, j);
        }
        return {Pchip(t, r), Pchip(t, th), Pchip(t, ta), Pchip(t, sc)};
    }

    ChartSample sample(int i, int j, const PolarMetric& polar) const {
        ChartSample s;
        s.rho_t = tanh_phi(i, j);
        double G = PolarEval(polar).at(theta(i, j), rho(i, j)).G;
        s.theta_t = xi[i] * sech_phi(i, j) / G;
        int nx = int(x.size());
        int il = (i > 0 && x[i - 1] * x[i] > 0) ? i - 1 : i;
        int ir = (i + 1 < nx && x[i + 1] * x[i] > 0) ? i + 1 : i;
        if (il == ir)
            fail("InvalidConfig", "column has no same-sign neighbor for x-derivatives");
        double dx = x[ir] - x[il];
        s.rho_x = (rho(ir, j) - rho(il, j)) / dx;
        s.theta_x = (theta(ir, j) - theta(il, j)) / dx;
        return s;
    }

    // Deferred: B/G needs the geodesic metric, which itself needs this chart
    // to pull the curvature back to (x, t).
    void fill_jacobian(const GeodesicMetric& geo, const PolarMetric& polar) {
        if (geo.x != x || geo.t != t)
            fail("InvalidConfig", "geodesic metric grid does not match the chart grid");
        PolarEval pe(polar);
        for (int i = 0; i < int(x.size()); ++i)
            for (int j = 0; j < int(t.size()); ++j)
                jacobian(i, j) = geo.B(i, j) / pe.at(theta(i, j), rho(i, j)).G;
        has_jacobian = true;
    }
};

namespace chart_detail {

struct FiberState {
    double rho, th, tau, sig;
};

// dr/dt = tanh Phi, dtheta/dt = xi sech Phi / G, dPhi/dt = d log G / drho,
// rewritten for the (tanh, sech) pair. The pair is renormalized after every
// step; tanh^2 + sech^2 = 1 is an exact integral of the system, so the
// projection only removes roundoff.
inline FiberState fiber_rhs(const PolarEval& pe, double xi, const FiberState& s) {
    PolarEval::GG gg = pe.at(s.th, s.rho);
    double lg = gg.Gp / gg.G;
    return {s.tau, xi * s.sig / gg.G, (1 - s.tau * s.tau) * lg, -s.tau * s.sig * lg};
}

inline FiberState fiber_step(const PolarEval& pe, double xi, FiberState s, double h) {
    auto adv = [](const FiberState& a, const FiberState& d, double f) {
        return FiberState{a.rho + f * d.rho, a.th + f * d.th, a.tau + f * d.tau,
                          a.sig + f * d.sig};
    };
    FiberState k1 = fiber_rhs(pe, xi, s);
    FiberState k2 = fiber_rhs(pe, xi, adv(s, k1, h / 2));
    FiberState k3 = fiber_rhs(pe, xi, adv(s, k2, h / 2));
    FiberState k4 = fiber_rhs(pe, xi, adv(s, k3, h));
    s.rho += h / 6 * (k1.rho + 2 * k2.rho + 2 * k3.rho + k4.rho);
    s.th += h / 6 * (k1.th + 2 * k2.th + 2 * k3.th + k4.th);
    s.tau += h / 6 * (k1.tau + 2 * k2.tau + 2 * k3.tau + k4.tau);
    s.sig += h / 6 * (k1.sig + 2 * k2.sig + 2 * k3.sig + k4.sig);
    double n = std::hypot(s.tau, s.sig);
    s.tau /= n;
    s.sig /= n;
    return s;
}

} // namespace chart_detail

inline ChartMap build_chart(const PolarMetric& polar, const Vec& x_grid,
                            const Vec& t_grid, double step, double x_floor = 1e-3) {
    if (step <= 0 || x_floor <= 0) fail("InvalidConfig", "step and x floor must be positive");
    if (t_grid.empty() || t_grid.front() != 0.0)
        fail("InvalidConfig", "chart t grid must start at t = 0");
    double xmax = 0;
    for (double v : x_grid) {
        if (std::abs(v) < x_floor)
            fail("InvalidConfig", "|x| = " + std::to_string(std::abs(v))
                                      + " is below the chart floor");
        xmax = std::max(xmax, std::abs(v));
    }
    if (polar.rho.back() + 1e-9 < t_grid.back() + xmax)
        fail("PolarRange", "polar metric must cover rho up to t_max + |x|_max");

    int nx = int(x_grid.size()), nt = int(t_grid.size());
    ChartMap cm;
    cm.x = x_grid;
    cm.t = t_grid;
    cm.xi.resize(nx);
    cm.rho = Field2(nx, nt);
    cm.theta = Field2(nx, nt);
    cm.tanh_phi = Field2(nx, nt);
    cm.sech_phi = Field2(nx, nt);
    cm.jacobian = Field2(nx, nt, std::numeric_limits<double>::quiet_NaN());

    PolarEval pe(polar);
    for (int i = 0; i < nx; ++i) {
        double xv = x_grid[i];
        double xi = (xv > 0) ? 1.0 : -1.0;
        cm.xi[i] = xi;
        chart_detail::FiberState s{std::abs(xv), xv > 0 ? 0.0 : M_PI, 0.0, 1.0};
        cm.rho(i, 0) = s.rho;
        cm.theta(i, 0) = s.th;
        cm.tanh_phi(i, 0) = s.tau;
        cm.sech_phi(i, 0) = s.sig;
        for (int j = 1; j < nt; ++j) {
            double len = t_grid[j] - t_grid[j - 1];
            int n = std::max(1, int(std::ceil(len / step - 1e-12)));
            double h = len / n;
            for (int m = 0; m < n; ++m) s = chart_detail::fiber_step(pe, xi, s, h);
            cm.rho(i, j) = s.rho;
            cm.theta(i, j) = s.th;
            cm.tanh_phi(i, j) = s.tau;
            cm.sech_phi(i, j) = s.sig;
        }
    }
    return cm;
}

// Residuals of the metric-compatibility relations. With theta(x,0) = 0 on the
// right, pi on the left, and xi = sign(x), the transform determinant is
// rho_x theta_t - rho_t theta_x = +B/G (it equals 1/G at t = 0 and never
// vanishes while G > 0), so that expression is the one compared against B/G.
struct ChartResiduals {
    double max_encoding = 0;
    double max_unit_speed = 0;
    double max_x_metric = 0;
    double max_orthogonality = 0;
    double max_jacobian = 0;
    double min_jacobian_fd = kInf;
};

inline ChartResiduals verify_chart(const ChartMap& chart, const PolarMetric& polar,
                                   const GeodesicMetric& geo) {
    if (geo.x != chart.x || geo.t != chart.t)
        fail("InvalidConfig", "geodesic metric grid does not match the chart grid");
    ChartResiduals r;
    PolarEval pe(polar);
    int nx = int(chart.x.size()), nt = int(chart.t.size());
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j < nt; ++j) {
            ChartSample s = chart.sample(i, j, polar);
            double G = pe.at(chart.theta(i, j), chart.rho(i, j)).G;
            double B = geo.B(i, j);
            double tau = chart.tanh_phi(i, j), sig = chart.sech_phi(i, j);
            r.max_encoding = std::max(r.max_encoding, std::abs(tau * tau + sig * sig - 1));
            r.max_unit_speed = std::max(
                r.max_unit_speed, std::abs(sq(s.rho_t) + sq(G * s.theta_t) - 1));
            r.max_x_metric = std::max(
                r.max_x_metric, std::abs(sq(s.rho_x) + sq(G * s.theta_x) - sq(B)));
            r.max_orthogonality = std::max(
                r.max_orthogonality,
                std::abs(s.rho_t * s.rho_x + sq(G) * s.theta_t * s.theta_x));
            double jfd = s.rho_x * s.theta_t - s.rho_t * s.theta_x;
            r.max_jacobian = std::max(r.max_jacobian, std::abs(jfd - B / G));
            r.min_jacobian_fd = std::min(r.min_jacobian_fd, jfd);
        }
    }
    return r;
}

// Slope transport between the charts. The image of the direction
// dt + zeta dx has polar slope dtheta/drho as below. With the orientation
// fixed above the map is order reversing:
//   push(z1) - push(z2) = -B (z1 - z2) / (G (rho_t + z1 rho_x)(rho_t + z2 rho_x)),
// so an ordered slope pair swaps places on the way through.
inline double push_slope(double zeta, const ChartSample& at) {
    double den = at.rho_t + zeta * at.rho_x;
    if (std::abs(den) < 1e-8)
        fail("DegenerateDirection", "direction is tangent to a rho level set");
    return (at.theta_t + zeta * at.theta_x) / den;
}

inline double pull_slope(double zeta_polar, const ChartSample& at) {
    double den = at.theta_x - zeta_polar * at.rho_x;
    if (std::abs(den) < 1e-8)
        fail("DegenerateDirection", "direction is tangent to a rho level set");
    return (-at.theta_t + zeta_polar * at.rho_t) / den;
}

// Split of t >= 0 into the inner region {t <= t0(x), rho <= R1} and its
// complement, with the outer boundary tabulated as two curves theta_i(rho):
// theta1 the image of the x < b_minus branch of t = t0(x), theta2 the image
// of x > b_plus.
struct DomainSplit {
    double R = 0, R1 = 0, mu = 0, c0 = 0;
    double b_minus = 0, b_plus = 0;
    Vec rho;
    Vec theta1, theta2;
    Pchip theta1_of_rho, theta2_of_rho;
    double max_rho_dtheta1 = 0, max_rho_dtheta2 = 0;

    double t0(double x) const { return R * std::pow(1 + x * x, 0.5 * mu); }
    double t0_deriv(double x) const {
        return mu * R * x * std::pow(1 + x * x, 0.5 * mu - 1);
    }
};

namespace chart_detail {

// First crossing of rho(x, t0(x)) = R1 walking away from the maximizing
// column; columns are one side of the grid, curve values interpolate across
// them. dir = +1 walks right, -1 walks left.
inline double curve_crossing(const Vec& xs, const Vec& rhos, double R1, int from,
                             int dir) {
    Pchip curve(xs, rhos);
    auto f = [&](double x) { return curve(x) - R1; };
    int n = int(xs.size());
    for (int k = from; k >= 0 && k < n; k += dir) {
        if (std::abs(rhos[k] - R1) <= 1e-9 * R1) return xs[k];
        if (rhos[k] > R1) {
            double lo = xs[k - dir], hi = xs[k];
            for (int it = 0; it < 200 && std::abs(hi - lo) > 1e-14 * (1 + std::abs(hi));
                 ++it) {
                double mid = 0.5 * (lo + hi);
                if ((f(mid) > 0) == (f(hi) > 0))
                    hi = mid;
                else
                    lo = mid;
            }
            return 0.5 * (lo + hi);
        }
    }
    fail("Structural", "t0 curve never exits rho <= R1 on the sampled range");
}

} // namespace chart_detail

inline DomainSplit build_domain_split(const ChartMap& chart, const CurvatureSpec& spec,
                                      double R, int n_res = 0) {
    if (R < 1) fail("InvalidConfig", "split radius must satisfy R >= 1");
    double delta = spec.delta();
    if (3 * delta >= 2) fail("InvalidConfig", "domain split needs 3 delta < 2");
    DomainSplit ds;
    ds.R = R;
    ds.mu = 2.0 / (2.0 - 3.0 * delta);

    int nx = int(chart.x.size());
    for (int i = 0; i < nx; ++i)
        if (ds.t0(chart.x[i]) > chart.t.back() + 1e-12)
            fail("InvalidConfig", "chart t range does not cover the t0 curve");

    Vec crho(nx), cth(nx);
    for (int i = 0; i < nx; ++i) {
        ColumnCurve col = chart.column(i);
        double ti = ds.t0(chart.x[i]);
        crho[i] = col.rho(ti);
        cth[i] = col.theta(ti);
    }

    int best = -1;
    for (int i = 0; i < nx; ++i) {
        if (std::abs(chart.x[i]) > 2 + 1e-12) continue;
        if (best < 0 || crho[i] > crho[best]) best = i;
    }
    if (best < 0) fail("InvalidConfig", "no chart columns with |x| <= 2");
    ds.R1 = crho[best];
    ds.c0 = ds.R1 / R;

    // Side split; both branches are needed for the outer boundary.
    Vec xr, rr, tr, xl, rl, tl;
    for (int i = 0; i < nx; ++i) {
        if (chart.x[i] > 0) {
            xr.push_back(chart.x[i]);
            rr.push_back(crho[i]);
            tr.push_back(cth[i]);
        } else {
            xl.push_back(chart.x[i]);
            rl.push_back(crho[i]);
            tl.push_back(cth[i]);
        }
    }
    if (xr.size() < 3 || xl.size() < 3)
        fail("InvalidConfig", "domain split needs columns on both sides of x = 0");

    int kr = -1, kl = -1;
    for (size_t k = 0; k < xr.size(); ++k)
        if (xr[k] <= 2 + 1e-12) kr = int(k);
    for (size_t k = 0; k < xl.size(); ++k)
        if (kl < 0 && xl[k] >= -2 - 1e-12) kl = int(k);
    if (kr < 0 || kl < 0) fail("InvalidConfig", "domain split needs columns in |x| <= 2");
    ds.b_plus = chart_detail::curve_crossing(xr, rr, ds.R1, kr, +1);
    ds.b_minus = chart_detail::curve_crossing(xl, rl, ds.R1, kl, -1);

    // Tabulate each branch outward from its crossing; the image must move
    // strictly out in rho or theta_i(rho) is not a function.
    auto branch = [&](const Vec& xs, const Vec& rhos, const Vec& ths, double b,
                      int dir, const char* name) {
        Pchip cth_i(xs, ths);
        Vec br{ds.R1}, bt{cth_i(b)};
        int n = int(xs.size());
        int k0 = dir > 0 ? 0 : n - 1;
        for (int k = k0; k >= 0 && k < n; k += dir) {
            if (dir > 0 ? xs[k] <= b + 1e-12 : xs[k] >= b - 1e-12) continue;
            if (rhos[k] <= br.back())
                fail("Structural",
                     std::string("curve image not monotone in rho beyond ") + name);
            br.push_back(rhos[k]);
            bt.push_back(ths[k]);
        }
        if (br.size() < 3)
            fail("Structural", std::string("too few curve samples beyond ") + name);
        return Pchip(br, bt);
    };
    Pchip branch2 = branch(xr, rr, tr, ds.b_plus, +1, "b_plus");
    Pchip branch1 = branch(xl, rl, tl, ds.b_minus, -1, "b_minus");

    double rho_hi = std::min(branch1.x.back(), branch2.x.back());
    if (rho_hi <= ds.R1 * (1 + 1e-12))
        fail("Structural", "boundary branches do not extend past R1");
    int n = n_res > 0 ? n_res
                      : std::max<int>(65, 2 * std::max(branch1.x.size(), branch2.x.size()) + 1);
    ds.rho = linspace(ds.R1, rho_hi, n);
    ds.theta1.resize(n);
    ds.theta2.resize(n);
    for (int k = 0; k < n; ++k) {
        ds.theta1[k] = branch1(ds.rho[k]);
        ds.theta2[k] = branch2(ds.rho[k]);
    }
    ds.theta1_of_rho = Pchip(ds.rho, ds.theta1);
    ds.theta2_of_rho = Pchip(ds.rho, ds.theta2);
    for (int k = 0; k < n; ++k) {
        ds.max_rho_dtheta1 = std::max(ds.max_rho_dtheta1,
                                      ds.rho[k] * std::abs(ds.theta1_of_rho.deriv(ds.rho[k])));
        ds.max_rho_dtheta2 = std::max(ds.max_rho_dtheta2,
                                      ds.rho[k] * std::abs(ds.theta2_of_rho.deriv(ds.rho[k])));
    }
    return ds;
}

} // namespace negcurve

#endif
