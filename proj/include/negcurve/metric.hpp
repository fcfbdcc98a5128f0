#ifndef NEGCURVE_METRIC_HPP
#define NEGCURVE_METRIC_HPP

#include <algorithm>
#include <cmath>
#include <functional>

#include "negcurve/common.hpp"
#include "negcurve/curvature.hpp"
#include "negcurve/quadrature.hpp"

namespace negcurve {

// One RK4 step of the Jacobi system y'' = k2(s) y for y = (G, G').
template <class K2>
inline void metric_rk4_step(double& G, double& Gp, double s, double h, K2&& k2) {
    double k2a = k2(s), k2m = k2(s + h / 2), k2b = k2(s + h);
    double g1 = Gp, p1 = k2a * G;
    double g2 = Gp + h / 2 * p1, p2 = k2m * (G + h / 2 * g1);
    double g3 = Gp + h / 2 * p2, p3 = k2m * (G + h / 2 * g2);
    double g4 = Gp + h * p3, p4 = k2b * (G + h * g3);
    G += h / 6 * (g1 + 2 * g2 + 2 * g3 + g4);
    Gp += h / 6 * (p1 + 2 * p2 + 2 * p3 + p4);
}

// Advance (G, G') from s0 to s1 with steps no longer than the cell itself,
// splitting at the listed branch points so a narrow bridge (the log_power
// family switches on over 1e-7) is never stepped across blindly.
template <class K2>
inline void metric_advance(double& G, double& Gp, double s0, double s1, K2&& k2,
                           const Vec& breaks) {
    double cell = s1 - s0;
    if (cell <= 0) return;
    Vec cuts{s0};
    for (double b : breaks)
        if (b > s0 + 1e-300 && b < s1) cuts.push_back(b);
    cuts.push_back(s1);
    std::sort(cuts.begin(), cuts.end());
    for (size_t i = 0; i + 1 < cuts.size(); ++i) {
        double a = cuts[i], b = cuts[i + 1], len = b - a;
        int n = std::max(1, int(std::ceil(len / cell - 1e-12)));
        if (len < cell / 4) n = std::max(n, 2);
        double h = len / n;
        for (int j = 0; j < n; ++j) metric_rk4_step(G, Gp, a + j * h, h, k2);
    }
}

// Polar-chart metric g = G^2 dtheta^2 + drho^2 on a theta x rho grid.
// G(theta,0) = 0, dG/drho(theta,0) = 1; rows are theta rays.
struct PolarMetric {
    Vec theta;
    Vec rho;
    Field2 G, Gp;
    bool radial = true;
};

inline PolarMetric solve_polar_metric(const CurvatureSpec& spec, const Vec& rho_grid,
                                      int n_theta = 0) {
    if (rho_grid.size() < 2 || rho_grid.front() != 0.0)
        fail("InvalidConfig", "polar metric grid must start at rho = 0");
    PolarMetric pm;
    pm.radial = spec.osc.theta_free;
    int nt = pm.radial ? 1 : std::max(8, n_theta);
    pm.theta.resize(nt);
    for (int i = 0; i < nt; ++i) pm.theta[i] = 2 * M_PI * i / nt;
    pm.rho = rho_grid;
    int nr = int(rho_grid.size());
    pm.G = Field2(nt, nr);
    pm.Gp = Field2(nt, nr);
    for (int i = 0; i < nt; ++i) {
        double th = pm.theta[i];
        auto k2 = [&](double r) { return sq(spec.k(th, r)); };
        double G = 0, Gp = 1;
        pm.G(i, 0) = G;
        pm.Gp(i, 0) = Gp;
        for (int j = 1; j < nr; ++j) {
            metric_advance(G, Gp, rho_grid[j - 1], rho_grid[j], k2, spec.breakpoints);
            pm.G(i, j) = G;
            pm.Gp(i, j) = Gp;
        }
    }
    return pm;
}

inline PolarMetric solve_polar_metric(const CurvatureSpec& spec, double rho_max,
                                      int n_rho, int n_theta = 0) {
    if (n_rho < 8) fail("InvalidConfig", "polar metric needs at least 8 nodes");
    return solve_polar_metric(spec, linspace(0.0, rho_max, n_rho), n_theta);
}

// Geodesic-chart metric g = B^2 dx^2 + dt^2 marched along t fibers.
// B(x,0) = 1, dB/dt(x,0) = 0; rows are x fibers. kappa2(x,t) is the squared
// curvature magnitude pulled back to the geodesic chart.
struct GeodesicMetric {
    Vec x;
    Vec t;
    Field2 B, Bt;
};

inline GeodesicMetric solve_geodesic_metric(
    const std::function<double(double, double)>& kappa2, const Vec& x_grid,
    const Vec& t_grid) {
    if (t_grid.empty() || t_grid.front() != 0.0)
        fail("InvalidConfig", "geodesic metric grid must start at t = 0");
    GeodesicMetric gm;
    gm.x = x_grid;
    gm.t = t_grid;
    int nx = int(x_grid.size()), nt = int(t_grid.size());
    gm.B = Field2(nx, nt);
    gm.Bt = Field2(nx, nt);
    for (int i = 0; i < nx; ++i) {
        auto k2 = [&](double t) { return kappa2(x_grid[i], t); };
        double B = 1, Bt = 0;
        gm.B(i, 0) = B;
        gm.Bt(i, 0) = Bt;
        for (int j = 1; j < nt; ++j) {
            metric_advance(B, Bt, t_grid[j - 1], t_grid[j], k2, {});
            gm.B(i, j) = B;
            gm.Bt(i, j) = Bt;
        }
    }
    return gm;
}

// Nonzero Christoffel symbols of g = G^2 dtheta^2 + drho^2 (indices 1=theta,
// 2=rho): G111 = dtheta log G, G211 = -G dG, G112 = drho log G, and the
// geodesic twin with (x,t,B) in place of (theta,rho,G).
struct ChristoffelField {
    Field2 g111, g211, g112;
};

inline ChristoffelField polar_christoffels(const PolarMetric& pm) {
    int nt = int(pm.theta.size()), nr = int(pm.rho.size());
    ChristoffelField cf{Field2(nt, nr), Field2(nt, nr), Field2(nt, nr)};
    for (int i = 0; i < nt; ++i) {
        for (int j = 0; j < nr; ++j) {
            double G = pm.G(i, j), Gp = pm.Gp(i, j);
            cf.g211(i, j) = -G * Gp;
            cf.g112(i, j) = (j == 0) ? kInf : Gp / G;
            if (nt == 1) {
                cf.g111(i, j) = 0;
            } else {
                int ip = (i + 1) % nt, im = (i + nt - 1) % nt;
                double dth = 4 * M_PI / nt;
                cf.g111(i, j) = (j == 0) ? 0 : (std::log(pm.G(ip, j)) - std::log(pm.G(im, j))) / dth;
            }
        }
    }
    return cf;
}

inline ChristoffelField geodesic_christoffels(const GeodesicMetric& gm) {
    int nx = int(gm.x.size()), nt = int(gm.t.size());
    ChristoffelField cf{Field2(nx, nt), Field2(nx, nt), Field2(nx, nt)};
    Vec logB(nx);
    for (int j = 0; j < nt; ++j) {
        for (int i = 0; i < nx; ++i) logB[i] = std::log(gm.B(i, j));
        Vec dlogB = diff_centered(gm.x, logB);
        for (int i = 0; i < nx; ++i) {
            cf.g111(i, j) = dlogB[i];
            cf.g211(i, j) = -gm.B(i, j) * gm.Bt(i, j);
            cf.g112(i, j) = gm.Bt(i, j) / gm.B(i, j);
        }
    }
    return cf;
}

// Comparison-theorem envelope of the polar metric, plus the two convergence
// diagnostics that certify the decay hypotheses numerically:
//   1 <= dG <= E and rho <= G <= rho E with E = exp max_theta int k^2 rho,
//   dG/G >= 1/rho, and the radial excess integral int max_theta (dG/G - 1/rho)
//   converging (relative change across the last doubling).
struct MetricBoundsReport {
    double bound_exp = 0;          // E above
    double min_Gp_margin = 0;      // min(dG - 1)
    double max_Gp_margin = 0;      // min(E - dG)
    double min_G_margin = 0;       // min(G - rho), rho > 0
    double max_G_margin = 0;       // min(rho E - G)
    double min_logderiv_margin = 0; // min(dG/G - 1/rho)
    double bv_integral = 0;        // int_1^rho_max max_theta (dG/G - 1/rho)
    double bv_last_doubling = 0;   // relative change over [rho_max/2, rho_max]
    double j0_over_2pi = 0;        // radial identity: G'(inf) - 1
    double j0_quadrature = 0;      // same via int k^2 G drho
    bool ok = true;
};

inline MetricBoundsReport verify_metric_bounds(const CurvatureSpec& spec,
                                               const PolarMetric& pm) {
    MetricBoundsReport r;
    int nt = int(pm.theta.size()), nr = int(pm.rho.size());

    auto maxtheta_k2rho = [&](double rho) {
        double m = 0;
        for (int i = 0; i < nt; ++i) m = std::max(m, sq(spec.k(pm.theta[i], rho)));
        return m * rho;
    };
    double head = adaptive_simpson(maxtheta_k2rho, 0.0, 2.0, 1e-10);
    auto tail = integrate_tail_log_dyadic(maxtheta_k2rho, 2.0, 1e-9);
    r.bound_exp = tail.diverged ? kInf : std::exp(head + tail.value);

    r.min_Gp_margin = r.max_Gp_margin = kInf;
    r.min_G_margin = r.max_G_margin = kInf;
    r.min_logderiv_margin = kInf;
    for (int i = 0; i < nt; ++i) {
        for (int j = 1; j < nr; ++j) {
            double rho = pm.rho[j], G = pm.G(i, j), Gp = pm.Gp(i, j);
            r.min_Gp_margin = std::min(r.min_Gp_margin, Gp - 1);
            r.max_Gp_margin = std::min(r.max_Gp_margin, r.bound_exp - Gp);
            r.min_G_margin = std::min(r.min_G_margin, G - rho);
            r.max_G_margin = std::min(r.max_G_margin, rho * r.bound_exp - G);
            r.min_logderiv_margin = std::min(r.min_logderiv_margin, Gp / G - 1 / rho);
        }
    }

    // Excess log-derivative integral on [1, rho_max] and its last doubling.
    {
        Vec xs, ys;
        for (int j = 0; j < nr; ++j) {
            double rho = pm.rho[j];
            if (rho < 1.0) continue;
            double m = 0;
            for (int i = 0; i < nt; ++i)
                m = std::max(m, std::abs(pm.Gp(i, j) / pm.G(i, j) - 1 / rho));
            xs.push_back(rho);
            ys.push_back(m);
        }
        r.bv_integral = trapz(xs, ys);
        double half = pm.rho.back() / 2, upto_half = 0;
        Vec xs2, ys2;
        for (size_t j = 0; j < xs.size(); ++j)
            if (xs[j] <= half) {
                xs2.push_back(xs[j]);
                ys2.push_back(ys[j]);
            }
        upto_half = trapz(xs2, ys2);
        r.bv_last_doubling =
            std::abs(r.bv_integral - upto_half) / std::max(r.bv_integral, 1e-300);
    }

    if (pm.radial) {
        r.j0_over_2pi = pm.Gp(0, nr - 1) - 1;
        // Cells holding a kstar branch point get real quadrature (with G
        // linearized across the cell); plain trapz would smear the narrow
        // switch-on bridge over the whole cell.
        double total = 0;
        for (int j = 0; j + 1 < nr; ++j) {
            double a = pm.rho[j], b = pm.rho[j + 1];
            double Ga = pm.G(0, j), Gb = pm.G(0, j + 1);
            bool has_break = false;
            for (double bp : spec.breakpoints) has_break |= (bp > a && bp < b);
            if (has_break) {
                auto f = [&](double rho) {
                    double G = Ga + (Gb - Ga) * (rho - a) / (b - a);
                    return sq(spec.k(0.0, rho)) * G;
                };
                for (double lo = a;;) {
                    double hi = b;
                    for (double bp : spec.breakpoints)
                        if (bp > lo && bp < hi) hi = bp;
                    total += adaptive_simpson(f, lo, hi, 1e-12);
                    if (hi == b) break;
                    lo = hi;
                }
            } else {
                total += 0.5 * (b - a) *
                         (sq(spec.k(0.0, a)) * Ga + sq(spec.k(0.0, b)) * Gb);
            }
        }
        r.j0_quadrature = total;
    }

    r.ok = r.min_Gp_margin > -1e-9 && r.max_Gp_margin > -1e-9 &&
           r.min_G_margin > -1e-9 && r.max_G_margin > -1e-9 &&
           r.min_logderiv_margin > -1e-9 && std::isfinite(r.bv_integral);
    return r;
}

} // namespace negcurve

#endif
