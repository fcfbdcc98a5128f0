#ifndef NEGCURVE_OUTER_SOLVER_HPP
#define NEGCURVE_OUTER_SOLVER_HPP

// Outer region march. Past the handoff arc the two slope invariants ride a
// quasilinear hyperbolic pair on a wedge that narrows between two space-like
// curves theta_1(rho) and theta_2(rho). The march works in the scaled
// invariants (u, v): the raw slopes are weighted by G^(alpha-1) k^-beta so
// that each curvature monotonicity regime sees decaying data. A fixed
// computational coordinate sigma in [0,1] tracks the moving wedge through
// theta(sigma, rho) = theta_1 + sigma (theta_2 - theta_1), and the advective
// speeds carry the mesh-velocity correction. u + v and u - v are the
// characteristic combinations; u + v is advected at (1/2) G^-alpha k^beta
// (u - v) and u - v at (1/2) G^-alpha k^beta (u + v), so strict
// hyperbolicity is exactly v > 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "chart.hpp"
#include "common.hpp"
#include "curvature.hpp"
#include "inner_solver.hpp"
#include "metric.hpp"
#include "quadrature.hpp"

namespace negcurve {

// Pointwise geometry snapshot consumed by the source terms. All derivative
// entries are logarithmic except Gp, which is the plain radial derivative.
struct GeomSample {
    double G = 1, Gp = 0;
    double k = 1;
    double dlogk_rho = 0;
    double dlogk_theta = 0;
    double dlogG_theta = 0;
};

// Geometry feed for the outer march. G comes from the polar metric rays with
// Hermite interpolation in rho; the theta-derivative of log G is a finite
// difference across rays at half the ray spacing, exactly zero for a
// rotationally symmetric metric. Curvature splits into the radial decay
// factor and the oscillation, whose log-derivatives are analytic.
struct OuterGeometry {
    const PolarMetric* polar;
    const CurvatureSpec* spec;
    PolarEval eval;

    OuterGeometry(const PolarMetric& pm, const CurvatureSpec& sp)
        : polar(&pm), spec(&sp), eval(pm) {}

    GeomSample at(double theta, double rho) const {
        GeomSample g;
        auto gg = eval.at(theta, rho);
        g.G = gg.G;
        g.Gp = gg.Gp;
        if (!(g.G > 0))
            fail("Unsupported", "metric coefficient is not positive at rho = " +
                                    std::to_string(rho));
        g.k = spec->osc.value(theta, rho) * spec->kstar(rho);
        if (!(g.k > 0))
            fail("Unsupported", "curvature vanishes inside the outer domain; the "
                                "march needs k > 0 at rho = " +
                                    std::to_string(rho));
        g.dlogk_rho = spec->dlog_kstar(rho) + spec->osc.dlog_drho(theta, rho);
        g.dlogk_theta = spec->osc.dlog_dtheta(1, theta, rho);
        if (polar->theta.size() > 1) {
            double h = M_PI / double(polar->theta.size());
            auto gp = eval.at(theta + h, rho);
            auto gm = eval.at(theta - h, rho);
            g.dlogG_theta = (std::log(gp.G) - std::log(gm.G)) / (2 * h);
        }
        return g;
    }
};

struct SourceTerms {
    double su = 0, sv = 0;
};

// Two sign conventions circulate for the general-form v source: they differ
// in the mixed theta term and in the cubic. "derived" is the convention the
// raw slope system implies; it agrees with both specialized systems. The
// alternate convention is kept callable so the manufactured-field
// consistency test can demonstrate the disagreement rather than assume it.
enum class VSigns { derived, variant };

namespace outer_detail {

inline SourceTerms general_source(const GeomSample& g, const Regime& rg, double u,
                                  double v, VSigns signs) {
    const double a = rg.alpha, b = rg.beta;
    const double dG = g.Gp / g.G;
    const double half = 0.5 * std::pow(g.G, -a) * std::pow(g.k, b);
    const double cubic =
        0.25 * std::pow(g.G, 1 - 2 * a) * g.Gp * std::pow(g.k, 2 * b) * (u * u - v * v);
    double su = -u * ((2 - a) * dG + b * g.dlogk_rho)
                - half * u * u * ((1 - a) * g.dlogG_theta + b * g.dlogk_theta)
                + half * v * v * ((1 - a) * g.dlogG_theta + (1 + b) * g.dlogk_theta)
                - cubic * u;
    double sv = -v * (-a * dG + (b - 1) * g.dlogk_rho);
    if (signs == VSigns::derived)
        sv += half * u * v * g.dlogk_theta - cubic * v;
    else
        sv += -half * u * v * g.dlogk_theta + cubic * v;
    return {su, sv};
}

} // namespace outer_detail

// Raw slope system, kept for cross-checks and for the immersion handoff:
//   d_rho w + z d_theta w = S_w,  d_rho z + w d_theta z = S_z.
inline SourceTerms wz_sources(const GeomSample& g, double w, double z) {
    const double dG = g.Gp / g.G;
    const double shared = -(w + z) * dG - w * z * g.dlogG_theta;
    double sw = 0.5 * (w - z) * (g.dlogk_rho + w * g.dlogk_theta) + shared
                - g.G * g.Gp * w * w * z;
    double sz = 0.5 * (z - w) * (g.dlogk_rho + z * g.dlogk_theta) + shared
                - g.G * g.Gp * w * z * z;
    return {sw, sz};
}

// System descriptor for one scaling regime. The specialized callables are
// authoritative; the general form is exposed for cross-checking under an
// explicit sign convention. half(g) is the common speed factor, so the
// characteristic speeds are half * (u + v) and half * (u - v).
struct OuterSystem {
    Regime regime;
    std::function<double(const GeomSample&)> half;
    std::function<SourceTerms(const GeomSample&, double, double)> specialized;
    std::function<SourceTerms(const GeomSample&, double, double, VSigns)> general;

    std::pair<double, double> speeds(const GeomSample& g, double u, double v) const {
        double h = half(g);
        return {h * (u + v), h * (u - v)};
    }
};

inline OuterSystem regime_equations(const Regime& rg) {
    const bool inc = rg.alpha == 0 && rg.beta == 1;
    const bool dec = rg.alpha == 1 && rg.beta == 0;
    if (!inc && !dec)
        fail("InvalidConfig", "unsupported regime: scaling exponents must be (0,1) "
                              "or (1,0)");
    OuterSystem sys;
    sys.regime = rg;
    if (inc) {
        sys.half = [](const GeomSample& g) { return 0.5 * g.k; };
        sys.specialized = [](const GeomSample& g, double u, double v) {
            const double dG = g.Gp / g.G;
            const double cubic = 0.25 * g.G * g.Gp * g.k * g.k * (u * u - v * v);
            SourceTerms s;
            s.su = -u * (g.dlogk_rho + 2 * dG)
                   - 0.5 * g.k * u * u * (g.dlogk_theta + g.dlogG_theta)
                   + 0.5 * g.k * v * v * (2 * g.dlogk_theta + g.dlogG_theta)
                   - cubic * u;
            s.sv = 0.5 * g.k * u * v * g.dlogk_theta - cubic * v;
            return s;
        };
    } else {
        sys.half = [](const GeomSample& g) { return 0.5 / g.G; };
        sys.specialized = [](const GeomSample& g, double u, double v) {
            const double dG = g.Gp / g.G;
            const double cubic = 0.25 * dG * (u * u - v * v);
            SourceTerms s;
            s.su = -u * dG + 0.5 / g.G * v * v * g.dlogk_theta - cubic * u;
            s.sv = v * (g.dlogk_rho + dG) + 0.5 / g.G * u * v * g.dlogk_theta
                   - cubic * v;
            return s;
        };
    }
    sys.general = [rg](const GeomSample& g, double u, double v, VSigns signs) {
        return outer_detail::general_source(g, rg, u, v, signs);
    };
    return sys;
}

// Boundary feed for the march: the two wedge curves with their slopes, data
// ladders along each curve, and the initial slice on the arc. Curve 1 maps
// to sigma = 0 and curve 2 to sigma = 1. extent is the largest rho the data
// ladders cover; marching is clipped there and the truncation reported.
struct OuterBoundary {
    double R1 = 0;
    double extent = kInf;
    std::function<double(double)> theta1, dtheta1, theta2, dtheta2;
    std::function<double(double)> u1, v1, u2, v2;
    std::function<double(double)> u_init, v_init;
};

inline OuterBoundary make_outer_boundary(const OuterBoundaryData& data,
                                         const DomainSplit& split) {
    if (data.rho.size() < 2 || data.theta0.size() < 2)
        fail("InvalidConfig", "boundary trace too short for the outer march");
    OuterBoundary b;
    b.R1 = data.R1;
    b.extent = data.rho.back();
    Pchip th1 = split.theta1_of_rho, th2 = split.theta2_of_rho;
    double lo = data.rho.front(), hi = data.rho.back();
    auto clamped = [lo, hi](Pchip p) {
        return [p = std::move(p), lo, hi](double r) {
            return p(std::clamp(r, lo, hi));
        };
    };
    b.theta1 = [th1, lo, hi](double r) { return th1(std::clamp(r, lo, hi)); };
    b.dtheta1 = [th1, lo, hi](double r) { return th1.deriv(std::clamp(r, lo, hi)); };
    b.theta2 = [th2, lo, hi](double r) { return th2(std::clamp(r, lo, hi)); };
    b.dtheta2 = [th2, lo, hi](double r) { return th2.deriv(std::clamp(r, lo, hi)); };
    b.u1 = clamped(Pchip(data.rho, data.u1));
    b.v1 = clamped(Pchip(data.rho, data.v1));
    b.u2 = clamped(Pchip(data.rho, data.u2));
    b.v2 = clamped(Pchip(data.rho, data.v2));
    double tlo = data.theta0.front(), thi = data.theta0.back();
    Pchip pu0(data.theta0, data.u0), pv0(data.theta0, data.v0);
    b.u_init = [pu0, tlo, thi](double t) { return pu0(std::clamp(t, tlo, thi)); };
    b.v_init = [pv0, tlo, thi](double t) { return pv0(std::clamp(t, tlo, thi)); };
    return b;
}

// Static wedge with constant data, for rotationally symmetric runs. The data
// ladders stay empty: a radial-mode march advances its end cells by the
// sources alone, which is exact when nothing depends on theta.
inline OuterBoundary radial_boundary(double R1, double theta_a, double theta_b,
                                     double u0, double v0) {
    if (!(R1 > 0)) fail("InvalidConfig", "anchor radius must be positive");
    if (!(theta_a != theta_b)) fail("InvalidConfig", "wedge has zero width");
    OuterBoundary b;
    b.R1 = R1;
    b.theta1 = [theta_a](double) { return theta_a; };
    b.theta2 = [theta_b](double) { return theta_b; };
    b.dtheta1 = [](double) { return 0.0; };
    b.dtheta2 = [](double) { return 0.0; };
    b.u_init = [u0](double) { return u0; };
    b.v_init = [v0](double) { return v0; };
    return b;
}

struct OuterConfig {
    double rho_max = 0;   // 0: 8 R1, clipped to the boundary extent
    int n_sigma = 257;
    double cfl_max = 0.9; // hard ceiling; smaller is allowed
    double max_drho = 0;  // 0: span / (n_sigma - 1)
    bool radial_mode = false;
    bool picard = false;
    double picard_tol = 1e-10;
    int picard_max_iter = 5;
    double apriori_ceiling = 0; // 0: A0 * eps from the prefit
    bool use_general_form = false;
    VSigns general_signs = VSigns::derived;
    int max_steps = 400000;
};

struct EnergyTrace {
    Vec rho;
    Vec u0, u1, u2, v0, v1, v2; // discrete Sobolev ladder per slice
    Vec minv, cfl;
    Vec varphi, psi1, psi2;
    double eps = 0;    // fitted sup of boundary and initial data, psi1-weighted
    double Lambda = 0; // fitted envelope constant; kInf when a tail diverges
    double Theta = 0;
    double A0 = 0;
    double delta = 0;
    double ceiling = 0; // H2 bound actually enforced by the march
};

inline std::string energy_csv(const EnergyTrace& t) {
    std::ostringstream os;
    os.precision(17);
    os << "rho,u0,u1,u2,v0,v1,v2,minv,cfl\n";
    for (size_t i = 0; i < t.rho.size(); ++i)
        os << t.rho[i] << ',' << t.u0[i] << ',' << t.u1[i] << ',' << t.u2[i] << ','
           << t.v0[i] << ',' << t.v1[i] << ',' << t.v2[i] << ',' << t.minv[i] << ','
           << t.cfl[i] << '\n';
    return os.str();
}

// State of a finished or aborted march. Slices are kept in full so the
// diagnostics and the surface reconstruction can replay the field. v stays
// strictly positive wherever the data was strictly positive; traced data
// whose branch slopes underflowed to equality carries exact zeros, and those
// cells persist at zero because every v source carries a factor of v.
struct OuterState {
    double alpha = 0, beta = 1;
    Vec sigma;
    std::vector<double> rho;
    std::vector<Vec> u, v;
    Vec theta1, theta2; // wedge ends per slice
    double rho_cursor = 0;
    double rho_requested = 0;
    bool truncated = false;
    bool degenerate_data = false; // some datum was exactly zero
    bool aborted = false;
    std::string abort_reason; // CFL | POSITIVITY | SPACELIKE | APRIORI
    std::string abort_message;
    double abort_rho = 0, abort_theta = 0;
    size_t steps = 0;
    double cfl_peak = 0;
    int picard_iters = 0;
    int picard_fallbacks = 0;
    double max_theta_variation = 0;
    std::vector<std::string> notes;
};

inline std::string abort_json(const OuterState& st) {
    std::ostringstream os;
    os.precision(17);
    if (!st.aborted) return "{\"reason\":null}";
    os << "{\"reason\":\"" << st.abort_reason << "\",\"rho\":" << st.abort_rho
       << ",\"theta\":" << st.abort_theta << ",\"message\":\"" << st.abort_message
       << "\"}";
    return os.str();
}

struct OuterRun {
    OuterState state;
    EnergyTrace trace;
};

namespace outer_detail {

struct SliceNorms {
    double n0 = 0, n1 = 0, n2 = 0;
};

// Trapezoid L2 ladder on a uniformly spaced slice; derivatives by centered
// differences, one-sided at the wedge ends. h must be the physical theta
// spacing so the norms are comparable across slices.
inline SliceNorms slice_norms(const Vec& f, double h) {
    size_t n = f.size();
    SliceNorms out;
    if (n < 2 || !(h > 0)) return out;
    auto l2 = [h, n](const Vec& g) {
        double s = 0.5 * (g[0] * g[0] + g[n - 1] * g[n - 1]);
        for (size_t j = 1; j + 1 < n; ++j) s += g[j] * g[j];
        return s * h;
    };
    Vec d1(n), d2(n);
    for (size_t j = 1; j + 1 < n; ++j) {
        d1[j] = (f[j + 1] - f[j - 1]) / (2 * h);
        d2[j] = (f[j + 1] - 2 * f[j] + f[j - 1]) / (h * h);
    }
    d1[0] = (f[1] - f[0]) / h;
    d1[n - 1] = (f[n - 1] - f[n - 2]) / h;
    d2[0] = n > 2 ? d2[1] : 0.0;
    d2[n - 1] = n > 2 ? d2[n - 2] : 0.0;
    double a0 = l2(f), a1 = l2(d1), a2 = l2(d2);
    out.n0 = std::sqrt(a0);
    out.n1 = std::sqrt(a0 + a1);
    out.n2 = std::sqrt(a0 + a1 + a2);
    return out;
}

inline double joint_h2(const Vec& u, const Vec& v, double h) {
    SliceNorms nu = slice_norms(u, h), nv = slice_norms(v, h);
    return std::sqrt(nu.n2 * nu.n2 + nv.n2 * nv.n2);
}

// One-sided difference against the flow. An end cell with no stencil on the
// upwind side contributes zero advection: it is either about to be
// overwritten by injected data, or the run is radial and the difference
// vanishes identically.
inline double upwind_diff(const Vec& f, size_t j, double lam_hat, double dsig) {
    if (lam_hat > 0) return j == 0 ? 0.0 : (f[j] - f[j - 1]) / dsig;
    if (lam_hat < 0) return j + 1 == f.size() ? 0.0 : (f[j + 1] - f[j]) / dsig;
    return 0.0;
}

} // namespace outer_detail

// Frozen context for one march step, enough to re-solve it: the accepted
// slice, the provisional step, and hooks to resample geometry and reinject
// boundary data at the new radius.
struct OuterSlicePair {
    double rho0 = 0, drho = 0;
    Vec sigma;
    Vec u0, v0;
    Vec u_prov, v_prov;
    std::function<GeomSample(double, double)> geom;       // (sigma, rho)
    std::function<double(double, double)> dtheta_rho;     // (sigma, rho)
    std::function<double(double)> width;                  // theta2 - theta1
    std::function<void(double, Vec&, Vec&)> inject;       // may be empty
};

struct PicardResult {
    Vec u, v;
    int iters = 0;
    bool converged = false;
    bool fell_back = false;
    std::string note;
};

namespace outer_detail {

inline void full_rhs(const OuterSlicePair& pair, const OuterSystem& sys,
                     const OuterConfig& cfg, const Vec& u, const Vec& v, double rho,
                     Vec& ru, Vec& rv) {
    size_t n = u.size();
    double dsig = pair.sigma[1] - pair.sigma[0];
    double w = pair.width(rho);
    Vec wp(n), wm(n), lhp(n), lhm(n);
    std::vector<SourceTerms> src(n);
    for (size_t j = 0; j < n; ++j) {
        wp[j] = u[j] + v[j];
        wm[j] = u[j] - v[j];
        GeomSample g = pair.geom(pair.sigma[j], rho);
        auto [lp, lm] = sys.speeds(g, u[j], v[j]);
        double thr = pair.dtheta_rho(pair.sigma[j], rho);
        lhp[j] = (lp - thr) / w;
        lhm[j] = (lm - thr) / w;
        src[j] = cfg.use_general_form ? sys.general(g, u[j], v[j], cfg.general_signs)
                                      : sys.specialized(g, u[j], v[j]);
    }
    ru.assign(n, 0.0);
    rv.assign(n, 0.0);
    for (size_t j = 0; j < n; ++j) {
        double dwp = -lhm[j] * upwind_diff(wp, j, lhm[j], dsig) + src[j].su + src[j].sv;
        double dwm = -lhp[j] * upwind_diff(wm, j, lhp[j], dsig) + src[j].su - src[j].sv;
        ru[j] = 0.5 * (dwp + dwm);
        rv[j] = 0.5 * (dwp - dwm);
    }
}

} // namespace outer_detail

// Step refinement by frozen-coefficient sweeps. Each sweep freezes speeds
// and coefficients at the previous iterate and advances the affine
// trapezoidal step; the fixed point is the implicit trapezoidal step, one
// order above the plain march, so a converged refinement sharpens the step
// rather than merely reproducing it. Divergence over two consecutive sweeps
// falls back to the provisional step.
inline PicardResult picard_refine(const OuterSlicePair& pair, Regime rg,
                                  const OuterConfig& cfg) {
    OuterSystem sys = regime_equations(rg);
    size_t n = pair.u0.size();
    if (n < 2 || pair.sigma.size() != n || pair.u_prov.size() != n)
        fail("InvalidConfig", "slice pair arrays are inconsistent");
    double rho1 = pair.rho0 + pair.drho;
    double h1 = std::abs(pair.width(rho1)) * (pair.sigma[1] - pair.sigma[0]);

    Vec r0u, r0v;
    outer_detail::full_rhs(pair, sys, cfg, pair.u0, pair.v0, pair.rho0, r0u, r0v);

    PicardResult res;
    res.u = pair.u_prov;
    res.v = pair.v_prov;
    double prev_diff = kInf;
    bool grew_once = false;
    Vec ru, rv, un(n), vn(n);
    for (int m = 0; m < cfg.picard_max_iter; ++m) {
        outer_detail::full_rhs(pair, sys, cfg, res.u, res.v, rho1, ru, rv);
        for (size_t j = 0; j < n; ++j) {
            un[j] = pair.u0[j] + 0.5 * pair.drho * (r0u[j] + ru[j]);
            vn[j] = pair.v0[j] + 0.5 * pair.drho * (r0v[j] + rv[j]);
        }
        if (pair.inject) pair.inject(rho1, un, vn);
        Vec du(n), dv(n);
        for (size_t j = 0; j < n; ++j) {
            du[j] = un[j] - res.u[j];
            dv[j] = vn[j] - res.v[j];
        }
        double diff = outer_detail::joint_h2(du, dv, h1);
        double scale = 1.0 + outer_detail::joint_h2(res.u, res.v, h1);
        res.u = un;
        res.v = vn;
        res.iters = m + 1;
        if (diff < cfg.picard_tol * scale) {
            res.converged = true;
            return res;
        }
        if (diff > prev_diff) {
            if (grew_once) {
                res.u = pair.u_prov;
                res.v = pair.v_prov;
                res.fell_back = true;
                res.note = "refinement diverged twice; kept the plain step";
                return res;
            }
            grew_once = true;
        } else {
            grew_once = false;
        }
        prev_diff = diff;
    }
    return res;
}

namespace outer_detail {

// Envelope constants fitted from the data and the geometry scan. eps is the
// sup of the initial and injected data weighted by 1/psi1; Lambda follows
// its defining max with the improper tail integral taken to infinity and
// varphi truncated at the horizon.
struct Prefit {
    double eps = 0, Lambda = 0, Theta = 0, A0 = 0, ceiling = 0;
    std::string note;
};

inline double psi1_of(double rho, const Regime& rg, double delta) {
    return rg.alpha == 0 ? std::pow(rho, -0.5 * delta) : std::pow(rho, -delta);
}

inline double psi2_of(double rho, const Regime& rg, double delta) {
    return rg.alpha == 0 ? std::pow(rho, -1 - delta) : std::pow(rho, -1 - 2 * delta);
}

inline Prefit prefit_constants(const OuterGeometry& geom, const OuterBoundary& bnd,
                               const Regime& rg, double delta, double rho_stop,
                               const OuterConfig& cfg, const Vec& u_init,
                               const Vec& v_init) {
    Prefit out;
    double R1 = bnd.R1;
    for (size_t j = 0; j < u_init.size(); ++j)
        out.eps = std::max(out.eps,
                           std::max(std::abs(u_init[j]), std::abs(v_init[j])));
    if (bnd.u1) {
        const int ns = 64;
        for (int i = 0; i <= ns; ++i) {
            double r = R1 + (rho_stop - R1) * i / ns;
            double w = 1.0 / psi1_of(r, rg, delta);
            double m = std::max(std::max(std::abs(bnd.u1(r)), std::abs(bnd.v1(r))),
                                std::max(std::abs(bnd.u2(r)), std::abs(bnd.v2(r))));
            out.eps = std::max(out.eps, m * w);
        }
    }

    // varphi at the horizon and the mixed-derivative sup, on a coarse scan
    const int nr = 33, nt = 17;
    double vint = 0, prev = -1, sup_mixed = 0;
    for (int i = 0; i < nr; ++i) {
        double r = R1 + (rho_stop - R1) * i / (nr - 1);
        double th1 = bnd.theta1(r), th2 = bnd.theta2(r);
        double integrand = 0;
        Vec dlg(nt), dla(nt), th(nt);
        for (int j = 0; j < nt; ++j) {
            th[j] = th1 + (th2 - th1) * j / (nt - 1);
            GeomSample g = geom.at(th[j], r);
            double osc_part = geom.spec->osc.dlog_drho(th[j], r);
            integrand = std::max(integrand, std::abs(osc_part) +
                                                2 * std::abs(g.Gp / g.G - 1.0 / r));
            dlg[j] = g.Gp / g.G;
            dla[j] = osc_part;
        }
        Vec d1g = diff_centered(th, dlg), d1a = diff_centered(th, dla);
        Vec d2g = diff_centered(th, d1g), d2a = diff_centered(th, d1a);
        for (int j = 0; j < nt; ++j)
            sup_mixed = std::max(
                sup_mixed, 2 * r * (std::abs(d1g[j]) + std::abs(d1a[j])) +
                               2 * r * (std::abs(d2g[j]) + std::abs(d2a[j])));
        if (prev >= 0) vint += 0.5 * (integrand + prev) * (rho_stop - R1) / (nr - 1);
        prev = integrand;
    }
    double varphi_end = std::exp(vint);

    auto tail_f = [&](double r) { return r * sq(geom.spec->kstar(r)); };
    auto tail = integrate_tail_log_dyadic(tail_f, R1, 1e-9);
    double tail_term = tail.diverged ? kInf : 1.0 + tail.value;
    out.Lambda = std::max({varphi_end, tail_term, sup_mixed});

    if (delta < 0.5 && std::isfinite(out.Lambda)) {
        out.Theta = std::max(out.Lambda / ((1 - 2 * delta) * delta), 1.0);
        out.A0 = std::pow(10 * out.Theta, 8);
    } else {
        out.Theta = kInf;
        out.A0 = kInf;
        out.note = "continuity ceiling disabled: delta >= 1/2 or a divergent tail "
                   "leaves the envelope constant undefined";
    }
    out.ceiling = cfg.apriori_ceiling > 0 ? cfg.apriori_ceiling : out.A0 * out.eps;
    return out;
}

} // namespace outer_detail

// March of the scaled system from the handoff arc to the horizon. Fields
// live on the fixed sigma grid; each step advects the characteristic
// combinations with first-order upwind differences against the
// mesh-corrected speeds, applies the pointwise sources, then overwrites the
// end cells with boundary data. Both wedge curves must stay space-like
// against both characteristic families, which is what makes injecting both
// components at both ends well posed.
inline OuterRun march_outer(const PolarMetric& polar, const CurvatureSpec& spec,
                            const OuterBoundary& bnd, Regime rg,
                            const OuterConfig& cfg = {}) {
    if (cfg.n_sigma < 8) fail("InvalidConfig", "sigma grid needs at least 8 samples");
    if (!(cfg.cfl_max > 0) || cfg.cfl_max > 0.9)
        fail("InvalidConfig", "cfl ceiling must sit in (0, 0.9]");
    if (!(bnd.R1 > 0)) fail("InvalidConfig", "boundary anchor radius must be positive");
    if (!bnd.theta1 || !bnd.theta2 || !bnd.dtheta1 || !bnd.dtheta2 || !bnd.u_init ||
        !bnd.v_init)
        fail("InvalidConfig", "boundary is missing curve or initial callables");
    if (!cfg.radial_mode && !(bnd.u1 && bnd.v1 && bnd.u2 && bnd.v2))
        fail("InvalidConfig", "boundary data ladders are required unless the march "
                              "runs in radial mode");
    if (cfg.radial_mode && (polar.theta.size() > 1 || !spec.osc.theta_free))
        fail("InvalidConfig", "radial mode needs a rotationally symmetric metric "
                              "and curvature");

    const double R1 = bnd.R1;
    double rho_request = cfg.rho_max > 0 ? cfg.rho_max : 8 * R1;
    if (!(rho_request > R1)) fail("InvalidConfig", "march horizon must exceed R1");
    double rho_stop = std::min(rho_request, bnd.extent);
    if (polar.rho.back() < rho_stop - 1e-9)
        fail("InvalidConfig", "polar metric grid ends before the march horizon");

    OuterSystem sys = regime_equations(rg);
    OuterGeometry geom(polar, spec);
    const double delta = spec.delta();
    const int n = cfg.n_sigma;
    const double dsig = 1.0 / (n - 1);
    double max_drho = cfg.max_drho > 0 ? cfg.max_drho : (rho_stop - R1) * dsig;

    OuterRun run;
    OuterState& st = run.state;
    EnergyTrace& tr = run.trace;
    st.alpha = rg.alpha;
    st.beta = rg.beta;
    st.rho_requested = rho_request;
    st.sigma = linspace(0.0, 1.0, n);
    if (rho_stop < rho_request)
        st.notes.push_back("horizon clipped to the boundary trace extent rho = " +
                           std::to_string(rho_stop));

    double th1 = bnd.theta1(R1), th2 = bnd.theta2(R1);
    Vec u(n), v(n);
    for (int j = 0; j < n; ++j) {
        double th = th1 + st.sigma[j] * (th2 - th1);
        u[j] = bnd.u_init(th);
        v[j] = bnd.v_init(th);
        if (v[j] < 0)
            fail("Positivity", "initial slice carries negative v at theta = " +
                                   std::to_string(th));
        if (v[j] == 0) st.degenerate_data = true;
    }
    if (cfg.radial_mode) {
        double umin = *std::min_element(u.begin(), u.end());
        double umax = *std::max_element(u.begin(), u.end());
        double vmin = *std::min_element(v.begin(), v.end());
        double vmax = *std::max_element(v.begin(), v.end());
        if (umax - umin != 0 || vmax - vmin != 0)
            fail("InvalidConfig", "radial mode requires a flat initial slice");
    }

    auto prefit = outer_detail::prefit_constants(geom, bnd, rg, delta, rho_stop, cfg,
                                                 u, v);
    tr.eps = prefit.eps;
    tr.Lambda = prefit.Lambda;
    tr.Theta = prefit.Theta;
    tr.A0 = prefit.A0;
    tr.delta = delta;
    tr.ceiling = prefit.ceiling;
    if (!prefit.note.empty()) st.notes.push_back(prefit.note);

    // hooks shared with the step refinement
    auto geom_hook = [&geom, &bnd](double s, double r) {
        double a = bnd.theta1(r), b = bnd.theta2(r);
        return geom.at(a + s * (b - a), r);
    };
    auto dth_hook = [&bnd](double s, double r) {
        return bnd.dtheta1(r) + s * (bnd.dtheta2(r) - bnd.dtheta1(r));
    };
    auto width_hook = [&bnd](double r) { return bnd.theta2(r) - bnd.theta1(r); };
    std::function<void(double, Vec&, Vec&)> inject_hook;
    if (!cfg.radial_mode)
        inject_hook = [&bnd, n, &st](double r, Vec& uu, Vec& vv) {
            uu[0] = bnd.u1(r);
            vv[0] = bnd.v1(r);
            uu[n - 1] = bnd.u2(r);
            vv[n - 1] = bnd.v2(r);
            if (vv[0] == 0 || vv[n - 1] == 0) st.degenerate_data = true;
        };

    double varphi_prev_ = 0;
    auto append_slice = [&](double rho, const Vec& uu, const Vec& vv, double cfl) {
        double w = width_hook(rho);
        double h = std::abs(w) * dsig;
        auto nu = outer_detail::slice_norms(uu, h);
        auto nv = outer_detail::slice_norms(vv, h);
        st.rho.push_back(rho);
        st.u.push_back(uu);
        st.v.push_back(vv);
        st.theta1.push_back(bnd.theta1(rho));
        st.theta2.push_back(bnd.theta2(rho));
        tr.rho.push_back(rho);
        tr.u0.push_back(nu.n0);
        tr.u1.push_back(nu.n1);
        tr.u2.push_back(nu.n2);
        tr.v0.push_back(nv.n0);
        tr.v1.push_back(nv.n1);
        tr.v2.push_back(nv.n2);
        tr.minv.push_back(*std::min_element(vv.begin(), vv.end()));
        tr.cfl.push_back(cfl);
        tr.psi1.push_back(outer_detail::psi1_of(rho, rg, delta));
        tr.psi2.push_back(outer_detail::psi2_of(rho, rg, delta));
        double integrand = 0;
        for (int j = 0; j < n; ++j) {
            double th = bnd.theta1(rho) + st.sigma[j] * w;
            GeomSample g = geom.at(th, rho);
            integrand = std::max(integrand,
                                 std::abs(spec.osc.dlog_drho(th, rho)) +
                                     2 * std::abs(g.Gp / g.G - 1.0 / rho));
        }
        if (tr.varphi.empty()) {
            tr.varphi.push_back(1.0);
        } else {
            size_t i = tr.varphi.size();
            double drho = tr.rho[i] - tr.rho[i - 1];
            tr.varphi.push_back(tr.varphi.back() *
                                std::exp(0.5 * (integrand + varphi_prev_) * drho));
        }
        varphi_prev_ = integrand;
        if (cfg.radial_mode) {
            double du = *std::max_element(uu.begin(), uu.end()) -
                        *std::min_element(uu.begin(), uu.end());
            double dv = *std::max_element(vv.begin(), vv.end()) -
                        *std::min_element(vv.begin(), vv.end());
            st.max_theta_variation = std::max(st.max_theta_variation,
                                              std::max(du, dv));
        }
    };

    double rho_c = R1;
    append_slice(rho_c, u, v, 0.0);

    Vec wp(n), wm(n);
    std::vector<GeomSample> gs(n);
    Vec lhp(n), lhm(n), u_new(n), v_new(n);
    auto abort = [&](const char* reason, const std::string& msg, double rho,
                     double theta) {
        st.aborted = true;
        st.abort_reason = reason;
        st.abort_message = msg;
        st.abort_rho = rho;
        st.abort_theta = theta;
    };

    while (!st.aborted && rho_c < rho_stop - 1e-12 * R1) {
        if (st.steps >= size_t(cfg.max_steps))
            fail("Stiffness", "outer march exceeded the step budget before the "
                              "horizon; speeds keep the cfl step too small");
        double w = width_hook(rho_c);
        if (!std::isfinite(w) || w == 0)
            fail("InvalidConfig", "wedge width vanished at rho = " +
                                      std::to_string(rho_c));
        double amax = 0;
        for (int j = 0; j < n; ++j) {
            double th = bnd.theta1(rho_c) + st.sigma[j] * w;
            gs[j] = geom.at(th, rho_c);
            auto [lp, lm] = sys.speeds(gs[j], u[j], v[j]);
            double thr = dth_hook(st.sigma[j], rho_c);
            lhp[j] = (lp - thr) / w;
            lhm[j] = (lm - thr) / w;
            amax = std::max(amax, std::max(std::abs(lhp[j]), std::abs(lhm[j])));
        }
        if (!std::isfinite(amax)) {
            abort("CFL", "characteristic speed overflowed", rho_c, 0);
            break;
        }
        if (!cfg.radial_mode) {
            // both families must enter at both ends; the data cells hold the
            // injected values, so this checks the data against the curves
            if (!(lhp[0] > 0) || !(lhm[0] > 0)) {
                abort("SPACELIKE", "curve 1 stopped being space-like", rho_c,
                      bnd.theta1(rho_c));
                break;
            }
            if (!(lhp[n - 1] < 0) || !(lhm[n - 1] < 0)) {
                abort("SPACELIKE", "curve 2 stopped being space-like", rho_c,
                      bnd.theta2(rho_c));
                break;
            }
        }
        double drho = std::min(max_drho, rho_stop - rho_c);
        if (amax > 0) drho = std::min(drho, cfg.cfl_max * dsig / amax);
        if (!(drho > 1e-13 * R1)) {
            abort("CFL", "cfl step collapsed", rho_c, 0);
            break;
        }
        double cfl_used = amax * drho / dsig;
        st.cfl_peak = std::max(st.cfl_peak, cfl_used);

        for (int j = 0; j < n; ++j) {
            wp[j] = u[j] + v[j];
            wm[j] = u[j] - v[j];
        }
        for (int j = 0; j < n; ++j) {
            SourceTerms s = cfg.use_general_form
                                ? sys.general(gs[j], u[j], v[j], cfg.general_signs)
                                : sys.specialized(gs[j], u[j], v[j]);
            double dwp = -lhm[j] * outer_detail::upwind_diff(wp, j, lhm[j], dsig) +
                         s.su + s.sv;
            double dwm = -lhp[j] * outer_detail::upwind_diff(wm, j, lhp[j], dsig) +
                         s.su - s.sv;
            u_new[j] = u[j] + drho * 0.5 * (dwp + dwm);
            v_new[j] = v[j] + drho * 0.5 * (dwp - dwm);
        }
        double rho_n = rho_c + drho;
        if (inject_hook) inject_hook(rho_n, u_new, v_new);

        if (cfg.picard) {
            OuterSlicePair pair;
            pair.rho0 = rho_c;
            pair.drho = drho;
            pair.sigma = st.sigma;
            pair.u0 = u;
            pair.v0 = v;
            pair.u_prov = u_new;
            pair.v_prov = v_new;
            pair.geom = geom_hook;
            pair.dtheta_rho = dth_hook;
            pair.width = width_hook;
            pair.inject = inject_hook;
            PicardResult pr = picard_refine(pair, rg, cfg);
            st.picard_iters += pr.iters;
            if (pr.fell_back) {
                ++st.picard_fallbacks;
                if (st.notes.empty() || st.notes.back() != pr.note)
                    st.notes.push_back(pr.note);
            } else {
                u_new = pr.u;
                v_new = pr.v;
            }
        }

        for (int j = 0; j < n; ++j) {
            bool lost = st.degenerate_data ? v_new[j] < 0 : v_new[j] <= 0;
            if (lost) {
                double th = bnd.theta1(rho_n) + st.sigma[j] * width_hook(rho_n);
                abort("POSITIVITY", "v lost positivity", rho_n, th);
                break;
            }
        }
        if (st.aborted) break;

        double h2 = outer_detail::joint_h2(u_new, v_new,
                                           std::abs(width_hook(rho_n)) * dsig);
        if (std::isfinite(tr.ceiling) && tr.ceiling > 0 && h2 > tr.ceiling) {
            abort("APRIORI", "a priori bound breached", rho_n, 0);
            break;
        }

        u = u_new;
        v = v_new;
        rho_c = rho_n;
        ++st.steps;
        append_slice(rho_c, u, v, cfl_used);
    }

    st.rho_cursor = rho_c;
    st.truncated = st.aborted || rho_c < rho_request - 1e-9 * R1;
    return run;
}

inline OuterRun solve_outer(const PolarMetric& polar, const CurvatureSpec& spec,
                            const DomainSplit& split, const OuterBoundaryData& data,
                            Regime rg, const OuterConfig& cfg = {}) {
    if (data.regime.alpha != rg.alpha || data.regime.beta != rg.beta)
        fail("InvalidConfig", "regime mismatch between the traced data and the "
                              "requested march");
    return march_outer(polar, spec, make_outer_boundary(data, split), rg, cfg);
}

// Positivity diagnostics. The factored form of the v equation moves the
// whole right side into a single coefficient along the u characteristic, so
// log v integrates it directly; its sup per slice gives the per-slice lower
// bound v_min(rho) >= v_min(R1) exp(-int ||F||_inf). Cells at exact zero are
// tracked separately: the zero set is invariant, so the bound applies to the
// live minimum and to the live data minimum seen so far.
struct PositivityReport {
    double min_v = kInf;
    double min_at_theta = 0, min_at_rho = 0;
    double min_live_v = kInf;
    double live_at_theta = 0, live_at_rho = 0;
    bool degenerate = false; // v identically zero
    double zero_fraction = 0;
    Vec rho;
    Vec vmin_live;
    Vec bound;
    double worst_margin = kInf; // min of vmin_live - bound
    bool bound_holds = false;
};

inline PositivityReport check_positivity(const OuterState& st,
                                         const PolarMetric& polar,
                                         const CurvatureSpec& spec) {
    if (st.rho.empty()) fail("InvalidConfig", "positivity check needs slices");
    OuterGeometry geom(polar, spec);
    const Regime rg{st.alpha, st.beta};
    const size_t ns = st.rho.size();
    const size_t n = st.sigma.size();
    PositivityReport rep;
    size_t zeros = 0, total = 0;

    double data_min = kInf;   // live data seen so far, running
    double cum = 0;           // integral of ||F||_inf
    double prev_sup = 0;
    for (size_t i = 0; i < ns; ++i) {
        double rho = st.rho[i];
        double w = st.theta2[i] - st.theta1[i];
        double h = w / double(n - 1);
        double live = kInf;
        for (size_t j = 0; j < n; ++j) {
            double th = st.theta1[i] + st.sigma[j] * w;
            double vv = st.v[i][j];
            ++total;
            if (vv == 0) ++zeros;
            if (vv < rep.min_v) {
                rep.min_v = vv;
                rep.min_at_theta = th;
                rep.min_at_rho = rho;
            }
            if (vv > 0 && vv < rep.min_live_v) {
                rep.min_live_v = vv;
                rep.live_at_theta = th;
                rep.live_at_rho = rho;
            }
            if (vv > 0) live = std::min(live, vv);
        }
        // data cells: initial slice fully, end cells afterwards
        if (i == 0) {
            for (size_t j = 0; j < n; ++j)
                if (st.v[0][j] > 0) data_min = std::min(data_min, st.v[0][j]);
        } else {
            if (st.v[i][0] > 0) data_min = std::min(data_min, st.v[i][0]);
            if (st.v[i][n - 1] > 0) data_min = std::min(data_min, st.v[i][n - 1]);
        }

        double sup = 0;
        for (size_t j = 0; j < n; ++j) {
            double th = st.theta1[i] + st.sigma[j] * w;
            GeomSample g = geom.at(th, rho);
            double half = 0.5 * std::pow(g.G, -rg.alpha) * std::pow(g.k, rg.beta);
            double du;
            if (j == 0)
                du = (st.u[i][1] - st.u[i][0]) / h;
            else if (j + 1 == n)
                du = (st.u[i][n - 1] - st.u[i][n - 2]) / h;
            else
                du = (st.u[i][j + 1] - st.u[i][j - 1]) / (2 * h);
            double uu = st.u[i][j], vv = st.v[i][j];
            double f = half * du
                       - (-rg.alpha * g.Gp / g.G + (rg.beta - 1) * g.dlogk_rho)
                       + half * uu * g.dlogk_theta
                       - 0.25 * std::pow(g.G, 1 - 2 * rg.alpha) * g.Gp *
                             std::pow(g.k, 2 * rg.beta) * (uu * uu - vv * vv);
            sup = std::max(sup, std::abs(f));
        }
        if (i > 0) cum += 0.5 * (sup + prev_sup) * (st.rho[i] - st.rho[i - 1]);
        prev_sup = sup;

        rep.rho.push_back(rho);
        rep.vmin_live.push_back(live);
        double b = std::isfinite(data_min) ? data_min * std::exp(-cum) : kNaN;
        rep.bound.push_back(b);
        if (std::isfinite(live) && std::isfinite(b))
            rep.worst_margin = std::min(rep.worst_margin, live - b);
    }
    rep.zero_fraction = total ? double(zeros) / double(total) : 0.0;
    rep.degenerate = !std::isfinite(rep.min_live_v);
    rep.bound_holds = !rep.degenerate && rep.worst_margin >= -1e-12;
    return rep;
}

// Decay diagnostics against the regime envelopes. Shape mode fits the
// log-log slope of the base norm over the outer half of the march and
// compares it with the envelope's own slope there; constant mode reports the
// smallest multiple of the envelope that dominates every slice. The envelope
// constant in units of the fitted data size stands in for the
// local-existence constant, which no run can measure directly.
struct DecayReport {
    bool skipped = false;
    double fitted_exponent = 0;
    double target_exponent = 0;
    bool shape_ok = false;
    double envelope_C = 0;
    double C0_fit = 0;
    double Theta_fit = 0;
    double A0_fit = 0;
    double vsup = 0;
    double h2_sup = 0;
};

inline DecayReport check_decay(const EnergyTrace& tr, Regime rg,
                               const CurvatureSpec& spec) {
    if (tr.rho.size() < 8) fail("InvalidConfig", "decay check needs a longer trace");
    const double R1 = tr.rho.front();
    if (!(tr.rho.back() >= 4 * R1 - 1e-9))
        fail("InvalidConfig", "decay check needs a march reaching 4 R1");
    const bool inc = rg.alpha == 0;
    const double delta = spec.delta();

    DecayReport rep;
    double peak = 0;
    for (size_t i = 0; i < tr.rho.size(); ++i) {
        peak = std::max(peak, std::max(tr.u0[i], tr.v0[i]));
        rep.vsup = std::max(rep.vsup, tr.v0[i]);
        rep.h2_sup = std::max(rep.h2_sup,
                              std::hypot(tr.u2[i], tr.v2[i]));
    }
    if (peak == 0) {
        rep.skipped = true;
        return rep;
    }

    auto base_norm = [&](size_t i) {
        return inc ? tr.u0[i] : std::hypot(tr.u0[i], tr.v0[i]);
    };
    auto envelope = [&](double rho) {
        return inc ? rho * spec.kstar(rho) + std::pow(rho, -0.5 * delta)
                   : std::pow(R1 / rho, 0.5 * delta);
    };

    double cut = 0.5 * tr.rho.back();
    Vec lx, ly;
    for (size_t i = 0; i < tr.rho.size(); ++i) {
        if (tr.rho[i] < cut) continue;
        double nrm = base_norm(i);
        if (nrm > 0) {
            lx.push_back(std::log(tr.rho[i]));
            ly.push_back(std::log(nrm));
        }
    }
    if (lx.size() < 4) {
        rep.skipped = true;
        return rep;
    }
    double mx = 0, my = 0;
    for (size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= double(lx.size());
    my /= double(lx.size());
    double num = 0, den = 0;
    for (size_t i = 0; i < lx.size(); ++i) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += sq(lx[i] - mx);
    }
    rep.fitted_exponent = num / den;
    rep.target_exponent =
        (std::log(envelope(tr.rho.back())) - std::log(envelope(cut))) /
        (std::log(tr.rho.back()) - std::log(cut));
    rep.shape_ok = rep.fitted_exponent <= rep.target_exponent + 0.1;

    for (size_t i = 0; i < tr.rho.size(); ++i)
        rep.envelope_C = std::max(rep.envelope_C, base_norm(i) / envelope(tr.rho[i]));
    double eps = tr.eps > 0 ? tr.eps : peak;
    rep.C0_fit = rep.envelope_C / eps;
    if (delta < 0.5 && std::isfinite(tr.Lambda))
        rep.Theta_fit = std::max(tr.Lambda / ((1 - 2 * delta) * delta),
                                 rep.C0_fit + 1);
    else
        rep.Theta_fit = rep.C0_fit + 1;
    rep.A0_fit = std::pow(10 * rep.Theta_fit, 8);
    return rep;
}

// Discrete transcription of the square-root growth lemma: when the forward
// differences of E obey dE <= f sqrt(E) + h, every slice obeys
// sqrt(E) <= sqrt(E(t0)) + sqrt(int h) + (1/2) int f. The hypothesis is
// checked first; a failure reports the step and leaves the conclusion
// unasserted, since the lemma then promises nothing.
struct GronwallReport {
    bool hypothesis_ok = true;
    size_t fail_step = size_t(-1);
    bool conclusion_ok = false;
    double worst_slack = kInf;
};

inline GronwallReport gronwall_check(const Vec& t, const Vec& E, const Vec& f,
                                     const Vec& h, double tol = 1e-9) {
    size_t n = t.size();
    if (n < 2 || E.size() != n || f.size() != n || h.size() != n)
        fail("InvalidConfig", "gronwall arrays must share one length of at least 2");
    double scale = 0;
    for (size_t i = 0; i < n; ++i) {
        if (!(E[i] > 0)) fail("InvalidConfig", "energy samples must be positive");
        if (f[i] < 0 || h[i] < 0)
            fail("InvalidConfig", "coefficient samples must be nonnegative");
        scale = std::max(scale, E[i]);
    }
    GronwallReport rep;
    for (size_t i = 0; i + 1 < n; ++i) {
        double dt = t[i + 1] - t[i];
        if (!(dt > 0)) fail("InvalidConfig", "time grid must ascend");
        double dE = (E[i + 1] - E[i]) / dt;
        if (dE > f[i] * std::sqrt(E[i]) + h[i] + tol * scale) {
            rep.hypothesis_ok = false;
            rep.fail_step = i;
            return rep;
        }
    }
    double F = 0, H = 0;
    rep.worst_slack = kInf;
    rep.conclusion_ok = true;
    double sqrt_scale = std::sqrt(scale);
    for (size_t i = 0; i < n; ++i) {
        if (i > 0) {
            double dt = t[i] - t[i - 1];
            F += 0.5 * (f[i] + f[i - 1]) * dt;
            H += 0.5 * (h[i] + h[i - 1]) * dt;
        }
        double rhs = std::sqrt(E[0]) + std::sqrt(H) + 0.5 * F;
        double slack = rhs - std::sqrt(E[i]);
        rep.worst_slack = std::min(rep.worst_slack, slack);
        if (slack < -tol * (1 + sqrt_scale)) rep.conclusion_ok = false;
    }
    return rep;
}

} // namespace negcurve

#endif
