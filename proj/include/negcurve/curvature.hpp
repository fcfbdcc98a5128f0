#ifndef NEGCURVE_CURVATURE_HPP
#define NEGCURVE_CURVATURE_HPP

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "negcurve/common.hpp"
#include "negcurve/quadrature.hpp"

namespace negcurve {

enum class Monotonicity { Increasing, Decreasing, Indefinite };

inline const char* to_string(Monotonicity m) {
    switch (m) {
        case Monotonicity::Increasing: return "Increasing";
        case Monotonicity::Decreasing: return "Decreasing";
        default: return "Indefinite";
    }
}

// Exponent pair weighting the scaled invariants u = G^alpha k^-beta (w + z),
// v = G^alpha k^-beta (z - w), with alpha = 1 - beta. The (0, 1) pair suits
// metrics whose k G^2 grows outward, (1, 0) those where it decays; the wrong
// branch loses decay the weights were meant to buy but stays well defined.
struct Regime {
    double alpha = 0;
    double beta = 1;
};

inline Regime regime_increasing() { return {0, 1}; }
inline Regime regime_decreasing() { return {1, 0}; }

inline Regime regime_for(Monotonicity m) {
    if (m == Monotonicity::Increasing) return regime_increasing();
    if (m == Monotonicity::Decreasing) return regime_decreasing();
    fail("IndefiniteRegime", "no scaling regime for an indefinite monotonicity class");
}

// Multiplicative oscillation factor a(theta, rho) of |K| = a^2 kstar^2.
// dlog_dtheta(i, theta, rho) is the i-th theta partial of log a, i = 1..3.
struct Oscillation {
    std::function<double(double, double)> value;
    std::function<double(double, double)> dlog_drho;
    std::function<double(int, double, double)> dlog_dtheta;
    bool theta_free = true;
};

inline Oscillation unit_oscillation() {
    Oscillation o;
    o.value = [](double, double) { return 1.0; };
    o.dlog_drho = [](double, double) { return 0.0; };
    o.dlog_dtheta = [](int, double, double) { return 0.0; };
    o.theta_free = true;
    return o;
}

struct CurvatureSpec {
    std::string family_tag;
    double gamma = 0.5;   // in (0,1); the decay split exponent, delta = gamma/2
    double rho_mono = 2.0; // radius beyond which Kbar is claimed monotone
    std::function<double(double)> kstar;      // radial decay factor, >= 0
    std::function<double(double)> dlog_kstar; // d/drho log kstar, tail form
    Vec breakpoints; // radii where kstar switches branch; integrators split here
    Oscillation osc;

    double delta() const { return gamma / 2; }
    double Kstar(double rho) const { return sq(kstar(rho)); }
    double Kbar(double rho) const { return std::pow(rho, 2 + gamma) * Kstar(rho); }
    double k(double theta, double rho) const { return osc.value(theta, rho) * kstar(rho); }
    // d/drho log Kbar; the (2+gamma)/rho part is exact, the rest analytic.
    double dlog_Kbar(double rho) const { return (2 + gamma) / rho + 2 * dlog_kstar(rho); }
};

namespace osc_detail {

// Mollified alternating square bumps: alpha = sum (-1)^n chi_n with chi_n a
// plateau of height 1 over [n, n+n^-2], ramped by quintic smoothsteps of
// half-width r_n = min(n^-2/4, 0.1). Each completed bump contributes exactly
// (-1)^n n^-2 to the running integral, so a = exp(1 + int_1^rho alpha) stays
// bounded and log a has finite total variation.
struct AlternatingBumps {
    int n_max;
    Vec prefix; // prefix[m] = sum_{n=1..m} (-1)^n n^-2
    double base_at_1 = 0;

    explicit AlternatingBumps(int nm = 1 << 17) : n_max(nm), prefix(size_t(nm) + 1, 0.0) {
        for (int n = 1; n <= n_max; ++n) {
            double term = 1.0 / (double(n) * n);
            prefix[n] = prefix[n - 1] + ((n % 2) ? -term : term);
        }
        base_at_1 = raw_integral(1.0);
    }

    static double ramp_r(int n) { return std::min(0.25 / (double(n) * n), 0.1); }

    static double chi(int n, double rho) {
        double r = ramp_r(n), w = 1.0 / (double(n) * n);
        double up = smoothstep5((rho - (n - r)) / (2 * r));
        double dn = smoothstep5((rho - (n + w - r)) / (2 * r));
        return up - dn;
    }

    static double chi_int(int n, double rho) {
        double r = ramp_r(n), w = 1.0 / (double(n) * n);
        double up = smoothstep5_int((rho - (n - r)) / (2 * r));
        double dn = smoothstep5_int((rho - (n + w - r)) / (2 * r));
        return 2 * r * (up - dn);
    }

    double alpha(double rho) const {
        if (rho < 0.5) return 0;
        int lo = std::max(1, int(std::floor(rho)) - 1);
        int hi = std::min(n_max, int(std::floor(rho)) + 1);
        double s = 0;
        for (int n = lo; n <= hi; ++n) s += ((n % 2) ? -1.0 : 1.0) * chi(n, rho);
        return s;
    }

    double raw_integral(double rho) const {
        if (rho < 0.5) return 0;
        int n0 = std::max(0, int(std::floor(rho)) - 3);
        n0 = std::min(n0, n_max);
        double s = prefix[n0];
        int hi = std::min(n_max, int(std::floor(rho)) + 1);
        for (int n = n0 + 1; n <= hi; ++n)
            s += ((n % 2) ? -1.0 : 1.0) * chi_int(n, rho);
        return s;
    }

    double log_a(double rho) const { return 1.0 + raw_integral(rho) - base_at_1; }
};

inline const AlternatingBumps& bumps() {
    static const AlternatingBumps b;
    return b;
}

// Even C^2 extension of the pure-power profile below rho = 1:
// log Kstar = m * gfun(rho), gfun(1) = 0, gfun'(1) = -1, gfun''(1) = 1
// matching rho^-m from above.
inline double gfun(double rho) { return 0.75 - rho * rho + 0.25 * rho * rho * rho * rho; }
inline double gfun_d(double rho) { return -2 * rho + rho * rho * rho; }

} // namespace osc_detail

inline Oscillation oscillating_factor() {
    Oscillation o;
    o.value = [](double, double rho) { return std::exp(osc_detail::bumps().log_a(rho)); };
    o.dlog_drho = [](double, double rho) { return osc_detail::bumps().alpha(rho); };
    o.dlog_dtheta = [](int, double, double) { return 0.0; };
    o.theta_free = true;
    return o;
}

inline double param_or(const std::map<std::string, double>& p, const std::string& key,
                       double dflt) {
    auto it = p.find(key);
    return it == p.end() ? dflt : it->second;
}

// Families:
//   log_power {g0, gamma}:       Kstar = 1/(rho^2 (log rho)^(2+g0)), rho >= 2,
//                                C^2-bridged to 0 just below 2.
//   pure_power {gamma, eta}:     Kstar = rho^-(2+gamma+eta) for rho >= 1 with
//                                the even extension below.
//   constant {gamma}:            Kstar = 1 (hyperbolic plane; inadmissible).
//   oscillating / oscillating_log_power {g0, gamma}: log_power decay with the
//                                alternating-bump oscillation factor.
inline CurvatureSpec make_family(const std::string& tag,
                                 const std::map<std::string, double>& params = {}) {
    CurvatureSpec s;
    s.family_tag = tag;
    s.osc = unit_oscillation();
    double rho_mono_req = param_or(params, "rho_mono", 2.0);

    if (tag == "log_power" || tag == "oscillating" || tag == "oscillating_log_power") {
        double g0 = param_or(params, "g0", 1.0);
        s.gamma = param_or(params, "gamma", 0.9);
        const double w = 1e-7; // bridge width; mass ~1.5e-7, under the 1e-6 gates
        double p = (2 + g0) / 2;
        s.kstar = [p, w](double rho) {
            if (rho <= 2 - w) return 0.0;
            double v = 1.0 / (rho * std::pow(std::log(rho), p));
            if (rho < 2) v *= std::sqrt(smoothstep5((rho - (2 - w)) / w));
            return v;
        };
        s.dlog_kstar = [p](double rho) {
            if (rho < 2) return 0.0;
            return -1.0 / rho - p / (rho * std::log(rho));
        };
        // Kbar = rho^gamma (log rho)^-(2+g0) turns increasing only past
        // exp((2+g0)/gamma); the monotone radius must clear that knee.
        s.rho_mono = std::max(rho_mono_req, 1.25 * std::exp((2 + g0) / s.gamma));
        s.breakpoints = {2 - w, 2.0};
        if (tag != "log_power") s.osc = oscillating_factor();
        return s;
    }
    if (tag == "pure_power") {
        s.gamma = param_or(params, "gamma", 0.5);
        double eta = param_or(params, "eta", 0.1);
        double m = 2 + s.gamma + eta;
        s.kstar = [m](double rho) {
            if (rho >= 1) return std::pow(rho, -m / 2);
            return std::exp(0.5 * m * osc_detail::gfun(rho));
        };
        s.dlog_kstar = [m](double rho) {
            if (rho >= 1) return -m / (2 * rho);
            return 0.5 * m * osc_detail::gfun_d(rho);
        };
        s.rho_mono = std::max(rho_mono_req, 1.0);
        s.breakpoints = {1.0};
        return s;
    }
    if (tag == "constant") {
        s.gamma = param_or(params, "gamma", 0.5);
        s.kstar = [](double) { return 1.0; };
        s.dlog_kstar = [](double) { return 0.0; };
        s.rho_mono = rho_mono_req;
        return s;
    }
    fail("UnknownFamily", "no curvature family named '" + tag + "'");
}

// integral over [0, inf) of rho * Kstar(rho) drho; +inf when the dyadic
// window test declares divergence.
struct TotalCurvature {
    double value = 0;
    bool finite = true;
    int tail_windows = 0;
};

inline TotalCurvature total_curvature(const CurvatureSpec& s, double rel_tol = 1e-9) {
    TotalCurvature out;
    auto head_f = [&](double rho) { return rho * s.Kstar(rho); };
    // Tail form (rho kstar)^2 / rho: squaring kstar directly underflows near
    // rho ~ e^372 for critically decaying families, silently zeroing the
    // integrand long before the rho ~ e^709 representability wall.
    auto tail_f = [&](double rho) { return sq(rho * s.kstar(rho)) / rho; };
    double head = adaptive_simpson(head_f, 0.0, 2.0, rel_tol * 0.1);
    auto tail = integrate_tail_log_dyadic(tail_f, 2.0, rel_tol);
    out.tail_windows = tail.windows;
    if (tail.diverged) {
        out.finite = false;
        out.value = kInf;
    } else {
        out.value = head + tail.value;
    }
    return out;
}

// Sign classification of d/drho log Kbar on a geometric sample of the
// claimed-monotone tail. The dead band absorbs roundoff on exact-power
// families whose log-derivative is analytically zero at this scale; a tail
// that is flat everywhere counts as Decreasing (nonincreasing).
inline Monotonicity classify_monotonicity(const CurvatureSpec& s, double rho_lo,
                                          double rho_hi, int n = 64) {
    bool up = false, down = false;
    for (int i = 0; i < n; ++i) {
        double rho = rho_lo * std::pow(rho_hi / rho_lo, double(i) / (n - 1));
        double d = s.dlog_Kbar(rho);
        if (std::abs(d) < 1e-10 / rho) continue;
        (d > 0 ? up : down) = true;
    }
    if (up && down) return Monotonicity::Indefinite;
    if (up) return Monotonicity::Increasing;
    return Monotonicity::Decreasing;
}

struct AdmissibilityReport {
    double total_decay_curvature = 0;
    bool flag_total_finite = false;
    bool flag_decay_vanishes = false;  // rho^2 Kstar -> 0 along the tail
    bool flag_osc_bounded = false;     // a bounded above and away from 0
    bool flag_osc_bv = false;          // integral of max |d log a| converges
    Monotonicity monotonicity = Monotonicity::Indefinite;
    double rho_mono = 0;
    bool efimov_obstruction = false; // curvature bounded away from 0 at infinity
    bool hong_regime = false;        // decreasing Kbar (predecessor condition)
    std::vector<std::string> failure_reasons;

    bool admissible() const {
        return flag_total_finite && flag_decay_vanishes && flag_osc_bounded && flag_osc_bv;
    }
};

inline AdmissibilityReport check_admissibility(const CurvatureSpec& s,
                                               double rho_tail = 0, int n_tail = 64) {
    if (rho_tail <= 0) rho_tail = 10 * s.rho_mono;
    if (rho_tail < 10 * s.rho_mono)
        fail("InvalidConfig", "admissibility tail must reach 10x the monotone radius");
    if (n_tail < 64) fail("InvalidConfig", "admissibility needs at least 64 tail samples");

    AdmissibilityReport r;
    r.rho_mono = s.rho_mono;

    auto tc = total_curvature(s);
    r.total_decay_curvature = tc.value;
    r.flag_total_finite = tc.finite;
    if (!tc.finite) r.failure_reasons.push_back("infinite total curvature");

    // rho^2 Kstar sampled on the geometric tail grid.
    Vec rr(n_tail), decay(n_tail);
    for (int i = 0; i < n_tail; ++i) {
        rr[i] = s.rho_mono * std::pow(rho_tail / s.rho_mono, double(i) / (n_tail - 1));
        decay[i] = rr[i] * rr[i] * s.Kstar(rr[i]);
    }
    double first = 0, last = 0;
    for (int i = 0; i < 8; ++i) {
        first = std::max(first, decay[i]);
        last = std::max(last, decay[n_tail - 1 - i]);
    }
    r.flag_decay_vanishes = (last == 0) || (last < 0.9 * first);
    if (!r.flag_decay_vanishes)
        r.failure_reasons.push_back("rho^2 Kstar does not vanish along the tail");
    r.efimov_obstruction = !r.flag_decay_vanishes && last > 0;

    // Oscillation factor bounds on a theta x rho sample.
    double amin = kInf, amax = 0, dmax = 0;
    for (int i = 0; i < n_tail; ++i) {
        for (int j = 0; j < 8; ++j) {
            double th = 2 * M_PI * j / 8;
            double av = s.osc.value(th, rr[i]);
            amin = std::min(amin, av);
            amax = std::max(amax, av);
            dmax = std::max(dmax, std::abs(s.osc.dlog_dtheta(1, th, rr[i]))
                                      + std::abs(s.osc.dlog_dtheta(2, th, rr[i]))
                                      + std::abs(s.osc.dlog_dtheta(3, th, rr[i])));
        }
    }
    r.flag_osc_bounded = std::isfinite(amax) && amin > 0 && std::isfinite(dmax);
    if (!r.flag_osc_bounded)
        r.failure_reasons.push_back("oscillation factor unbounded or vanishing");

    // BV of log a: dyadic windows of the sampled radial integral of
    // max_theta |d log a / d rho| must shrink. Dense uniform sampling, not
    // adaptive quadrature: the integrand may be a train of narrow bumps and
    // an adaptive rule's sparse probes can land between them and accept 0.
    double w_last = 0, w_max = 0;
    {
        double lo = std::max(1.0, s.rho_mono / 8);
        int nw = 0;
        auto f = [&](double rho) {
            double m = 0;
            for (int j = 0; j < 8; ++j)
                m = std::max(m, std::abs(s.osc.dlog_drho(2 * M_PI * j / 8, rho)));
            return m;
        };
        while (lo * 2 <= rho_tail && nw < 24) {
            const int ns = 8192;
            double h = lo / (ns - 1), w = 0;
            for (int i = 0; i < ns; ++i)
                w += f(lo + i * h) * ((i == 0 || i == ns - 1) ? 0.5 : 1.0) * h;
            w_last = w;
            w_max = std::max(w_max, w);
            lo *= 2;
            ++nw;
        }
    }
    r.flag_osc_bv = (w_max < 1e-12) || (w_last <= 0.6 * w_max);
    if (!r.flag_osc_bv)
        r.failure_reasons.push_back("oscillation variation does not decay");

    r.monotonicity = classify_monotonicity(s, s.rho_mono, rho_tail, n_tail);
    r.hong_regime = (r.monotonicity == Monotonicity::Decreasing);
    return r;
}

} // namespace negcurve

#endif
