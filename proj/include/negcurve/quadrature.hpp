#ifndef NEGCURVE_QUADRATURE_HPP
#define NEGCURVE_QUADRATURE_HPP

#include <cmath>
#include <functional>

#include "negcurve/common.hpp"

namespace negcurve {

namespace detail {
inline double simpson_val(double a, double fa, double b, double fb, double fm) {
    return (b - a) / 6.0 * (fa + 4 * fm + fb);
}

inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a,
                                   double fa, double b, double fb, double m, double fm,
                                   double whole, double tol, int depth) {
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = simpson_val(a, fa, m, fm, flm);
    double right = simpson_val(m, fm, b, fb, frm);
    double delta = left + right - whole;
    // Non-finite or astronomically large estimates cannot converge; refining
    // them would walk the full 2^depth tree. Hand the magnitude back and let
    // the caller's divergence logic deal with it.
    if (!std::isfinite(delta) || std::abs(left) + std::abs(right) > 1e200)
        return left + right;
    // tol is absolute for O(1) integrals and relative for large ones; without
    // the scale factor a large smooth integrand can never meet an absolute
    // target and recursion degenerates to the full tree. tol stays fixed down
    // the tree: halving it per level shrinks the acceptance threshold faster
    // than the roundoff noise floor of delta, and past that crossover every
    // subtree runs to the depth cap.
    double scale = std::max(1.0, std::abs(left) + std::abs(right));
    if (depth <= 0 || std::abs(delta) <= 15 * tol * scale)
        return left + right + delta / 15.0;
    return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, tol, depth - 1)
         + adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, tol, depth - 1);
}
} // namespace detail

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-12, int max_depth = 42) {
    if (a == b) return 0;
    double m = 0.5 * (a + b);
    double fa = f(a), fb = f(b), fm = f(m);
    double whole = detail::simpson_val(a, fa, b, fb, fm);
    return detail::adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, tol, max_depth);
}

struct ImproperResult {
    double value = 0;
    bool diverged = false;
    int windows = 0;
    double last_ratio = 0; // final consecutive window ratio observed
};

// Improper integral of f over [a, inf) by dyadic windows on the logarithmic
// axis u = log rho (substitution rho = e^u). Windows on the rho axis itself
// would misclassify 1/(rho log^p rho) tails, whose dyadic partial sums decay
// like (1/n)^p and never shrink by a fixed factor; in u they shrink
// geometrically, while the borderline 1/rho case keeps constant windows.
// Divergence is declared when window partials fail to shrink by a factor
// < 0.9 for 8 consecutive windows.
inline ImproperResult integrate_tail_log_dyadic(const std::function<double(double)>& f,
                                                double a, double rel_tol = 1e-10,
                                                int max_windows = 64) {
    if (a <= 0) fail("InvalidConfig", "tail integration requires a positive lower limit");
    ImproperResult out;
    auto g = [&](double u) { double r = std::exp(u); return f(r) * r; };
    double ua = std::log(a);
    double u_lo = std::max(ua, 0.5);
    if (ua < u_lo) out.value += adaptive_simpson(g, ua, u_lo, rel_tol * 0.1);

    // exp(u) overflows past u ~ 709; radii beyond that are not representable
    // as doubles, so integration stops at the wall. Hitting it is not
    // evidence of divergence (any genuinely divergent tail in scope trips the
    // ratio rule long before), it just truncates: for a 1/(rho log^p rho)
    // tail the lost mass is ~(p-1)^-1 709^(1-p).
    const double u_wall = 709.0;
    double prev = kInf;
    int fails = 0, tiny = 0;
    for (int n = 0; n < max_windows; ++n) {
        if (u_lo >= u_wall) break;
        double u_hi = std::min(u_lo * 2, u_wall);
        double w = adaptive_simpson(g, u_lo, u_hi, rel_tol * 0.05);
        out.windows = n + 1;
        out.value += w;
        double aw = std::abs(w);
        if (!std::isfinite(aw)) {
            out.diverged = true;
            out.last_ratio = kInf;
            return out;
        }
        if (std::isfinite(prev) && prev > 0) {
            out.last_ratio = aw / prev;
            fails = (out.last_ratio >= 0.9) ? fails + 1 : 0;
            if (fails >= 8) {
                out.diverged = true;
                return out;
            }
        }
        if (aw <= rel_tol * std::max(std::abs(out.value), 1e-300)) {
            if (++tiny >= 2) return out;
        } else {
            tiny = 0;
        }
        prev = aw;
        u_lo = u_hi;
    }
    // Ran out of windows without meeting the shrink tolerance; report the
    // partial value, not a divergence claim.
    return out;
}

} // namespace negcurve

#endif
