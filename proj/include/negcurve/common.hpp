#ifndef NEGCURVE_COMMON_HPP
#define NEGCURVE_COMMON_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace negcurve {

using Vec = std::vector<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct NegcurveError : std::runtime_error {
    std::string code;
    NegcurveError(std::string c, const std::string& msg)
        : std::runtime_error(c + ": " + msg), code(std::move(c)) {}
};

[[noreturn]] inline void fail(const std::string& code, const std::string& msg) {
    throw NegcurveError(code, msg);
}

inline double sq(double x) { return x * x; }

// Quintic smoothstep, C^2 at both ends; the bump/bridge primitive everywhere.
inline double smoothstep5(double u) {
    if (u <= 0) return 0;
    if (u >= 1) return 1;
    return u * u * u * (10 + u * (-15 + 6 * u));
}

// Antiderivative of smoothstep5 on [0,1] with F(0) = 0; F(1) = 1/2.
inline double smoothstep5_int(double u) {
    if (u <= 0) return 0;
    if (u >= 1) return u - 0.5;
    double u4 = u * u * u * u;
    return u4 * (2.5 + u * (-3 + u));
}

struct Field2 {
    // Row-major (i = slow index). Rows are the marching direction by
    // convention: t-slices for the inner grid, rho-slices for the outer.
    int nr = 0, nc = 0;
    Vec a;
    Field2() = default;
    Field2(int r, int c, double fill = 0.0) : nr(r), nc(c), a(size_t(r) * c, fill) {}
    double& operator()(int i, int j) { return a[size_t(i) * nc + j]; }
    double operator()(int i, int j) const { return a[size_t(i) * nc + j]; }
    bool empty() const { return a.empty(); }
};

inline Vec linspace(double a, double b, int n) {
    Vec x(n);
    for (int i = 0; i < n; ++i)
        x[i] = a + (b - a) * (n == 1 ? 0.0 : double(i) / (n - 1));
    if (n > 1) x.back() = b;
    return x;
}

// Cell-centered symmetric grid: x_i = (i - n/2 + 1/2) h. No node sits at
// x = 0, which keeps 1/x-type chart factors finite without special-casing.
inline Vec cell_centered(double half_width, int n) {
    Vec x(n);
    double h = 2.0 * half_width / n;
    for (int i = 0; i < n; ++i) x[i] = (i - n / 2 + 0.5) * h;
    return x;
}

inline double trapz(const Vec& x, const Vec& y) {
    double s = 0;
    for (size_t i = 1; i < x.size(); ++i) s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    return s;
}

// Centered first derivative on a (possibly nonuniform) grid, one-sided
// second-order stencils at the ends.
inline Vec diff_centered(const Vec& x, const Vec& f) {
    size_t n = x.size();
    Vec d(n, 0.0);
    if (n < 2) return d;
    if (n == 2) {
        d[0] = d[1] = (f[1] - f[0]) / (x[1] - x[0]);
        return d;
    }
    for (size_t i = 1; i + 1 < n; ++i) {
        double hl = x[i] - x[i - 1], hr = x[i + 1] - x[i];
        d[i] = (f[i + 1] * hl * hl + (hr * hr - hl * hl) * f[i] - f[i - 1] * hr * hr)
               / (hl * hr * (hl + hr));
    }
    {
        double h0 = x[1] - x[0], h1 = x[2] - x[1];
        d[0] = -(2 * h0 + h1) / (h0 * (h0 + h1)) * f[0]
               + (h0 + h1) / (h0 * h1) * f[1] - h0 / (h1 * (h0 + h1)) * f[2];
        size_t m = n - 1;
        double g1 = x[m] - x[m - 1], g0 = x[m - 1] - x[m - 2];
        d[m] = (2 * g1 + g0) / (g1 * (g0 + g1)) * f[m]
               - (g0 + g1) / (g0 * g1) * f[m - 1] + g1 / (g0 * (g0 + g1)) * f[m - 2];
    }
    return d;
}

inline size_t lower_index(const Vec& x, double xi) {
    // Largest i with x[i] <= xi, clamped to [0, n-2].
    auto it = std::upper_bound(x.begin(), x.end(), xi);
    size_t i = (it == x.begin()) ? 0 : size_t(it - x.begin()) - 1;
    return std::min(i, x.size() - 2);
}

inline double interp_linear(const Vec& x, const Vec& y, double xi) {
    if (x.size() == 1) return y[0];
    size_t i = lower_index(x, xi);
    double t = (xi - x[i]) / (x[i + 1] - x[i]);
    t = std::clamp(t, 0.0, 1.0);
    return y[i] + t * (y[i + 1] - y[i]);
}

// Monotone cubic (Fritsch-Carlson) interpolant; preserves monotone data,
// no overshoot near the sharp shoulders of the log-profile tables.
struct Pchip {
    Vec x, y, d;
    Pchip() = default;
    Pchip(Vec xs, Vec ys) : x(std::move(xs)), y(std::move(ys)) {
        size_t n = x.size();
        d.assign(n, 0.0);
        if (n < 2) return;
        Vec s(n - 1);
        for (size_t i = 0; i + 1 < n; ++i) s[i] = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
        if (n == 2) { d[0] = d[1] = s[0]; return; }
        d[0] = s[0];
        d[n - 1] = s[n - 2];
        for (size_t i = 1; i + 1 < n; ++i) {
            if (s[i - 1] * s[i] <= 0) { d[i] = 0; continue; }
            double hl = x[i] - x[i - 1], hr = x[i + 1] - x[i];
            double w1 = 2 * hr + hl, w2 = hr + 2 * hl;
            d[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
        }
    }
    double operator()(double xi) const {
        if (x.size() == 1) return y[0];
        size_t i = lower_index(x, xi);
        double h = x[i + 1] - x[i], t = (xi - x[i]) / h;
        double h00 = (1 + 2 * t) * sq(1 - t), h10 = t * sq(1 - t);
        double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
        return h00 * y[i] + h * h10 * d[i] + h01 * y[i + 1] + h * h11 * d[i + 1];
    }
    double deriv(double xi) const {
        if (x.size() < 2) return 0;
        size_t i = lower_index(x, xi);
        double h = x[i + 1] - x[i], t = (xi - x[i]) / h;
        double g00 = 6 * t * (t - 1), g10 = (1 - t) * (1 - 3 * t);
        double g01 = -g00, g11 = t * (3 * t - 2);
        return g00 * y[i] / h + g10 * d[i] + g01 * y[i + 1] / h + g11 * d[i + 1];
    }
};

// Running log-domain sum: accumulates sum_i w_i exp(l_i) without leaving
// log range. Weights must be nonnegative.
struct LogSum {
    double m = -kInf, s = 0.0;
    void add(double logv, double w = 1.0) {
        if (w <= 0 || logv == -kInf) return;
        double l = logv + std::log(w);
        if (l <= m) {
            s += std::exp(l - m);
        } else {
            s = s * std::exp(m - l) + 1.0;
            m = l;
        }
    }
    double log_total() const { return (m == -kInf) ? -kInf : m + std::log(s); }
};

// (tanh, sech) pair marched as joint state; sinh/cosh of the underlying
// angle never materialize, so the encoding survives arbitrarily large Phi.
struct TanhSech {
    double th = 0.0, sc = 1.0;
    double sinh() const { return th / sc; }
    double identity_defect() const { return std::abs(th * th + sc * sc - 1.0); }
};

inline int required_positive(int v, const char* name) {
    if (v <= 0) fail("InvalidConfig", std::string(name) + " must be positive");
    return v;
}

} // namespace negcurve

#endif
