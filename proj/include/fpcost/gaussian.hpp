#pragma once

#include <cmath>
#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "torus.hpp"

namespace fpcost {

// ============================================================================
// Gaussians N(a, Q) on R^p
// ============================================================================

struct GaussianSpec {
    int p = 1;
    Point mean{};
    Mat2 covariance{1.0, 0.0, 0.0, 1.0};

    void validate() const {
        require(p == 1 || p == 2, Errc::unsupported_dimension, "unsupported dimension");
        if (p == 1) {
            require(covariance[0] > 0.0, Errc::invalid_argument, "covariance must be positive definite");
            return;
        }
        require(std::abs(covariance[1] - covariance[2]) <= 1e-14 * (std::abs(covariance[1]) + 1.0), Errc::invalid_argument,
                "covariance must be symmetric");
        double det = covariance[0] * covariance[3] - covariance[1] * covariance[2];
        require(covariance[0] > 0.0 && det > 0.0, Errc::invalid_argument, "covariance must be positive definite");
    }
};

inline double gaussian_density(const GaussianSpec& s, const Point& v) {
    s.validate();
    if (s.p == 1) {
        double d = v[0] - s.mean[0];
        return std::exp(-0.5 * d * d / s.covariance[0]) / std::sqrt(2.0 * pi * s.covariance[0]);
    }
    const auto& Q = s.covariance;
    double det = Q[0] * Q[3] - Q[1] * Q[2];
    double d0 = v[0] - s.mean[0], d1 = v[1] - s.mean[1];
    double q = (Q[3] * d0 * d0 - (Q[1] + Q[2]) * d0 * d1 + Q[0] * d1 * d1) / det;
    return std::exp(-0.5 * q) / (2.0 * pi * std::sqrt(det));
}

// log of the isotropic N(0, h Id) density at displacement d.
inline double log_heat_density(const Point& d, double h, int p) {
    return -0.5 * norm2(d, p) / h - 0.5 * p * std::log(2.0 * pi * h);
}

// ============================================================================
// Wrapped heat kernel on the grid
// ============================================================================

// Upper bound on the N(0, h Id) mass not represented by the lift window.
inline double lift_tail_mass(const TorusGrid& g, double h) {
    return g.p() * std::erfc(double(g.lift_radius()) / std::sqrt(2.0 * h));
}

// Midpoint Gaussian weights of N(0, h Id) over (target, lift), normalized per row.
inline JumpKernel wrapped_heat_kernel(const TorusGrid& g, double h) {
    require(h > 0.0, Errc::invalid_argument, "heat kernel needs h > 0");
    if (lift_tail_mass(g, h) > 1e-9) throw Error(Errc::invalid_argument, "h too large for configured lift_radius");
    JumpKernel k(g, h);
    for (std::size_t x = 0; x < g.cells(); ++x) {
        std::vector<JumpEntry> row;
        row.reserve(g.cells() * g.lift_count());
        double s = 0.0;
        for (std::size_t y = 0; y < g.cells(); ++y)
            for (std::size_t l = 0; l < g.lift_count(); ++l) {
                Point d = g.displacement(x, y, l);
                double w = std::exp(-0.5 * norm2(d, g.p()) / h);
                if (w > 0.0) {
                    row.push_back({std::uint32_t(y), std::uint32_t(l), w});
                    s += w;
                }
            }
        for (auto& e : row) e.mass /= s;
        k.set_row(x, std::move(row));
    }
    return k;
}

// Rows are midpoint weights of N(mean(x), variance Id) over (target, lift),
// normalized per row.
template <class MeanFn>
JumpKernel gaussian_jump_kernel(const TorusGrid& g, double h, MeanFn&& mean, double variance) {
    require(variance > 0.0, Errc::invalid_argument, "variance must be positive");
    JumpKernel k(g, h);
    for (std::size_t x = 0; x < g.cells(); ++x) {
        const Point m = mean(x);
        std::vector<JumpEntry> row;
        double s = 0.0;
        for (std::size_t y = 0; y < g.cells(); ++y)
            for (std::size_t l = 0; l < g.lift_count(); ++l) {
                Point d = g.displacement(x, y, l);
                for (int i = 0; i < g.p(); ++i) d[i] -= m[i];
                double w = std::exp(-0.5 * norm2(d, g.p()) / variance);
                if (w > 0.0) {
                    row.push_back({std::uint32_t(y), std::uint32_t(l), w});
                    s += w;
                }
            }
        require(s > 0.0, Errc::numerical, "gaussian row vanished on the lift window");
        for (auto& e : row) e.mass /= s;
        k.set_row(x, std::move(row));
    }
    return k;
}

// ============================================================================
// Closed forms: T, B_diag, B_off-diag
// ============================================================================

inline double log_inv_2pih(double h) { return std::log(1.0 / (2.0 * pi * h)); }

inline double trace_bound(const Point& a, double delta, double h, int p) {
    require(delta > 0.0, Errc::invalid_argument, "trace_bound needs delta > 0");
    require(h > 0.0, Errc::invalid_argument, "h must be positive");
    return p * (delta - 1.0) / 2.0 + 0.5 * h * norm2(a, p) + 0.5 * p * std::log(1.0 / (2.0 * pi * h * delta));
}

inline double diag_bound(const Point& a, double delta, double h, int p) {
    require(delta > 0.0, Errc::invalid_argument, "diag_bound needs delta > 0");
    require(h > 0.0, Errc::invalid_argument, "h must be positive");
    return (delta - 1.0) / 2.0 + 0.5 * h * norm2(a, p) + 0.5 * std::log(1.0 / (2.0 * pi * h * delta)) +
           0.5 * (p - 1) * log_inv_2pih(h);
}

struct EtaAlpha {
    double eta;
    double alpha;
};

// Root of eta / (1 - eta^2) = delta in [0, 1).
inline EtaAlpha eta_alpha(double delta) {
    require(delta >= 0.0 && std::isfinite(delta), Errc::invalid_argument, "eta_alpha needs delta >= 0");
    double s = std::sqrt(1.0 + 4.0 * delta * delta);
    double eta = 2.0 * delta / (1.0 + s);
    return {eta, 1.0 - eta * eta};
}

inline double offdiag_bound(const Point& a, double delta, double h, int p) {
    require(delta >= 0.0, Errc::invalid_argument, "offdiag_bound needs delta >= 0");
    require(p >= 2, Errc::invalid_argument, "offdiag_bound needs p >= 2");
    require(h > 0.0, Errc::invalid_argument, "h must be positive");
    double s = std::sqrt(1.0 + 4.0 * delta * delta);
    // (-1 + s) / (2 delta^2) written as 2 / (1 + s)
    return (s - 1.0) / 2.0 + 0.5 * h * norm2(a, p) + 0.5 * std::log(2.0 / (1.0 + s)) + 0.5 * p * log_inv_2pih(h);
}

inline double gap_trace(double delta, int p, const Point& a = {}, double h = 1.0) {
    return trace_bound(a, delta, h, p) - trace_bound(a, 1.0, h, p);
}

inline double gap_diag(double delta, const Point& a = {}, double h = 1.0, int p = 2) {
    return diag_bound(a, delta, h, p) - diag_bound(a, 1.0, h, p);
}

inline double gap_offdiag(double delta, const Point& a = {}, double h = 1.0, int p = 2) {
    return offdiag_bound(a, delta, h, p) - offdiag_bound(a, 0.0, h, p);
}

// ============================================================================
// Tail-constrained problem F_h(r, delta)
// ============================================================================

namespace detail {

// Composite Simpson with a fixed panel count.
template <class F>
double composite_simpson(F f, double a, double b, int panels = 4096) {
    if (!(b > a)) return 0.0;
    const double step = (b - a) / (2 * panels);
    double s = f(a) + f(b);
    for (int k = 1; k < 2 * panels; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * step);
    return s * step / 3.0;
}

inline double int_pow(double u, int k) {
    double v = 1.0;
    for (int i = 0; i < k; ++i) v *= u;
    return v;
}

// Integrals over {|v| > r} in R^p of exp(-c |v|^2) and |v|^2 exp(-c |v|^2).
inline std::pair<double, double> radial_tail(double c, double r, int p) {
    // substitute u = rho sqrt(c); the window holds all but exp(-80) of the mass
    const double sc = std::sqrt(c);
    const double u0 = r * sc;
    const double u1 = std::sqrt(u0 * u0 + 80.0);
    const int panels = 4096;
    const double step = (u1 - u0) / (2 * panels);
    double s0 = 0.0, s2 = 0.0;
    for (int k = 0; k <= 2 * panels; ++k) {
        const double u = u0 + k * step;
        const double w = (k == 0 || k == 2 * panels) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        const double e = w * int_pow(u, p - 1) * std::exp(-(u - u0) * (u + u0));
        s0 += e;
        s2 += e * u * u;
    }
    const double scale = std::exp(-u0 * u0) * step / 3.0;
    const double surface = p == 1 ? 2.0 : 2.0 * pi;
    return {surface * scale * s0 / int_pow(sc, p), surface * scale * s2 / int_pow(sc, p + 2)};
}

// Integral over {|v| < r} of exp(-|v|^2 / 2h).
inline double radial_core(double h, double r, int p) {
    const double rmax = std::min(r, std::sqrt(160.0 * h));
    auto f = [&](double rho) { return int_pow(rho, p - 1) * std::exp(-rho * rho / (2.0 * h)); };
    const double surface = p == 1 ? 2.0 : 2.0 * pi;
    return surface * composite_simpson(f, 0.0, rmax);
}

struct TailIntegrals {
    double z;        // normalization integral, exp(1 - lambda)
    double moment2;  // integral over |v| > r of |v|^2 times the unnormalized density
};

inline TailIntegrals tail_integrals(double eta, double r, double h, int p, double core) {
    const double c = (1.0 + eta) / (2.0 * h);
    auto [m0, m2] = radial_tail(c, r, p);
    return {core + m0, m2};
}

}  // namespace detail

struct TailSolveResult {
    double eta;
    double lambda;
    double bar_delta;
    double f_value;
};

inline void check_tail_args(double r, double h, int p) {
    require(r > 0.0 && h > 0.0, Errc::invalid_argument, "r and h must be positive");
    require(p == 1 || p == 2, Errc::unsupported_dimension, "unsupported dimension");
}

inline TailSolveResult tail_state(double eta, double r, double h, int p, double core) {
    auto ti = detail::tail_integrals(eta, r, h, p, core);
    double bd = ti.moment2 / (2.0 * h * ti.z);
    double lambda = 1.0 - std::log(ti.z);
    return {eta, lambda, bd, 0.0};
}

// (1/2h) times the tail second moment of the normalized minimizer for multiplier eta.
inline double bar_delta(double eta, double r, double h, int p = 1) {
    require(eta > -1.0, Errc::invalid_argument, "bar_delta needs eta > -1");
    check_tail_args(r, h, p);
    return tail_state(eta, r, h, p, detail::radial_core(h, r, p)).bar_delta;
}

inline constexpr double eta_lower = -1.0 + 1e-12;
inline constexpr double eta_upper = 1e6;

// F_h(r, delta): bisection on eta for bar_delta(eta) = delta.
inline TailSolveResult out_cost(double r, double delta, double h, int p = 1) {
    check_tail_args(r, h, p);
    require(delta > 0.0, Errc::invalid_argument, "out_cost needs delta > 0");
    const double core = detail::radial_core(h, r, p);
    // bisection in s = log(1 + eta), bar_delta decreasing in s
    double lo = std::log1p(eta_lower), hi = std::log1p(eta_upper);
    auto at = [&](double s) { return tail_state(std::expm1(s), r, h, p, core); };
    TailSolveResult top = at(lo), bottom = at(hi);
    if (!(delta <= top.bar_delta && delta >= bottom.bar_delta))
        throw Error(Errc::invalid_argument, "delta outside the attainable tail range");
    TailSolveResult cur = top;
    for (int it = 0; it < 400; ++it) {
        double mid = 0.5 * (lo + hi);
        cur = at(mid);
        if (std::abs(cur.bar_delta - delta) <= 1e-10 * delta || hi - lo < 1e-15) break;
        if (cur.bar_delta > delta) lo = mid;
        else hi = mid;
    }
    if (std::abs(cur.bar_delta - delta) > 1e-8 * delta) throw Error(Errc::non_convergence, "tail bisection did not reach 1e-8");
    cur.f_value = (cur.lambda - 1.0) - cur.eta * delta - 0.5 * p * log_inv_2pih(h);
    return cur;
}

inline std::vector<double> delta0_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 8 * 64; ++k) g.push_back(1e-6 * std::pow(10.0, k / 64.0));
    return g;
}

// Smallest grid delta such that F_h(r, d) >= d / 2 for every grid d >= delta.
inline double delta0(double r, double h, int p = 1) {
    check_tail_args(r, h, p);
    auto grid = delta0_grid();
    std::size_t k = grid.size();
    while (k > 0) {
        double d = grid[k - 1];
        bool ok;
        try {
            ok = out_cost(r, d, h, p).f_value >= d / 2.0;
        } catch (const Error&) {
            ok = false;
        }
        if (!ok) break;
        --k;
    }
    if (k == grid.size()) throw Error(Errc::non_convergence, "delta0 search exhausted");
    return grid[k];
}

}  // namespace fpcost
