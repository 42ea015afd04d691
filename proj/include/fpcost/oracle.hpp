#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "gaussian.hpp"
#include "torus.hpp"

namespace fpcost {

enum class ConstraintKind { Trace, CorrDiag, CorrOffDiag, Out };

inline std::string_view to_string(ConstraintKind k) {
    switch (k) {
        case ConstraintKind::Trace: return "trace";
        case ConstraintKind::CorrDiag: return "diag";
        case ConstraintKind::CorrOffDiag: return "offdiag";
        case ConstraintKind::Out: return "out";
    }
    return "?";
}

inline ConstraintKind parse_constraint_kind(std::string_view s) {
    if (s == "trace") return ConstraintKind::Trace;
    if (s == "diag") return ConstraintKind::CorrDiag;
    if (s == "offdiag") return ConstraintKind::CorrOffDiag;
    if (s == "out") return ConstraintKind::Out;
    throw Error(Errc::config, "unknown constraint kind '" + std::string(s) + "'");
}

struct ConstraintSpec {
    ConstraintKind kind = ConstraintKind::Trace;
    Point a{};
    double delta = 1.0;
    double r = 1.0;  // Out only
    double h = 0.5;
    int p = 1;
    int i = 0, j = 1;  // component indices for CorrDiag / CorrOffDiag

    void validate() const {
        require(p == 1 || p == 2, Errc::unsupported_dimension, "unsupported dimension");
        require(h > 0.0, Errc::invalid_argument, "h must be positive");
        if (kind == ConstraintKind::CorrOffDiag) {
            require(delta >= 0.0, Errc::invalid_argument, "offdiag needs delta >= 0");
            require(p == 2 && i != j && i >= 0 && j >= 0 && i < p && j < p, Errc::invalid_argument, "offdiag needs p = 2 and i != j");
        } else {
            require(delta > 0.0, Errc::invalid_argument, "delta must be positive");
        }
        if (kind == ConstraintKind::CorrDiag) require(i >= 0 && i < p, Errc::invalid_argument, "component index out of range");
        if (kind == ConstraintKind::Out) require(r > 0.0, Errc::invalid_argument, "r must be positive");
    }
};

// Closed-form value on the same scale as oracle_constrained_min.
inline double closed_form(const ConstraintSpec& s) {
    s.validate();
    switch (s.kind) {
        case ConstraintKind::Trace: return trace_bound(s.a, s.delta, s.h, s.p);
        case ConstraintKind::CorrDiag: return diag_bound(s.a, s.delta, s.h, s.p);
        case ConstraintKind::CorrOffDiag: return offdiag_bound(s.a, s.delta, s.h, s.p);
        case ConstraintKind::Out: return out_cost(s.r, s.delta, s.h, s.p).f_value;
    }
    return 0.0;
}

struct OracleResult {
    double value = 0.0;
    std::vector<double> multipliers;
    int iterations = 0;
    double constraint_error = 0.0;
    std::size_t points = 0;
};

namespace detail {

// Velocity grid with features f_k(v) and base exponent -|v|^2 / 2h.
struct VelocityGrid {
    int m = 0;  // constraint count
    double log_vol = 0.0;
    std::vector<double> base;
    std::vector<double> feat;  // point-major, m per point
    std::vector<double> target;
    std::vector<bool> edge;    // outermost ring of the box
};

inline std::vector<double> axis_nodes(double lo, double hi, double step) {
    std::vector<double> x;
    const long cnt = std::lround((hi - lo) / step);
    for (long k = 0; k < cnt; ++k) x.push_back(lo + (double(k) + 0.5) * step);
    return x;
}

inline VelocityGrid build_velocity_grid(const ConstraintSpec& s, int vgrid, double widen) {
    const int p = s.p;
    const double sh = std::sqrt(s.h);
    double step = sh / vgrid;
    std::array<double, 2> lo{}, hi{};
    if (s.kind == ConstraintKind::Out) {
        // cell boundaries on |v| = r along each axis
        step = s.r / std::ceil(s.r / step);
        double L = s.r + widen * sh;
        L = step * std::ceil(L / step);
        for (int a = 0; a < p; ++a) lo[a] = -L, hi[a] = L;
    } else {
        double spread = std::max(1.0, s.delta);
        if (s.kind == ConstraintKind::CorrOffDiag) spread = 1.0 + 2.0 * s.delta;
        double half = widen * sh * std::sqrt(spread);
        half = step * std::ceil(half / step);
        for (int a = 0; a < p; ++a) {
            double c = s.a[a] * s.h;
            c = step * std::round(c / step);
            lo[a] = c - half;
            hi[a] = c + half;
        }
    }
    auto ax0 = axis_nodes(lo[0], hi[0], step);
    auto ax1 = p == 2 ? axis_nodes(lo[1], hi[1], step) : std::vector<double>{0.0};
    VelocityGrid G;
    G.log_vol = p * std::log(step);
    const Point ah{s.a[0] * s.h, s.a[1] * s.h};
    switch (s.kind) {
        case ConstraintKind::Trace: G.m = p + 1; break;
        case ConstraintKind::CorrDiag:
        case ConstraintKind::CorrOffDiag: G.m = p + 1; break;
        case ConstraintKind::Out: G.m = 1; break;
    }
    G.target.assign(std::size_t(G.m), 0.0);
    switch (s.kind) {
        case ConstraintKind::Trace: G.target[p] = p * s.delta; break;
        case ConstraintKind::CorrDiag:
        case ConstraintKind::CorrOffDiag: G.target[p] = s.delta; break;
        case ConstraintKind::Out: G.target[0] = s.delta; break;
    }
    const std::size_t total = ax0.size() * ax1.size();
    G.base.reserve(total);
    G.feat.reserve(total * G.m);
    for (std::size_t i0 = 0; i0 < ax0.size(); ++i0)
        for (std::size_t i1 = 0; i1 < ax1.size(); ++i1) {
            Point v{ax0[i0], ax1[i1]};
            double v2 = norm2(v, p);
            G.base.push_back(-0.5 * v2 / s.h);
            G.edge.push_back(i0 == 0 || i0 + 1 == ax0.size() || (p == 2 && (i1 == 0 || i1 + 1 == ax1.size())));
            Point w{v[0] - ah[0], v[1] - ah[1]};
            switch (s.kind) {
                case ConstraintKind::Trace:
                    for (int a = 0; a < p; ++a) G.feat.push_back(w[a]);
                    G.feat.push_back(norm2(w, p) / s.h);
                    break;
                case ConstraintKind::CorrDiag:
                    for (int a = 0; a < p; ++a) G.feat.push_back(w[a]);
                    G.feat.push_back(w[s.i] * w[s.i] / s.h);
                    break;
                case ConstraintKind::CorrOffDiag:
                    for (int a = 0; a < p; ++a) G.feat.push_back(w[a]);
                    G.feat.push_back(w[s.i] * w[s.j] / s.h);
                    break;
                case ConstraintKind::Out: {
                    // squared radius compared at the cell center; boundary cells aligned in 1D
                    G.feat.push_back(std::sqrt(v2) > s.r ? 0.5 * v2 / s.h : 0.0);
                    break;
                }
            }
        }
    return G;
}

struct DualEval {
    double value = 0.0;  // theta.c - log Z
    std::vector<double> grad;
    std::vector<double> hess;  // m x m, negative semidefinite
    double edge_mass = 0.0;
};

inline DualEval evaluate_dual(const VelocityGrid& G, const std::vector<double>& th, bool derivatives) {
    const int m = G.m;
    const std::size_t P = G.base.size();
    std::vector<double> ex(P);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < P; ++k) {
        double e = G.base[k];
        for (int q = 0; q < m; ++q) e += th[q] * G.feat[k * m + q];
        ex[k] = e;
        mx = std::max(mx, e);
    }
    double Z = 0.0, edge = 0.0;
    std::vector<double> mean(m, 0.0), second(std::size_t(m * m), 0.0);
    for (std::size_t k = 0; k < P; ++k) {
        double w = std::exp(ex[k] - mx);
        Z += w;
        if (G.edge[k]) edge += w;
        if (!derivatives) continue;
        const double* f = &G.feat[k * m];
        for (int q = 0; q < m; ++q) {
            mean[q] += w * f[q];
            for (int r = q; r < m; ++r) second[q * m + r] += w * f[q] * f[r];
        }
    }
    DualEval d;
    const double logZ = mx + std::log(Z) + G.log_vol;
    d.value = -logZ;
    for (int q = 0; q < m; ++q) d.value += th[q] * G.target[q];
    d.edge_mass = edge / Z;
    if (!derivatives) return d;
    d.grad.resize(m);
    d.hess.assign(std::size_t(m * m), 0.0);
    for (int q = 0; q < m; ++q) mean[q] /= Z;
    for (int q = 0; q < m; ++q) {
        d.grad[q] = G.target[q] - mean[q];
        for (int r = q; r < m; ++r) {
            double c = second[q * m + r] / Z - mean[q] * mean[r];
            d.hess[q * m + r] = d.hess[r * m + q] = -c;
        }
    }
    return d;
}

// Solve A x = b for small dense A (Gaussian elimination, partial pivoting).
inline std::vector<double> solve_dense(std::vector<double> A, std::vector<double> b) {
    const int n = int(b.size());
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r)
            if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
        if (std::abs(A[piv * n + c]) < 1e-300) throw Error(Errc::numerical, "singular dual Hessian");
        if (piv != c) {
            for (int k = 0; k < n; ++k) std::swap(A[c * n + k], A[piv * n + k]);
            std::swap(b[c], b[piv]);
        }
        for (int r = c + 1; r < n; ++r) {
            double f = A[r * n + c] / A[c * n + c];
            for (int k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int k = r + 1; k < n; ++k) s -= A[r * n + k] * x[k];
        x[r] = s / A[r * n + r];
    }
    return x;
}

inline std::vector<double> initial_multipliers(const ConstraintSpec& s, int m) {
    std::vector<double> th(std::size_t(m), 0.0);
    if (s.kind == ConstraintKind::Out) return th;
    for (int a = 0; a < s.p; ++a) th[a] = s.a[a];
    switch (s.kind) {
        case ConstraintKind::Trace:
        case ConstraintKind::CorrDiag: th[s.p] = 0.5 - 0.5 / s.delta; break;
        case ConstraintKind::CorrOffDiag: th[s.p] = eta_alpha(s.delta).eta; break;
        default: break;
    }
    return th;
}

}  // namespace detail

// Minimum of the discrete A_h functional  sum m log(m / vol) + sum m |v|^2 / 2h
// over velocity-grid densities under the given linear constraints, via Newton
// ascent on the concave dual  theta.c - log Z(theta).  vgrid is the number of
// velocity cells per sqrt(h).  Out is reported as F_h (shifted by the
// unconstrained Gaussian value).
inline OracleResult oracle_constrained_min(const ConstraintSpec& s, int vgrid = 8) {
    s.validate();
    if (vgrid < 8) throw Error(Errc::invalid_argument, "velocity grid too coarse (need >= 8 cells per sqrt(h))");
    double widen = 12.0;
    for (int attempt = 0; attempt < 6; ++attempt, widen *= 1.5) {
        auto G = detail::build_velocity_grid(s, vgrid, widen);
        auto th = detail::initial_multipliers(s, G.m);
        auto cur = detail::evaluate_dual(G, th, true);
        int it = 0;
        bool done = false;
        for (; it < 200; ++it) {
            double gn = 0.0;
            for (double g : cur.grad) gn = std::max(gn, std::abs(g));
            if (gn < 1e-12 * (1.0 + std::abs(G.target.back()))) {
                done = true;
                break;
            }
            // Newton direction for the concave dual: -H^{-1} g
            std::vector<double> negH(cur.hess.size());
            for (std::size_t q = 0; q < negH.size(); ++q) negH[q] = -cur.hess[q];
            for (int q = 0; q < G.m; ++q) negH[q * G.m + q] += 1e-14;
            auto dir = detail::solve_dense(negH, cur.grad);
            double slope = 0.0;
            for (int q = 0; q < G.m; ++q) slope += dir[q] * cur.grad[q];
            double t = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
                std::vector<double> trial = th;
                for (int q = 0; q < G.m; ++q) trial[q] += t * dir[q];
                auto v = detail::evaluate_dual(G, trial, false);
                if (std::isfinite(v.value) && v.value >= cur.value + 1e-4 * t * slope - 1e-15 * std::abs(cur.value)) {
                    th = trial;
                    moved = true;
                    break;
                }
            }
            cur = detail::evaluate_dual(G, th, true);
            if (!moved) {
                double gn2 = 0.0;
                for (double g : cur.grad) gn2 = std::max(gn2, std::abs(g));
                done = gn2 < 1e-8 * (1.0 + std::abs(G.target.back()));
                break;
            }
        }
        if (!done) throw Error(Errc::non_convergence, "dual Newton did not converge");
        if (cur.edge_mass > 1e-13) continue;
        OracleResult r;
        r.value = cur.value;
        if (s.kind == ConstraintKind::Out) r.value -= 0.5 * s.p * log_inv_2pih(s.h);
        r.multipliers = th;
        r.iterations = it;
        for (double g : cur.grad) r.constraint_error = std::max(r.constraint_error, std::abs(g));
        r.points = G.base.size();
        return r;
    }
    throw Error(Errc::non_convergence, "velocity box could not contain the minimizer");
}

}  // namespace fpcost
