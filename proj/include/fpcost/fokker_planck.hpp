#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "drift.hpp"
#include "gaussian.hpp"
#include "ladder.hpp"
#include "torus.hpp"

namespace fpcost {

struct FpOptions {
    int substeps = 1;  // internal steps per recorded frame
};

struct FpDiagnostics {
    std::size_t clip_events = 0;
    double clipped_mass = 0.0;
    std::size_t steps = 0;
};

struct StochasticKernel {
    TorusGrid grid;
    std::vector<double> matrix;  // cells x cells, row-major
    double s = 0.0;
    double t = 0.0;

    double at(std::size_t i, std::size_t j) const { return matrix[i * grid.cells() + j]; }
};

namespace detail {

// exp(tau/2 Laplacian) on the periodic grid as a circulant per axis.
class SpectralHeat {
public:
    SpectralHeat(const TorusGrid& g, double tau) : g_(g), c_(std::size_t(g.n()), 0.0) {
        const int n = g.n();
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int k = -(n - 1) / 2; k <= n / 2; ++k) {
                double mult = std::exp(-0.5 * (2.0 * pi * k) * (2.0 * pi * k) * tau);
                s += mult * std::cos(2.0 * pi * k * j / n);
            }
            c_[j] = s / n;
        }
    }

    void apply(std::vector<double>& m, std::vector<double>& tmp) const {
        const int n = g_.n();
        tmp.assign(m.size(), 0.0);
        if (g_.p() == 1) {
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += c_[std::size_t((i - j + n) % n)] * m[j];
                tmp[i] = s;
            }
            m.swap(tmp);
            return;
        }
        // axis 0 then axis 1
        for (int i1 = 0; i1 < n; ++i1)
            for (int i0 = 0; i0 < n; ++i0) {
                double s = 0.0;
                for (int j0 = 0; j0 < n; ++j0) s += c_[std::size_t((i0 - j0 + n) % n)] * m[std::size_t(j0) * n + i1];
                tmp[std::size_t(i0) * n + i1] = s;
            }
        for (int i0 = 0; i0 < n; ++i0)
            for (int i1 = 0; i1 < n; ++i1) {
                double s = 0.0;
                for (int j1 = 0; j1 < n; ++j1) s += c_[std::size_t((i1 - j1 + n) % n)] * tmp[std::size_t(i0) * n + j1];
                m[std::size_t(i0) * n + i1] = s;
            }
    }

private:
    TorusGrid g_;
    std::vector<double> c_;
};

// Face velocities: for each axis, the drift component at the face between a
// cell and its +1 neighbour.
inline std::vector<double> face_velocities(const TorusGrid& g, const DriftField& X, double t) {
    std::vector<double> u(g.cells() * g.p());
    const double half = 0.5 * g.cell_width();
    for (std::size_t c = 0; c < g.cells(); ++c) {
        Point x = g.center(c);
        for (int a = 0; a < g.p(); ++a) {
            Point f = x;
            f[a] += half;
            u[c * g.p() + a] = X(t, f)[a];
        }
    }
    return u;
}

// -div(X m) with third-order upwind-biased face reconstruction.
inline void advection_rhs(const TorusGrid& g, const std::vector<double>& u, const std::vector<double>& m, std::vector<double>& out) {
    const int p = g.p();
    const double inv = 1.0 / g.cell_width();
    out.assign(m.size(), 0.0);
    for (std::size_t c = 0; c < g.cells(); ++c) {
        auto co = g.coords(c);
        for (int a = 0; a < p; ++a) {
            auto nb = [&](int off) {
                auto q = co;
                q[a] += off;
                return g.index(q);
            };
            double v = u[c * p + a];
            double face;
            if (v >= 0.0) face = (-m[nb(-1)] + 5.0 * m[c] + 2.0 * m[nb(1)]) / 6.0;
            else face = (2.0 * m[c] + 5.0 * m[nb(1)] - m[nb(2)]) / 6.0;
            double flux = v * face * inv;
            out[c] -= flux;
            out[nb(1)] += flux;
        }
    }
}

class FpStepper {
public:
    FpStepper(const TorusGrid& g, const DriftField& X, double tau) : g_(g), X_(X), tau_(tau), heat_(g, 0.5 * tau) {
        require(tau > 0.0, Errc::invalid_argument, "dt must be positive");
        if (X.bound > 0.0 && tau > g.cell_width() / (2.0 * X.bound))
            throw Error(Errc::invalid_argument, "stability violation: dt > cell_width / (2 bound)");
        if (!X.time_dependent) u0_ = face_velocities(g, X, 0.0);
    }

    // One Strang step from time t.
    void step(std::vector<double>& m, double t, FpDiagnostics* diag) {
        heat_.apply(m, tmp_);
        const std::vector<double>& ua = velocities(t, 0);
        const std::vector<double>& ub = velocities(t + tau_, 1);
        const std::vector<double>& uc = velocities(t + 0.5 * tau_, 2);
        advection_rhs(g_, ua, m, k_);
        m1_.resize(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) m1_[i] = m[i] + tau_ * k_[i];
        advection_rhs(g_, ub, m1_, k_);
        for (std::size_t i = 0; i < m.size(); ++i) m1_[i] = 0.75 * m[i] + 0.25 * (m1_[i] + tau_ * k_[i]);
        advection_rhs(g_, uc, m1_, k_);
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] / 3.0 + 2.0 / 3.0 * (m1_[i] + tau_ * k_[i]);
        heat_.apply(m, tmp_);
        double s = 0.0, clipped = 0.0;
        std::size_t events = 0;
        for (double& v : m) {
            if (!std::isfinite(v)) throw Error(Errc::numerical, "NaN detected in Fokker-Planck step");
            if (v < 0.0) {
                clipped -= v;
                ++events;
                v = 0.0;
            }
            s += v;
        }
        require(s > 0.0, Errc::numerical, "mass vanished in Fokker-Planck step");
        for (double& v : m) v /= s;
        if (diag) {
            diag->clip_events += events;
            diag->clipped_mass += clipped;
            ++diag->steps;
        }
    }

private:
    const std::vector<double>& velocities(double t, int slot) {
        if (!X_.time_dependent) return u0_;
        ut_[slot] = face_velocities(g_, X_, t);
        return ut_[slot];
    }

    TorusGrid g_;
    const DriftField& X_;
    double tau_;
    SpectralHeat heat_;
    std::vector<double> u0_, tmp_, k_, m1_;
    std::vector<double> ut_[3];
};

inline std::size_t step_count(double t0, double t1, double dt) {
    require(t1 > t0, Errc::invalid_argument, "time span must be increasing");
    require(dt > 0.0, Errc::invalid_argument, "dt must be positive");
    double s = (t1 - t0) / dt;
    auto k = std::llround(s);
    if (k < 1 || std::abs(s - double(k)) > 1e-9 * s) throw Error(Errc::invalid_argument, "time span is not a multiple of dt");
    return std::size_t(k);
}

}  // namespace detail

// Strang splitting: spectral half-step of (1/2) Laplacian, SSP-RK3 upwind-biased
// finite-volume step of -div(X mu), spectral half-step.  Frames every dt.
inline MeasurePath fp_solve(const GridMeasure& mu0, const DriftField& drift, double t0, double t1, double dt,
                            const FpOptions& opt = {}, FpDiagnostics* diag = nullptr) {
    require(opt.substeps >= 1, Errc::invalid_argument, "substeps must be >= 1");
    const std::size_t steps = detail::step_count(t0, t1, dt);
    const double tau = dt / opt.substeps;
    detail::FpStepper stepper(mu0.grid(), drift, tau);
    std::vector<GridMeasure> frames{mu0};
    frames.reserve(steps + 1);
    std::vector<double> m(mu0.weights().begin(), mu0.weights().end());
    for (std::size_t k = 0; k < steps; ++k) {
        for (int s = 0; s < opt.substeps; ++s) stepper.step(m, t0 + k * dt + s * tau, diag);
        frames.push_back(GridMeasure::normalized(mu0.grid(), m));
    }
    return MeasurePath(mu0.grid(), t0, dt, std::move(frames));
}

// Row x is the solver output at t started from the single-cell indicator at x.
inline StochasticKernel transition_kernels(const TorusGrid& g, const DriftField& drift, double s, double t, double dt,
                                           const FpOptions& opt = {}, FpDiagnostics* diag = nullptr) {
    const std::size_t steps = detail::step_count(s, t, dt);
    const double tau = dt / opt.substeps;
    detail::FpStepper stepper(g, drift, tau);
    const std::size_t N = g.cells();
    StochasticKernel K{g, std::vector<double>(N * N, 0.0), s, t};
    std::vector<double> m(N);
    for (std::size_t x = 0; x < N; ++x) {
        std::fill(m.begin(), m.end(), 0.0);
        m[x] = 1.0;
        for (std::size_t k = 0; k < steps; ++k)
            for (int q = 0; q < opt.substeps; ++q) stepper.step(m, s + k * dt + q * tau, diag);
        std::copy(m.begin(), m.end(), K.matrix.begin() + std::ptrdiff_t(x * N));
    }
    return K;
}

inline StochasticKernel compose_kernels(const StochasticKernel& a, const StochasticKernel& b) {
    require_same_grid(a.grid, b.grid);
    if (std::abs(a.t - b.s) > 1e-12 * (1.0 + std::abs(a.t))) throw Error(Errc::invalid_argument, "kernel endpoint mismatch");
    const std::size_t N = a.grid.cells();
    StochasticKernel c{a.grid, std::vector<double>(N * N, 0.0), a.s, b.t};
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < N; ++k) {
            double v = a.matrix[i * N + k];
            if (v == 0.0) continue;
            const double* row = &b.matrix[k * N];
            double* out = &c.matrix[i * N];
            for (std::size_t j = 0; j < N; ++j) out[j] += v * row[j];
        }
    return c;
}

inline StochasticKernel identity_kernel(const TorusGrid& g, double t) {
    const std::size_t N = g.cells();
    StochasticKernel k{g, std::vector<double>(N * N, 0.0), t, t};
    for (std::size_t i = 0; i < N; ++i) k.matrix[i * N + i] = 1.0;
    return k;
}

// Torus-cell marginal of a jump kernel as a stochastic matrix.
inline StochasticKernel to_stochastic(const JumpKernel& j, double s) {
    const TorusGrid& g = j.grid();
    const std::size_t N = g.cells();
    StochasticKernel k{g, std::vector<double>(N * N, 0.0), s, s + j.h()};
    for (std::size_t x = 0; x < N; ++x)
        for (const auto& e : j.row(x)) k.matrix[x * N + e.target] += e.mass;
    return k;
}

inline GridMeasure apply_kernel(const GridMeasure& mu, const StochasticKernel& k) {
    require_same_grid(mu.grid(), k.grid);
    const std::size_t N = mu.size();
    std::vector<double> out(N, 0.0);
    for (std::size_t x = 0; x < N; ++x) {
        double w = mu[x];
        if (w == 0.0) continue;
        for (std::size_t y = 0; y < N; ++y) out[y] += w * k.matrix[x * N + y];
    }
    return GridMeasure::normalized(mu.grid(), std::move(out));
}

// ============================================================================
// Frozen-drift semigroup
// ============================================================================

// Torus-cell matrix whose row x holds midpoint weights of N(h X(t, x), h Id),
// wrapped over as many images as the variance needs, normalized per row.
inline StochasticKernel frozen_step_kernel(const TorusGrid& g, const DriftField& drift, double t, double h) {
    require(h > 0.0, Errc::invalid_argument, "h must be positive");
    const int p = g.p();
    const int reach = int(std::ceil(std::sqrt(h) * 9.0 + 1.0));
    const std::size_t N = g.cells();
    StochasticKernel k{g, std::vector<double>(N * N, 0.0), t, t + h};
    for (std::size_t x = 0; x < N; ++x) {
        Point m = drift.at(t, g, x);
        for (int i = 0; i < p; ++i) m[i] *= h;
        double* row = &k.matrix[x * N];
        double s = 0.0;
        for (std::size_t y = 0; y < N; ++y) {
            Point d = g.displacement(x, y, 0);
            double w = 0.0;
            std::array<double, 2> ax{1.0, 1.0};
            for (int i = 0; i < p; ++i) {
                // lift 0 has offset -lift_radius; recentre
                double base = d[i] + g.lift_radius() - m[i];
                double acc = 0.0;
                for (int j = -reach; j <= reach; ++j) {
                    double z = base + j;
                    acc += std::exp(-0.5 * z * z / h);
                }
                ax[i] = acc;
            }
            w = ax[0] * (p == 2 ? ax[1] : 1.0);
            row[y] = w;
            s += w;
        }
        require(s > 0.0, Errc::numerical, "gaussian row vanished");
        for (std::size_t y = 0; y < N; ++y) row[y] /= s;
    }
    return k;
}

struct FrozenSemigroup {
    double eps = 0.0;
    std::vector<StochasticKernel> windows;  // full-window kernels, composed in order
    MeasurePath path;
};

// On each window [a + k eps, a + (k+1) eps) every source moves as a Gaussian
// with the drift frozen at the window start; windows are composed.
inline FrozenSemigroup frozen_drift_semigroup(const GridMeasure& mu0, const DriftField& drift, double eps, double t0,
                                              double t1, double dt) {
    const TorusGrid& g = mu0.grid();
    const std::size_t per = detail::step_count(0.0, eps, dt);
    const std::size_t total = detail::step_count(t0, t1, dt);
    require(total % per == 0, Errc::invalid_argument, "time span must be a multiple of eps");
    std::vector<GridMeasure> frames{mu0};
    std::vector<StochasticKernel> windows;
    GridMeasure start = mu0;
    for (std::size_t w = 0; w < total / per; ++w) {
        const double tw = t0 + double(w * per) * dt;
        for (std::size_t j = 1; j <= per; ++j) {
            auto K = frozen_step_kernel(g, drift, tw, double(j) * dt);
            frames.push_back(apply_kernel(start, K));
            if (j == per) windows.push_back(std::move(K));
        }
        start = frames.back();
    }
    return {eps, std::move(windows), MeasurePath(g, t0, dt, std::move(frames))};
}

// ============================================================================
// SDE Monte Carlo
// ============================================================================

struct SdeSample {
    MeasurePath path;
    std::vector<Point> displacement;  // lifted displacement at the final time
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Euler-Maruyama on the lifted space, binned to the nearest cell every dt.
inline SdeSample sde_sample(const DriftField& drift, const GridMeasure& mu0, double t0, double t1, double dt,
                            std::size_t n_paths, std::uint64_t seed) {
    require(n_paths >= 1000, Errc::invalid_argument, "n_paths must be >= 1000");
    const TorusGrid& g = mu0.grid();
    const int p = g.p();
    const std::size_t steps = detail::step_count(t0, t1, dt);
    std::vector<std::vector<double>> counts(steps + 1, std::vector<double>(g.cells(), 0.0));
    std::vector<Point> disp(n_paths);
    std::vector<double> cdf(g.cells());
    std::partial_sum(mu0.weights().begin(), mu0.weights().end(), cdf.begin());
    const double sq = std::sqrt(dt);
    for (std::size_t i = 0; i < n_paths; ++i) {
        std::mt19937_64 rng(splitmix64(seed ^ splitmix64(i)));
        std::uniform_real_distribution<double> U(0.0, 1.0);
        std::normal_distribution<double> Z(0.0, 1.0);
        double r = U(rng) * cdf.back();
        std::size_t c = std::size_t(std::lower_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
        c = std::min(c, g.cells() - 1);
        Point x = g.center(c), x0 = x;
        for (int a = 0; a < p; ++a) x[a] += (U(rng) - 0.5) * g.cell_width();
        x0 = x;
        counts[0][g.locate(x)] += 1.0;
        for (std::size_t k = 0; k < steps; ++k) {
            Point v = drift(t0 + k * dt, x);
            for (int a = 0; a < p; ++a) x[a] += v[a] * dt + sq * Z(rng);
            counts[k + 1][g.locate(x)] += 1.0;
        }
        for (int a = 0; a < p; ++a) disp[i][a] = x[a] - x0[a];
    }
    std::vector<GridMeasure> frames;
    for (auto& c : counts) frames.push_back(GridMeasure::normalized(g, std::move(c)));
    return {MeasurePath(g, t0, dt, std::move(frames)), std::move(disp)};
}

// ============================================================================
// Weak residual
// ============================================================================

struct WeakBasis {
    int harmonics = 2;     // per axis
    int time_windows = 3;  // overlapping bumps covering the open interval
};

namespace detail {

struct Bump {
    double c, w;
    double value(double t) const {
        double s = (t - c) / w;
        if (std::abs(s) >= 1.0) return 0.0;
        return std::exp(1.0 - 1.0 / (1.0 - s * s));
    }
    double derivative(double t) const {
        double s = (t - c) / w;
        if (std::abs(s) >= 1.0) return 0.0;
        double q = 1.0 - s * s;
        return value(t) * (-2.0 * s / (q * q)) / w;
    }
};

inline std::vector<std::array<int, 2>> harmonic_set(int p, int K) {
    std::vector<std::array<int, 2>> ks;
    if (p == 1) {
        for (int k = 1; k <= K; ++k) ks.push_back({k, 0});
        return ks;
    }
    for (int k0 = 0; k0 <= K; ++k0)
        for (int k1 = -K; k1 <= K; ++k1) {
            if (k0 == 0 && k1 <= 0) continue;
            ks.push_back({k0, k1});
        }
    return ks;
}

}  // namespace detail

// Residual of  int int (d_t phi + 1/2 Lap phi + <grad phi, X>) dmu_t dt = 0  for
// phi = bump(t) * {sin, cos}(2 pi k.x).
inline std::vector<double> weak_residual(const MeasurePath& path, const DriftField& drift, const WeakBasis& basis = {}) {
    const TorusGrid& g = path.grid();
    const int p = g.p();
    require(basis.harmonics >= 1 && basis.time_windows >= 1, Errc::invalid_argument, "basis must be nonempty");
    if (4 * basis.harmonics > g.n()) throw Error(Errc::invalid_argument, "basis too large for grid (harmonics <= n/4)");
    const double T = path.t1() - path.t0();
    const int M = basis.time_windows;
    std::vector<detail::Bump> bumps;
    for (int j = 0; j < M; ++j) bumps.push_back({path.t0() + T * (j + 1) / (M + 1), T / (M + 1)});
    auto ks = detail::harmonic_set(p, basis.harmonics);
    const auto w = trapezoid_weights(path.size(), path.dt());
    const std::size_t nf = ks.size() * 2;
    std::vector<double> res(bumps.size() * nf, 0.0);
    std::vector<Point> X(g.cells());
    std::vector<Point> xc(g.cells());
    for (std::size_t c = 0; c < g.cells(); ++c) xc[c] = g.center(c);
    for (std::size_t f = 0; f < path.size(); ++f) {
        const double t = path.time(f);
        for (std::size_t c = 0; c < g.cells(); ++c) X[c] = drift(t, xc[c]);
        for (std::size_t q = 0; q < ks.size(); ++q) {
            Point kv{2.0 * pi * ks[q][0], 2.0 * pi * ks[q][1]};
            double k2 = norm2(kv, p);
            double s_val = 0.0, c_val = 0.0, s_gen = 0.0, c_gen = 0.0;
            for (std::size_t c = 0; c < g.cells(); ++c) {
                double m = path[f][c];
                if (m == 0.0) continue;
                double ph = dot(kv, xc[c], p);
                double sn = std::sin(ph), cs = std::cos(ph);
                double kx = dot(kv, X[c], p);
                s_val += m * sn;
                c_val += m * cs;
                // 1/2 Lap + X.grad
                s_gen += m * (-0.5 * k2 * sn + kx * cs);
                c_gen += m * (-0.5 * k2 * cs - kx * sn);
            }
            for (std::size_t b = 0; b < bumps.size(); ++b) {
                double bv = bumps[b].value(t), bd = bumps[b].derivative(t);
                res[b * nf + 2 * q] += w[f] * (bd * s_val + bv * s_gen);
                res[b * nf + 2 * q + 1] += w[f] * (bd * c_val + bv * c_gen);
            }
        }
    }
    return res;
}

inline double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// ============================================================================
// Drift recovery
// ============================================================================

struct RecoveredDrift {
    DriftField field;         // extrapolated field
    DriftField finest;        // v^h of the smallest rung
    double h = 0.0;
    double cauchy_gap = 0.0;  // sup |v^h1 - v^h2| at common mid-times on cells with mass >= 1e-4
    LadderReport ladder;
};

struct RecoveryOptions {
    // 1: smallest rung only; 2: 2 v^h - v^{2h} when the two smallest rungs have
    // ratio 2.  The O(h) bias of v^h is (h/2)(X.grad X + 1/2 Lap X).
    int extrapolation = 2;
};

// Velocity tables are placed at t + h/2 for the stamp t they start from.
inline RecoveredDrift recover_from_ladder(const MeasurePath& path, LadderReport rep, const RecoveryOptions& ropt = {}) {
    require(ropt.extrapolation == 1 || ropt.extrapolation == 2, Errc::invalid_argument, "extrapolation must be 1 or 2");
    require(!rep.finest_velocity.empty(), Errc::invalid_argument, "ladder report carries no velocity tables");
    if (rep.diverging) throw Error(Errc::divergence, "ladder diverges: cost-infinite path");
    const TorusGrid& g = path.grid();
    const int p = g.p();
    const double h = rep.h_values.back();
    double gap = 0.0;
    if (rep.h_values.size() >= 2) {
        const std::size_t m1 = steps_per_h(path, h);
        const std::size_t m2 = steps_per_h(path, rep.h_values[rep.h_values.size() - 2]);
        // mid-time t2 + h2/2 falls on a fine stamp or halfway between two
        const std::size_t lo = (m2 - m1) / 2, hi = lo + (m2 - m1) % 2;
        for (std::size_t k2 = 0; k2 < rep.second_velocity.size(); ++k2) {
            if (k2 + hi >= rep.finest_velocity.size()) break;
            for (std::size_t c = 0; c < g.cells(); ++c) {
                if (path[k2 + lo][c] < 1e-4 || path[k2 + hi][c] < 1e-4 || path[k2][c] < 1e-4) continue;
                Point d{};
                for (int i = 0; i < p; ++i)
                    d[i] = 0.5 * (rep.finest_velocity[k2 + lo][c][i] + rep.finest_velocity[k2 + hi][c][i]) - rep.second_velocity[k2][c][i];
                gap = std::max(gap, std::sqrt(norm2(d, p)));
            }
        }
    }
    DriftField finest = tabulated_drift(DriftTable(g, path.t0() + 0.5 * h, path.dt(), rep.finest_velocity));
    DriftField field = finest;
    const bool ratio2 = rep.h_values.size() >= 2 && std::abs(rep.h_values[rep.h_values.size() - 2] - 2.0 * h) < 1e-9 * h;
    if (ropt.extrapolation == 2 && ratio2) {
        DriftTable fine(g, path.t0() + 0.5 * h, path.dt(), rep.finest_velocity);
        DriftTable coarse(g, path.t0() + h, path.dt(), rep.second_velocity);
        // combine on the fine table's stamps
        std::vector<std::vector<Point>> v(fine.values().size(), std::vector<Point>(g.cells()));
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double t = fine.t0() + double(k) * fine.dt();
            for (std::size_t c = 0; c < g.cells(); ++c) {
                Point a = fine.values()[k][c], b = coarse(t, g.center(c));
                for (int i = 0; i < p; ++i) v[k][c][i] = 2.0 * a[i] - b[i];
            }
        }
        field = tabulated_drift(DriftTable(g, fine.t0(), fine.dt(), std::move(v)));
    }
    return {std::move(field), std::move(finest), h, gap, std::move(rep)};
}

inline RecoveredDrift drift_recovery(const MeasurePath& path, const std::vector<double>& h_list, const SinkhornOptions& opt = {},
                                     const RecoveryOptions& ropt = {}) {
    return recover_from_ladder(path, energy_ladder(path, h_list, opt), ropt);
}

}  // namespace fpcost
