#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "drift.hpp"
#include "entropic_step.hpp"
#include "fokker_planck.hpp"
#include "ladder.hpp"
#include "torus.hpp"
#include "transport.hpp"

namespace fpcost {

// int int 1/2 |X|^2 dmu_t dt over the whole path (trapezoid in time).
inline double drift_energy(const MeasurePath& path, const DriftField& drift) {
    const TorusGrid& g = path.grid();
    const auto w = trapezoid_weights(path.size(), path.dt());
    double e = 0.0;
    for (std::size_t k = 0; k < path.size(); ++k) {
        double s = 0.0;
        for (std::size_t c = 0; c < g.cells(); ++c)
            if (path[k][c] > 0.0) s += path[k][c] * 0.5 * norm2(drift.at(path.time(k), g, c), g.p());
        e += w[k] * s;
    }
    return e;
}

// ============================================================================
// Mollified upper bound
// ============================================================================

namespace detail {

// Circulant matrix of the wrapped N(0, eps Id) at cell centers, rows summing to 1.
// Symmetric, hence doubly stochastic.
inline std::vector<double> spatial_mollifier(const TorusGrid& g, double eps) {
    const int n = g.n();
    std::vector<double> c(std::size_t(n), 0.0);
    const int reach = int(std::ceil(std::sqrt(eps) * 9.0 + 1.0));
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int r = -reach; r <= reach; ++r) {
            double z = double(j) / n + r;
            acc += std::exp(-0.5 * z * z / eps);
        }
        c[j] = acc;
        s += acc;
    }
    for (double& v : c) v /= s;
    return c;
}

inline void apply_mollifier(const TorusGrid& g, const std::vector<double>& c, const std::vector<double>& in, std::vector<double>& out,
                            std::vector<double>& tmp) {
    const int n = g.n();
    auto at = [&](int d) { return c[std::size_t(((d % n) + n) % n)]; };
    if (g.p() == 1) {
        out.assign(in.size(), 0.0);
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += at(i - j) * in[j];
            out[i] = s;
        }
        return;
    }
    tmp.assign(in.size(), 0.0);
    out.assign(in.size(), 0.0);
    for (int i0 = 0; i0 < n; ++i0)
        for (int i1 = 0; i1 < n; ++i1) {
            double s = 0.0;
            for (int j0 = 0; j0 < n; ++j0) s += at(i0 - j0) * in[std::size_t(j0) * n + i1];
            tmp[std::size_t(i0) * n + i1] = s;
        }
    for (int i0 = 0; i0 < n; ++i0)
        for (int i1 = 0; i1 < n; ++i1) {
            double s = 0.0;
            for (int j1 = 0; j1 < n; ++j1) s += at(i1 - j1) * tmp[std::size_t(i0) * n + j1];
            out[std::size_t(i0) * n + i1] = s;
        }
}

// Time smoothing by a Gaussian of variance eps with even reflection about the
// first and last stamps.  Row k lists (stamp, weight).  Rows sum to 1 and the
// trapezoid weights are preserved: sum_k w_k T_kj = w_j.
inline std::vector<std::vector<std::pair<std::size_t, double>>> time_mollifier(std::size_t count, double dt, double eps) {
    std::vector<std::vector<std::pair<std::size_t, double>>> rows(count);
    if (count < 2) {
        rows[0].push_back({0, 1.0});
        return rows;
    }
    const long period = 2 * long(count - 1);
    std::vector<double> G(std::size_t(period), 0.0);
    double s = 0.0;
    for (long d = 0; d < period; ++d) {
        long dd = std::min(d, period - d);
        double z = double(dd) * dt;
        G[d] = std::exp(-0.5 * z * z / eps);
        s += G[d];
    }
    for (double& v : G) v /= s;
    for (std::size_t k = 0; k < count; ++k) {
        std::vector<double> acc(count, 0.0);
        for (long q = 0; q < period; ++q) {
            double w = G[std::size_t(((long(k) - q) % period + period) % period)];
            long j = q < long(count) ? q : period - q;
            acc[std::size_t(j)] += w;
        }
        for (std::size_t j = 0; j < count; ++j)
            if (acc[j] > 1e-300) rows[k].push_back({j, acc[j]});
    }
    return rows;
}

}  // namespace detail

struct MollifiedBound {
    std::vector<double> eps;
    std::vector<double> values;  // per eps
    double value = 0.0;          // at the smallest eps
};

// For each eps: rho = mu * N(0, eps) in space and time, E = (X mu) * N(0, eps),
// energy int int 1/2 |E|^2 / rho dt.  Without a drift the field is recovered
// from the path's default ladder.
inline MollifiedBound mollified_upper_bound(const MeasurePath& path, const std::optional<DriftField>& drift,
                                            std::vector<double> eps_list, const SinkhornOptions& opt = {}) {
    require(!eps_list.empty(), Errc::invalid_argument, "empty eps list");
    for (double e : eps_list) require(e > 0.0, Errc::invalid_argument, "eps must be positive");
    DriftField X = drift ? *drift : drift_recovery(path, default_ladder(path), opt).field;
    const TorusGrid& g = path.grid();
    const int p = g.p();
    const std::size_t K = path.size(), N = g.cells();
    const auto w = trapezoid_weights(K, path.dt());
    // flux X mu per stamp
    std::vector<std::vector<double>> flux(K * std::size_t(p), std::vector<double>(N));
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < N; ++c) {
            Point v = X.at(path.time(k), g, c);
            for (int a = 0; a < p; ++a) flux[k * p + a][c] = v[a] * path[k][c];
        }
    MollifiedBound out;
    std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
    std::vector<double> tmp;
    for (double eps : eps_list) {
        auto S = detail::spatial_mollifier(g, eps);
        // space first: S commutes with time smoothing
        std::vector<std::vector<double>> rhoS(K), fluxS(K * p);
        for (std::size_t k = 0; k < K; ++k) {
            std::vector<double> m(path[k].weights().begin(), path[k].weights().end());
            detail::apply_mollifier(g, S, m, rhoS[k], tmp);
            for (int a = 0; a < p; ++a) detail::apply_mollifier(g, S, flux[k * p + a], fluxS[k * p + a], tmp);
        }
        auto T = detail::time_mollifier(K, path.dt(), eps);
        double energy = 0.0;
        std::vector<double> rho(N), E(N * p);
        for (std::size_t k = 0; k < K; ++k) {
            std::fill(rho.begin(), rho.end(), 0.0);
            std::fill(E.begin(), E.end(), 0.0);
            for (auto [j, tw] : T[k]) {
                for (std::size_t c = 0; c < N; ++c) rho[c] += tw * rhoS[j][c];
                for (int a = 0; a < p; ++a)
                    for (std::size_t c = 0; c < N; ++c) E[c * p + a] += tw * fluxS[j * p + a][c];
            }
            double s = 0.0;
            for (std::size_t c = 0; c < N; ++c) {
                if (!(rho[c] > 0.0)) throw Error(Errc::numerical, "vanishing mollified density");
                double e2 = 0.0;
                for (int a = 0; a < p; ++a) e2 += E[c * p + a] * E[c * p + a];
                s += 0.5 * e2 / rho[c];
            }
            energy += w[k] * s;
        }
        out.eps.push_back(eps);
        out.values.push_back(energy);
    }
    out.value = out.values.back();
    return out;
}

// ============================================================================
// Relaxed bracket
// ============================================================================

struct RelaxedBracket {
    double lower = 0.0;
    double upper = 0.0;
    bool cost_infinite = false;
    LadderReport ladder;
    MollifiedBound mollified;
};

// lower: drift energy of the smallest rung's v^h, which sits below that rung's
// energy by the discrete lower-bound inequality;
// upper: min(ladder liminf estimate, mollified bound).
inline RelaxedBracket relaxed_bracket(const MeasurePath& path, const std::optional<DriftField>& drift,
                                      const std::vector<double>& h_list, const std::vector<double>& eps_list,
                                      const SinkhornOptions& opt = {}) {
    RelaxedBracket b;
    std::optional<DriftField> X = drift;
    b.ladder = energy_ladder(path, h_list, opt);
    if (!X && !b.ladder.diverging) X = recover_from_ladder(path, b.ladder).field;
    b.lower = b.ladder.drift_energy.back();
    if (b.ladder.diverging) {
        b.cost_infinite = true;
        b.upper = std::numeric_limits<double>::infinity();
        return b;
    }
    b.mollified = mollified_upper_bound(path, X, eps_list, opt);
    b.upper = std::min(b.ladder.liminf_estimate, b.mollified.value);
    return b;
}

// ============================================================================
// Modulus of continuity
// ============================================================================

struct ModulusSample {
    double t = 0.0, h = 0.0;
    double d2_squared = 0.0;
    double bound = 0.0;
};

// d_2(mu_t, mu_{t+h})^2 against 2 h A + 2 h p, where A = int int |X|^2 dmu dt
// is supplied by the caller.
inline std::vector<ModulusSample> modulus_check(const MeasurePath& path, double kinetic, const std::vector<std::size_t>& stamps,
                                                const std::vector<std::size_t>& lags) {
    std::vector<ModulusSample> out;
    const int p = path.grid().p();
    for (std::size_t k : stamps)
        for (std::size_t m : lags) {
            if (m == 0 || k + m >= path.size()) continue;
            double h = double(m) * path.dt();
            double d = wasserstein(path[k], path[k + m], 2);
            out.push_back({path.time(k), h, d * d, 2.0 * h * kinetic + 2.0 * h * p});
        }
    return out;
}

}  // namespace fpcost
