#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "entropic_step.hpp"
#include "torus.hpp"

namespace fpcost {

// ============================================================================
// Step-cost integrals and the h-ladder
// ============================================================================

inline std::size_t steps_per_h(const MeasurePath& path, double h) {
    require(h > 0.0, Errc::invalid_argument, "h must be positive");
    double m = h / path.dt();
    auto mi = std::llround(m);
    if (mi < 1 || std::abs(m - double(mi)) > 1e-9 * m) throw Error(Errc::invalid_argument, "h is not a multiple of dt");
    if (std::size_t(mi) >= path.size()) throw Error(Errc::invalid_argument, "insufficient frames for h");
    return std::size_t(mi);
}

// Trapezoid weights over stamps 0..count-1 with spacing dt.
inline std::vector<double> trapezoid_weights(std::size_t count, double dt) {
    std::vector<double> w(count, dt);
    if (count == 1) {
        w[0] = 0.0;
        return w;
    }
    w.front() = w.back() = 0.5 * dt;
    return w;
}

struct RungResult {
    double h = 0.0;
    double energy = 0.0;          // (1/h) int E^h(mu_t, mu_{t+h}) dt over [a, b-h]
    double drift_energy = 0.0;    // int sum 1/2 |v^h|^2 mu_t dt
    double covariance_gap = 0.0;  // time/mu average of |D^h - Id|
    double third_moment = 0.0;    // time average of (1/h) int l(v) gamma
    bool converged = true;
    std::size_t failed_steps = 0;
    std::vector<std::vector<Point>> velocity;  // per stamp, per cell
};

inline RungResult evaluate_rung(const MeasurePath& path, double h, const SinkhornOptions& opt = {}, bool keep_velocity = false) {
    const std::size_t m = steps_per_h(path, h);
    const std::size_t count = path.size() - m;
    const auto w = trapezoid_weights(count, path.dt());
    const int p = path.grid().p();
    RungResult r;
    r.h = h;
    double wsum = 0.0;
    std::vector<double> warm;
    for (std::size_t k = 0; k < count; ++k) {
        auto s = solve_step(path[k], path[k + m], h, opt, warm);
        warm = s.log_v;
        for (double& v : warm)
            if (!std::isfinite(v)) v = 0.0;
        if (!s.converged) {
            r.converged = false;
            ++r.failed_steps;
        }
        r.energy += w[k] * s.cost / h;
        double de = 0.0, cg = 0.0;
        const Mat2 id = identity_mat(p);
        for (std::size_t x = 0; x < path.grid().cells(); ++x) {
            double mu = path[k][x];
            if (mu <= 0.0) continue;
            de += mu * 0.5 * norm2(s.velocity[x], p);
            Mat2 d{};
            for (int i = 0; i < 4; ++i) d[i] = s.covariance[x][i] - id[i];
            cg += mu * frobenius(d, p);
        }
        r.drift_energy += w[k] * de;
        r.covariance_gap += w[k] * cg;
        r.third_moment += w[k] * tail_moments(path[k], s.kernel, 1.0).third_moment;
        wsum += w[k];
        if (keep_velocity) r.velocity.push_back(std::move(s.velocity));
    }
    if (wsum > 0.0) {
        r.covariance_gap /= wsum;
        r.third_moment /= wsum;
    }
    return r;
}

inline double step_cost_integral(const MeasurePath& path, double h, const SinkhornOptions& opt = {}) {
    return evaluate_rung(path, h, opt).energy;
}

struct LadderReport {
    std::vector<double> h_values;
    std::vector<double> energies;
    std::vector<double> drift_energy;
    std::vector<double> covariance_gap;
    std::vector<double> third_moment;
    std::vector<bool> converged;
    double liminf_estimate = 0.0;
    bool diverging = false;
    // velocity tables of the two smallest rungs (per stamp, per cell)
    std::vector<std::vector<Point>> finest_velocity;
    std::vector<std::vector<Point>> second_velocity;
};

// Geometric ladder with ratio 2 from span/8 down to 4 dt (multiples of dt).
inline std::vector<double> default_ladder(const MeasurePath& path) {
    const double span = path.t1() - path.t0();
    std::vector<double> hs;
    double top = span / 8.0;
    auto m = std::max<long long>(4, std::llround(std::floor(top / path.dt())));
    for (long long k = m; k >= 4; k /= 2) {
        hs.push_back(double(k) * path.dt());
        if (k % 2) break;
    }
    return hs;
}

// Divergence: the last three rungs increase by at least 20% per halving and
// the increments do not shrink (a convergent approach has shrinking steps).
inline bool ladder_diverges(const std::vector<double>& e) {
    if (e.size() < 3) return false;
    std::size_t n = e.size();
    const double d1 = e[n - 2] - e[n - 3], d2 = e[n - 1] - e[n - 2];
    return e[n - 2] > 1.2 * e[n - 3] && e[n - 1] > 1.2 * e[n - 2] && e[n - 1] > 1e-6 && d2 >= 0.9 * d1;
}

inline LadderReport energy_ladder(const MeasurePath& path, const std::vector<double>& h_list, const SinkhornOptions& opt = {}) {
    require(!h_list.empty(), Errc::invalid_argument, "empty h ladder");
    for (std::size_t i = 1; i < h_list.size(); ++i)
        require(h_list[i] < h_list[i - 1], Errc::invalid_argument, "h ladder must be descending");
    LadderReport rep;
    for (std::size_t i = 0; i < h_list.size(); ++i) {
        bool keep = i + 2 >= h_list.size();
        auto r = evaluate_rung(path, h_list[i], opt, keep);
        rep.h_values.push_back(r.h);
        rep.energies.push_back(r.energy);
        rep.drift_energy.push_back(r.drift_energy);
        rep.covariance_gap.push_back(r.covariance_gap);
        rep.third_moment.push_back(r.third_moment);
        rep.converged.push_back(r.converged);
        if (keep) {
            rep.second_velocity = std::move(rep.finest_velocity);
            rep.finest_velocity = std::move(r.velocity);
        }
    }
    const std::size_t n = rep.energies.size();
    double mn = std::numeric_limits<double>::infinity();
    for (std::size_t i = n >= 3 ? n - 3 : 0; i < n; ++i) mn = std::min(mn, rep.energies[i]);
    rep.liminf_estimate = mn;
    rep.diverging = ladder_diverges(rep.energies);
    return rep;
}

}  // namespace fpcost
