#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "gaussian.hpp"
#include "torus.hpp"

namespace fpcost {

struct SinkhornOptions {
    double tolerance = 1e-9;
    std::size_t max_iterations = 100000;
    double epsilon_floor = 1e-300;

    void validate() const {
        require(tolerance > 0.0 && tolerance <= 1e-4, Errc::invalid_argument, "tolerance must lie in (0, 1e-4]");
        require(max_iterations >= 1, Errc::invalid_argument, "max_iterations must be >= 1");
    }
};

// ============================================================================
// Reference N(0, h Id) on the lifted grid
// ============================================================================

// Per-axis tables over the signed cell difference diff in [-(n-1), n-1] and the
// lift k in [-L, L]: log f = -(diff/n + k)^2 / 2h, log S = log sum_k f.
class HeatReference {
public:
    HeatReference(const TorusGrid& g, double h) : g_(g), h_(h) {
        require(h > 0.0, Errc::invalid_argument, "h must be positive");
        const int n = g.n(), m = g.lifts_per_axis(), L = g.lift_radius();
        logf_.assign(std::size_t(2 * n - 1) * m, 0.0);
        logS_.assign(std::size_t(2 * n - 1), 0.0);
        for (int diff = -(n - 1); diff <= n - 1; ++diff) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = -L; k <= L; ++k) {
                double d = double(diff) / n + k;
                double v = -0.5 * d * d / h;
                logf_[slot(diff) * m + std::size_t(k + L)] = v;
                mx = std::max(mx, v);
            }
            double s = 0.0;
            for (int k = -L; k <= L; ++k) s += std::exp(logf_[slot(diff) * m + std::size_t(k + L)] - mx);
            logS_[slot(diff)] = mx + std::log(s);
        }
        log_norm_ = -0.5 * g.p() * std::log(2.0 * pi * h) + std::log(g.cell_volume());
    }

    const TorusGrid& grid() const noexcept { return g_; }
    double h() const noexcept { return h_; }
    double log_norm() const noexcept { return log_norm_; }

    // log K(x, y) = log sum_k w(x, y, k), w = N(0, h Id)(disp) * vol
    double log_k(std::size_t x, std::size_t y) const {
        auto cx = g_.coords(x), cy = g_.coords(y);
        double v = log_norm_;
        for (int a = 0; a < g_.p(); ++a) v += logS_[slot(cy[a] - cx[a])];
        return v;
    }

    // log w(x, y, k)
    double log_w(std::size_t x, std::size_t y, std::size_t lift) const {
        auto cx = g_.coords(x), cy = g_.coords(y);
        auto k = g_.lift_offset(lift);
        double v = log_norm_;
        const int m = g_.lifts_per_axis(), L = g_.lift_radius();
        for (int a = 0; a < g_.p(); ++a) v += logf_[slot(cy[a] - cx[a]) * m + std::size_t(k[a] + L)];
        return v;
    }

    // Lift shares w(x, y, k) / K(x, y) for every lift of (x, y).
    void lift_shares(std::size_t x, std::size_t y, std::vector<double>& out) const {
        auto cx = g_.coords(x), cy = g_.coords(y);
        const int m = g_.lifts_per_axis();
        out.resize(g_.lift_count());
        if (g_.p() == 1) {
            std::size_t s = slot(cy[0] - cx[0]);
            for (int k = 0; k < m; ++k) out[k] = std::exp(logf_[s * m + k] - logS_[s]);
            return;
        }
        std::size_t s0 = slot(cy[0] - cx[0]), s1 = slot(cy[1] - cx[1]);
        for (int k0 = 0; k0 < m; ++k0)
            for (int k1 = 0; k1 < m; ++k1)
                out[std::size_t(k0) * m + k1] = std::exp(logf_[s0 * m + k0] - logS_[s0] + logf_[s1 * m + k1] - logS_[s1]);
    }

    std::vector<double> dense_log_k() const {
        const std::size_t N = g_.cells();
        std::vector<double> out(N * N);
        for (std::size_t x = 0; x < N; ++x)
            for (std::size_t y = 0; y < N; ++y) out[x * N + y] = log_k(x, y);
        return out;
    }

private:
    std::size_t slot(int diff) const { return std::size_t(diff + g_.n() - 1); }

    TorusGrid g_;
    double h_;
    double log_norm_ = 0.0;
    std::vector<double> logf_, logS_;
};

// ============================================================================
// Kernel functionals
// ============================================================================

// sum_x mu(x) KL(gamma(x, .) || N(0, h Id)) with midpoint densities.
inline double kernel_cost(const GridMeasure& mu, const JumpKernel& k) {
    require_same_grid(mu.grid(), k.grid());
    const TorusGrid& g = k.grid();
    const double vol = g.cell_volume();
    double total = 0.0;
    for (std::size_t x = 0; x < mu.size(); ++x) {
        if (mu[x] <= 0.0) continue;
        double s = 0.0;
        for (const auto& e : k.row(x)) {
            if (e.mass <= 0.0) continue;
            Point d = g.displacement(x, e.target, e.lift);
            s += e.mass * (std::log(e.mass) - std::log(vol) - log_heat_density(d, k.h(), g.p()));
        }
        total += mu[x] * s;
    }
    return total;
}

// sum_x mu(x) sum (|v|^2 / 2h + log gamma) gamma  -  log(1 / 2 pi h)^{p/2}
inline double kernel_action(const GridMeasure& mu, const JumpKernel& k) {
    require_same_grid(mu.grid(), k.grid());
    const TorusGrid& g = k.grid();
    const double vol = g.cell_volume(), h = k.h();
    double total = 0.0;
    for (std::size_t x = 0; x < mu.size(); ++x) {
        if (mu[x] <= 0.0) continue;
        double s = 0.0;
        for (const auto& e : k.row(x)) {
            if (e.mass <= 0.0) continue;
            Point d = g.displacement(x, e.target, e.lift);
            s += e.mass * (0.5 * norm2(d, g.p()) / h + std::log(e.mass / vol));
        }
        total += mu[x] * s;
    }
    return total - 0.5 * g.p() * log_inv_2pih(h);
}

struct KernelSummary {
    std::vector<Point> velocity;   // (1/h) mean displacement
    std::vector<Mat2> covariance;  // (1/h) centered second moment
};

inline KernelSummary summarize_kernel(const GridMeasure& mu, const JumpKernel& k) {
    require_same_grid(mu.grid(), k.grid());
    const TorusGrid& g = k.grid();
    const int p = g.p();
    const double h = k.h();
    KernelSummary s{std::vector<Point>(g.cells(), Point{}), std::vector<Mat2>(g.cells(), Mat2{})};
    for (std::size_t x = 0; x < g.cells(); ++x) {
        if (mu[x] <= 0.0) continue;
        Point m{};
        for (const auto& e : k.row(x)) {
            Point d = g.displacement(x, e.target, e.lift);
            for (int i = 0; i < p; ++i) m[i] += e.mass * d[i];
        }
        Mat2 c{};
        for (const auto& e : k.row(x)) {
            Point d = g.displacement(x, e.target, e.lift);
            for (int i = 0; i < p; ++i)
                for (int j = i; j < p; ++j) c[i * 2 + j] += e.mass * (d[i] - m[i]) * (d[j] - m[j]);
        }
        c[2] = c[1];
        for (int i = 0; i < p; ++i) s.velocity[x][i] = m[i] / h;
        for (auto& v : c) v /= h;
        s.covariance[x] = c;
    }
    return s;
}

struct TailMoments {
    double epsilon_out;
    double delta_out;
    double third_moment;
};

inline double l_weight(double r) { return r <= 1.0 ? r * r * r : 1.0; }

inline TailMoments tail_moments(const GridMeasure& mu, const JumpKernel& k, double r) {
    require(r > 0.0, Errc::invalid_argument, "radius must be positive");
    require_same_grid(mu.grid(), k.grid());
    const TorusGrid& g = k.grid();
    const double h = k.h();
    TailMoments t{0.0, 0.0, 0.0};
    for (std::size_t x = 0; x < g.cells(); ++x) {
        if (mu[x] <= 0.0) continue;
        double eo = 0.0, dout = 0.0, th = 0.0;
        for (const auto& e : k.row(x)) {
            Point d = g.displacement(x, e.target, e.lift);
            double n2 = norm2(d, g.p());
            double nr = std::sqrt(n2);
            if (nr > r) {
                eo += e.mass;
                dout += e.mass * n2;
            }
            th += e.mass * l_weight(nr);
        }
        t.epsilon_out += mu[x] * eo / h;
        t.delta_out += mu[x] * dout / (2.0 * h);
        t.third_moment += mu[x] * th / h;
    }
    return t;
}

// ============================================================================
// solve_step
// ============================================================================

struct StepCostResult {
    double cost = 0.0;
    JumpKernel kernel;
    std::vector<Point> velocity;
    std::vector<Mat2> covariance;
    std::vector<double> log_u;  // row scalings
    std::vector<double> log_v;  // column scalings
    std::size_t iterations = 0;
    bool converged = false;
    bool log_domain = false;
    double marginal_error = 0.0;
    GridMeasure mu1;
    GridMeasure mu2;
};

namespace detail {

struct ScalingState {
    std::vector<double> log_u, log_v;
    std::vector<double> row_log_norm;  // log (K v)_x
    std::size_t iterations = 0;
    bool converged = false;
    double error = 0.0;
};

inline double log_or_neg_inf(double v) { return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity(); }

// Linear-domain alternating scaling; returns false if the scalings leave the
// representable range.
inline bool scale_linear(const std::vector<double>& K, std::span<const double> a, std::span<const double> b,
                         std::span<const double> log_v0, const SinkhornOptions& opt, ScalingState& st) {
    const std::size_t N = a.size();
    std::vector<double> u(N, 0.0), v(N), Kv(N), Ku(N);
    for (std::size_t y = 0; y < N; ++y) v[y] = b[y] > 0.0 ? std::exp(log_v0.empty() ? 0.0 : log_v0[y]) : 0.0;
    for (std::size_t y = 0; y < N; ++y)
        if (b[y] > 0.0 && !(v[y] > 0.0 && std::isfinite(v[y]))) return false;
    st.converged = false;
    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
        for (std::size_t x = 0; x < N; ++x) {
            const double* row = &K[x * N];
            double s = 0.0;
            for (std::size_t y = 0; y < N; ++y) s += row[y] * v[y];
            Kv[x] = s;
        }
        for (std::size_t x = 0; x < N; ++x) {
            if (a[x] > 0.0) {
                if (!(Kv[x] > 0.0) || !std::isfinite(Kv[x])) return false;
                u[x] = a[x] / Kv[x];
                if (!std::isfinite(u[x])) return false;
            } else {
                u[x] = 0.0;
            }
        }
        std::fill(Ku.begin(), Ku.end(), 0.0);
        for (std::size_t x = 0; x < N; ++x) {
            if (u[x] == 0.0) continue;
            const double* row = &K[x * N];
            const double ux = u[x];
            for (std::size_t y = 0; y < N; ++y) Ku[y] += ux * row[y];
        }
        double err = 0.0;
        for (std::size_t y = 0; y < N; ++y) err += std::abs(v[y] * Ku[y] - b[y]);
        err *= 0.5;
        st.iterations = it;
        st.error = err;
        if (!std::isfinite(err)) return false;
        if (err <= opt.tolerance) {
            st.converged = true;
            break;
        }
        if (it == opt.max_iterations) break;
        for (std::size_t y = 0; y < N; ++y) {
            if (b[y] > 0.0) {
                if (!(Ku[y] > 0.0)) return false;
                v[y] = b[y] / Ku[y];
                if (!std::isfinite(v[y]) || v[y] == 0.0) return false;
            }
        }
    }
    st.log_u.resize(N);
    st.log_v.resize(N);
    st.row_log_norm.resize(N);
    for (std::size_t x = 0; x < N; ++x) {
        st.log_u[x] = log_or_neg_inf(u[x]);
        st.log_v[x] = log_or_neg_inf(v[x]);
        st.row_log_norm[x] = log_or_neg_inf(Kv[x]);
    }
    return true;
}

inline void scale_log(const std::vector<double>& logK, std::span<const double> a, std::span<const double> b,
                      std::span<const double> log_v0, const SinkhornOptions& opt, ScalingState& st) {
    const std::size_t N = a.size();
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> f(N, ninf), g(N), lse(N), col(N), la(N), lb(N);
    for (std::size_t i = 0; i < N; ++i) {
        la[i] = log_or_neg_inf(a[i]);
        lb[i] = log_or_neg_inf(b[i]);
        g[i] = b[i] > 0.0 ? (log_v0.empty() || !std::isfinite(log_v0[i]) ? 0.0 : log_v0[i]) : ninf;
    }
    st.converged = false;
    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
        for (std::size_t x = 0; x < N; ++x) {
            const double* row = &logK[x * N];
            double mx = ninf;
            for (std::size_t y = 0; y < N; ++y) mx = std::max(mx, row[y] + g[y]);
            double s = 0.0;
            for (std::size_t y = 0; y < N; ++y) s += std::exp(row[y] + g[y] - mx);
            lse[x] = mx + std::log(s);
            f[x] = a[x] > 0.0 ? la[x] - lse[x] : ninf;
        }
        for (std::size_t y = 0; y < N; ++y) {
            double mx = ninf;
            for (std::size_t x = 0; x < N; ++x) mx = std::max(mx, logK[x * N + y] + f[x]);
            double s = 0.0;
            for (std::size_t x = 0; x < N; ++x) s += std::exp(logK[x * N + y] + f[x] - mx);
            col[y] = mx + std::log(s);
        }
        double err = 0.0;
        for (std::size_t y = 0; y < N; ++y) {
            double m = std::isfinite(g[y]) ? std::exp(g[y] + col[y]) : 0.0;
            err += std::abs(m - b[y]);
        }
        err *= 0.5;
        st.iterations = it;
        st.error = err;
        if (err <= opt.tolerance) {
            st.converged = true;
            break;
        }
        if (it == opt.max_iterations) break;
        for (std::size_t y = 0; y < N; ++y) g[y] = b[y] > 0.0 ? lb[y] - col[y] : ninf;
    }
    st.log_u = f;
    st.log_v = g;
    st.row_log_norm = lse;
}

}  // namespace detail

// Entropic projection of mu1 (x) N(0, h Id) onto the marginal mu2.  The solve
// runs on torus cells; per-lift masses follow the reference proportions.
inline StepCostResult solve_step(const GridMeasure& mu1, const GridMeasure& mu2, double h,
                                 const SinkhornOptions& opt = {}, std::span<const double> warm_log_v = {}) {
    require_same_grid(mu1.grid(), mu2.grid());
    require(h > 0.0, Errc::invalid_argument, "h must be positive");
    opt.validate();
    const TorusGrid& g = mu1.grid();
    const std::size_t N = g.cells();
    require(warm_log_v.empty() || warm_log_v.size() == N, Errc::invalid_argument, "warm start size mismatch");
    HeatReference ref(g, h);
    auto logK = ref.dense_log_k();

    detail::ScalingState st;
    bool linear_ok = false;
    double min_log = *std::min_element(logK.begin(), logK.end());
    if (min_log >= std::log(opt.epsilon_floor) && min_log > -700.0) {
        std::vector<double> K(logK.size());
        for (std::size_t i = 0; i < K.size(); ++i) K[i] = std::exp(logK[i]);
        linear_ok = detail::scale_linear(K, mu1.weights(), mu2.weights(), warm_log_v, opt, st);
    }
    if (!linear_ok) detail::scale_log(logK, mu1.weights(), mu2.weights(), warm_log_v, opt, st);

    JumpKernel kernel(g, h);
    std::vector<double> shares;
    for (std::size_t x = 0; x < N; ++x) {
        if (mu1[x] <= 0.0) continue;
        std::vector<JumpEntry> row;
        row.reserve(N * g.lift_count());
        double s = 0.0;
        for (std::size_t y = 0; y < N; ++y) {
            if (!std::isfinite(st.log_v[y])) continue;
            double P = std::exp(logK[x * N + y] + st.log_v[y] - st.row_log_norm[x]);
            if (!(P > 0.0)) continue;
            ref.lift_shares(x, y, shares);
            for (std::size_t l = 0; l < shares.size(); ++l) {
                double m = P * shares[l];
                if (m > 0.0) {
                    row.push_back({std::uint32_t(y), std::uint32_t(l), m});
                    s += m;
                }
            }
        }
        require(s > 0.0, Errc::numerical, "empty kernel row on a supported cell");
        for (auto& e : row) e.mass /= s;
        kernel.set_row(x, std::move(row));
    }

    auto summary = summarize_kernel(mu1, kernel);
    StepCostResult r{kernel_cost(mu1, kernel), std::move(kernel), std::move(summary.velocity), std::move(summary.covariance),
                     std::move(st.log_u), std::move(st.log_v), st.iterations, st.converged, !linear_ok, st.error, mu1, mu2};
    return r;
}

inline const std::vector<Point>& forward_velocity(const StepCostResult& r) {
    require(r.converged, Errc::non_convergence, "forward_velocity needs a converged result");
    return r.velocity;
}

inline const std::vector<Mat2>& covariance(const StepCostResult& r) {
    require(r.converged, Errc::non_convergence, "covariance needs a converged result");
    return r.covariance;
}

inline TailMoments tail_moments(const StepCostResult& r, double radius) {
    require(r.converged, Errc::non_convergence, "tail_moments needs a converged result");
    return tail_moments(r.mu1, r.kernel, radius);
}

// sum_x mu1(x) [T(v^h(x), tr D^h(x) / p) - log(1/2 pi h)^{p/2}]
inline double step_lower_bound(const StepCostResult& r) {
    const TorusGrid& g = r.kernel.grid();
    const int p = g.p();
    const double h = r.kernel.h();
    double total = 0.0;
    for (std::size_t x = 0; x < g.cells(); ++x) {
        if (r.mu1[x] <= 0.0) continue;
        double tr = 0.0;
        for (int i = 0; i < p; ++i) tr += r.covariance[x][i * 2 + i];
        double delta = tr / p;
        if (!(delta > 0.0)) return -std::numeric_limits<double>::infinity();
        total += r.mu1[x] * (trace_bound(r.velocity[x], delta, h, p) - 0.5 * p * log_inv_2pih(h));
    }
    return total;
}

// ============================================================================
// Penalized cost c_lambda
// ============================================================================

namespace detail {

// J(psi) = <psi, mu2> - sum_x mu1(x) log sum_y K(x, y) exp(psi(y)) and its gradient.
class SemiDual {
public:
    SemiDual(const GridMeasure& mu1, const GridMeasure& mu2, double h)
        : a_(mu1.weights().begin(), mu1.weights().end()), b_(mu2.weights().begin(), mu2.weights().end()) {
        HeatReference ref(mu1.grid(), h);
        logK_ = ref.dense_log_k();
        N_ = a_.size();
    }

    double value(const std::vector<double>& psi, std::vector<double>* grad) const {
        const double ninf = -std::numeric_limits<double>::infinity();
        double v = 0.0;
        for (std::size_t y = 0; y < N_; ++y)
            if (b_[y] > 0.0) v += psi[y] * b_[y];
        if (grad) {
            grad->assign(N_, 0.0);
            for (std::size_t y = 0; y < N_; ++y) (*grad)[y] = b_[y];
        }
        std::vector<double> t(N_);
        for (std::size_t x = 0; x < N_; ++x) {
            if (a_[x] <= 0.0) continue;
            const double* row = &logK_[x * N_];
            double mx = ninf;
            for (std::size_t y = 0; y < N_; ++y) {
                t[y] = row[y] + psi[y];
                mx = std::max(mx, t[y]);
            }
            double s = 0.0;
            for (std::size_t y = 0; y < N_; ++y) {
                t[y] = std::exp(t[y] - mx);
                s += t[y];
            }
            v -= a_[x] * (mx + std::log(s));
            if (grad)
                for (std::size_t y = 0; y < N_; ++y) (*grad)[y] -= a_[x] * t[y] / s;
        }
        return v;
    }

    std::size_t size() const noexcept { return N_; }

private:
    std::vector<double> a_, b_, logK_;
    std::size_t N_ = 0;
};

// Projection onto {sum z = 0, |z_i| <= c}: clip(y - tau) with tau by bisection.
inline void project_box_sum(std::vector<double>& y, double c) {
    double lo = *std::min_element(y.begin(), y.end()) - c, hi = *std::max_element(y.begin(), y.end()) + c;
    auto total = [&](double tau) {
        double s = 0.0;
        for (double v : y) s += std::clamp(v - tau, -c, c);
        return s;
    };
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (total(mid) > 0.0) lo = mid;
        else hi = mid;
        if (hi - lo <= 1e-17 * (1.0 + std::abs(mid))) break;
    }
    double tau = 0.5 * (lo + hi);
    for (double& v : y) v = std::clamp(v - tau, -c, c);
    // remove the residual sum on the unclipped coordinates
    double s = 0.0;
    std::size_t free = 0;
    for (double v : y) {
        s += v;
        if (std::abs(v) < c) ++free;
    }
    if (free > 0)
        for (double& v : y)
            if (std::abs(v) < c) v -= s / double(free);
}

// Accelerated projected gradient ascent with backtracking and restart.
template <class Obj, class Proj>
std::vector<double> fista_ascent(Obj&& obj, Proj&& proj, std::vector<double> z, std::size_t max_iter, double gtol,
                                 std::size_t& iters) {
    std::vector<double> grad, y = z, znew(z.size()), zbest = z;
    double L = 1.0;
    double fz = obj(z, nullptr), fbest = fz, fwindow = fz;
    double t = 1.0;
    iters = 0;
    for (std::size_t it = 0; it < max_iter; ++it) {
        iters = it + 1;
        double fy = obj(y, &grad);
        double fn = 0.0, gm = 0.0;
        for (int bt = 0; bt < 80; ++bt) {
            for (std::size_t i = 0; i < z.size(); ++i) znew[i] = y[i] + grad[i] / L;
            proj(znew);
            fn = obj(znew, nullptr);
            double lin = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                double d = znew[i] - y[i];
                lin += grad[i] * d;
                sq += d * d;
            }
            gm = L * std::sqrt(sq);
            if (fn >= fy + lin - 0.5 * L * sq - 1e-15 * std::abs(fy)) break;
            L *= 2.0;
        }
        if (fn > fbest) {
            fbest = fn;
            zbest = znew;
        }
        if (gm < gtol) break;
        if (it % 200 == 199) {
            // stagnation: no gain over the last window
            if (fbest - fwindow <= 1e-14 * (1.0 + std::abs(fbest))) break;
            fwindow = fbest;
        }
        if (fn < fz) {
            // restart momentum
            t = 1.0;
            y = zbest;
            z = zbest;
            fz = fbest;
            continue;
        }
        double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        for (std::size_t i = 0; i < z.size(); ++i) y[i] = znew[i] + (t - 1.0) / tn * (znew[i] - z[i]);
        z = znew;
        fz = fn;
        t = tn;
        L *= 0.9;
    }
    return zbest;
}

}  // namespace detail

struct PenalizedResult {
    double value = 0.0;
    bool saturated = false;  // the unconstrained optimum was already feasible
    std::size_t iterations = 0;
    std::vector<double> psi;
};

inline bool lipschitz_feasible(const TorusGrid& g, const std::vector<double>& psi, double lambda) {
    for (std::size_t i = 0; i < psi.size(); ++i) {
        if (!std::isfinite(psi[i])) return false;
        for (std::size_t j = i + 1; j < psi.size(); ++j)
            if (std::abs(psi[i] - psi[j]) > lambda * wrap_distance(g, i, j) * (1.0 + 1e-12)) return false;
    }
    return true;
}

// max over lambda-Lipschitz psi of the semi-dual; equals
// min_gamma I(gamma) + lambda d1(mu1 * gamma, mu2) - log(1/2 pi h)^{p/2}.
inline PenalizedResult penalized_cost_solve(const GridMeasure& mu1, const GridMeasure& mu2, double h, double lambda,
                                            const SinkhornOptions& opt = {}, const std::vector<double>* warm_psi = nullptr) {
    require_same_grid(mu1.grid(), mu2.grid());
    require(lambda > 0.0, Errc::invalid_argument, "lambda must be positive");
    const TorusGrid& g = mu1.grid();
    const std::size_t N = g.cells();
    detail::SemiDual J(mu1, mu2, h);
    auto step = solve_step(mu1, mu2, h, opt);
    PenalizedResult out;
    if (lipschitz_feasible(g, step.log_v, lambda)) {
        out.saturated = true;
        out.psi = step.log_v;
        out.value = J.value(out.psi, nullptr);
        return out;
    }
    if (g.p() == 1) {
        const double c = lambda * g.cell_width();
        auto to_psi = [N](const std::vector<double>& z) {
            std::vector<double> psi(N, 0.0);
            for (std::size_t i = 1; i < N; ++i) psi[i] = psi[i - 1] + z[i - 1];
            return psi;
        };
        auto obj = [&](const std::vector<double>& z, std::vector<double>* gz) {
            std::vector<double> gpsi;
            double v = J.value(to_psi(z), gz ? &gpsi : nullptr);
            if (gz) {
                gz->assign(N, 0.0);
                double suffix = 0.0;
                for (std::size_t j = N - 1; j-- > 0;) {
                    suffix += gpsi[j + 1];
                    (*gz)[j] = suffix;
                }
            }
            return v;
        };
        auto proj = [c](std::vector<double>& z) { detail::project_box_sum(z, c); };
        auto diffs = [&](const std::vector<double>& psi) {
            std::vector<double> z(N);
            for (std::size_t i = 0; i < N; ++i) {
                double a = std::isfinite(psi[i]) ? psi[i] : -1e3;
                double b = std::isfinite(psi[(i + 1) % N]) ? psi[(i + 1) % N] : -1e3;
                z[i] = b - a;
            }
            proj(z);
            return z;
        };
        std::vector<double> z0 = diffs(step.log_v);
        if (warm_psi) {
            auto zw = diffs(*warm_psi);
            if (obj(zw, nullptr) > obj(z0, nullptr)) z0 = zw;
        }
        std::vector<double> zero(N, 0.0);
        if (obj(zero, nullptr) > obj(z0, nullptr)) z0 = zero;
        auto z = detail::fista_ascent(obj, proj, z0, 200000, 1e-10, out.iterations);
        out.psi = to_psi(z);
        out.value = obj(z, nullptr);
        return out;
    }
    // p = 2: pairwise Lipschitz constraints projected by Dykstra's method.
    require(g.n() <= 8, Errc::invalid_argument, "p=2 penalized cost limited to n <= 8");
    std::vector<std::array<std::size_t, 2>> pairs;
    std::vector<double> bound;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
            if (i != j) {
                pairs.push_back({i, j});
                bound.push_back(lambda * wrap_distance(g, i, j));
            }
    auto proj = [&](std::vector<double>& y) {
        std::vector<double> incr(pairs.size() * 2, 0.0);
        for (int sweep = 0; sweep < 5000; ++sweep) {
            double change = 0.0;
            for (std::size_t k = 0; k < pairs.size(); ++k) {
                auto [i, j] = pairs[k];
                double yi = y[i] + incr[2 * k], yj = y[j] + incr[2 * k + 1];
                double viol = yi - yj - bound[k];
                double ni = yi, nj = yj;
                if (viol > 0.0) {
                    ni -= 0.5 * viol;
                    nj += 0.5 * viol;
                }
                incr[2 * k] = yi - ni;
                incr[2 * k + 1] = yj - nj;
                change = std::max(change, std::abs(ni - y[i]) + std::abs(nj - y[j]));
                y[i] = ni;
                y[j] = nj;
            }
            if (change < 1e-14) break;
        }
        double m = 0.0;
        for (double v : y) m += v;
        for (double& v : y) v -= m / double(N);
    };
    auto obj = [&](const std::vector<double>& psi, std::vector<double>* gr) { return J.value(psi, gr); };
    std::vector<double> psi0(N);
    for (std::size_t i = 0; i < N; ++i) psi0[i] = std::isfinite(step.log_v[i]) ? step.log_v[i] : -1e3;
    if (warm_psi && obj(*warm_psi, nullptr) > obj(psi0, nullptr)) psi0 = *warm_psi;
    proj(psi0);
    auto psi = detail::fista_ascent(obj, proj, psi0, 20000, 1e-10, out.iterations);
    out.psi = psi;
    out.value = obj(psi, nullptr);
    return out;
}

inline double penalized_cost(const GridMeasure& mu1, const GridMeasure& mu2, double h, double lambda,
                             const SinkhornOptions& opt = {}) {
    return penalized_cost_solve(mu1, mu2, h, lambda, opt).value;
}

// Ascending lambda ladder, each rung warm-started from the previous optimum.
inline std::vector<double> penalized_cost_ladder(const GridMeasure& mu1, const GridMeasure& mu2, double h,
                                                 const std::vector<double>& lambdas, const SinkhornOptions& opt = {}) {
    std::vector<double> out;
    std::vector<double> warm;
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        require(i == 0 || lambdas[i] >= lambdas[i - 1], Errc::invalid_argument, "lambda ladder must ascend");
        auto r = penalized_cost_solve(mu1, mu2, h, lambdas[i], opt, warm.empty() ? nullptr : &warm);
        // the previous optimum stays feasible for a larger lambda
        double v = std::max(r.value, prev);
        out.push_back(v);
        prev = v;
        warm = r.psi;
    }
    return out;
}

}  // namespace fpcost
