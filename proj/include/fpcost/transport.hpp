#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "torus.hpp"

namespace fpcost {

struct TransportResult {
    double distance;  // d_order
    double cost;      // d_order^order
    TransportPlan plan;
};

namespace detail {

// ----------------------------------------------------------------------------
// Network simplex for the dense transportation problem (sources with supply a,
// sinks with demand b, uncapacitated arcs).  Spanning tree with an artificial
// root; block-search pricing; strongly feasible leaving-arc rule.
// ----------------------------------------------------------------------------
class NetworkSimplex {
public:
    NetworkSimplex(std::vector<double> supply, std::vector<double> demand, std::vector<double> cost)
        : a_(std::move(supply)), b_(std::move(demand)), c_(std::move(cost)) {
        ns_ = int(a_.size());
        nd_ = int(b_.size());
        require(c_.size() == a_.size() * b_.size(), Errc::invalid_argument, "cost matrix shape");
    }

    // Returns the flow on each real arc (row-major supply x demand).
    std::vector<double> solve() {
        const int N = ns_ + nd_;
        root_ = N;
        const std::size_t real = std::size_t(ns_) * nd_;
        arcs_ = real + std::size_t(N);
        double cmax = 0.0;
        for (double v : c_) cmax = std::max(cmax, std::abs(v));
        art_cost_ = (cmax + 1.0) * double(N + 1);
        eps_ = 1e-14 * (cmax + 1.0);

        flow_.assign(arcs_, 0.0);
        parent_.assign(N + 1, -1);
        pred_.assign(N + 1, 0);
        dir_.assign(N + 1, 0);
        pi_.assign(N + 1, 0.0);
        children_.assign(N + 1, {});
        for (int u = 0; u < N; ++u) {
            std::size_t e = real + std::size_t(u);
            parent_[u] = root_;
            pred_[u] = e;
            children_[root_].push_back(u);
            if (u < ns_) {
                flow_[e] = a_[u];
                dir_[u] = +1;  // u -> root
                pi_[u] = -art_cost_;
            } else {
                flow_[e] = b_[u - ns_];
                dir_[u] = -1;  // root -> u
                pi_[u] = art_cost_;
            }
        }
        depth_.assign(N + 1, 1);
        depth_[root_] = 0;

        const std::size_t block = std::max<std::size_t>(16, std::size_t(std::sqrt(double(arcs_))));
        std::size_t next = 0;
        std::size_t max_pivots = 50 * arcs_ + 1000;
        for (std::size_t it = 0; it < max_pivots; ++it) {
            std::size_t in = find_entering(block, next);
            if (in == npos) break;
            pivot(in);
        }
        std::vector<double> out(flow_.begin(), flow_.begin() + std::ptrdiff_t(real));
        for (double& v : out) v = std::max(v, 0.0);
        return out;
    }

private:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    int source(std::size_t e) const {
        const std::size_t real = std::size_t(ns_) * nd_;
        if (e < real) return int(e / std::size_t(nd_));
        int u = int(e - real);
        return u < ns_ ? u : root_;
    }
    int target(std::size_t e) const {
        const std::size_t real = std::size_t(ns_) * nd_;
        if (e < real) return ns_ + int(e % std::size_t(nd_));
        int u = int(e - real);
        return u < ns_ ? root_ : u;
    }
    double arc_cost(std::size_t e) const {
        const std::size_t real = std::size_t(ns_) * nd_;
        return e < real ? c_[e] : art_cost_;
    }
    double reduced(std::size_t e) const { return arc_cost(e) + pi_[source(e)] - pi_[target(e)]; }

    std::size_t find_entering(std::size_t block, std::size_t& next) {
        double best = -eps_;
        std::size_t best_e = npos;
        std::size_t cnt = 0;
        for (std::size_t k = 0; k < arcs_; ++k) {
            std::size_t e = next;
            next = (next + 1 == arcs_) ? 0 : next + 1;
            double r = reduced(e);
            if (r < best) {
                best = r;
                best_e = e;
            }
            if (++cnt == block) {
                if (best_e != npos) return best_e;
                cnt = 0;
            }
        }
        return best_e;
    }

    void pivot(std::size_t in) {
        const int first = source(in), second = target(in);
        // join node
        int u = first, v = second;
        while (u != v) {
            if (depth_[u] >= depth_[v]) u = parent_[u];
            else v = parent_[v];
        }
        const int join = u;
        const double inf = std::numeric_limits<double>::infinity();
        double delta = inf;
        int u_out = -1, side = 0;
        for (int w = first; w != join; w = parent_[w]) {
            double d = dir_[w] == +1 ? flow_[pred_[w]] : inf;
            if (d < delta) { delta = d; u_out = w; side = 1; }
        }
        for (int w = second; w != join; w = parent_[w]) {
            double d = dir_[w] == -1 ? flow_[pred_[w]] : inf;
            if (d <= delta) { delta = d; u_out = w; side = 2; }
        }
        require(u_out >= 0 && std::isfinite(delta), Errc::numerical, "network simplex: unbounded cycle");
        delta = std::max(delta, 0.0);

        flow_[in] += delta;
        for (int w = first; w != join; w = parent_[w]) flow_[pred_[w]] -= dir_[w] * delta;
        for (int w = second; w != join; w = parent_[w]) flow_[pred_[w]] += dir_[w] * delta;
        flow_[pred_[u_out]] = 0.0;

        // Re-hang the subtree containing u_out via the entering arc.
        const int w0 = side == 1 ? first : second;
        const int other = side == 1 ? second : first;
        std::vector<int> path;
        for (int w = w0;; w = parent_[w]) {
            path.push_back(w);
            if (w == u_out) break;
        }
        std::vector<std::size_t> old_pred(path.size());
        std::vector<int> old_dir(path.size()), old_parent(path.size());
        for (std::size_t i = 0; i < path.size(); ++i) {
            old_pred[i] = pred_[path[i]];
            old_dir[i] = dir_[path[i]];
            old_parent[i] = parent_[path[i]];
        }
        for (std::size_t i = 0; i < path.size(); ++i) detach(old_parent[i], path[i]);
        parent_[w0] = other;
        pred_[w0] = in;
        dir_[w0] = side == 1 ? +1 : -1;
        children_[other].push_back(w0);
        for (std::size_t i = 1; i < path.size(); ++i) {
            parent_[path[i]] = path[i - 1];
            pred_[path[i]] = old_pred[i - 1];
            dir_[path[i]] = -old_dir[i - 1];
            children_[path[i - 1]].push_back(path[i]);
        }
        refresh(w0);
    }

    void detach(int par, int child) {
        auto& ch = children_[par];
        auto it = std::find(ch.begin(), ch.end(), child);
        if (it != ch.end()) {
            *it = ch.back();
            ch.pop_back();
        }
    }

    void refresh(int top) {
        stack_.clear();
        stack_.push_back(top);
        while (!stack_.empty()) {
            int w = stack_.back();
            stack_.pop_back();
            int par = parent_[w];
            double c = arc_cost(pred_[w]);
            pi_[w] = dir_[w] == +1 ? pi_[par] - c : pi_[par] + c;
            depth_[w] = depth_[par] + 1;
            for (int ch : children_[w]) stack_.push_back(ch);
        }
    }

    std::vector<double> a_, b_, c_;
    int ns_ = 0, nd_ = 0, root_ = 0;
    std::size_t arcs_ = 0;
    double art_cost_ = 0.0, eps_ = 0.0;
    std::vector<double> flow_, pi_;
    std::vector<int> parent_, dir_, depth_;
    std::vector<std::size_t> pred_;
    std::vector<std::vector<int>> children_;
    std::vector<int> stack_;
};

// Cumulative distribution with the last entry pinned to 1.
inline std::vector<double> cumulative(std::span<const double> w) {
    std::vector<double> c(w.size());
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        s += w[i];
        c[i] = s;
    }
    c.back() = 1.0;
    return c;
}

// Walks the monotone coupling t -> (Q_mu(t), Q_nu(t + theta)) of the extended
// quantile functions on the circle; calls f(i, j, lift, mass) per piece.
template <class F>
void circular_coupling(std::span<const double> A, std::span<const double> B, double theta, F&& f) {
    double m = std::floor(theta);
    double s = theta - m;
    std::size_t j = std::size_t(std::upper_bound(B.begin(), B.end(), s) - B.begin());
    if (j >= B.size()) {
        j = 0;
        m += 1.0;
        s = 0.0;
    }
    double t = 0.0;
    std::size_t i = 0;
    while (i < A.size()) {
        double step_a = A[i] - t;
        double step_b = B[j] - s;
        double step = std::max(0.0, std::min(step_a, step_b));
        if (step > 0.0) f(i, j, m, step);
        t += step;
        s += step;
        if (step_a <= step_b) ++i;
        if (step_b <= step_a) {
            ++j;
            if (j == B.size()) {
                j = 0;
                m += 1.0;
                s = 0.0;
            }
        }
    }
}

inline TransportResult circular_transport(const GridMeasure& mu, const GridMeasure& nu, int order) {
    const TorusGrid& g = mu.grid();
    const int n = g.n();
    auto A = cumulative(mu.weights());
    auto B = cumulative(nu.weights());
    auto lifted = [&](double theta) {
        double acc = 0.0;
        circular_coupling(A, B, theta, [&](std::size_t i, std::size_t j, double m, double mass) {
            double d = std::abs((double(i) - double(j)) / n - m);
            acc += mass * (order == 1 ? d : d * d);
        });
        return acc;
    };
    // Convex in theta; minimizer lies in [-1, 1].
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = -1.0, hi = 1.0;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = lifted(x1), f2 = lifted(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = lifted(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = lifted(x2);
        }
    }
    const double theta = f1 <= f2 ? x1 : x2;
    std::vector<double> plan(g.cells() * g.cells(), 0.0);
    circular_coupling(A, B, theta, [&](std::size_t i, std::size_t j, double, double mass) { plan[i * g.cells() + j] += mass; });
    double cost = 0.0;
    for (std::size_t i = 0; i < g.cells(); ++i)
        for (std::size_t j = 0; j < g.cells(); ++j) {
            double m = plan[i * g.cells() + j];
            if (m == 0.0) continue;
            double d = wrap_distance(g, i, j);
            cost += m * (order == 1 ? d : d * d);
        }
    return {order == 1 ? cost : std::sqrt(cost), cost, TransportPlan{g, std::move(plan), mu, nu}};
}

}  // namespace detail

// Exact transport by network simplex on the supports (any p; dense arcs).
inline TransportResult simplex_transport(const GridMeasure& mu, const GridMeasure& nu, int order) {
    require_same_grid(mu.grid(), nu.grid());
    require(order == 1 || order == 2, Errc::invalid_argument, "order must be 1 or 2");
    const TorusGrid& g = mu.grid();
    std::vector<std::size_t> si, di;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < mu.size(); ++i)
        if (mu[i] > 0.0) { si.push_back(i); a.push_back(mu[i]); }
    for (std::size_t j = 0; j < nu.size(); ++j)
        if (nu[j] > 0.0) { di.push_back(j); b.push_back(nu[j]); }
    std::vector<double> c(si.size() * di.size());
    for (std::size_t i = 0; i < si.size(); ++i)
        for (std::size_t j = 0; j < di.size(); ++j) {
            double d = wrap_distance(g, si[i], di[j]);
            c[i * di.size() + j] = order == 1 ? d : d * d;
        }
    detail::NetworkSimplex ns(a, b, c);
    auto f = ns.solve();
    std::vector<double> plan(g.cells() * g.cells(), 0.0);
    double cost = 0.0;
    for (std::size_t i = 0; i < si.size(); ++i)
        for (std::size_t j = 0; j < di.size(); ++j) {
            double m = f[i * di.size() + j];
            plan[si[i] * g.cells() + di[j]] = m;
            cost += m * c[i * di.size() + j];
        }
    cost = std::max(cost, 0.0);
    return {order == 1 ? cost : std::sqrt(cost), cost, TransportPlan{g, std::move(plan), mu, nu}};
}

// Exact d_order on the torus: circular quantile reduction for p = 1, network
// simplex for p = 2 (n <= 32).
inline TransportResult optimal_transport(const GridMeasure& mu, const GridMeasure& nu, int order) {
    require_same_grid(mu.grid(), nu.grid());
    require(order == 1 || order == 2, Errc::invalid_argument, "order must be 1 or 2");
    if (mu.grid().p() == 1) return detail::circular_transport(mu, nu, order);
    require(mu.grid().n() <= 32, Errc::invalid_argument, "exact p=2 transport limited to n <= 32");
    return simplex_transport(mu, nu, order);
}

inline double wasserstein(const GridMeasure& mu, const GridMeasure& nu, int order) {
    return optimal_transport(mu, nu, order).distance;
}

inline double path_sup_distance(const MeasurePath& a, const MeasurePath& b) {
    require_same_grid(a.grid(), b.grid());
    if (a.size() != b.size() || std::abs(a.t0() - b.t0()) > 1e-12 || std::abs(a.dt() - b.dt()) > 1e-12 * a.dt())
        throw Error(Errc::invalid_argument, "mismatched time stamps");
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, wasserstein(a[k], b[k], 2));
    return m;
}

}  // namespace fpcost
