#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "torus.hpp"

namespace fpcost {

// Drift X(t, x) with caller-supplied sup bound and spatial Lipschitz estimate.
struct DriftField {
    std::function<Point(double, const Point&)> evaluator;
    double bound = 0.0;
    double lipschitz = 0.0;
    bool time_dependent = true;
    std::string kind = "custom";

    Point operator()(double t, const Point& x) const { return evaluator(t, x); }
    Point at(double t, const TorusGrid& g, std::size_t cell) const { return evaluator(t, g.center(cell)); }
};

inline DriftField constant_drift(Point a, int p) {
    double b = std::sqrt(norm2(a, p));
    return {[a](double, const Point&) { return a; }, b, 0.0, false, "constant"};
}

// X_i(x) = amplitude * sin(2 pi x_i) on every axis.
inline DriftField sine_drift(double amplitude, int p) {
    auto f = [amplitude, p](double, const Point& x) {
        Point v{};
        for (int i = 0; i < p; ++i) v[i] = amplitude * std::sin(2.0 * pi * x[i]);
        return v;
    };
    double b = std::abs(amplitude) * std::sqrt(double(p));
    return {f, b, 2.0 * pi * std::abs(amplitude), false, "sine"};
}

// Values per (stamp, cell), interpolated linearly in time (clamped) and
// (bi)linearly between cell centers.
class DriftTable {
public:
    DriftTable(TorusGrid grid, double t0, double dt, std::vector<std::vector<Point>> values)
        : g_(grid), t0_(t0), dt_(dt), v_(std::move(values)) {
        require(!v_.empty(), Errc::invalid_argument, "empty drift table");
        require(dt > 0.0 || v_.size() == 1, Errc::invalid_argument, "drift table needs dt > 0");
        for (const auto& f : v_) require(f.size() == g_.cells(), Errc::invalid_argument, "drift table frame size mismatch");
    }

    const TorusGrid& grid() const noexcept { return g_; }
    double t0() const noexcept { return t0_; }
    double dt() const noexcept { return dt_; }
    const std::vector<std::vector<Point>>& values() const noexcept { return v_; }

    Point operator()(double t, const Point& x) const {
        if (v_.size() == 1) return spatial(0, x);
        double s = (t - t0_) / dt_;
        if (s <= 0.0) return spatial(0, x);
        if (s >= double(v_.size() - 1)) return spatial(v_.size() - 1, x);
        std::size_t k = std::size_t(std::floor(s));
        double w = s - double(k);
        Point a = spatial(k, x), b = spatial(k + 1, x);
        Point r{};
        for (int i = 0; i < g_.p(); ++i) r[i] = (1.0 - w) * a[i] + w * b[i];
        return r;
    }

    double bound() const {
        double b = 0.0;
        for (const auto& f : v_)
            for (const auto& p : f) b = std::max(b, std::sqrt(norm2(p, g_.p())));
        return b;
    }

    // Finite-difference Lipschitz estimate over neighbouring cells.
    double lipschitz() const {
        double L = 0.0;
        const double w = g_.cell_width();
        for (const auto& f : v_)
            for (std::size_t c = 0; c < g_.cells(); ++c) {
                auto co = g_.coords(c);
                for (int a = 0; a < g_.p(); ++a) {
                    auto nb = co;
                    nb[a] += 1;
                    std::size_t d = g_.index(nb);
                    Point diff{};
                    for (int i = 0; i < g_.p(); ++i) diff[i] = f[d][i] - f[c][i];
                    L = std::max(L, std::sqrt(norm2(diff, g_.p())) / w);
                }
            }
        return L;
    }

private:
    Point spatial(std::size_t k, const Point& x) const {
        const int n = g_.n();
        const auto& f = v_[k];
        std::array<int, 2> i0{};
        std::array<double, 2> w{};
        for (int a = 0; a < g_.p(); ++a) {
            double s = (x[a] - std::floor(x[a])) * n - 0.5;
            double fl = std::floor(s);
            i0[a] = int(fl);
            w[a] = s - fl;
        }
        Point r{};
        if (g_.p() == 1) {
            const Point& a = f[g_.index({i0[0], 0})];
            const Point& b = f[g_.index({i0[0] + 1, 0})];
            r[0] = (1.0 - w[0]) * a[0] + w[0] * b[0];
            return r;
        }
        for (int da = 0; da <= 1; ++da)
            for (int db = 0; db <= 1; ++db) {
                double ww = (da ? w[0] : 1.0 - w[0]) * (db ? w[1] : 1.0 - w[1]);
                const Point& v = f[g_.index({i0[0] + da, i0[1] + db})];
                r[0] += ww * v[0];
                r[1] += ww * v[1];
            }
        return r;
    }

    TorusGrid g_;
    double t0_, dt_;
    std::vector<std::vector<Point>> v_;
};

inline DriftField tabulated_drift(DriftTable table) {
    double b = table.bound(), L = table.lipschitz();
    bool td = table.values().size() > 1;
    return {[t = std::move(table)](double s, const Point& x) { return t(s, x); }, b, L, td, "table"};
}

}  // namespace fpcost
