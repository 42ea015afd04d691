#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fpcost {

// ============================================================================
// Errors
// ============================================================================

enum class Errc {
    invalid_argument,
    unsupported_dimension,
    grid_mismatch,
    not_normalized,
    numerical,
    non_convergence,
    divergence,
    io,
    config,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

inline void require(bool cond, Errc code, const char* what) {
    if (!cond) throw Error(code, what);
}

// ============================================================================
// Small fixed-size algebra (p <= 2)
// ============================================================================

using Point = std::array<double, 2>;
using Mat2 = std::array<double, 4>;  // row-major 2x2

inline constexpr double pi = 3.14159265358979323846;

inline double dot(const Point& a, const Point& b, int p) {
    double s = 0.0;
    for (int i = 0; i < p; ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Point& a, int p) { return dot(a, a, p); }

inline Mat2 identity_mat(int p) {
    Mat2 m{};
    for (int i = 0; i < p; ++i) m[i * 2 + i] = 1.0;
    return m;
}

inline double frobenius(const Mat2& m, int p) {
    double s = 0.0;
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) s += m[i * 2 + j] * m[i * 2 + j];
    return std::sqrt(s);
}

// ============================================================================
// TorusGrid
// ============================================================================

// Uniform periodic grid on the unit torus [0,1)^p, cells indexed row-major
// (last axis fastest). lift_radius is the number of fundamental-domain copies
// kept on each side when displacements are unwrapped to R^p.
class TorusGrid {
public:
    TorusGrid(int p, int n, int lift_radius) : p_(p), n_(n), lift_radius_(lift_radius) {
        require(p == 1 || p == 2, Errc::unsupported_dimension, "unsupported dimension (p must be 1 or 2)");
        require(n >= 2, Errc::invalid_argument, "grid needs n >= 2");
        require(lift_radius >= 1, Errc::invalid_argument, "lift_radius must be >= 1");
    }

    int p() const noexcept { return p_; }
    int n() const noexcept { return n_; }
    int lift_radius() const noexcept { return lift_radius_; }
    double cell_width() const noexcept { return 1.0 / n_; }
    double cell_volume() const noexcept { return p_ == 1 ? cell_width() : cell_width() * cell_width(); }
    std::size_t cells() const noexcept { return p_ == 1 ? std::size_t(n_) : std::size_t(n_) * n_; }

    int lifts_per_axis() const noexcept { return 2 * lift_radius_ + 1; }
    std::size_t lift_count() const noexcept {
        return p_ == 1 ? std::size_t(lifts_per_axis()) : std::size_t(lifts_per_axis()) * lifts_per_axis();
    }

    std::array<int, 2> coords(std::size_t cell) const {
        check_cell(cell);
        if (p_ == 1) return {int(cell), 0};
        return {int(cell / n_), int(cell % n_)};
    }

    std::size_t index(std::array<int, 2> c) const {
        auto w = [this](int k) { return ((k % n_) + n_) % n_; };
        if (p_ == 1) return std::size_t(w(c[0]));
        return std::size_t(w(c[0])) * n_ + std::size_t(w(c[1]));
    }

    Point center(std::size_t cell) const {
        auto c = coords(cell);
        Point x{};
        for (int i = 0; i < p_; ++i) x[i] = (c[i] + 0.5) / n_;
        return x;
    }

    // Integer offset vector of a flattened lift index.
    std::array<int, 2> lift_offset(std::size_t lift) const {
        const int m = lifts_per_axis();
        if (p_ == 1) return {int(lift) - lift_radius_, 0};
        return {int(lift / m) - lift_radius_, int(lift % m) - lift_radius_};
    }

    // Displacement in R^p from the center of x to the lifted copy k of y's center.
    Point displacement(std::size_t x, std::size_t y, std::size_t lift) const {
        auto cx = coords(x), cy = coords(y);
        auto k = lift_offset(lift);
        Point d{};
        for (int i = 0; i < p_; ++i) d[i] = double(cy[i] - cx[i]) / n_ + k[i];
        return d;
    }

    // Cell containing a point of R^p after wrapping.
    std::size_t locate(const Point& x) const {
        std::array<int, 2> c{};
        for (int i = 0; i < p_; ++i) {
            double w = x[i] - std::floor(x[i]);
            c[i] = std::min(n_ - 1, int(std::floor(w * n_)));
        }
        return index(c);
    }

    void check_cell(std::size_t cell) const {
        if (cell >= cells()) throw Error(Errc::invalid_argument, "invalid cell index " + std::to_string(cell));
    }

    friend bool operator==(const TorusGrid&, const TorusGrid&) = default;

private:
    int p_;
    int n_;
    int lift_radius_;
};

// Lift radius so that the N(0, h_max Id) tail beyond it is below 1e-12.
// Copies are capped at 3 per axis.
inline TorusGrid make_grid(int p, int n, double h_max) {
    require(p == 1 || p == 2, Errc::unsupported_dimension, "unsupported dimension (p must be 1 or 2)");
    require(n >= 2, Errc::invalid_argument, "grid needs n >= 2");
    require(h_max > 0.0 && std::isfinite(h_max), Errc::invalid_argument, "nonpositive h_min");
    const double cells = std::ceil(std::sqrt(2.0 * h_max * std::log(1e12)) * n) + 1.0;
    int copies = int(std::ceil(cells / n));
    copies = std::clamp(copies, 1, 3);
    return TorusGrid(p, n, copies);
}

inline void require_same_grid(const TorusGrid& a, const TorusGrid& b) {
    if (a.p() != b.p() || a.n() != b.n()) throw Error(Errc::grid_mismatch, "grid mismatch");
}

// Torus distance between cell centers.
inline double wrap_distance(const TorusGrid& g, std::size_t i, std::size_t j) {
    auto ci = g.coords(i), cj = g.coords(j);
    double s = 0.0;
    for (int a = 0; a < g.p(); ++a) {
        int d = std::abs(ci[a] - cj[a]);
        d = std::min(d, g.n() - d);
        double x = double(d) / g.n();
        s += x * x;
    }
    return std::sqrt(s);
}

// ============================================================================
// GridMeasure
// ============================================================================

class GridMeasure {
public:
    GridMeasure(TorusGrid grid, std::vector<double> weights) : grid_(grid), w_(std::move(weights)) {
        require(w_.size() == grid_.cells(), Errc::invalid_argument, "weight count does not match grid");
        double s = 0.0;
        for (double v : w_) {
            require(std::isfinite(v) && v >= 0.0, Errc::not_normalized, "measure weights must be finite and nonnegative");
            s += v;
        }
        require(std::abs(s - 1.0) <= 1e-12, Errc::not_normalized, "measure weights must sum to 1");
    }

    // Rescales nonnegative weights to unit mass.
    static GridMeasure normalized(TorusGrid grid, std::vector<double> weights) {
        double s = 0.0;
        for (double& v : weights) {
            require(std::isfinite(v), Errc::numerical, "non-finite weight");
            if (v < 0.0) v = 0.0;
            s += v;
        }
        require(s > 0.0, Errc::not_normalized, "measure has zero mass");
        for (double& v : weights) v /= s;
        return GridMeasure(grid, std::move(weights));
    }

    static GridMeasure uniform(TorusGrid grid) {
        return GridMeasure(grid, std::vector<double>(grid.cells(), 1.0 / double(grid.cells())));
    }

    static GridMeasure dirac(TorusGrid grid, std::size_t cell) {
        grid.check_cell(cell);
        std::vector<double> w(grid.cells(), 0.0);
        w[cell] = 1.0;
        return GridMeasure(grid, std::move(w));
    }

    template <class F>
    static GridMeasure from_density(TorusGrid grid, F&& f) {
        std::vector<double> w(grid.cells());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = f(grid.center(i));
        return normalized(grid, std::move(w));
    }

    const TorusGrid& grid() const noexcept { return grid_; }
    std::span<const double> weights() const noexcept { return w_; }
    double operator[](std::size_t i) const { return w_[i]; }
    std::size_t size() const noexcept { return w_.size(); }

private:
    TorusGrid grid_;
    std::vector<double> w_;
};

inline double total_variation(const GridMeasure& a, const GridMeasure& b) {
    require_same_grid(a.grid(), b.grid());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

// ============================================================================
// TransportPlan
// ============================================================================

struct TransportPlan {
    TorusGrid grid;
    std::vector<double> matrix;  // cells x cells, row-major
    GridMeasure marginal_first;
    GridMeasure marginal_second;

    double at(std::size_t i, std::size_t j) const { return matrix[i * grid.cells() + j]; }
};

// ============================================================================
// JumpKernel
// ============================================================================

struct JumpEntry {
    std::uint32_t target;
    std::uint32_t lift;
    double mass;
};

// Discrete jump kernel: for each source cell, masses over (target cell, lift).
// Rows of zero-mass sources may be empty.
class JumpKernel {
public:
    JumpKernel(TorusGrid grid, double h) : grid_(grid), h_(h), rows_(grid.cells()) {
        require(h > 0.0, Errc::invalid_argument, "kernel time step must be positive");
    }

    const TorusGrid& grid() const noexcept { return grid_; }
    double h() const noexcept { return h_; }
    std::size_t rows() const noexcept { return rows_.size(); }

    std::span<const JumpEntry> row(std::size_t x) const { return rows_.at(x); }
    std::vector<JumpEntry>& mutable_row(std::size_t x) { return rows_.at(x); }

    void set_row(std::size_t x, std::vector<JumpEntry> entries) {
        for (const auto& e : entries) {
            require(e.target < grid_.cells() && e.lift < grid_.lift_count(), Errc::invalid_argument, "kernel entry out of range");
            require(e.mass >= 0.0 && std::isfinite(e.mass), Errc::invalid_argument, "kernel masses must be nonnegative");
        }
        rows_.at(x) = std::move(entries);
    }

    double row_sum(std::size_t x) const {
        double s = 0.0;
        for (const auto& e : rows_.at(x)) s += e.mass;
        return s;
    }

    // Torus-cell marginal of row x.
    std::vector<double> row_marginal(std::size_t x) const {
        std::vector<double> m(grid_.cells(), 0.0);
        for (const auto& e : rows_.at(x)) m[e.target] += e.mass;
        return m;
    }

    // Identity kernel: all mass on zero displacement.
    static JumpKernel identity(TorusGrid grid, double h) {
        JumpKernel k(grid, h);
        const auto zero = std::uint32_t(grid.lift_count() / 2);
        for (std::size_t x = 0; x < grid.cells(); ++x) k.rows_[x] = {{std::uint32_t(x), zero, 1.0}};
        return k;
    }

    // Deterministic shift by an integer cell offset along each axis.
    static JumpKernel shift(TorusGrid grid, double h, std::array<int, 2> offset) {
        JumpKernel k(grid, h);
        const int n = grid.n();
        const int m = grid.lifts_per_axis();
        for (std::size_t x = 0; x < grid.cells(); ++x) {
            auto c = grid.coords(x);
            std::array<int, 2> t{}, lift{};
            for (int a = 0; a < grid.p(); ++a) {
                int raw = c[a] + offset[a];
                int wrapped = ((raw % n) + n) % n;
                t[a] = wrapped;
                lift[a] = (raw - wrapped) / n;
                require(std::abs(lift[a]) <= grid.lift_radius(), Errc::invalid_argument, "shift exceeds lift window");
            }
            std::size_t li = grid.p() == 1 ? std::size_t(lift[0] + grid.lift_radius())
                                           : std::size_t(lift[0] + grid.lift_radius()) * m + std::size_t(lift[1] + grid.lift_radius());
            k.rows_[x] = {{std::uint32_t(grid.index(t)), std::uint32_t(li), 1.0}};
        }
        return k;
    }

private:
    TorusGrid grid_;
    double h_;
    std::vector<std::vector<JumpEntry>> rows_;
};

// result(y) = sum_x sum_k mu(x) gamma(x, y, k)
inline GridMeasure push_forward(const GridMeasure& mu, const JumpKernel& gamma) {
    require_same_grid(mu.grid(), gamma.grid());
    std::vector<double> out(mu.size(), 0.0);
    for (std::size_t x = 0; x < mu.size(); ++x) {
        if (mu[x] <= 0.0) continue;
        double s = 0.0;
        for (const auto& e : gamma.row(x)) {
            out[e.target] += mu[x] * e.mass;
            s += e.mass;
        }
        if (std::abs(s - 1.0) > 1e-10) throw Error(Errc::not_normalized, "unnormalized kernel row on supported cell " + std::to_string(x));
    }
    return GridMeasure::normalized(mu.grid(), std::move(out));
}

// ============================================================================
// MeasurePath
// ============================================================================

class MeasurePath {
public:
    MeasurePath(TorusGrid grid, double t0, double dt, std::vector<GridMeasure> frames)
        : grid_(grid), t0_(t0), dt_(dt), frames_(std::move(frames)) {
        require(dt > 0.0, Errc::invalid_argument, "path dt must be positive");
        require(frames_.size() >= 2, Errc::invalid_argument, "path needs at least 2 frames");
        for (const auto& f : frames_) require_same_grid(grid_, f.grid());
    }

    const TorusGrid& grid() const noexcept { return grid_; }
    double t0() const noexcept { return t0_; }
    double dt() const noexcept { return dt_; }
    double t1() const noexcept { return t0_ + dt_ * double(frames_.size() - 1); }
    double time(std::size_t k) const noexcept { return t0_ + dt_ * double(k); }
    std::size_t size() const noexcept { return frames_.size(); }
    const GridMeasure& operator[](std::size_t k) const { return frames_.at(k); }
    const std::vector<GridMeasure>& frames() const noexcept { return frames_; }

private:
    TorusGrid grid_;
    double t0_;
    double dt_;
    std::vector<GridMeasure> frames_;
};

}  // namespace fpcost
