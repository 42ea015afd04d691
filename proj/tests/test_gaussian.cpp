#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "fpcost/gaussian.hpp"

using namespace fpcost;

namespace {

// int g (|v|^2 / 2h + log g) dv for g = N(mean, h Sigma), by midpoint
// quadrature on a box of +-10 standard deviations.
double integrand_quadrature(const Point& mean, const Mat2& sigma, double h, int p, int nodes = 400) {
    GaussianSpec s;
    s.p = p;
    s.mean = mean;
    for (int k = 0; k < 4; ++k) s.covariance[k] = h * sigma[k];
    const double w0 = 10.0 * std::sqrt(s.covariance[0]);
    const double w1 = p == 2 ? 10.0 * std::sqrt(s.covariance[3]) : 0.0;
    const double d0 = 2.0 * w0 / nodes, d1 = p == 2 ? 2.0 * w1 / nodes : 1.0;
    double total = 0.0;
    for (int i = 0; i < nodes; ++i)
        for (int j = 0; j < (p == 2 ? nodes : 1); ++j) {
            Point v{mean[0] - w0 + (i + 0.5) * d0, p == 2 ? mean[1] - w1 + (j + 0.5) * d1 : 0.0};
            const double g = gaussian_density(s, v);
            if (g > 0.0) total += g * (norm2(v, p) / (2.0 * h) + std::log(g)) * d0 * d1;
        }
    return total;
}

// Golden-section minimum of a unimodal function on [lo, hi].
double golden_min(const std::function<double(double)>& f, double lo, double hi) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi, c = b - r * (b - a), d = a + r * (b - a);
    for (int it = 0; it < 200; ++it) {
        if (f(c) < f(d)) b = d;
        else a = c;
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    return f(0.5 * (a + b));
}

// Mass of N(0, h) (p = 1) outside [-r, r] weighted by v^2.
double gaussian_tail_second_moment(double r, double h) {
    const double s = std::sqrt(h), x = r / s;
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * pi);
    return 2.0 * h * (x * phi + 0.5 * std::erfc(x / std::sqrt(2.0)));
}

// F_h through its concave dual: max over eta of -log Z(eta) - eta delta,
// Z(eta) = int exp(-|v|^2/2h - eta |v|^2 1{|v|>r} / 2h) dv, with erfc closed
// forms (p = 1), shifted to the same scale as out_cost.
double tail_dual_oracle(double r, double delta, double h) {
    auto Z = [&](double eta) {
        const double c = (1.0 + eta) / (2.0 * h);
        const double core = std::sqrt(2.0 * pi * h) * std::erf(r / std::sqrt(2.0 * h));
        return core + std::sqrt(pi / c) * std::erfc(r * std::sqrt(c));
    };
    auto neg_dual = [&](double s) {
        const double eta = std::expm1(s);
        return std::log(Z(eta)) + eta * delta;
    };
    const double best = golden_min(neg_dual, std::log(1e-9), std::log(1e4));
    return -best - 0.5 * log_inv_2pih(h);
}

}  // namespace

TEST(GaussianDensity, Examples) {
    GaussianSpec s1;
    EXPECT_NEAR(gaussian_density(s1, {0.0, 0.0}), 0.398942280401433, 1e-14);
    GaussianSpec s2;
    s2.p = 2;
    EXPECT_NEAR(gaussian_density(s2, {0.0, 0.0}), 0.159154943091895, 1e-14);
    GaussianSpec s3;
    s3.p = 2;
    s3.mean = {0.3, -1.0};
    s3.covariance = {2.0, 0.5, 0.5, 1.0};
    const double det = 2.0 - 0.25;
    EXPECT_NEAR(gaussian_density(s3, s3.mean), 1.0 / (2.0 * pi * std::sqrt(det)), 1e-14);
}

TEST(GaussianDensity, IntegratesToOne) {
    GaussianSpec s;
    s.p = 2;
    s.mean = {0.2, 0.1};
    s.covariance = {0.5, 0.2, 0.2, 0.3};
    double total = 0.0;
    const int m = 600;
    const double w = 6.0, d = 2.0 * w / m;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) total += gaussian_density(s, {-w + (i + 0.5) * d, -w + (j + 0.5) * d}) * d * d;
    EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(GaussianDensity, RejectsIndefiniteCovariance) {
    GaussianSpec s;
    s.p = 2;
    s.covariance = {1.0, 2.0, 2.0, 1.0};
    EXPECT_THROW(gaussian_density(s, {0.0, 0.0}), Error);
    s.covariance = {1.0, 0.1, 0.2, 1.0};
    EXPECT_THROW(gaussian_density(s, {0.0, 0.0}), Error);
}

TEST(WrappedHeatKernel, LargeTimeMarginalIsUniform) {
    TorusGrid g(1, 16, 8);
    auto k = wrapped_heat_kernel(g, 1.0);
    for (std::size_t x = 0; x < g.cells(); x += 5) {
        auto m = k.row_marginal(x);
        for (double v : m) EXPECT_NEAR(v, 1.0 / 16.0, 1e-6);
    }
}

TEST(WrappedHeatKernel, ShortTimeConcentration) {
    const double h = 0.01;
    auto g = make_grid(1, 64, h);
    auto k = wrapped_heat_kernel(g, h);
    // N(0, h) puts 2.7e-3 beyond 3 sd; the 1e-9 level is reached at 6.5 sd
    const double sd = std::sqrt(h);
    for (std::size_t x : {0u, 17u, 63u}) {
        double beyond3 = 0.0, beyond65 = 0.0;
        for (const auto& e : k.row(x)) {
            const double d = std::abs(g.displacement(x, e.target, e.lift)[0]);
            if (d > 3.0 * sd) beyond3 += e.mass;
            if (d > 6.5 * sd) beyond65 += e.mass;
        }
        EXPECT_NEAR(beyond3, std::erfc(3.0 / std::sqrt(2.0)), 1e-3);
        EXPECT_LT(beyond65, 1e-9);
    }
}

TEST(WrappedHeatKernel, PreservesUniform) {
    for (double h : {0.003, 0.02, 0.1}) {
        auto g = make_grid(2, 8, h);
        auto out = push_forward(GridMeasure::uniform(g), wrapped_heat_kernel(g, h));
        for (std::size_t i = 0; i < g.cells(); ++i) EXPECT_NEAR(out[i], 1.0 / 64.0, 1e-12);
    }
}

TEST(TraceBound, Examples) {
    EXPECT_NEAR(trace_bound({0.0, 0.0}, 1.0, 1.0, 1), -0.918938533204673, 1e-14);
    EXPECT_NEAR(trace_bound({1.0, 0.0}, 1.0, 0.5, 2), 0.25 + std::log(1.0 / pi), 1e-14);
}

TEST(TraceBound, MinimizingGaussianThroughIntegrand) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int t = 0; t < 6; ++t) {
        const int p = 1 + t % 2;
        const Point a{-2.0 + 4.0 * U(rng), -2.0 + 4.0 * U(rng)};
        const double delta = 0.3 + 2.0 * U(rng), h = 0.05 + 0.5 * U(rng);
        const Point mean{a[0] * h, a[1] * h};
        const double q = integrand_quadrature(mean, {delta, 0.0, 0.0, delta}, h, p, p == 1 ? 4000 : 400);
        EXPECT_NEAR(q, trace_bound(a, delta, h, p), 1e-6) << "p=" << p;
    }
}

TEST(DiagBound, EqualsTraceAtOneAndMatchesIntegrand) {
    const Point a{0.7, -0.4};
    for (double h : {0.1, 0.5}) EXPECT_NEAR(diag_bound(a, 1.0, h, 2), trace_bound(a, 1.0, h, 2), 1e-14);
    // component 0 has variance delta h, component 1 the free optimum h
    const double h = 0.2, delta = 1.7;
    const double q = integrand_quadrature({a[0] * h, a[1] * h}, {delta, 0.0, 0.0, 1.0}, h, 2);
    EXPECT_NEAR(q, diag_bound(a, delta, h, 2), 1e-6);
}

TEST(OffDiagBound, LimitAndGaussianFamilyMinimum) {
    const Point a{0.5, 1.0};
    const double h = 0.3;
    EXPECT_NEAR(offdiag_bound(a, 0.0, h, 2), 0.5 * h * norm2(a, 2) + log_inv_2pih(h), 1e-14);
    for (double delta : {0.25, std::sqrt(2.0), 3.0}) {
        // covariance h [[s, delta], [delta, s]]
        auto f = [&](double s) { return 0.5 * h * norm2(a, 2) + s - 1.0 - std::log(2.0 * pi * h) - 0.5 * std::log(s * s - delta * delta); };
        const double best = golden_min(f, delta + 1e-12, delta + 20.0);
        EXPECT_NEAR(offdiag_bound(a, delta, h, 2), best, 1e-10) << "delta=" << delta;
    }
    // the family formula itself against quadrature
    const double s = 1.4, delta = 0.6;
    const double f = 0.5 * h * norm2(a, 2) + s - 1.0 - std::log(2.0 * pi * h) - 0.5 * std::log(s * s - delta * delta);
    EXPECT_NEAR(integrand_quadrature({a[0] * h, a[1] * h}, {s, delta, delta, s}, h, 2), f, 1e-6);
}

TEST(EtaAlpha, Examples) {
    auto z = eta_alpha(0.0);
    EXPECT_DOUBLE_EQ(z.eta, 0.0);
    EXPECT_DOUBLE_EQ(z.alpha, 1.0);
    auto r2 = eta_alpha(std::sqrt(2.0));
    EXPECT_NEAR(r2.eta, 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(r2.alpha, 0.5, 1e-15);
    EXPECT_NEAR(eta_alpha(0.75).eta, (-1.0 + std::sqrt(13.0 / 4.0)) / 1.5, 1e-15);
}

TEST(EtaAlpha, SolvesDefiningEquation) {
    for (double lg = -6.0; lg <= 3.0; lg += 0.05) {
        const double delta = std::pow(10.0, lg);
        const double eta = eta_alpha(delta).eta;
        ASSERT_NEAR(eta / (1.0 - eta * eta), delta, 1e-12 * std::max(1.0, delta)) << delta;
    }
}

TEST(Gaps, Examples) {
    for (int p : {1, 2}) EXPECT_NEAR(gap_trace(1.0, p), 0.0, 1e-15);
    EXPECT_NEAR(gap_trace(2.0, 1), 0.5 - 0.5 * std::log(2.0), 1e-14);
    EXPECT_NEAR(gap_offdiag(0.0), 0.0, 1e-15);
    double prev = -1.0;
    for (int k = 0; k <= 1000; ++k) {
        const double v = gap_offdiag(0.01 * k);
        ASSERT_GE(v, prev);
        prev = v;
    }
}

TEST(Gaps, FittedConstantsArePositive) {
    std::vector<double> ds;
    for (int k = 0; k <= 300; ++k) ds.push_back(0.05 * std::pow(400.0, k / 300.0));
    double ct = 1e9, cd = 1e9, co = 1e9;
    for (double d : ds) {
        const double e = std::abs(d - 1.0), m = std::min(e * e, e);
        if (e > 1e-9) {
            ct = std::min(ct, gap_trace(d, 1) / m);
            cd = std::min(cd, gap_diag(d) / m);
        }
        co = std::min(co, gap_offdiag(d) / std::min(d * d, d));
    }
    EXPECT_GT(ct, 0.0);
    EXPECT_GT(cd, 0.0);
    EXPECT_GT(co, 0.0);
}

TEST(BarDelta, Limits) {
    EXPECT_LT(bar_delta(1e4, 1.0, 0.1), 1e-8);
    EXPECT_GT(bar_delta(-1.0 + 1e-4, 1.0, 0.1), 1e3);
}

TEST(BarDelta, HeatKernelTailMoment) {
    for (double h : {0.05, 0.1, 0.3}) {
        const double expected = gaussian_tail_second_moment(1.0, h) / (2.0 * h);
        EXPECT_NEAR(bar_delta(0.0, 1.0, h), expected, 1e-9 * expected) << h;
    }
}

TEST(BarDelta, StrictlyDecreasingInEta) {
    for (int p : {1, 2}) {
        double prev = std::numeric_limits<double>::infinity();
        // beyond s = 4.5 the tail moment underflows to 0
        for (double s = -6.0; s <= 4.5; s += 0.25) {
            const double v = bar_delta(std::expm1(s), 1.0, 0.1, p);
            ASSERT_LT(v, prev) << "p=" << p << " s=" << s;
            prev = v;
        }
    }
}

TEST(OutCost, ZeroAtUnconstrainedOptimum) {
    for (double h : {0.05, 0.2})
        for (int p : {1, 2}) {
            const double d = bar_delta(0.0, 1.0, h, p);
            auto r = out_cost(1.0, d, h, p);
            EXPECT_NEAR(r.f_value, 0.0, 1e-8);
            EXPECT_NEAR(r.eta, 0.0, 1e-6);
        }
}

TEST(OutCost, NonnegativeAndMatchesDualOracle) {
    for (double h : {0.05, 0.1, 0.2})
        for (double delta : {1e-4, 0.01, 0.5, 2.0}) {
            auto r = out_cost(1.0, delta, h);
            EXPECT_GE(r.f_value, -1e-10);
            EXPECT_GT(r.eta, -1.0);
            EXPECT_GT(r.bar_delta, 0.0);
            const double oracle = tail_dual_oracle(1.0, delta, h);
            EXPECT_NEAR(r.f_value, oracle, 1e-7 * std::max(1.0, std::abs(oracle))) << "h=" << h << " delta=" << delta;
        }
}

TEST(OutCost, TailBoundAboveThreshold) {
    const double h = 0.05, d0 = delta0(1.0, h);
    for (double d : delta0_grid())
        if (d >= d0) {
            ASSERT_GE(out_cost(1.0, d, h).f_value, d / 2.0) << d;
        }
}

TEST(Delta0, Examples) {
    std::vector<double> d;
    for (double h : {0.2, 0.1, 0.05, 0.025}) d.push_back(delta0(1.0, h));
    for (std::size_t i = 1; i < d.size(); ++i) EXPECT_LT(d[i], d[i - 1]);
    const double dd = 2.0 * delta0(1.0, 0.1);
    EXPECT_GE(out_cost(1.0, dd, 0.1).f_value, dd / 2.0);
    const double small_ball = delta0(0.5, 0.1), unit_ball = delta0(1.0, 0.1);
    EXPECT_GE(small_ball, unit_ball);
}

TEST(Delta0, HalvingHDoesNotRaiseThreshold) {
    for (double r : {0.5, 1.0, 2.0})
        for (double h : {0.2, 0.1, 0.05}) EXPECT_LE(delta0(r, h / 2.0), 1.1 * delta0(r, h)) << r << " " << h;
}

TEST(Delta0, GridShape) {
    auto g = delta0_grid();
    EXPECT_NEAR(g.front(), 1e-6, 1e-20);
    EXPECT_NEAR(g.back(), 1e2, 1e-10);
    EXPECT_NEAR(g[64] / g[0], 10.0, 1e-12);
}
