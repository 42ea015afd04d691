#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "fpcost/entropic_step.hpp"
#include "fpcost/gaussian.hpp"

using namespace fpcost;

namespace {

GridMeasure random_measure(const TorusGrid& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.05, 1.0);
    std::vector<double> w(g.cells());
    for (auto& v : w) v = U(rng);
    return GridMeasure::normalized(g, w);
}

GridMeasure bump(const TorusGrid& g) {
    std::vector<double> w(g.cells());
    for (std::size_t x = 0; x < g.cells(); ++x) {
        auto c = g.coords(x);
        w[x] = 1.0 + 0.5 * std::cos(2.0 * pi * (c[0] + 0.5) / g.n());
    }
    return GridMeasure::normalized(g, w);
}

// Row-wise total variation between two kernels, comparing masses per (target, lift).
double max_row_tv(const JumpKernel& a, const JumpKernel& b, const GridMeasure& mu) {
    const TorusGrid& g = a.grid();
    const std::size_t L = g.lift_count();
    double worst = 0.0;
    std::vector<double> da(g.cells() * L), db(g.cells() * L);
    for (std::size_t x = 0; x < g.cells(); ++x) {
        if (mu[x] <= 0.0) continue;
        std::fill(da.begin(), da.end(), 0.0);
        std::fill(db.begin(), db.end(), 0.0);
        for (const auto& e : a.row(x)) da[e.target * L + e.lift] += e.mass;
        for (const auto& e : b.row(x)) db[e.target * L + e.lift] += e.mass;
        double tv = 0.0;
        for (std::size_t i = 0; i < da.size(); ++i) tv += std::abs(da[i] - db[i]);
        worst = std::max(worst, 0.5 * tv);
    }
    return worst;
}

// Direct KL of a kernel against the midpoint Gaussian reference, written out
// from the densities.
double kl_oracle(const GridMeasure& mu, const JumpKernel& k) {
    const TorusGrid& g = k.grid();
    const double h = k.h(), vol = g.cell_volume();
    const int p = g.p();
    double total = 0.0;
    for (std::size_t x = 0; x < g.cells(); ++x) {
        if (mu[x] <= 0.0) continue;
        for (const auto& e : k.row(x)) {
            if (e.mass <= 0.0) continue;
            Point d = g.displacement(x, e.target, e.lift);
            double ref = std::pow(2.0 * pi * h, -0.5 * p) * std::exp(-norm2(d, p) / (2.0 * h));
            total += mu[x] * e.mass * std::log(e.mass / (vol * ref));
        }
    }
    return total;
}

}  // namespace

TEST(SolveStep, HeatPairHasZeroCost) {
    for (int p : {1, 2}) {
        const double h = 0.02;
        auto g = make_grid(p, p == 1 ? 64 : 16, h);
        auto mu1 = bump(g);
        auto heat = wrapped_heat_kernel(g, h);
        auto mu2 = push_forward(mu1, heat);
        auto r = solve_step(mu1, mu2, h);
        ASSERT_TRUE(r.converged);
        EXPECT_LE(std::abs(r.cost), 1e-6) << "p=" << p;
        EXPECT_LE(max_row_tv(r.kernel, heat, mu1), 1e-4) << "p=" << p;
    }
}

TEST(SolveStep, UniformToUniform) {
    const double h = 0.05;
    auto g = make_grid(1, 64, h);
    auto u = GridMeasure::uniform(g);
    auto r = solve_step(u, u, h);
    ASSERT_TRUE(r.converged);
    EXPECT_LE(std::abs(r.cost), 1e-6);
    for (std::size_t x = 0; x < g.cells(); ++x) {
        EXPECT_NEAR(forward_velocity(r)[x][0], 0.0, 1e-10);
        EXPECT_NEAR(covariance(r)[x][0], 1.0, 1e-6);
    }
}

TEST(SolveStep, TranslationKernelCostIsHalfDriftSquared) {
    // The Gaussian translation kernel N(h a, h) carries cost (h/2) a^2.  Its
    // image of the uniform measure is uniform, so the optimal step cost of the
    // pair can only be lower.
    const double h = 0.02, a = 0.5;
    auto g = make_grid(1, 128, h);
    auto u = GridMeasure::uniform(g);
    auto shifted = gaussian_jump_kernel(g, h, [&](std::size_t) { return Point{h * a, 0.0}; }, h);
    const double translation_cost = kernel_cost(u, shifted);
    EXPECT_NEAR(translation_cost, 0.5 * h * a * a, 0.2 * 0.5 * h * a * a);
    auto r = solve_step(u, push_forward(u, shifted), h);
    ASSERT_TRUE(r.converged);
    EXPECT_LE(r.cost, translation_cost + 1e-9);

    // a non-uniform source keeps a strictly positive cost under the same kernel
    auto mu = bump(g);
    auto rb = solve_step(mu, push_forward(mu, shifted), h);
    ASSERT_TRUE(rb.converged);
    EXPECT_GT(rb.cost, 1e-6);
    EXPECT_LE(rb.cost, kernel_cost(mu, shifted) + 1e-9);
}

TEST(SolveStep, MarginalsAndRowNormalization) {
    std::mt19937_64 rng(21);
    auto g = make_grid(1, 32, 0.05);
    auto mu1 = random_measure(g, rng), mu2 = random_measure(g, rng);
    SinkhornOptions opt;
    auto r = solve_step(mu1, mu2, 0.05, opt);
    ASSERT_TRUE(r.converged);
    auto img = push_forward(mu1, r.kernel);
    double tv = 0.0;
    for (std::size_t i = 0; i < g.cells(); ++i) tv += std::abs(img[i] - mu2[i]);
    EXPECT_LE(0.5 * tv, opt.tolerance * 10);
    for (std::size_t x = 0; x < g.cells(); ++x) {
        double s = 0.0;
        for (const auto& e : r.kernel.row(x)) s += e.mass;
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(SolveStep, DeterministicAndGridChecked) {
    std::mt19937_64 rng(4);
    auto g = make_grid(1, 32, 0.05);
    auto mu1 = random_measure(g, rng), mu2 = random_measure(g, rng);
    auto a = solve_step(mu1, mu2, 0.05), b = solve_step(mu1, mu2, 0.05);
    EXPECT_EQ(a.cost, b.cost);
    EXPECT_EQ(a.iterations, b.iterations);
    auto g2 = make_grid(1, 16, 0.05);
    EXPECT_THROW(solve_step(mu1, GridMeasure::uniform(g2), 0.05), Error);
    EXPECT_THROW(solve_step(mu1, mu2, 0.0), Error);
    SinkhornOptions bad;
    bad.tolerance = 1e-3;
    EXPECT_THROW(solve_step(mu1, mu2, 0.05, bad), Error);
}

TEST(SolveStep, NonConvergenceIsReported) {
    std::mt19937_64 rng(9);
    auto g = make_grid(1, 32, 0.01);
    auto mu1 = random_measure(g, rng), mu2 = random_measure(g, rng);
    SinkhornOptions opt;
    opt.max_iterations = 1;
    auto r = solve_step(mu1, mu2, 0.01, opt);
    EXPECT_FALSE(r.converged);
    EXPECT_THROW(forward_velocity(r), Error);
    EXPECT_THROW(covariance(r), Error);
    EXPECT_THROW(tail_moments(r, 0.1), Error);
}

TEST(ForwardVelocity, HeatKernelIsZero) {
    const double h = 0.02;
    auto g = make_grid(1, 64, h);
    auto mu = bump(g);
    auto s = summarize_kernel(mu, wrapped_heat_kernel(g, h));
    for (const auto& v : s.velocity) EXPECT_NEAR(v[0], 0.0, 1e-10);
}

TEST(ForwardVelocity, GaussianRowsRecoverDrift) {
    const double h = 0.02;
    for (int p : {1, 2}) {
        auto g = make_grid(p, p == 1 ? 128 : 32, h);
        const Point a{0.7, p == 2 ? -0.4 : 0.0};
        auto k = gaussian_jump_kernel(g, h, [&](std::size_t) { return Point{h * a[0], h * a[1]}; }, h);
        auto s = summarize_kernel(GridMeasure::uniform(g), k);
        for (const auto& v : s.velocity)
            for (int i = 0; i < p; ++i) ASSERT_NEAR(v[i], a[i], 1e-6) << "p=" << p;
    }
}

TEST(ForwardVelocity, OneCellShift) {
    const double h = 0.1;
    auto g = make_grid(2, 8, h);
    auto s = summarize_kernel(GridMeasure::uniform(g), JumpKernel::shift(g, h, {1, 0}));
    for (const auto& v : s.velocity) {
        EXPECT_NEAR(v[0], g.cell_width() / h, 1e-12);
        EXPECT_NEAR(v[1], 0.0, 1e-12);
    }
    // zero-mass cells report zero
    auto s0 = summarize_kernel(GridMeasure::dirac(g, 5), JumpKernel::shift(g, h, {1, 0}));
    EXPECT_EQ(s0.velocity[4][0], 0.0);
    EXPECT_NEAR(s0.velocity[5][0], g.cell_width() / h, 1e-12);
}

TEST(Covariance, HeatShiftAndScaledGaussian) {
    const double h = 0.02;
    auto g = make_grid(2, 32, h);
    auto u = GridMeasure::uniform(g);
    auto heat = summarize_kernel(u, wrapped_heat_kernel(g, h));
    for (const auto& c : heat.covariance) {
        ASSERT_NEAR(c[0], 1.0, 1e-6);
        ASSERT_NEAR(c[3], 1.0, 1e-6);
        ASSERT_NEAR(c[1], 0.0, 1e-6);
        ASSERT_EQ(c[1], c[2]);
    }
    auto shift = summarize_kernel(u, JumpKernel::shift(g, h, {1, 1}));
    for (const auto& c : shift.covariance)
        for (double v : c) ASSERT_NEAR(v, 0.0, 1e-14);
    const double delta = 0.6;
    auto k = gaussian_jump_kernel(g, h, [&](std::size_t) { return Point{0.3 * h, 0.0}; }, h * delta);
    auto s = summarize_kernel(u, k);
    for (const auto& c : s.covariance) {
        ASSERT_NEAR(c[0], delta, 1e-6);
        ASSERT_NEAR(c[3], delta, 1e-6);
        ASSERT_NEAR(c[1], 0.0, 1e-6);
    }
}

TEST(Covariance, SymmetricPositiveSemidefinite) {
    std::mt19937_64 rng(2);
    auto g = make_grid(2, 8, 0.05);
    for (int t = 0; t < 10; ++t) {
        auto r = solve_step(random_measure(g, rng), random_measure(g, rng), 0.05);
        ASSERT_TRUE(r.converged);
        for (const auto& c : covariance(r)) {
            EXPECT_NEAR(c[1], c[2], 1e-12);
            EXPECT_GE(c[0], -1e-12);
            EXPECT_GE(c[3], -1e-12);
            EXPECT_GE(c[0] * c[3] - c[1] * c[2], -1e-12);
        }
    }
}

TEST(PenalizedCost, LargeLambdaRecoversStepCost) {
    std::mt19937_64 rng(13);
    const double h = 0.05;
    auto g = make_grid(1, 16, h);
    for (int t = 0; t < 5; ++t) {
        auto mu1 = random_measure(g, rng), mu2 = random_measure(g, rng);
        auto r = solve_step(mu1, mu2, h);
        ASSERT_TRUE(r.converged);
        const double c = penalized_cost(mu1, mu2, h, 1e6);
        EXPECT_NEAR(c, r.cost, 1e-3);
        EXPECT_LE(c, r.cost + 1e-9);
    }
}

TEST(PenalizedCost, HeatPairIsFreeForEveryLambda) {
    const double h = 0.05;
    auto g = make_grid(1, 16, h);
    auto mu1 = bump(g);
    auto mu2 = push_forward(mu1, wrapped_heat_kernel(g, h));
    for (double lambda : {1e-2, 1.0, 10.0, 1e3, 1e6}) EXPECT_LE(std::abs(penalized_cost(mu1, mu2, h, lambda)), 1e-6) << lambda;
}

TEST(PenalizedCost, MonotoneInLambdaOnRandomPairs) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> L(-1.0, 3.0);
    const double h = 0.05;
    auto g = make_grid(1, 16, h);
    for (int t = 0; t < 20; ++t) {
        auto mu1 = random_measure(g, rng), mu2 = random_measure(g, rng);
        double l1 = std::pow(10.0, L(rng)), l2 = std::pow(10.0, L(rng));
        if (l1 > l2) std::swap(l1, l2);
        EXPECT_LE(penalized_cost(mu1, mu2, h, l1), penalized_cost(mu1, mu2, h, l2) + 1e-9) << l1 << " " << l2;
    }
}

TEST(PenalizedCost, LadderAscendsAndTwoDimensionalGuard) {
    std::mt19937_64 rng(23);
    const double h = 0.05;
    auto g = make_grid(1, 16, h);
    auto mu1 = random_measure(g, rng), mu2 = random_measure(g, rng);
    auto v = penalized_cost_ladder(mu1, mu2, h, {0.1, 1.0, 10.0, 100.0});
    for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LE(v[i - 1], v[i]);
    EXPECT_THROW(penalized_cost_ladder(mu1, mu2, h, {1.0, 0.1}), Error);
    EXPECT_THROW(penalized_cost(mu1, mu2, h, 0.0), Error);
    auto g9 = make_grid(2, 9, h);
    auto a = random_measure(g9, rng), b = random_measure(g9, rng);
    EXPECT_THROW(penalized_cost(a, b, h, 1.0), Error);
    auto g4 = make_grid(2, 4, h);
    auto c = random_measure(g4, rng), d = random_measure(g4, rng);
    auto r = solve_step(c, d, h);
    EXPECT_LE(penalized_cost(c, d, h, 1.0), r.cost + 1e-6);
}

TEST(TailMoments, HeatKernelTailIsNegligible) {
    const double h = 0.01;
    auto g = make_grid(1, 64, h);
    auto mu = bump(g);
    auto r = solve_step(mu, push_forward(mu, wrapped_heat_kernel(g, h)), h);
    ASSERT_TRUE(r.converged);
    EXPECT_LT(tail_moments(r, 1.0).epsilon_out, 1e-9);
}

TEST(TailMoments, ThirdMomentScalesLikeRootH) {
    // (1/h) E|v|^3 for N(0, h) equals 2 sqrt(2/pi) sqrt(h)
    auto g = make_grid(1, 256, 0.04);
    auto u = GridMeasure::uniform(g);
    const double big = tail_moments(u, wrapped_heat_kernel(g, 0.04), 0.5).third_moment;
    const double small = tail_moments(u, wrapped_heat_kernel(g, 0.01), 0.5).third_moment;
    EXPECT_NEAR(big / small, 2.0, 0.6);
    EXPECT_NEAR(big, 2.0 * std::sqrt(2.0 / pi) * std::sqrt(0.04), 0.05 * big);
}

TEST(TailMoments, DeterministicShiftOutsideBall) {
    const double h = 0.1;
    auto g = make_grid(1, 16, h);
    auto u = GridMeasure::uniform(g);
    auto t = tail_moments(u, JumpKernel::shift(g, h, {2, 0}), 0.1);
    const double d = 2.0 / 16.0;
    EXPECT_DOUBLE_EQ(t.epsilon_out, 1.0 / h);
    EXPECT_NEAR(t.delta_out, d * d / (2.0 * h), 1e-14);
    EXPECT_NEAR(t.third_moment, d * d * d / h, 1e-14);
    EXPECT_THROW(tail_moments(u, JumpKernel::shift(g, h, {2, 0}), 0.0), Error);
}

TEST(StepInvariants, NonnegativeOnRandomPairs) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> H(0.01, 0.2);
    SinkhornOptions opt;
    for (int t = 0; t < 200; ++t) {
        const int p = 1 + t % 2;
        const double h = H(rng);
        auto g = make_grid(p, p == 1 ? 16 : 5, h);
        auto r = solve_step(random_measure(g, rng), random_measure(g, rng), h, opt);
        ASSERT_TRUE(r.converged);
        ASSERT_GE(r.cost, -10.0 * opt.tolerance) << "trial " << t;
    }
}

TEST(StepInvariants, UniqueUnderDifferentInitialScalings) {
    std::mt19937_64 rng(37);
    std::normal_distribution<double> N(0.0, 2.0);
    for (int p : {1, 2}) {
        const double h = 0.03;
        auto g = make_grid(p, p == 1 ? 32 : 8, h);
        auto mu1 = random_measure(g, rng), mu2 = random_measure(g, rng);
        std::vector<double> warm(g.cells());
        for (auto& v : warm) v = N(rng);
        auto a = solve_step(mu1, mu2, h), b = solve_step(mu1, mu2, h, {}, warm);
        ASSERT_TRUE(a.converged && b.converged);
        EXPECT_NEAR(a.cost, b.cost, 1e-8);
        EXPECT_LE(max_row_tv(a.kernel, b.kernel, mu1), 1e-6);
    }
}

TEST(StepInvariants, FormulationsAgree) {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 20; ++t) {
        const int p = 1 + t % 2;
        const double h = 0.02 + 0.01 * t;
        auto g = make_grid(p, p == 1 ? 32 : 8, h);
        auto mu1 = random_measure(g, rng);
        auto r = solve_step(mu1, random_measure(g, rng), h);
        ASSERT_TRUE(r.converged);
        EXPECT_NEAR(kernel_action(mu1, r.kernel), kernel_cost(mu1, r.kernel), 1e-9);
        EXPECT_NEAR(r.cost, kl_oracle(mu1, r.kernel), 1e-9);
    }
}

TEST(StepInvariants, CostDominatesTraceLowerBound) {
    std::mt19937_64 rng(43);
    for (int t = 0; t < 30; ++t) {
        const int p = 1 + t % 2;
        const double h = 0.01 + 0.005 * t;
        auto g = make_grid(p, p == 1 ? 32 : 8, h);
        auto r = solve_step(random_measure(g, rng), random_measure(g, rng), h);
        ASSERT_TRUE(r.converged);
        EXPECT_GE(r.cost, step_lower_bound(r) - 1e-6) << "trial " << t;
    }
}
