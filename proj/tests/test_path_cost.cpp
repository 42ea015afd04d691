#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fpcost/path_cost.hpp"

using namespace fpcost;

namespace {

GridMeasure bump(const TorusGrid& g) {
    std::vector<double> w(g.cells());
    for (std::size_t x = 0; x < g.cells(); ++x) w[x] = 1.0 + 0.5 * std::cos(2.0 * pi * g.center(x)[0]);
    return GridMeasure::normalized(g, w);
}

GridMeasure narrow(const TorusGrid& g, double var) {
    std::vector<double> w(g.cells());
    for (std::size_t x = 0; x < g.cells(); ++x) {
        double d = g.center(x)[0] - 0.5;
        w[x] = std::exp(-0.5 * d * d / var);
    }
    return GridMeasure::normalized(g, w);
}

MeasurePath heat_path(const TorusGrid& g, const GridMeasure& mu0, double span, double dt) {
    return fp_solve(mu0, constant_drift({0.0, 0.0}, g.p()), 0.0, span, dt);
}

// Path obtained by pushing through the translation kernel N(dt a, dt) every
// frame, and the exact cost of that competitor: 1/2 a^2 per unit time.
MeasurePath translated_path(const TorusGrid& g, const GridMeasure& mu0, double a, double dt, std::size_t steps) {
    auto k = gaussian_jump_kernel(g, dt, [&](std::size_t) { return Point{a * dt, 0.0}; }, dt);
    std::vector<GridMeasure> frames{mu0};
    for (std::size_t i = 0; i < steps; ++i) frames.push_back(push_forward(frames.back(), k));
    return MeasurePath(g, 0.0, dt, std::move(frames));
}

}  // namespace

TEST(StepCostIntegral, HeatFlowIsFree) {
    auto g = make_grid(1, 64, 0.1);
    auto path = heat_path(g, bump(g), 0.25, 1.0 / 256.0);
    EXPECT_LE(std::abs(step_cost_integral(path, 4.0 / 256.0)), 1e-4);
}

TEST(StepCostIntegral, ConstantDriftBelowTranslationCompetitor) {
    // The translation kernel is admissible for every pair it generates, so the
    // optimal cost cannot exceed 1/2 a^2 (span - h).
    const double a = 0.5, dt = 1.0 / 128.0;
    auto g = make_grid(1, 64, 0.1);
    auto path = translated_path(g, bump(g), a, dt, 64);
    const double span = path.t1() - path.t0();
    for (double h : {8 * dt, 4 * dt}) {
        auto k = gaussian_jump_kernel(g, h, [&](std::size_t) { return Point{a * h, 0.0}; }, h);
        const double competitor_rate = kernel_cost(GridMeasure::uniform(g), k) / h;
        EXPECT_NEAR(competitor_rate, 0.5 * a * a, 1e-6);
        const double v = step_cost_integral(path, h);
        EXPECT_GE(v, -1e-9);
        EXPECT_LE(v, 0.5 * a * a * (span - h) + 1e-6) << "h=" << h;
    }
}

TEST(StepCostIntegral, RejectsBadSteps) {
    auto g = make_grid(1, 16, 0.1);
    auto path = heat_path(g, bump(g), 0.25, 1.0 / 64.0);
    EXPECT_THROW(step_cost_integral(path, 1.5 / 64.0), Error);
    EXPECT_THROW(step_cost_integral(path, 1.0), Error);
    EXPECT_THROW(step_cost_integral(path, 0.0), Error);
}

TEST(StepCostIntegral, StaticAtomCostGrows) {
    auto g = make_grid(1, 32, 0.1);
    auto atom = GridMeasure::dirac(g, 16);
    MeasurePath path(g, 0.0, 1.0 / 128.0, std::vector<GridMeasure>(33, atom));
    std::vector<double> hs{8.0 / 128.0, 4.0 / 128.0, 2.0 / 128.0, 1.0 / 128.0};
    double prev = -1.0;
    for (double h : hs) {
        double v = step_cost_integral(path, h);
        EXPECT_GT(v, prev) << "h=" << h;
        prev = v;
    }
}

TEST(EnergyLadder, DriftEnergyBelowEnergyAndTailTrend) {
    auto g = make_grid(1, 32, 0.1);
    const double dt = 1.0 / 128.0;
    auto path = fp_solve(GridMeasure::uniform(g), sine_drift(0.5, 1), 0.0, 0.5, dt);
    auto rep = energy_ladder(path, {8 * dt, 4 * dt, 2 * dt, dt});
    ASSERT_EQ(rep.energies.size(), 4u);
    for (std::size_t i = 0; i < rep.energies.size(); ++i) {
        EXPECT_TRUE(rep.converged[i]);
        EXPECT_GE(rep.energies[i], -1e-6);
        EXPECT_LE(rep.drift_energy[i], rep.energies[i] + 1e-6) << "rung " << i;
        if (i > 0) {
            EXPECT_LT(rep.third_moment[i], rep.third_moment[i - 1]) << "rung " << i;
        }
    }
    for (std::size_t i = 1; i < 4; ++i) EXPECT_LE(rep.liminf_estimate, rep.energies[i] + 1e-12);
    EXPECT_FALSE(rep.diverging);
    EXPECT_FALSE(rep.finest_velocity.empty());
    EXPECT_FALSE(rep.second_velocity.empty());
    EXPECT_THROW(energy_ladder(path, {dt, 2 * dt}), Error);
    EXPECT_THROW(energy_ladder(path, {}), Error);
}

TEST(EnergyLadder, LiminfStableUnderFrameRefinement) {
    auto g = make_grid(1, 32, 0.1);
    const std::vector<double> hs{1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0};
    auto coarse = fp_solve(GridMeasure::uniform(g), sine_drift(0.5, 1), 0.0, 0.5, 1.0 / 128.0);
    auto fine = fp_solve(GridMeasure::uniform(g), sine_drift(0.5, 1), 0.0, 0.5, 1.0 / 256.0);
    const double a = energy_ladder(coarse, hs).liminf_estimate, b = energy_ladder(fine, hs).liminf_estimate;
    ASSERT_GT(a, 0.0);
    EXPECT_NEAR(b / a, 1.0, 0.1);
}

TEST(LadderDivergence, Rule) {
    EXPECT_FALSE(ladder_diverges({1.0, 2.0}));
    EXPECT_TRUE(ladder_diverges({1.0, 2.0, 4.0}));
    EXPECT_FALSE(ladder_diverges({0.1, 0.15, 0.16}));
    // growth with shrinking increments approaches a limit
    EXPECT_FALSE(ladder_diverges({1e-3, 2e-3, 2.5e-3}));
    EXPECT_FALSE(ladder_diverges({1e-9, 2e-9, 4e-9}));
}

TEST(DriftEnergy, ConstantFieldOracle) {
    auto g = make_grid(2, 8, 0.1);
    auto path = heat_path(g, bump(g), 0.5, 1.0 / 32.0);
    EXPECT_NEAR(drift_energy(path, constant_drift({0.3, -0.4}, 2)), 0.5 * 0.25 * 0.5, 1e-12);
}

TEST(MollifiedUpperBound, ConstantDriftOnUniform) {
    for (int p : {1, 2}) {
        auto g = make_grid(p, p == 1 ? 32 : 8, 0.1);
        const Point a{0.5, p == 2 ? 0.25 : 0.0};
        MeasurePath path(g, 0.0, 1.0 / 32.0, std::vector<GridMeasure>(33, GridMeasure::uniform(g)));
        auto mb = mollified_upper_bound(path, constant_drift(a, p), {1e-2, 1e-3});
        for (double v : mb.values) EXPECT_NEAR(v, 0.5 * norm2(a, p) * 1.0, 1e-10) << "p=" << p;
    }
}

TEST(MollifiedUpperBound, HeatFlowIsZero) {
    auto g = make_grid(1, 32, 0.1);
    auto path = heat_path(g, bump(g), 0.25, 1.0 / 64.0);
    auto mb = mollified_upper_bound(path, constant_drift({0.0, 0.0}, 1), {1e-2, 1e-4});
    for (double v : mb.values) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(mollified_upper_bound(path, constant_drift({0.0, 0.0}, 1), {}), Error);
    EXPECT_THROW(mollified_upper_bound(path, constant_drift({0.0, 0.0}, 1), {-1.0}), Error);
}

TEST(MollifiedUpperBound, SineDriftApproachesDriftEnergy) {
    auto g = make_grid(1, 128, 0.1);
    auto path = fp_solve(GridMeasure::uniform(g), sine_drift(1.0, 1), 0.0, 1.0, 1.0 / 256.0);
    auto X = sine_drift(1.0, 1);
    const double direct = drift_energy(path, X);
    auto mb = mollified_upper_bound(path, X, {1e-2, 1e-3, 1e-4});
    EXPECT_NEAR(mb.value, direct, 0.05 * direct);
    // discrete Jensen: mollification never increases the energy
    for (double v : mb.values) EXPECT_LE(v, direct + 1e-9);
    for (std::size_t i = 1; i < mb.values.size(); ++i) EXPECT_GE(mb.values[i], mb.values[i - 1] - 1e-12);
}

TEST(RelaxedBracket, HeatFlowBracketNearZero) {
    auto g = make_grid(1, 32, 0.1);
    const double dt = 1.0 / 128.0;
    auto path = heat_path(g, bump(g), 0.5, dt);
    auto b = relaxed_bracket(path, constant_drift({0.0, 0.0}, 1), {8 * dt, 4 * dt, 2 * dt}, {1e-3});
    EXPECT_FALSE(b.cost_infinite);
    EXPECT_GE(b.lower, -1e-4);
    EXPECT_LE(b.upper, 1e-3);
    EXPECT_LE(b.lower, b.upper + 1e-9);
}

TEST(RelaxedBracket, OrderingOnSinePath) {
    auto g = make_grid(1, 32, 0.1);
    const double dt = 1.0 / 128.0;
    auto path = fp_solve(bump(g), sine_drift(0.5, 1), 0.0, 0.5, dt);
    auto b = relaxed_bracket(path, std::nullopt, {8 * dt, 4 * dt, 2 * dt, dt}, {1e-2, 1e-3});
    EXPECT_FALSE(b.cost_infinite);
    EXPECT_LE(b.lower, b.upper + 1e-6);
}

TEST(RelaxedBracket, OrderingOnConstantDriftPath) {
    auto g = make_grid(1, 32, 0.1);
    const double dt = 1.0 / 128.0;
    auto path = fp_solve(bump(g), constant_drift({0.5, 0.0}, 1), 0.0, 0.5, dt);
    auto b = relaxed_bracket(path, std::nullopt, {8 * dt, 4 * dt, 2 * dt, dt}, {1e-2, 1e-3});
    EXPECT_FALSE(b.cost_infinite);
    EXPECT_LE(b.lower, b.upper + 1e-6) << "ladder energies still rising: " << b.ladder.energies[1] << " " << b.ladder.energies[2]
                                        << " " << b.ladder.energies[3];
}

TEST(RelaxedBracket, SmoothReversedHeatFlowHasFiniteCost) {
    // reversing the heat flow of N(c, s0) costs int 1/2 Fisher information,
    // 1/2 log((s0 + T) / s0)
    auto g = make_grid(1, 64, 0.1);
    const double dt = 1.0 / 512.0, s0 = 1e-3, T = 0.125;
    auto forward = heat_path(g, narrow(g, s0), T, dt);
    std::vector<GridMeasure> frames;
    for (std::size_t k = forward.size(); k-- > 0;) frames.push_back(forward[k]);
    MeasurePath reversed(g, 0.0, dt, std::move(frames));
    auto rep = energy_ladder(reversed, {8 * dt, 4 * dt, 2 * dt, dt});
    EXPECT_FALSE(rep.diverging);
    for (double e : rep.energies) EXPECT_LE(e, 0.5 * std::log((s0 + T) / s0));
}

TEST(RelaxedBracket, ReversedHeatFlowIntoAtomIsCostInfinite) {
    auto g = make_grid(1, 64, 0.1);
    const double dt = 1.0 / 512.0;
    auto forward = heat_path(g, GridMeasure::dirac(g, 32), 0.125, dt);
    std::vector<GridMeasure> frames;
    for (std::size_t k = forward.size(); k-- > 0;) frames.push_back(forward[k]);
    MeasurePath reversed(g, 0.0, dt, std::move(frames));
    auto b = relaxed_bracket(reversed, std::nullopt, {16 * dt, 8 * dt, 4 * dt, 2 * dt, dt}, {1e-3});
    EXPECT_TRUE(b.cost_infinite);
    EXPECT_TRUE(std::isinf(b.upper));
    for (std::size_t i = 1; i < b.ladder.energies.size(); ++i) EXPECT_GT(b.ladder.energies[i], b.ladder.energies[i - 1]);
}

TEST(ModulusCheck, HeatAndSinePaths) {
    auto g = make_grid(1, 32, 0.1);
    const double dt = 1.0 / 64.0;
    for (const auto& X : {constant_drift({0.0, 0.0}, 1), sine_drift(1.0, 1)}) {
        auto path = fp_solve(bump(g), X, 0.0, 0.5, dt);
        const double kinetic = 2.0 * drift_energy(path, X);
        auto samples = modulus_check(path, kinetic, {0, 8, 16, 24}, {1, 2, 4, 8});
        EXPECT_EQ(samples.size(), 16u);
        for (const auto& s : samples) EXPECT_LE(s.d2_squared, s.bound + 1e-6) << X.kind;
    }
}
