#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "popdyn/kernel/stats.hpp"
#include "popdyn/structpop.hpp"

using namespace popdyn;
using namespace popdyn::structpop;

TEST(IbmParams, Validation) {
    auto P = IbmParams::kisdi(50.0);
    EXPECT_GT(P.alpha(), 1.0);
    EXPECT_NEAR(P.mass_in_box(2.0), 1.0, 1e-12);
    EXPECT_NEAR(P.mass_in_box(0.0), 0.5, 1e-12);
    P.b_bar = 3.0;
    EXPECT_THROW(P.validate(), std::invalid_argument);
    EXPECT_THROW(IbmParams::mean_field(0.0, 1.0, 0.0, 1.0), std::invalid_argument);
}

TEST(IbmParams, MutationKernelIsNormalised) {
    const auto P = IbmParams::kisdi(50.0, 0.1, 0.3);
    for (double x : {0.0, 0.2, 2.0, 4.0})
        EXPECT_NEAR(P.mutation_expectation([](double) { return 1.0; }, x), 1.0, 1e-9) << x;
    RngStream r(1, 0);
    for (int i = 0; i < 1000; ++i) {
        const double z = P.sample_mutant(0.05, r);
        ASSERT_GE(z, 0.0);
        ASSERT_LE(z, 4.0);
    }
}

TEST(Ibm, EmptyPopulationStaysEmpty) {
    const auto P = IbmParams::kisdi(50.0);
    for (auto mode : {Mode::grouped, Mode::verbatim}) {
        RngStream r(2, 0);
        IbmOptions o;
        o.mode = mode;
        const auto run = simulate_ibm(P, {}, 3.0, r, o);
        for (auto n : run.N) EXPECT_EQ(n, 0u);
        EXPECT_EQ(run.births + run.deaths, 0u);
    }
}

TEST(Ibm, NoMutationKeepsSupport) {
    const auto P = IbmParams::kisdi(40.0, 0.0);
    std::vector<double> init = monomorphic(20, 1.0);
    init.insert(init.end(), 20, 2.5);
    RngStream r(3, 0);
    const auto run = simulate_ibm(P, init, 5.0, r);
    EXPECT_EQ(run.mutants, 0u);
    for (double x : run.final_traits) EXPECT_TRUE(x == 1.0 || x == 2.5) << x;
}

TEST(Ibm, RejectsTraitOutsideBox) {
    const auto P = IbmParams::kisdi(40.0);
    RngStream r(4, 0);
    EXPECT_THROW(simulate_ibm(P, {5.0}, 1.0, r), std::invalid_argument);
}

TEST(Ibm, PureBirthMean) {
    const auto P = IbmParams::mean_field(100.0, 1.0, 0.0, 0.0);
    for (auto mode : {Mode::grouped, Mode::skip_null}) {
        kernel::Accumulator a;
        for (std::uint64_t i = 0; i < 4000; ++i) {
            RngStream r(5, i);
            IbmOptions o;
            o.mode = mode;
            o.grid_dt = 1.0;
            a.add(static_cast<double>(simulate_ibm(P, monomorphic(3, 1.0), 1.0, r, o).N.back()));
        }
        EXPECT_NEAR(a.mean(), 3.0 * std::exp(1.0), 3.0 * a.stderr_mean()) << to_string(mode);
    }
}

TEST(Generator, ConstantFunctionResidualAndBracket) {
    const auto P = IbmParams::kisdi(30.0);
    const auto g = generator_moment_check(P, monomorphic(30, 1.0), [](double) { return 1.0; }, 1.0, 2000, 6);
    EXPECT_LT(std::fabs(g.residual), 3.0 * g.residual_stderr);
    EXPECT_LT(g.qv_rel_error, 0.1);
    EXPECT_NEAR(g.mean_realized_qv, g.mean_qv, 0.1 * g.mean_qv);
}

TEST(Generator, TraitFunctionUnderThinning) {
    const auto P = IbmParams::kisdi(10.0, 0.2, 0.2);
    const auto g = generator_moment_check(P, monomorphic(10, 1.5), [](double x) { return x * x; }, 0.5, 1500, 7,
                                          Mode::verbatim);
    EXPECT_LT(std::fabs(g.residual), 3.0 * g.residual_stderr);
    EXPECT_LT(g.qv_rel_error, 0.1);
}

TEST(Modes, GroupedAndVerbatimAgreeInLaw) {
    const auto P = IbmParams::kisdi(15.0, 0.1, 0.3);
    std::vector<double> a, b, ma, mb;
    for (std::uint64_t i = 0; i < 600; ++i) {
        IbmOptions o;
        o.grid_dt = 1.0;
        RngStream r1(8, i), r2(9, i);
        o.mode = Mode::grouped;
        const auto x = simulate_ibm(P, monomorphic(15, 1.0), 1.0, r1, o);
        o.mode = Mode::verbatim;
        const auto y = simulate_ibm(P, monomorphic(15, 1.0), 1.0, r2, o);
        a.push_back(static_cast<double>(x.N.back()));
        b.push_back(static_cast<double>(y.N.back()));
        double sx = 0.0, sy = 0.0;
        for (double t : x.final_traits) sx += t;
        for (double t : y.final_traits) sy += t;
        if (!x.final_traits.empty()) ma.push_back(sx / static_cast<double>(x.final_traits.size()));
        if (!y.final_traits.empty()) mb.push_back(sy / static_cast<double>(y.final_traits.size()));
    }
    EXPECT_GT(kernel::ks_two_sample(a, b).p_value, 1e-3);
    EXPECT_GT(kernel::ks_two_sample(ma, mb).p_value, 1e-3);
}

TEST(TraitOde, MonomorphicEquilibrium) {
    const auto P = IbmParams::kisdi(100.0, 0.0);
    const double x = 1.0;
    // n' = n (b(x) - C(0) n) settles at b(x) / C(0).
    const double c0 = 2.0 * (1.0 - 1.0 / 2.2);
    const auto path = trait_ode(P, {x}, {0.2}, 20.0, 0.5);
    EXPECT_NEAR(path.back()[0], 3.0 / c0, 1e-8);
}

TEST(TraitOde, MeanFieldLogisticClosedForm) {
    const auto P = IbmParams::mean_field(100.0, 2.0, 0.5, 0.75);
    const auto path = trait_ode(P, {1.0}, {0.1}, 4.0, 0.1);
    // n' = 1.5 n - 0.75 n^2, carrying capacity 2.
    for (std::size_t k = 0; k < path.size(); ++k) {
        const double t = 0.1 * static_cast<double>(k);
        EXPECT_NEAR(path[k][0], 2.0 / (1.0 + 19.0 * std::exp(-1.5 * t)), 1e-9) << t;
    }
}

TEST(LimitCompare, MeanFieldDistanceShrinks) {
    const auto P = IbmParams::mean_field(1.0, 2.0, 0.5, 0.75, 0.05, 0.2);
    const auto rows = limit_ode_compare(P, LimitRegime::mean_field, {1.0}, {0.5}, {50.0, 800.0}, 3.0, 0.1, 40, 10);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_GT(rows[0].distance - rows[1].distance, 2.0 * rows[0].stderr_);
    EXPECT_LT(rows[1].distance, 0.15);
}

TEST(LimitCompare, DimorphicNeedsNoMutation) {
    const auto P = IbmParams::kisdi(100.0, 0.03);
    EXPECT_THROW(limit_ode_compare(P, LimitRegime::dimorphic, {1.0, 2.0}, {0.5, 0.5}, {100.0}, 1.0, 0.1, 2, 1),
                 std::invalid_argument);
    EXPECT_THROW(limit_ode_compare(IbmParams::kisdi(100.0, 0.0), LimitRegime::monomorphic, {1.0, 2.0}, {0.5, 0.5},
                                   {100.0}, 1.0, 0.1, 2, 1),
                 std::invalid_argument);
}

TEST(Accelerated, BracketsAgree) {
    const auto base = IbmParams::kisdi(200.0, 0.0);
    const auto one = [](double) { return 1.0; };
    {
        // eta = 1: the bracket is 2 int <X, gamma f^2> ds plus (1/K) int <X, (b + d) f^2> ds.
        RngStream r(11, 0);
        const auto a = accelerated_run(base, 1.0, one, 1.0, monomorphic(200, 1.0), 1.0, r, one);
        EXPECT_NEAR(a.realized, a.predictable, 0.05 * a.predictable);
        EXPECT_GE(a.predictable, a.superprocess);
        EXPECT_LE(a.predictable, a.superprocess + 10.0 * a.mass_f2 / a.K);
    }
    {
        // eta = 1/2: the bracket vanishes like K^{-1/2}.
        RngStream r(12, 0);
        const auto a = accelerated_run(base, 0.5, one, 1.0, monomorphic(200, 1.0), 1.0, r, one);
        EXPECT_GE(a.predictable, a.superprocess / std::sqrt(a.K));
        EXPECT_LT(a.predictable, 0.25 * a.superprocess);
    }
}
