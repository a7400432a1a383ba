#include <gtest/gtest.h>

#include <cmath>

#include "popdyn/kernel/stats.hpp"
#include "popdyn/scaling.hpp"

using namespace popdyn;

namespace {

double logistic_closed_form(double r, double cap, double x0, double t) {
    return cap / (1.0 + (cap / x0 - 1.0) * std::exp(-r * t));
}

}  // namespace

TEST(LimitOde, ZeroStaysZero) {
    const auto p = scaling::integrate_limit_ode([](double) { return 2.0; }, [](double x) { return 1.0 + x; }, 0.0, 5.0,
                                                0.1);
    for (double x : p.x) EXPECT_EQ(x, 0.0);
}

TEST(LimitOde, MalthusClosedForm) {
    const auto p = scaling::integrate_limit_ode([](double) { return 1.3; }, [](double) { return 0.8; }, 0.7, 4.0, 0.01);
    for (std::size_t k = 0; k < p.t.size(); ++k) EXPECT_NEAR(p.x[k], 0.7 * std::exp(0.5 * p.t[k]), 1e-8);
    EXPECT_NEAR(p.t.back(), 4.0, 1e-12);
}

TEST(LimitOde, LogisticConvergesToCapacity) {
    scaling::ScaledFamilySpec fam;  // lambda 2, mu 1, c 0.5
    const auto p = fam.limit(0.5, 30.0, 0.01);
    for (std::size_t k = 0; k < p.t.size(); k += 50) EXPECT_NEAR(p.x[k], logistic_closed_form(1.0, 2.0, 0.5, p.t[k]), 1e-8);
    EXPECT_NEAR(p.x.back(), 2.0, 1e-9);
    EXPECT_DOUBLE_EQ(scaling::logistic_carrying_capacity(2.0, 1.0, 0.5), 2.0);
    EXPECT_THROW(scaling::logistic_carrying_capacity(2.0, 1.0, 0.0), std::invalid_argument);
}

TEST(LogisticFeller, ZeroNoiseFollowsOde) {
    kernel::RngStream r(1, 0);
    const double step = 1e-3;
    const auto p = scaling::simulate_logistic_feller(0.0, 2.0, 1.0, 0.5, 0.5, 5.0, step, r);
    for (double t : {1.0, 2.5, 5.0}) EXPECT_NEAR(p.at(t), logistic_closed_form(1.0, 2.0, 0.5, t), 5.0 * step);
}

TEST(LogisticFeller, AbsorptionFractionGrowsToOne) {
    std::vector<int> absorbed;
    for (double horizon : {2.0, 10.0, 40.0}) {
        int a = 0;
        for (std::uint64_t i = 0; i < 400; ++i) {
            kernel::RngStream r(2, i);
            a += scaling::simulate_logistic_feller(1.0, 2.0, 1.0, 0.5, 0.5, horizon, 1e-2, r).absorbed;
        }
        absorbed.push_back(a);
    }
    EXPECT_LT(absorbed[0], absorbed[1]);
    EXPECT_LE(absorbed[1], absorbed[2]);
    EXPECT_GE(absorbed[2], 396);
}

TEST(LogisticFeller, PlainFellerLaplace) {
    // c = 0: E exp(-l X_t) = exp(-x u_t(l)), u_t(l) = r l e^{rt} / (r + gamma l (e^{rt} - 1)).
    const double gamma = 0.5, r = 0.5, x0 = 1.0, t = 1.0, l = 1.5;
    kernel::Accumulator acc;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        kernel::RngStream g(3, i);
        acc.add(std::exp(-l * scaling::simulate_logistic_feller(gamma, 1.5, 1.0, 0.0, x0, t, 2e-3, g).final_value()));
    }
    const double u = r * l * std::exp(r * t) / (r + gamma * l * std::expm1(r * t));
    EXPECT_NEAR(acc.mean(), std::exp(-x0 * u), 3.0 * acc.stderr_mean());
}

TEST(ScaledFamily, RatesMatchDefinition) {
    scaling::ScaledFamilySpec fam;
    const auto s = fam.rates(100);
    EXPECT_DOUBLE_EQ(s.lambda(10), 20.0);
    EXPECT_DOUBLE_EQ(s.mu(10), 10.0 * (1.0 + 0.5 * 10.0 / 100.0));
    EXPECT_NO_THROW(s.validate());
    EXPECT_THROW(fam.rates(0), std::invalid_argument);
}

TEST(ScaledFamily, DeterministicDistancesDecrease) {
    scaling::ScaledFamilySpec fam;
    const auto rows = scaling::convergence_harness(fam, {50, 200, 800}, 0.5, 5.0, 0.05, 100, 4);
    ASSERT_EQ(rows.size(), 4u);
    for (std::size_t k = 0; k + 1 < 3; ++k) EXPECT_GT(rows[k].distance - rows[k + 1].distance, 2.0 * rows[k].stderr_);
    EXPECT_TRUE(std::isinf(rows.back().K));
    EXPECT_EQ(rows.back().distance, 0.0);
}

TEST(ScaledFamily, AcceleratedFluctuationsPersist) {
    scaling::ScaledFamilySpec fam;
    fam.regime = scaling::Regime::accelerated;
    fam.gamma = 1.0;
    const auto rows = scaling::convergence_harness(fam, {50, 400}, 0.5, 2.0, 0.05, 100, 5);
    // The limit is a Feller-type diffusion, so the distance to the ODE stays of order one.
    EXPECT_GT(rows[0].distance, 0.5);
    EXPECT_GT(rows[1].distance, 0.5);
    EXPECT_GT(rows[1].distance, 0.5 * rows[0].distance);
}

TEST(RandomEnv, ZeroNoiseIsLogisticOde) {
    kernel::RngStream r(6, 0);
    const auto p = scaling::random_env_paths(1.0, 0.5, 0.0, 0.3, 5.0, 1e-3, r, 100);
    for (std::size_t k = 0; k < p.t.size(); ++k) {
        EXPECT_NEAR(p.exact[k], logistic_closed_form(1.0, 2.0, 0.3, p.t[k]), 1e-6);
        EXPECT_NEAR(p.numeric[k], p.exact[k], 5e-3);
    }
}

TEST(RandomEnv, StrongOrderOneHalf) {
    std::vector<double> err;
    for (double h : {4e-3, 1e-3, 2.5e-4}) {
        kernel::Accumulator a;
        for (std::uint64_t i = 0; i < 100; ++i) {
            kernel::RngStream r(7, i);
            const auto p = scaling::random_env_paths(1.0, 1.0, 1.0, 0.5, 1.0, h, r);
            double sup = 0.0;
            for (std::size_t k = 0; k < p.t.size(); ++k) sup = std::max(sup, std::fabs(p.numeric[k] - p.exact[k]));
            a.add(sup);
        }
        err.push_back(a.mean());
    }
    // Quartering the step divides the error by about 4^{1/2} = 2.
    for (std::size_t k = 0; k + 1 < err.size(); ++k) {
        const double ratio = err[k] / err[k + 1];
        EXPECT_GT(ratio, 1.5) << k;
        EXPECT_LT(ratio, 3.0) << k;
    }
}

TEST(RandomEnv, StationaryLawFormula) {
    // Stationary density proportional to y^{2r/s^2 - 2} exp(-2 c y / s^2).
    const auto g = scaling::random_env_stationary_law(2.0, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(g.shape, 3.0);
    EXPECT_DOUBLE_EQ(g.scale, 0.5);
    EXPECT_DOUBLE_EQ(g.mean(), 1.5);
    EXPECT_DOUBLE_EQ(g.variance(), 0.75);
    EXPECT_THROW(scaling::random_env_stationary_law(0.5, 1.0, 1.0), std::domain_error);
}

TEST(RandomEnv, LongRunMomentsWithinFivePercent) {
    const auto g = scaling::random_env_stationary_law(2.0, 1.0, 1.0);
    const auto m = scaling::random_env_long_run(2.0, 1.0, 1.0, 0.5, 200.0, 1e-2, 20, 8, 0.2, true);
    EXPECT_NEAR(m.mean, g.mean(), 0.05 * g.mean());
    EXPECT_NEAR(m.variance, g.variance(), 0.05 * g.variance());
}
