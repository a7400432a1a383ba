#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "popdyn/catastrophe.hpp"
#include "popdyn/kernel/stats.hpp"

using namespace popdyn;
using namespace popdyn::catastrophe;

namespace {

const double ln2 = std::numbers::ln2;

double riccati(double r, double g, double t, double l) {
    if (r == 0.0) return l / (1.0 + g * l * t);
    return r * l / (g * l + (r - g * l) * std::exp(-r * t));
}

}  // namespace

TEST(FractionLaw, Validation) {
    EXPECT_THROW(FractionLaw::constant(1.0), std::invalid_argument);
    EXPECT_THROW(FractionLaw::constant(0.0), std::invalid_argument);
    EXPECT_THROW(FractionLaw::atoms_law({0.5, 0.2}, {0.5, 0.4}), std::invalid_argument);
    EXPECT_THROW(FractionLaw::beta_law(0.0, 1.0), std::invalid_argument);
    EXPECT_NO_THROW(FractionLaw::atoms_law({1.0, 0.3}, {0.5, 0.5}));
}

TEST(FractionLaw, Moments) {
    const auto atoms = FractionLaw::atoms_law({0.25, 0.5}, {0.5, 0.5});
    EXPECT_DOUBLE_EQ(atoms.mean(), 0.375);
    EXPECT_NEAR(atoms.mean_log(), -1.5 * ln2, 1e-15);
    EXPECT_NEAR(atoms.mean_log_sq(), 0.5 * (4.0 + 1.0) * ln2 * ln2, 1e-15);
    // Beta(2,3): E F = 2/5, E log F = psi(2) - psi(5) = H_1 - H_4 = -13/12.
    const auto beta = FractionLaw::beta_law(2.0, 3.0);
    EXPECT_NEAR(beta.mean(), 0.4, 1e-14);
    EXPECT_NEAR(beta.mean_log(), -13.0 / 12.0, 1e-13);
    kernel::RngStream r(1, 0);
    kernel::Accumulator acc, lg;
    for (int i = 0; i < 100000; ++i) {
        const double f = beta.sample(r);
        acc.add(f);
        lg.add(std::log(f));
    }
    EXPECT_NEAR(acc.mean(), 0.4, 3.0 * acc.stderr_mean());
    EXPECT_NEAR(lg.mean(), -13.0 / 12.0, 3.0 * lg.stderr_mean());
}

TEST(EnvPath, LogEnvironmentAndIntegral) {
    EnvPath e;
    e.r = 0.3;
    e.horizon = 3.0;
    e.times = {1.0, 2.0};
    e.fractions = {0.5, 0.25};
    EXPECT_NEAR(e.K(0.5), 0.15, 1e-15);
    EXPECT_NEAR(e.K(1.5), 0.45 + std::log(0.5), 1e-15);
    EXPECT_NEAR(e.K(3.0), 0.9 + std::log(0.125), 1e-15);
    // Midpoint rule on a fine grid as the oracle.
    const int m = 300000;
    double s = 0.0;
    for (int k = 0; k < m; ++k) s += std::exp(-e.K((k + 0.5) * 3.0 / m)) * 3.0 / m;
    EXPECT_NEAR(e.integral_exp_neg_K(3.0), s, 1e-7);
}

TEST(Environment, ZeroRateHasNoCatastrophes) {
    kernel::RngStream r(2, 0);
    EXPECT_TRUE(sample_environment(0.5, CatastropheEnv::constant_rate(0.0, FractionLaw::constant(0.5)), 10.0, r)
                    .times.empty());
}

TEST(Environment, CatastropheCountIsPoisson) {
    const auto env = CatastropheEnv::constant_rate(1.5, FractionLaw::constant(0.5));
    kernel::Accumulator acc;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        kernel::RngStream r(3, i);
        acc.add(static_cast<double>(sample_environment(0.0, env, 2.0, r).times.size()));
    }
    EXPECT_NEAR(acc.mean(), 3.0, 3.0 * acc.stderr_mean());
    EXPECT_NEAR(acc.variance(), 3.0, 0.15);
}

TEST(CatastropheDiffusion, NoCatastrophesIsFeller) {
    const auto env = CatastropheEnv::constant_rate(0.0, FractionLaw::constant(0.5));
    kernel::Accumulator acc;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        kernel::RngStream r(4, i);
        acc.add(std::exp(-simulate_catastrophe_diffusion(0.3, 1.0, env, 1.0, 1.0, 0.25, r).path.final_value()));
    }
    EXPECT_NEAR(acc.mean(), std::exp(-riccati(0.3, 1.0, 1.0, 1.0)), 3.0 * acc.stderr_mean());
}

TEST(CatastropheDiffusion, HalvingIsExact) {
    const auto env = CatastropheEnv::constant_rate(2.0, FractionLaw::constant(0.5));
    kernel::RngStream r(5, 0);
    const auto run = simulate_catastrophe_diffusion(1.0, 0.2, env, 5.0, 3.0, 0.5, r);
    ASSERT_FALSE(run.env.times.empty());
    std::size_t seen = 0;
    for (std::size_t k = 1; k < run.path.t.size(); ++k) {
        if (run.path.t[k] != run.path.t[k - 1]) continue;
        EXPECT_EQ(run.path.x[k], 0.5 * run.path.x[k - 1]);
        ++seen;
    }
    EXPECT_EQ(seen, run.env.times.size());
}

TEST(CatastropheDiffusion, FirstMoment) {
    const double r = 0.5, tau = 1.0, t = 2.0;
    const auto env = CatastropheEnv::constant_rate(tau, FractionLaw::beta_law(2.0, 2.0));
    kernel::Accumulator acc;
    for (std::uint64_t i = 0; i < 40000; ++i) {
        kernel::RngStream g(6, i);
        acc.add(simulate_catastrophe_diffusion(r, 1.0, env, 1.0, t, 0.5, g).path.final_value());
    }
    EXPECT_NEAR(acc.mean(), std::exp((r + tau * (0.5 - 1.0)) * t), 3.0 * acc.stderr_mean());
}

TEST(CatastropheDiffusion, MonotoneRateUsesThinning) {
    // tau(y) = y / (1 + y) is non-decreasing and bounded by 1; the mean must stay below the tau = 0 case.
    const auto env = CatastropheEnv::monotone([](double y) { return y / (1.0 + y); }, Monotonicity::nondecreasing,
                                              FractionLaw::constant(0.5));
    kernel::Accumulator acc;
    std::uint64_t violations = 0;
    for (std::uint64_t i = 0; i < 4000; ++i) {
        kernel::RngStream g(7, i);
        const auto run = simulate_catastrophe_diffusion(0.5, 1.0, env, 1.0, 2.0, 0.05, g, &violations);
        acc.add(run.path.final_value());
    }
    EXPECT_LT(acc.mean() + 3.0 * acc.stderr_mean(), std::exp(1.0));
    EXPECT_GT(acc.mean(), std::exp(1.0) * std::exp(-0.5 * 2.0) - 3.0 * acc.stderr_mean());
    EXPECT_EQ(violations, 0u);
}

TEST(Quenched, ZeroTime) {
    EnvPath e;
    e.r = 0.4;
    EXPECT_DOUBLE_EQ(quenched_laplace(1.0, e, 2.0, 0.7, 0.0), std::exp(-1.4));
}

TEST(Quenched, NoCatastrophesIsFeller) {
    EnvPath e;
    e.r = 0.0;
    EXPECT_NEAR(quenched_laplace(0.8, e, 1.5, 2.0, 1.3), std::exp(-1.5 * riccati(0.0, 0.8, 1.3, 2.0)), 1e-15);
    // With r != 0 the quenched transform is taken at lambda e^{-rt}.
    e.r = 0.6;
    const double t = 1.3, l = 2.0;
    EXPECT_NEAR(quenched_laplace(0.8, e, 1.5, l, t), std::exp(-1.5 * riccati(0.6, 0.8, t, l * std::exp(-0.6 * t))),
                1e-14);
}

TEST(Quenched, AnnealedAverageMatchesSimulation) {
    const double r = 0.5, gamma = 1.0, t = 2.0, l = 1.0, y0 = 1.0;
    const auto env = CatastropheEnv::constant_rate(1.0, FractionLaw::beta_law(2.0, 2.0));
    kernel::Accumulator mc, quenched;
    for (std::uint64_t i = 0; i < 40000; ++i) {
        kernel::RngStream g(8, i);
        const auto run = simulate_catastrophe_diffusion(r, gamma, env, y0, t, 0.5, g);
        mc.add(std::exp(-l * std::exp(-run.env.K(t)) * run.path.final_value()));
        quenched.add(quenched_laplace(gamma, run.env, y0, l, t));
    }
    const double se = std::hypot(mc.stderr_mean(), quenched.stderr_mean());
    EXPECT_NEAR(mc.mean(), quenched.mean(), 3.0 * se);
}

TEST(ExtinctionCriterion, ConstantRate) {
    const auto half = FractionLaw::constant(0.5);
    EXPECT_EQ(extinction_criterion(0.1, CatastropheEnv::constant_rate(1.0, half)), Extinction::almost_sure_absorption);
    EXPECT_EQ(extinction_criterion(1.0, CatastropheEnv::constant_rate(1.0, half)), Extinction::survival_possible);
    EXPECT_EQ(extinction_criterion(ln2, CatastropheEnv::constant_rate(1.0, half)), Extinction::almost_sure_absorption);
}

TEST(ExtinctionCriterion, MonotoneRates) {
    const auto half = FractionLaw::constant(0.5);
    // tau(y) rises from 0.5 to 2: r = 0.2 is below 0.5 log 2 at y = 0.
    auto up = CatastropheEnv::monotone([](double y) { return 0.5 + 1.5 * y / (1.0 + y); }, Monotonicity::nondecreasing,
                                       half);
    EXPECT_EQ(extinction_criterion(0.2, up), Extinction::almost_sure_absorption);
    EXPECT_EQ(extinction_criterion(1.5, up), Extinction::survival_possible);
    // 1.0 <= log 2 * tau(y) once tau(y) >= 1.443, which happens for large y.
    EXPECT_EQ(extinction_criterion(1.0, up), Extinction::almost_sure_absorption);
    // A slowly saturating rate whose supremum 2 is never reached on the grid leaves a gap.
    auto slow = CatastropheEnv::monotone([](double y) { return 2.0 - std::pow(1.0 + y, -0.01); },
                                         Monotonicity::nondecreasing, half);
    EXPECT_EQ(extinction_criterion(1.5 * ln2, slow), Extinction::undetermined);
    CatastropheEnv undeclared = up;
    undeclared.monotonicity = Monotonicity::undeclared;
    EXPECT_THROW(extinction_criterion(1.0, undeclared), std::invalid_argument);
    auto down = CatastropheEnv::monotone([](double y) { return 1.0 + 1.0 / (1.0 + y); }, Monotonicity::nonincreasing,
                                         half);
    EXPECT_EQ(extinction_criterion(0.6, down), Extinction::almost_sure_absorption);
    EXPECT_EQ(extinction_criterion(0.8, down), Extinction::survival_possible);
}

TEST(Regime, ConstantHalfPresets) {
    const auto half = FractionLaw::constant(0.5);
    const auto strong = regime_classify(-0.1, 1.0, half);
    EXPECT_EQ(strong.regime, Regime::strongly_subcritical);
    EXPECT_NEAR(strong.exponent, -0.6, 1e-15);
    EXPECT_EQ(strong.poly_order, 0.0);

    const auto inter = regime_classify(0.5 * ln2, 1.0, half);
    EXPECT_EQ(inter.regime, Regime::intermediate_subcritical);
    EXPECT_NEAR(inter.exponent, 0.5 * ln2 - 0.5, 1e-15);
    EXPECT_EQ(inter.poly_order, -0.5);

    const auto crit = regime_classify(ln2, 1.0, half);
    EXPECT_EQ(crit.regime, Regime::critical);
    EXPECT_EQ(crit.poly_order, -0.5);

    EXPECT_EQ(regime_classify(1.0, 1.0, half).regime, Regime::supercritical);
    EXPECT_EQ(regime_classify(0.9, 1.0, half).regime, Regime::supercritical);
    EXPECT_THROW(regime_classify(1.0, 0.0, half), std::invalid_argument);
}

TEST(Regime, WeakChiClosedForm) {
    // r + 2^{-chi} log(1/2) = 0 gives chi = log(log 2 / r) / log 2.
    const double r = 0.5;
    const auto rep = regime_classify(r, 1.0, FractionLaw::constant(0.5));
    ASSERT_EQ(rep.regime, Regime::weakly_subcritical);
    const double chi = std::log(ln2 / r) / ln2;
    EXPECT_NEAR(rep.chi, chi, 1e-12);
    EXPECT_NEAR(rep.exponent, chi * r + std::pow(0.5, chi) - 1.0, 1e-12);
    EXPECT_EQ(rep.poly_order, -1.5);
    // The exponent is the minimum of s r + E F^s - 1 over [0, 1].
    for (double s = 0.0; s <= 1.0; s += 0.05) EXPECT_LE(rep.exponent, s * r + std::pow(0.5, s) - 1.0 + 1e-12);
}

TEST(SurvivalFit, SyntheticCurves) {
    std::vector<SurvivalPoint> strong, crit;
    for (double t = 0.5; t <= 10.0; t += 0.5) {
        strong.push_back({t, 0.3 * std::exp(-0.6 * t), 0.0});
        crit.push_back({t, 0.8 / std::sqrt(t), 0.0});
    }
    const auto rep = regime_classify(-0.1, 1.0, FractionLaw::constant(0.5));
    const auto fit = survival_rate_fit(strong, rep);
    EXPECT_NEAR(fit.fitted_exponent, -0.6, 1e-10);
    EXPECT_TRUE(fit.pass);
    EXPECT_NEAR(critical_drift_factor(crit), 1.0, 1e-12);
}

TEST(SurvivalCurve, SimulationMatchesEnvironmentFormula) {
    const auto env = CatastropheEnv::constant_rate(1.0, FractionLaw::constant(0.5));
    const std::vector<double> times{1.0, 2.0, 4.0};
    const auto sim = survival_curve(0.5, 1.0, env, 1.0, times, 20000, 9);
    const auto formula = survival_from_environment(0.5, 1.0, env, 1.0, times, 20000, 10);
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double se = std::hypot(sim[k].stderr_, formula[k].stderr_);
        EXPECT_NEAR(sim[k].p_hat, formula[k].p_hat, 3.0 * se) << times[k];
    }
    for (std::size_t k = 1; k < times.size(); ++k) EXPECT_LE(sim[k].p_hat, sim[k - 1].p_hat);
}
