#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "popdyn/bd.hpp"
#include "popdyn/kernel/stats.hpp"

using namespace popdyn;
using bd::SeriesVerdict;

namespace {

/**
 * E_i(T_0) for i = 0..N from the first-step equations
 * (l_i + m_i) t_i - l_i t_{i+1} - m_i t_{i-1} = 1, t_0 = 0, births switched off at N,
 * solved with the Thomas algorithm.
 */
std::vector<double> absorption_means_tridiagonal(const bd::RateSpec& s, std::size_t N) {
    std::vector<double> a(N + 1), b(N + 1), c(N + 1), d(N + 1, 1.0), t(N + 1, 0.0);
    for (std::size_t i = 1; i <= N; ++i) {
        const double l = i < N ? s.lambda(i) : 0.0, m = s.mu(i);
        a[i] = -m;
        b[i] = l + m;
        c[i] = -l;
    }
    // Forward sweep on unknowns 1..N (t_0 = 0 drops the first sub-diagonal entry).
    for (std::size_t i = 2; i <= N; ++i) {
        const double w = a[i] / b[i - 1];
        b[i] -= w * c[i - 1];
        d[i] -= w * d[i - 1];
    }
    t[N] = d[N] / b[N];
    for (std::size_t i = N - 1; i >= 1; --i) t[i] = (d[i] - c[i] * t[i + 1]) / b[i];
    return t;
}

}  // namespace

TEST(BdSimulate, ZeroStartStaysAtZero) {
    kernel::RngStream r(1, 0);
    const auto tr = bd::simulate_bd(bd::linear(2.0, 1.0), 0, 5.0, r);
    EXPECT_EQ(tr.final_state(), 0u);
    EXPECT_EQ(tr.states.size(), 1u);
}

TEST(BdSimulate, YuleMeanGrowth) {
    const double lam = 0.8, t = 1.5;
    const std::uint64_t z0 = 3;
    kernel::Accumulator acc;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        kernel::RngStream r(2, i);
        acc.add(static_cast<double>(bd::simulate_bd(bd::yule(lam), z0, t, r).final_state()));
    }
    EXPECT_NEAR(acc.mean(), z0 * std::exp(lam * t), 3.0 * acc.stderr_mean());
}

TEST(BdSimulate, LogisticAlwaysAbsorbed) {
    const auto spec = bd::logistic(2.0, 1.0, 0.5);
    for (std::uint64_t i = 0; i < 300; ++i) {
        kernel::RngStream r(3, i);
        const auto tr = bd::simulate_bd(spec, 5, 1e7, r);
        ASSERT_TRUE(tr.absorbed) << "replicate " << i;
        ASSERT_EQ(tr.final_state(), 0u);
    }
}

TEST(BdSimulate, TrajectoryIsNearestNeighbour) {
    kernel::RngStream r(4, 0);
    const auto tr = bd::simulate_bd(bd::linear(1.2, 1.0), 10, 5.0, r);
    for (std::size_t k = 1; k < tr.states.size(); ++k) {
        const auto d = static_cast<long long>(tr.states[k]) - static_cast<long long>(tr.states[k - 1]);
        ASSERT_TRUE(d == 1 || d == -1);
        ASSERT_GT(tr.times[k], tr.times[k - 1]);
    }
}

TEST(BdRates, ValidateRejectsBadSpecs) {
    EXPECT_NO_THROW(bd::linear(1.0, 1.0).validate());
    EXPECT_NO_THROW(bd::logistic(1.0, 1.0, 1.0).validate());
    EXPECT_NO_THROW(bd::immigration(2.0, 1.0).validate());
    auto bad = bd::linear(1.0, 1.0);
    bad.birth_bound = 0.5;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bd::RateSpec neg{[](std::uint64_t n) { return -1.0 * static_cast<double>(n); },
                     [](std::uint64_t) { return 0.0; }, 1.0, 1.0};
    EXPECT_THROW(neg.validate(), std::invalid_argument);
}

TEST(BdExplosion, Verdicts) {
    EXPECT_EQ(bd::check_explosion(bd::yule(1.0), 4000).verdict, SeriesVerdict::diverges);
    EXPECT_EQ(bd::check_explosion(bd::linear(1.0, 0.7), 4000).verdict, SeriesVerdict::diverges);
    bd::RateSpec sq{[](std::uint64_t n) { return 0.5 * static_cast<double>(n * n); },
                    [](std::uint64_t) { return 0.0; }, 1e9, 0.0};
    const auto rep = bd::check_explosion(sq, 4000);
    EXPECT_EQ(rep.verdict, SeriesVerdict::converges);
    // sum 1/(i^2 lambda) = pi^2 / (6 lambda).
    EXPECT_NEAR(rep.partial_sums.back() + rep.tail_estimate, std::numbers::pi * std::numbers::pi / 3.0, 1e-5);
}

TEST(BdExtinction, ClosedFormLinear) {
    const auto s = bd::linear(1.5, 1.0);
    EXPECT_EQ(bd::extinction_prob(s, 0, 4000).value, 1.0);
    for (std::uint64_t i : {1, 2, 5}) {
        const auto e = bd::extinction_prob(s, i, 4000);
        EXPECT_NEAR(e.value, std::pow(1.0 / 1.5, static_cast<double>(i)), 1e-9) << i;
    }
    EXPECT_EQ(bd::extinction_prob(bd::linear(1.0, 1.0), 3, 4000).value, 1.0);
    EXPECT_EQ(bd::extinction_prob(bd::linear(0.5, 1.0), 3, 4000).value, 1.0);
}

TEST(BdExtinction, MonteCarloFrequency) {
    const auto s = bd::linear(1.5, 1.0);
    const int n = 20000;
    int dead = 0;
    bd::SimOptions opt;
    opt.stop_above = 60;
    opt.record = false;
    for (int i = 0; i < n; ++i) {
        kernel::RngStream r(5, static_cast<std::uint64_t>(i));
        dead += bd::simulate_bd(s, 2, 100.0, r, opt).absorbed;
    }
    const double p = 4.0 / 9.0;
    EXPECT_NEAR(static_cast<double>(dead) / n, p, 3.0 * kernel::binomial_stderr(p, n));
}

TEST(BdExtinctionTime, ZeroStart) { EXPECT_EQ(bd::mean_extinction_time(bd::linear(0.5, 1.0), 0, 100).value, 0.0); }

TEST(BdExtinctionTime, LinearSubcriticalClosedForm) {
    // E_1(T_0) = log(mu / (mu - lambda)) / lambda for lambda < mu.
    const double lam = 0.5, mu = 1.0;
    const auto e = bd::mean_extinction_time(bd::linear(lam, mu), 1, 400);
    EXPECT_NEAR(e.value, std::log(mu / (mu - lam)) / lam, 1e-10);
}

TEST(BdExtinctionTime, LogisticMatchesTridiagonalOracle) {
    const auto s = bd::logistic(1.0, 1.0, 1.0);
    const auto t = absorption_means_tridiagonal(s, 400);
    for (std::uint64_t n : {1, 2, 5}) {
        const auto e = bd::mean_extinction_time(s, n, 400);
        EXPECT_NEAR(e.value, t[n], 1e-6) << n;
        EXPECT_LT(e.truncation_error, 1e-6);
    }
    // Frozen value of the same oracle.
    EXPECT_NEAR(t[1], 1.3179021514544, 1e-9);
}

TEST(BdExtinctionTime, LogisticMatchesMonteCarlo) {
    const auto s = bd::logistic(1.0, 1.0, 1.0);
    kernel::Accumulator acc;
    bd::SimOptions opt;
    opt.record = false;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        kernel::RngStream r(6, i);
        acc.add(bd::simulate_bd(s, 2, 1e7, r, opt).absorption_time);
    }
    EXPECT_NEAR(acc.mean(), bd::mean_extinction_time(s, 2, 400).value, 3.0 * acc.stderr_mean());
}

TEST(BdExtinctionTime, HigherMomentsMatchMonteCarlo) {
    const auto s = bd::linear(0.5, 1.0);
    const auto hm = bd::extinction_time_higher_moments(s, 0, 400);
    kernel::Accumulator m1, m2, m3;
    bd::SimOptions opt;
    opt.record = false;
    for (std::uint64_t i = 0; i < 40000; ++i) {
        kernel::RngStream r(7, i);
        const double T = bd::simulate_bd(s, 1, 1e7, r, opt).absorption_time;
        m1.add(T);
        m2.add(T * T);
        m3.add(T * T * T);
    }
    EXPECT_GT(m2.mean() - m1.mean() * m1.mean(), 0.0);
    EXPECT_NEAR(m2.mean(), hm.second.value, 3.0 * m2.stderr_mean());
    EXPECT_NEAR(m3.mean(), hm.third.value, 3.0 * m3.stderr_mean());
}

TEST(BdExtinctionTime, RejectsSurvivingSpecs) {
    EXPECT_THROW(bd::mean_extinction_time(bd::linear(2.0, 1.0), 1, 400), std::domain_error);
}

TEST(BdInvariant, ImmigrationIsPoisson) {
    const double rho = 3.0, mu = 1.5;
    const auto m = bd::invariant_measure(bd::immigration(rho, mu), 60, 1e-10);
    ASSERT_EQ(m.status, bd::InvariantStatus::normalized);
    double p = std::exp(-rho / mu);
    for (std::size_t j = 0; j < 30; ++j) {
        EXPECT_NEAR(m.weights[j], p, 1e-12) << j;
        p *= rho / mu / static_cast<double>(j + 1);
    }
}

TEST(BdInvariant, GrowingWeightsAreNotNormalizable) {
    bd::RateSpec pure_birth{[](std::uint64_t n) { return 1.0 + static_cast<double>(n); },
                            [](std::uint64_t) { return 0.0; }, 2.0, 0.0, false};
    EXPECT_EQ(bd::invariant_measure(pure_birth, 100, 1e-6).status, bd::InvariantStatus::not_normalizable);
    bd::RateSpec super{[](std::uint64_t n) { return 2.0 * (1.0 + static_cast<double>(n)); },
                       [](std::uint64_t n) { return static_cast<double>(n); }, 4.0, 1.0, false};
    EXPECT_EQ(bd::invariant_measure(super, 100, 1e-6).status, bd::InvariantStatus::not_normalizable);
}

TEST(BdInvariant, AbsorbingZeroIsDegenerate) {
    const auto m = bd::invariant_measure(bd::linear(0.5, 1.0), 20, 1e-6);
    EXPECT_EQ(m.status, bd::InvariantStatus::degenerate);
    EXPECT_EQ(m.weights[0], 1.0);
}
