#include <gtest/gtest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/zeta.hpp>

#include <cmath>

#include "popdyn/csbp.hpp"
#include "popdyn/kernel/stats.hpp"

using namespace popdyn;
using csbp::BranchingMechanism;

namespace {

// int_0^inf (e^{-l h} - 1 + l h) h^{-1-alpha} dh in long double, split at h = 1.
long double stable_integral_reference(long double l, long double alpha) {
    auto f = [&](long double h) -> long double {
        if (h <= 0) return 0.0L;
        const long double x = l * h;
        if (x < 1e-3L) return l * l * std::pow(h, 1 - alpha) * (0.5L - x / 6 + x * x / 24);
        return (std::expm1(-x) + x) * std::pow(h, -1 - alpha);
    };
    boost::math::quadrature::tanh_sinh<long double> ts;
    boost::math::quadrature::exp_sinh<long double> es;
    return ts.integrate(f, 0.0L, 1.0L) + es.integrate(f, 1.0L, std::numeric_limits<long double>::infinity());
}

// Solution of du/dt = r u - g u^2, u(0) = l, derived by separation of variables.
double riccati(double r, double g, double t, double l) {
    if (r == 0.0) return l / (1.0 + g * l * t);
    return r * l / (g * l + (r - g * l) * std::exp(-r * t));
}

}  // namespace

TEST(Psi, ZeroAtOrigin) {
    EXPECT_EQ(BranchingMechanism::feller(0.3, 1.0).psi(0.0), 0.0);
    EXPECT_EQ(BranchingMechanism::stable(0.3, 1.0, 1.0, 1.5).psi(0.0), 0.0);
    EXPECT_EQ(BranchingMechanism::with_atoms(0.3, 1.0, {{1.0, 2.0}}).psi(0.0), 0.0);
}

TEST(Psi, FellerPolynomial) {
    const auto m = BranchingMechanism::feller(0.7, 1.3);
    for (double l : {0.1, 1.0, 5.0}) EXPECT_DOUBLE_EQ(m.psi(l), -0.7 * l + 1.3 * l * l);
    EXPECT_THROW(m.psi(-1.0), std::domain_error);
}

TEST(Psi, AtomsClosedForm) {
    const auto m = BranchingMechanism::with_atoms(0.2, 0.5, {{0.5, 2.0}, {3.0, 0.1}});
    for (double l : {0.01, 0.5, 4.0}) {
        const double v = -0.2 * l + 0.5 * l * l + 2.0 * (std::exp(-0.5 * l) - 1.0 + 0.5 * l) +
                         0.1 * (std::exp(-3.0 * l) - 1.0 + 3.0 * l);
        EXPECT_NEAR(m.psi(l), v, 1e-12 * std::max(1.0, std::fabs(v)));
    }
}

TEST(Psi, StableQuadratureAgainstReferences) {
    for (double alpha : {1.2, 1.5, 1.8}) {
        const auto m = BranchingMechanism::stable(0.0, 0.0, 1.0, alpha);
        for (double l : {0.05, 1.0, 20.0}) {
            const double ref = static_cast<double>(stable_integral_reference(l, alpha));
            const double closed = boost::math::tgamma(-alpha) * std::pow(l, alpha);
            EXPECT_NEAR(m.psi(l), ref, 1e-8 * ref) << alpha << " " << l;
            EXPECT_NEAR(closed, ref, 1e-8 * ref) << alpha << " " << l;
        }
    }
}

TEST(LaplaceExponent, ZeroTimeIsIdentity) {
    EXPECT_EQ(csbp::laplace_exponent(BranchingMechanism::feller(1.0, 1.0), 0.0, 2.5).value, 2.5);
}

TEST(LaplaceExponent, FellerMatchesRiccati) {
    for (double r : {-0.5, 0.0, 0.5}) {
        const auto m = BranchingMechanism::feller(r, 1.0);
        for (double t : {0.1, 1.0, 3.0})
            for (double l : {0.2, 1.0, 10.0}) {
                const double u = riccati(r, 1.0, t, l);
                EXPECT_NEAR(csbp::laplace_exponent(m, t, l).value, u, 1e-9 * u) << r << " " << t << " " << l;
                EXPECT_NEAR(csbp::feller_u(r, 1.0, t, l), u, 1e-12 * u);
            }
    }
}

TEST(LaplaceExponent, StableIdentityResidual) {
    const auto m = BranchingMechanism::stable(0.0, 0.0, 1.0, 1.5);
    const auto u = csbp::laplace_exponent(m, 1.0, 1.0);
    EXPECT_LT(u.value, 1.0);
    EXPECT_LT(u.identity_residual, 1e-7);
    // Pure stable: u_t(l) = (l^{1-alpha} + (alpha - 1) G t)^{-1/(alpha-1)}, G = Gamma(-alpha).
    const double G = boost::math::tgamma(-1.5);
    EXPECT_NEAR(u.value, std::pow(1.0 + 0.5 * G, -2.0), 1e-8);
}

TEST(Classify, FellerRoots) {
    const auto sub = csbp::classify(BranchingMechanism::feller(-0.2, 1.0));
    EXPECT_EQ(sub.eta, 0.0);
    EXPECT_EQ(sub.extinction_prob(3.0), 1.0);
    EXPECT_TRUE(sub.absorption_possible);
    EXPECT_EQ(csbp::classify(BranchingMechanism::feller(0.0, 1.0)).eta, 0.0);
    const auto sup = csbp::classify(BranchingMechanism::feller(0.6, 1.5));
    EXPECT_NEAR(sup.eta, 0.4, 1e-9);
    EXPECT_NEAR(sup.extinction_prob(2.0), std::exp(-0.8), 1e-9);
}

TEST(Classify, DriftOnlyNeverAbsorbs) {
    const auto c = csbp::classify(BranchingMechanism::feller(-0.3, 0.0));
    EXPECT_EQ(c.eta, 0.0);
    EXPECT_FALSE(c.absorption_possible);
    EXPECT_FALSE(c.blowup_possible);
}

TEST(Classify, StableRootAndBlowUp) {
    // psi(l) = -r l + Gamma(-alpha) l^alpha vanishes at l = (r / Gamma(-alpha))^{1/(alpha-1)}.
    const double G = boost::math::tgamma(-1.5);
    const auto st = csbp::classify(BranchingMechanism::stable(0.5, 0.0, 1.0, 1.5));
    EXPECT_NEAR(st.eta, std::pow(0.5 / G, 2.0), 1e-7);
    EXPECT_TRUE(st.absorption_possible);
    const auto nc = csbp::classify(BranchingMechanism::nonconservative_stable(0.0, 0.0, 1.0, 0.5));
    EXPECT_TRUE(nc.blowup_possible);
    EXPECT_THROW(csbp::classify(BranchingMechanism::feller(0.0, 0.0)), std::invalid_argument);
}

TEST(AbsorptionRate, FellerLimit) {
    const auto a = csbp::absorption_rate(BranchingMechanism::feller(0.5, 1.0), 1.0);
    ASSERT_TRUE(a.bounded);
    EXPECT_NEAR(a.value, 0.5 / (1.0 - std::exp(-0.5)), 1e-6);
    EXPECT_FALSE(csbp::absorption_rate(BranchingMechanism::feller(-0.3, 0.0), 1.0).bounded);
}

TEST(CsbpSde, ZeroStartStaysZero) {
    kernel::RngStream r(1, 0);
    const auto p = csbp::simulate_csbp_sde(BranchingMechanism::stable(0.5, 1.0, 1.0, 1.5), 0.0, 2.0, 0.1, 0.01, r);
    for (double x : p.x) EXPECT_EQ(x, 0.0);
}

TEST(CsbpSde, MeanGrowthAndMartingale) {
    const double r = 0.5;
    const auto m = BranchingMechanism::with_atoms(r, 0.5, {{1.0, 0.5}});
    std::vector<kernel::Accumulator> acc(3);
    const std::vector<double> ts{0.5, 1.0, 2.0};
    for (std::uint64_t i = 0; i < 20000; ++i) {
        kernel::RngStream g(2, i);
        const auto p = csbp::simulate_csbp_sde(m, 1.5, 2.0, 0.05, 0.01, g);
        for (std::size_t k = 0; k < ts.size(); ++k) acc[k].add(std::exp(-r * ts[k]) * p.at(ts[k]));
    }
    for (std::size_t k = 0; k < ts.size(); ++k) EXPECT_NEAR(acc[k].mean(), 1.5, 3.0 * acc[k].stderr_mean()) << ts[k];
}

TEST(CsbpSde, StableLaplaceMatchesOde) {
    const auto m = BranchingMechanism::stable(0.0, 0.0, 1.0, 1.5);
    kernel::Accumulator acc;
    for (std::uint64_t i = 0; i < 4000; ++i) {
        kernel::RngStream g(3, i);
        acc.add(std::exp(-csbp::simulate_csbp_sde(m, 1.0, 1.0, 0.01, 0.01, g).final_value()));
    }
    EXPECT_NEAR(acc.mean(), std::exp(-csbp::laplace_exponent(m, 1.0, 1.0).value), 3.0 * acc.stderr_mean());
}

TEST(CsbpSde, AbsorbedFrequency) {
    const auto m = BranchingMechanism::feller(0.5, 1.0);
    const double u_inf = csbp::absorption_rate(m, 1.0).value;
    const int n = 20000;
    int dead = 0;
    for (int i = 0; i < n; ++i) {
        kernel::RngStream g(4, static_cast<std::uint64_t>(i));
        dead += csbp::simulate_csbp_sde(m, 1.0, 1.0, 0.1, 0.01, g).final_value() == 0.0;
    }
    const double p = std::exp(-u_inf);
    EXPECT_NEAR(static_cast<double>(dead) / n, p, 3.0 * kernel::binomial_stderr(p, n));
}

TEST(CsbpLamperti, DeterministicMechanism) {
    kernel::RngStream r(5, 0);
    const auto p = csbp::simulate_csbp_lamperti(BranchingMechanism::feller(0.4, 0.0), 2.0, 3.0, 0.01, 0.01, r);
    for (double t : {1.0, 2.0, 3.0}) EXPECT_NEAR(p.at(t), 2.0 * std::exp(0.4 * t), 1e-6 * std::exp(0.4 * t)) << t;
}

TEST(CsbpLamperti, FellerLaplaceAndAbsorption) {
    const auto m = BranchingMechanism::feller(0.5, 1.0);
    kernel::Accumulator acc;
    const int n = 8000;
    int dead = 0;
    for (int i = 0; i < n; ++i) {
        kernel::RngStream g(6, static_cast<std::uint64_t>(i));
        const double z = csbp::simulate_csbp_lamperti(m, 1.0, 1.0, 0.01, 0.01, g).final_value();
        acc.add(std::exp(-z));
        dead += z == 0.0;
    }
    EXPECT_NEAR(acc.mean(), std::exp(-riccati(0.5, 1.0, 1.0, 1.0)), 3.0 * acc.stderr_mean());
    const double p = std::exp(-0.5 / (1.0 - std::exp(-0.5)));
    EXPECT_NEAR(static_cast<double>(dead) / n, p, 3.0 * kernel::binomial_stderr(p, n));
}

TEST(CsbpLamperti, RejectsBadStep) {
    kernel::RngStream r(7, 0);
    EXPECT_THROW(csbp::simulate_csbp_lamperti(BranchingMechanism::feller(0.4, 1.0), 1.0, 1.0, 1.5, 0.01, r),
                 std::invalid_argument);
}

TEST(GwScaling, UnitOffspringIsExact) {
    const auto rows = csbp::gw_scaling_demo(csbp::dirac_offspring(1), BranchingMechanism::feller(0.0, 0.0), {10, 100},
                                            [](double K) { return K; }, 1.0, {0.5, 1.0, 2.0}, 100, 1);
    for (const auto& r : rows) EXPECT_NEAR(r.distance, 0.0, 1e-15);
}

TEST(GwScaling, PoissonOffspringReachesFeller) {
    // Variance-one offspring: the limit mechanism is psi(l) = l^2 / 2.
    const auto rows = csbp::gw_scaling_demo(csbp::poisson_offspring(1.0), BranchingMechanism::feller(0.0, 0.5), {1, 200},
                                            [](double K) { return K; }, 1.0, {0.5, 1.0, 2.0}, 20000, 2);
    EXPECT_GT(rows[0].distance, 4.0 * rows[0].stderr_);
    EXPECT_LT(rows[1].distance, 3.0 * rows[1].stderr_);
}

TEST(GwScaling, StableDomainReachesStableCsbp) {
    const double alpha = 1.5, a = 1.0 / boost::math::zeta(alpha);
    const auto limit = BranchingMechanism::stable(0.0, 0.0, a * alpha, alpha);
    const auto rows = csbp::gw_scaling_demo(csbp::stable_domain_offspring(alpha), limit, {10, 300},
                                            [&](double K) { return std::pow(K, alpha - 1.0); }, 1.0, {0.5, 1.0, 2.0},
                                            4000, 3);
    EXPECT_GT(rows[0].distance - rows[1].distance, 2.0 * rows[0].stderr_);
    EXPECT_LT(rows[1].distance, 3.0 * rows[1].stderr_);
}
