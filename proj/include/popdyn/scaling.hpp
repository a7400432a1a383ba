#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "bd.hpp"
#include "kernel/parallel.hpp"
#include "kernel/rng.hpp"
#include "kernel/sde.hpp"
#include "kernel/stats.hpp"

namespace popdyn::scaling {

using kernel::RngStream;

struct GridPath {
    std::vector<double> t;
    std::vector<double> x;
};

/// RK4 for x' = x (lambda(x) - mu(x)) on a uniform grid.
inline GridPath integrate_limit_ode(const std::function<double(double)>& lambda,
                                    const std::function<double(double)>& mu, double x0, double horizon,
                                    double step) {
    if (!(step > 0.0)) throw std::invalid_argument("integrate_limit_ode: step must be positive");
    auto f = [&](double x) { return x * (lambda(x) - mu(x)); };
    GridPath p;
    const auto n = static_cast<std::size_t>(std::ceil(horizon / step - 1e-12));
    p.t.reserve(n + 1);
    p.x.reserve(n + 1);
    double x = x0;
    p.t.push_back(0.0);
    p.x.push_back(x);
    for (std::size_t k = 1; k <= n; ++k) {
        const double h = std::min(step, horizon - p.t.back());
        const double k1 = f(x), k2 = f(x + 0.5 * h * k1), k3 = f(x + 0.5 * h * k2), k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        p.t.push_back(std::min(horizon, static_cast<double>(k) * step));
        p.x.push_back(x);
    }
    return p;
}

inline double logistic_carrying_capacity(double lambda, double mu, double c) {
    if (!(c > 0.0)) throw std::invalid_argument("logistic_carrying_capacity: c must be positive");
    return (lambda - mu) / c;
}

/// Logistic Feller diffusion dX = sqrt(2 gamma X) dB + X (lambda - mu - c X) dt.
inline kernel::Path simulate_logistic_feller(double gamma, double lambda, double mu, double c, double x0,
                                             double horizon, double step, RngStream& rng) {
    if (gamma < 0.0) throw std::invalid_argument("simulate_logistic_feller: gamma must be nonnegative");
    if (c < 0.0) throw std::invalid_argument("simulate_logistic_feller: c must be nonnegative");
    kernel::JumpSdeSpec spec;
    spec.drift = [=](double x) { return x * (lambda - mu - c * x); };
    spec.diffusion = [=](double x) { return std::sqrt(2.0 * gamma * x); };
    spec.domain = kernel::Domain::nonnegative_absorbing;
    return kernel::integrate_jump_sde(spec, x0, horizon, step, rng);
}

enum class Regime { deterministic_limit, accelerated };

/**
 * Logistic family of scaled birth-death processes. Deterministic limit:
 * lambda_K(n) = n lambda, mu_K(n) = n (mu + c n / K). Accelerated:
 * lambda_K(n) = n (gamma K + lambda), mu_K(n) = n (gamma K + mu + c n / K).
 */
struct ScaledFamilySpec {
    Regime regime = Regime::deterministic_limit;
    double lambda = 2.0;
    double mu = 1.0;
    double c = 0.5;
    double gamma = 0.0;

    void validate(std::uint64_t K) const {
        if (K < 1) throw std::invalid_argument("ScaledFamilySpec: K must be at least 1");
        if (regime == Regime::accelerated && !(lambda > mu))
            throw std::invalid_argument("ScaledFamilySpec: accelerated regime requires lambda > mu");
    }

    bd::RateSpec rates(std::uint64_t K) const {
        validate(K);
        const double kk = static_cast<double>(K);
        const double g = regime == Regime::accelerated ? gamma * kk : 0.0;
        const double l = lambda, m = mu, cc = c;
        return {[=](std::uint64_t n) { return static_cast<double>(n) * (g + l); },
                [=](std::uint64_t n) {
                    const double x = static_cast<double>(n);
                    return x * (g + m + cc * x / kk);
                },
                g + l, g + m + cc / kk};
    }

    GridPath limit(double x0, double horizon, double step) const {
        const double l = lambda, m = mu, cc = c;
        return integrate_limit_ode([l](double) { return l; }, [m, cc](double x) { return m + cc * x; }, x0, horizon,
                                   step);
    }
};

/// X^K = Z^K / K sampled on a uniform grid by an exact event simulation.
inline GridPath simulate_scaled(const ScaledFamilySpec& fam, std::uint64_t K, double x0, double horizon, double grid_dt,
                                RngStream& rng) {
    const bd::RateSpec rates = fam.rates(K);
    const auto z0 = static_cast<std::uint64_t>(std::llround(x0 * static_cast<double>(K)));
    const auto n = static_cast<std::size_t>(std::llround(horizon / grid_dt));
    GridPath p;
    p.t.resize(n + 1);
    p.x.resize(n + 1);
    for (std::size_t k = 0; k <= n; ++k) p.t[k] = k == n ? horizon : static_cast<double>(k) * grid_dt;
    std::size_t next = 0;
    const double kk = static_cast<double>(K);
    bd::SimOptions opt;
    opt.record = false;
    bd::simulate_bd(rates, z0, horizon, rng, opt, [&](double t0, double t1, std::uint64_t z) {
        while (next <= n && p.t[next] >= t0 && (p.t[next] < t1 || (t1 >= horizon && p.t[next] <= t1))) {
            p.x[next] = static_cast<double>(z) / kk;
            ++next;
        }
    });
    for (; next <= n; ++next) p.x[next] = 0.0;
    return p;
}

struct ConvergenceRow {
    double K;  // infinity for the limit column
    double distance;
    double stderr_;
};

/**
 * For each K, Monte-Carlo estimate of E sup_{t <= T} |X^K_t - x(t)| with the
 * sup taken over the output grid. The K = infinity row is the limit compared
 * to itself and is 0 by construction.
 */
inline std::vector<ConvergenceRow> convergence_harness(const ScaledFamilySpec& fam, const std::vector<std::uint64_t>& Ks,
                                                       double x0, double horizon, double grid_dt,
                                                       std::size_t replicates, std::uint64_t seed,
                                                       unsigned threads = 1) {
    const GridPath ref = fam.limit(x0, horizon, grid_dt);
    std::vector<ConvergenceRow> rows;
    for (std::size_t j = 0; j < Ks.size(); ++j) {
        const std::uint64_t K = Ks[j];
        const auto d = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
            RngStream rng(seed, (static_cast<std::uint64_t>(j) << 40) | i);
            const GridPath p = simulate_scaled(fam, K, x0, horizon, grid_dt, rng);
            double sup = 0.0;
            for (std::size_t k = 0; k < p.x.size() && k < ref.x.size(); ++k) sup = std::max(sup, std::fabs(p.x[k] - ref.x[k]));
            return sup;
        });
        const auto acc = kernel::summarize(d);
        rows.push_back({static_cast<double>(K), acc.mean(), acc.stderr_mean()});
    }
    rows.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    return rows;
}

struct RandomEnvPaths {
    std::vector<double> t;
    std::vector<double> numeric;
    std::vector<double> exact;
};

/**
 * dY = Y (r - c Y) dt + sigma Y dW by Euler-Maruyama, together with the explicit
 * solution Y_t = Y_0 G_t / (1 + Y_0 c int_0^t G_s ds), G_t = exp((r - sigma^2/2) t + sigma W_t),
 * evaluated on the same Brownian increments. The time integral of G is
 * accumulated with the trapezoid rule on the step grid.
 */
inline RandomEnvPaths random_env_paths(double r, double c, double sigma, double y0, double horizon, double step,
                                       RngStream& rng, std::size_t record_every = 1) {
    if (!(y0 > 0.0)) throw std::invalid_argument("random_env_paths: y0 must be positive");
    if (!(step > 0.0)) throw std::invalid_argument("random_env_paths: step must be positive");
    const auto n = static_cast<std::size_t>(std::llround(horizon / step));
    RandomEnvPaths out;
    double y = y0, w = 0.0, integral = 0.0, log_g = 0.0;
    const double drift_log = r - 0.5 * sigma * sigma;
    out.t.push_back(0.0);
    out.numeric.push_back(y);
    out.exact.push_back(y0);
    for (std::size_t k = 1; k <= n; ++k) {
        const double dw = std::sqrt(step) * rng.normal();
        y += y * (r - c * y) * step + sigma * y * dw;
        if (y < 0.0) y = 0.0;
        w += dw;
        const double t = static_cast<double>(k) * step;
        const double new_log_g = drift_log * t + sigma * w;
        integral += 0.5 * step * (std::exp(log_g) + std::exp(new_log_g));
        log_g = new_log_g;
        if (k % record_every == 0 || k == n) {
            out.t.push_back(t);
            out.numeric.push_back(y);
            out.exact.push_back(y0 * std::exp(log_g) / (1.0 + y0 * c * integral));
        }
    }
    return out;
}

/// Mean and variance of the Gamma(2r/sigma^2 - 1, sigma^2/(2c)) stationary law.
struct GammaLaw {
    double shape;
    double scale;
    double mean() const { return shape * scale; }
    double variance() const { return shape * scale * scale; }
};

inline GammaLaw random_env_stationary_law(double r, double c, double sigma) {
    if (!(r - 0.5 * sigma * sigma > 0.0)) throw std::domain_error("random_env_stationary_law: requires r > sigma^2/2");
    return {2.0 * r / (sigma * sigma) - 1.0, sigma * sigma / (2.0 * c)};
}

struct LongRunMoments {
    double mean;
    double variance;
    std::size_t samples;
};

/// Pools Y over replicates and over time after a burn-in fraction of the horizon.
inline LongRunMoments random_env_long_run(double r, double c, double sigma, double y0, double horizon, double step,
                                          std::size_t replicates, std::uint64_t seed, double burn_in_fraction,
                                          bool use_exact, unsigned threads = 1) {
    const auto parts = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
        RngStream rng(seed, i);
        const auto p = random_env_paths(r, c, sigma, y0, horizon, step, rng, 10);
        kernel::Accumulator a;
        const auto& v = use_exact ? p.exact : p.numeric;
        for (std::size_t k = 0; k < p.t.size(); ++k)
            if (p.t[k] >= burn_in_fraction * horizon) a.add(v[k]);
        return a;
    });
    kernel::Accumulator all;
    for (const auto& a : parts) all.merge(a);
    return {all.mean(), all.variance(), all.count()};
}

}  // namespace popdyn::scaling
