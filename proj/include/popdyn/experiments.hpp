#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bd.hpp"
#include "catastrophe.hpp"
#include "cli/config.hpp"
#include "cli/report.hpp"
#include "csbp.hpp"
#include "gwtree.hpp"
#include "kernel/parallel.hpp"
#include "kernel/ppm.hpp"
#include "kernel/stats.hpp"
#include "scaling.hpp"
#include "splitting.hpp"
#include "structpop.hpp"
#include "version.hpp"

namespace popdyn::experiments {

using cli::Config;
using cli::fmt;
using cli::RunReport;
using cli::Schema;
using cli::Table;
using kernel::RngStream;

/// Defaults for the [run] section; NaN horizon or step means the experiment has no such knob.
struct RunDefaults {
    std::uint64_t replicates = 1000;
    double horizon = std::numeric_limits<double>::quiet_NaN();
    double step = std::numeric_limits<double>::quiet_NaN();
};

struct Experiment {
    std::string id;
    int criterion = 0;
    std::string description;
    RunDefaults run_defaults;
    Schema params;
    std::function<void(const Config&, unsigned threads, RunReport&)> body;

    /// [run] keys followed by the module keys.
    Schema schema() const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        Schema s;
        s.push_back(cli::text_param("run.experiment", id, "experiment id"));
        s.push_back(cli::count_param("run.seed", 20240601, 0, inf, "base seed"));
        s.push_back(cli::count_param("run.replicates", run_defaults.replicates, 1, inf, "Monte-Carlo replicates"));
        if (!std::isnan(run_defaults.horizon))
            s.push_back(cli::real_param("run.horizon", run_defaults.horizon, 1e-9, 1e9, "time horizon"));
        if (!std::isnan(run_defaults.step))
            s.push_back(cli::real_param("run.step", run_defaults.step, 1e-9, 1e9, "time step or output grid step"));
        s.push_back(cli::text_param("run.out", "out/" + id, "output directory"));
        s.insert(s.end(), params.begin(), params.end());
        return s;
    }
};

/// Seed for an independent part of an experiment.
inline std::uint64_t sub_seed(const Config& c, std::string_view part) {
    return kernel::splitmix64(c.count("run.seed") ^ kernel::hash_tag(part));
}

inline bool within(double a, double b, double se, double z) { return std::fabs(a - b) <= z * se; }

namespace detail {

constexpr double inf = std::numeric_limits<double>::infinity();
constexpr double nan = std::numeric_limits<double>::quiet_NaN();

inline std::string tag(const char* prefix, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%g", prefix, v);
    return buf;
}

// ---------------------------------------------------------------------------

inline Experiment bd_extinction_linear() {
    Experiment e;
    e.id = "bd-extinction-linear";
    e.criterion = 1;
    e.description = "linear birth-death extinction probability: series value against Monte-Carlo frequency";
    e.run_defaults = {100000, 60.0, nan};
    e.params = {
        cli::real_param("bd.lambda", 1.5, 1e-6, 1e3, "per-capita birth rate"),
        cli::real_param("bd.mu", 1.0, 0.0, 1e3, "per-capita death rate"),
        cli::count_param("bd.z0", 3, 1, 1e6, "initial population"),
        cli::count_param("bd.stop_above", 80, 0, 1e9,
                         "stop a replicate once this size is reached (0 disables); extinction from there is ~(mu/lambda)^n"),
        cli::count_param("bd.series_terms", 4000, 16, 1e7, "terms of the extinction series"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        const double lam = c.real("bd.lambda"), mu = c.real("bd.mu");
        const std::uint64_t z0 = c.count("bd.z0");
        const auto spec = bd::linear(lam, mu);
        const auto est = bd::extinction_prob(spec, z0, c.count("bd.series_terms"));
        const double closed = lam > mu ? std::pow(mu / lam, static_cast<double>(z0)) : 1.0;
        rep.check("series_vs_closed_form", closed, est.value, est.truncation_error,
                  std::fabs(est.value - closed) <= 1e-9);

        bd::SimOptions opt;
        opt.record = false;
        opt.stop_above = c.count("bd.stop_above");
        const double horizon = c.real("run.horizon");
        const std::size_t n = c.count("run.replicates");
        const std::uint64_t seed = sub_seed(c, "mc");
        const auto ext = kernel::run_replicates(n, threads, [&](std::size_t i) {
            RngStream rng(seed, i);
            return bd::simulate_bd(spec, z0, horizon, rng, opt).absorbed ? 1.0 : 0.0;
        });
        const double f = kernel::summarize(ext).mean();
        const double se = kernel::binomial_stderr(closed, n);
        rep.check("mc_frequency", closed, f, se, within(f, closed, se, 3.0));

        Table t{"extinction", {"z0", "series", "closed_form", "mc_frequency", "binomial_stderr"}, {}};
        t.add({fmt(z0), fmt(est.value), fmt(closed), fmt(f), fmt(se)});
        rep.tables.push_back(std::move(t));
    };
    return e;
}

/**
 * E_n(T_0) for a birth-death chain truncated at `states` (no births from the
 * top state), by a dense solve of (lambda_i + mu_i) m_i - lambda_i m_{i+1} - mu_i m_{i-1} = 1.
 */
inline double absorbing_chain_mean_time(const bd::RateSpec& spec, std::uint64_t n, std::size_t states) {
    const auto N = static_cast<Eigen::Index>(states);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, N);
    Eigen::VectorXd rhs = Eigen::VectorXd::Ones(N);
    for (Eigen::Index k = 0; k < N; ++k) {
        const auto i = static_cast<std::uint64_t>(k + 1);
        const double l = k + 1 < N ? spec.lambda(i) : 0.0, m = spec.mu(i);
        A(k, k) = l + m;
        if (k + 1 < N) A(k, k + 1) = -l;
        if (k > 0) A(k, k - 1) = -m;
    }
    const Eigen::VectorXd sol = A.partialPivLu().solve(rhs);
    return sol(static_cast<Eigen::Index>(n) - 1);
}

inline Experiment bd_extinction_time_logistic() {
    Experiment e;
    e.id = "bd-extinction-time-logistic";
    e.criterion = 2;
    e.description = "logistic mean extinction time: series against absorbing-chain solve and Monte-Carlo mean";
    e.run_defaults = {20000, 1e6, nan};
    e.params = {
        cli::real_param("bd.lambda", 1.0, 1e-6, 1e3, "per-capita birth rate"),
        cli::real_param("bd.mu", 1.0, 1e-6, 1e3, "per-capita death rate"),
        cli::real_param("bd.c", 1.0, 1e-6, 1e3, "competition coefficient"),
        cli::count_param("bd.n", 1, 1, 1000, "initial population"),
        cli::count_param("bd.series_terms", 400, 16, 1e6, "terms of the extinction-time series"),
        cli::count_param("bd.oracle_states", 400, 8, 5000, "states of the truncated chain in the linear solve"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        const auto spec = bd::logistic(c.real("bd.lambda"), c.real("bd.mu"), c.real("bd.c"));
        const std::uint64_t n = c.count("bd.n");
        const auto series = bd::mean_extinction_time(spec, n, c.count("bd.series_terms"));
        const double oracle = absorbing_chain_mean_time(spec, n, c.count("bd.oracle_states"));
        rep.check("series_vs_linear_solve", oracle, series.value, series.truncation_error,
                  std::fabs(series.value - oracle) <= 1e-6);

        bd::SimOptions opt;
        opt.record = false;
        const double horizon = c.real("run.horizon");
        const std::uint64_t seed = sub_seed(c, "mc");
        const auto times = kernel::run_replicates(c.count("run.replicates"), threads, [&](std::size_t i) {
            RngStream rng(seed, i);
            const auto tr = bd::simulate_bd(spec, n, horizon, rng, opt);
            return tr.absorbed ? tr.absorption_time : std::numeric_limits<double>::infinity();
        });
        const auto acc = kernel::summarize(times);
        rep.check("series_vs_mc_mean", series.value, acc.mean(), acc.stderr_mean(),
                  std::isfinite(acc.mean()) && within(acc.mean(), series.value, acc.stderr_mean(), 3.0));

        Table t{"extinction_time", {"n", "series", "linear_solve", "mc_mean", "mc_stderr"}, {}};
        t.add({fmt(n), fmt(series.value), fmt(oracle), fmt(acc.mean()), fmt(acc.stderr_mean())});
        rep.tables.push_back(std::move(t));
    };
    return e;
}

inline Experiment scaling_deterministic_limit() {
    Experiment e;
    e.id = "scaling-deterministic-limit";
    e.criterion = 3;
    e.description = "E sup |X^K - x| over the output grid decreases in K for the logistic family";
    e.run_defaults = {200, 10.0, 0.05};
    e.params = {
        cli::real_param("scaling.lambda", 2.0, 0.0, 1e3, "birth rate"),
        cli::real_param("scaling.mu", 1.0, 0.0, 1e3, "death rate"),
        cli::real_param("scaling.c", 0.5, 1e-6, 1e3, "competition"),
        cli::real_param("scaling.x0", 0.5, 1e-6, 1e3, "initial density"),
        cli::count_param("scaling.k_small", 50, 1, 1e7, "smallest K"),
        cli::count_param("scaling.k_mid", 200, 1, 1e7, "middle K"),
        cli::count_param("scaling.k_large", 800, 1, 1e7, "largest K"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        scaling::ScaledFamilySpec fam;
        fam.lambda = c.real("scaling.lambda");
        fam.mu = c.real("scaling.mu");
        fam.c = c.real("scaling.c");
        const std::vector<std::uint64_t> Ks = {c.count("scaling.k_small"), c.count("scaling.k_mid"),
                                               c.count("scaling.k_large")};
        const auto rows = scaling::convergence_harness(fam, Ks, c.real("scaling.x0"), c.real("run.horizon"),
                                                       c.real("run.step"), c.count("run.replicates"),
                                                       sub_seed(c, "harness"), threads);
        Table t{"convergence", {"K", "distance", "stderr"}, {}};
        for (const auto& r : rows) t.add({fmt(r.K), fmt(r.distance), fmt(r.stderr_)});
        rep.tables.push_back(std::move(t));
        for (std::size_t j = 0; j + 1 < Ks.size(); ++j) {
            const double d = rows[j].distance - rows[j + 1].distance;
            const double se = std::hypot(rows[j].stderr_, rows[j + 1].stderr_);
            rep.check("decrease_K" + std::to_string(Ks[j]) + "_to_K" + std::to_string(Ks[j + 1]), 2.0 * se, d, se,
                      d > 2.0 * se);
        }
    };
    return e;
}

inline Experiment scaling_random_env_stationary() {
    Experiment e;
    e.id = "scaling-random-env-stationary";
    e.criterion = 4;
    e.description = "long-run mean and variance of the logistic diffusion in a Brownian environment";
    e.run_defaults = {40, 250.0, 1e-3};
    e.params = {
        cli::real_param("scaling.r", 1.0, -1e3, 1e3, "growth rate"),
        cli::real_param("scaling.sigma", 1.0, 1e-6, 1e3, "environment volatility"),
        cli::real_param("scaling.c", 1.0, 1e-6, 1e3, "competition"),
        cli::real_param("scaling.y0", 0.5, 1e-9, 1e6, "initial value"),
        cli::real_param("scaling.burn_in", 0.2, 0.0, 0.99, "fraction of the horizon discarded"),
        cli::real_param("scaling.mean_tol", 0.05, 0.0, 1.0, "relative tolerance on the mean"),
        cli::real_param("scaling.var_tol", 0.10, 0.0, 1.0, "relative tolerance on the variance"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        const double r = c.real("scaling.r"), s = c.real("scaling.sigma"), k = c.real("scaling.c");
        const auto law = scaling::random_env_stationary_law(r, k, s);
        const auto m = scaling::random_env_long_run(r, k, s, c.real("scaling.y0"), c.real("run.horizon"),
                                                    c.real("run.step"), c.count("run.replicates"),
                                                    sub_seed(c, "paths"), c.real("scaling.burn_in"), false, threads);
        const double mt = c.real("scaling.mean_tol"), vt = c.real("scaling.var_tol");
        rep.check("long_run_mean", law.mean(), m.mean, mt * law.mean(),
                  std::fabs(m.mean - law.mean()) <= mt * law.mean());
        rep.check("long_run_variance", law.variance(), m.variance, vt * law.variance(),
                  std::fabs(m.variance - law.variance()) <= vt * law.variance());
        Table t{"stationary", {"shape", "scale", "mean", "variance", "mc_mean", "mc_variance", "samples"}, {}};
        t.add({fmt(law.shape), fmt(law.scale), fmt(law.mean()), fmt(law.variance()), fmt(m.mean), fmt(m.variance),
               fmt(static_cast<std::uint64_t>(m.samples))});
        rep.tables.push_back(std::move(t));
    };
    return e;
}

inline Experiment csbp_laplace_cross() {
    Experiment e;
    e.id = "csbp-laplace-cross";
    e.criterion = 5;
    e.description = "Feller CSBP: Monte-Carlo Laplace transform against the ODE, and the ODE against the Riccati solution";
    e.run_defaults = {20000, 2.0, 0.01};
    e.params = {
        cli::real_param("csbp.r", 0.5, -1e2, 1e2, "drift r of the mechanism"),
        cli::real_param("csbp.gamma", 1.0, 1e-9, 1e2, "diffusion coefficient gamma"),
        cli::real_param("csbp.z0", 1.0, 1e-9, 1e6, "initial mass"),
        cli::real_param("csbp.ode_tol", 1e-9, 0.0, 1.0, "relative tolerance ODE against Riccati"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        const double r = c.real("csbp.r"), g = c.real("csbp.gamma"), z0 = c.real("csbp.z0");
        const double horizon = c.real("run.horizon");
        const auto m = csbp::BranchingMechanism::feller(r, g);
        std::vector<double> ts = {0.5, 1.0, 2.0};
        ts.erase(std::remove_if(ts.begin(), ts.end(), [&](double t) { return t > horizon + 1e-12; }), ts.end());
        const std::vector<double> lams = {0.5, 1.0, 2.0};
        // du/dt = r u - gamma u^2 solved by separation of variables.
        auto riccati = [&](double t, double l) {
            return r == 0.0 ? l / (1.0 + g * l * t) : r * l / (g * l + (r - g * l) * std::exp(-r * t));
        };
        const double tol = c.real("csbp.ode_tol");
        Table t{"laplace", {"t", "lambda", "u_ode", "u_riccati", "target", "mc", "mc_stderr"}, {}};
        const std::uint64_t seed = sub_seed(c, "sde");
        const double step = c.real("run.step");
        const auto finals = kernel::run_replicates(c.count("run.replicates"), threads, [&](std::size_t i) {
            RngStream rng(seed, i);
            const auto p = csbp::simulate_csbp_sde(m, z0, horizon, step, 0.01, rng);
            std::vector<double> v;
            for (double s : ts) v.push_back(p.at(s));
            return v;
        });
        for (std::size_t a = 0; a < ts.size(); ++a) {
            for (double l : lams) {
                const double u = csbp::laplace_exponent(m, ts[a], l).value;
                const double ur = riccati(ts[a], l);
                rep.check(tag("ode_vs_riccati_t", ts[a]) + tag("_lambda", l), ur, u, 0.0,
                          std::fabs(u - ur) <= tol * std::fabs(ur));
                kernel::Accumulator acc;
                for (const auto& v : finals) acc.add(std::exp(-l * v[a]));
                const double target = std::exp(-z0 * u);
                rep.check(tag("mc_vs_ode_t", ts[a]) + tag("_lambda", l), target, acc.mean(), acc.stderr_mean(),
                          within(acc.mean(), target, acc.stderr_mean(), 3.0));
                t.add({fmt(ts[a]), fmt(l), fmt(u), fmt(ur), fmt(target), fmt(acc.mean()), fmt(acc.stderr_mean())});
            }
        }
        rep.tables.push_back(std::move(t));
    };
    return e;
}

inline Experiment csbp_lamperti_equivalence() {
    Experiment e;
    e.id = "csbp-lamperti-equivalence";
    e.criterion = 6;
    e.description = "stable CSBP: SDE and Lamperti time-change simulators agree on Laplace transforms";
    e.run_defaults = {20000, 1.0, 0.01};
    e.params = {
        cli::real_param("csbp.alpha", 1.5, 1.0 + 1e-6, 2.0 - 1e-6, "stability index"),
        cli::real_param("csbp.c", 1.0, 1e-9, 1e3, "jump measure scale c h^{-1-alpha}"),
        cli::real_param("csbp.r", 0.0, -1e2, 1e2, "drift r"),
        cli::real_param("csbp.gamma", 0.0, 0.0, 1e2, "Brownian coefficient gamma"),
        cli::real_param("csbp.z0", 1.0, 1e-9, 1e6, "initial mass"),
        cli::real_param("csbp.eps", 0.01, 1e-6, 0.5, "jump truncation level"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        const auto m = csbp::BranchingMechanism::stable(c.real("csbp.r"), c.real("csbp.gamma"), c.real("csbp.c"),
                                                        c.real("csbp.alpha"));
        const double z0 = c.real("csbp.z0"), eps = c.real("csbp.eps");
        const double T = c.real("run.horizon"), step = c.real("run.step");
        const std::size_t n = c.count("run.replicates");
        const std::uint64_t s1 = sub_seed(c, "sde"), s2 = sub_seed(c, "lamperti");
        const auto a = kernel::run_replicates(n, threads, [&](std::size_t i) {
            RngStream rng(s1, i);
            return csbp::simulate_csbp_sde(m, z0, T, step, eps, rng).final_value();
        });
        const auto b = kernel::run_replicates(n, threads, [&](std::size_t i) {
            RngStream rng(s2, i);
            return csbp::simulate_csbp_lamperti(m, z0, T, step, eps, rng).final_value();
        });
        Table t{"laplace", {"lambda", "sde", "sde_stderr", "lamperti", "lamperti_stderr", "ode"}, {}};
        for (double l : {0.5, 1.0, 2.0}) {
            kernel::Accumulator x, y;
            for (double v : a) x.add(std::exp(-l * v));
            for (double v : b) y.add(std::exp(-l * v));
            const double se = std::hypot(x.stderr_mean(), y.stderr_mean());
            rep.check(tag("sde_vs_lamperti_lambda", l), x.mean(), y.mean(), se, within(x.mean(), y.mean(), se, 3.0));
            const double ode = std::exp(-z0 * csbp::laplace_exponent(m, T, l).value);
            t.add({fmt(l), fmt(x.mean()), fmt(x.stderr_mean()), fmt(y.mean()), fmt(y.stderr_mean()), fmt(ode)});
        }
        rep.tables.push_back(std::move(t));
    };
    return e;
}

/// Regime of a constant-fraction environment from the signs of r + tau log theta and r + tau theta log theta.
inline catastrophe::Regime expected_regime_constant_fraction(double r, double tau, double theta) {
    using catastrophe::Regime;
    const double drift = r + tau * std::log(theta);
    const double slope = r + tau * theta * std::log(theta);
    const double scale = std::max(std::fabs(r), 1e-300);
    if (std::fabs(drift) <= 1e-12 * scale) return Regime::critical;
    if (drift > 0.0) return Regime::supercritical;
    if (std::fabs(slope) <= 1e-12 * scale) return Regime::intermediate_subcritical;
    return slope < 0.0 ? Regime::strongly_subcritical : Regime::weakly_subcritical;
}

inline Experiment catastrophe_regimes() {
    Experiment e;
    e.id = "catastrophe-regimes";
    e.criterion = 7;
    e.description = "Feller diffusion with catastrophes: regime classifier, subcritical decay rate and critical decay";
    e.run_defaults = {100000, 10.0, 0.25};
    e.params = {
        cli::real_param("catastrophe.tau", 1.0, 1e-6, 1e3, "catastrophe rate"),
        cli::real_param("catastrophe.theta", 0.5, 1e-6, 1.0 - 1e-6, "constant surviving fraction"),
        cli::real_param("catastrophe.gamma", 1.0, 1e-6, 1e3, "diffusion coefficient"),
        cli::real_param("catastrophe.y0", 1.0, 1e-9, 1e6, "initial mass"),
        cli::real_param("catastrophe.r_strong", -0.1, -1e3, 1e3, "strongly subcritical preset"),
        cli::real_param("catastrophe.r_weak", 0.5, -1e3, 1e3, "weakly subcritical preset"),
        cli::real_param("catastrophe.r_listed", 0.9, -1e3, 1e3, "additional listed preset"),
        cli::real_param("catastrophe.r_critical", std::log(2.0), -1e3, 1e3, "critical preset"),
        cli::real_param("catastrophe.r_super", 1.0, -1e3, 1e3, "supercritical preset"),
        cli::real_param("catastrophe.rate_tol", 0.10, 0.0, 1.0, "relative tolerance on the fitted exponent"),
        cli::real_param("catastrophe.drift_max", 2.0, 1.0, 1e3, "bound on the critical t p^2 drift factor"),
        cli::count_param("catastrophe.oracle_replicates", 20000, 1, 1e9, "environments for the quenched oracle"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        using namespace catastrophe;
        const double tau = c.real("catastrophe.tau"), theta = c.real("catastrophe.theta");
        const double g = c.real("catastrophe.gamma"), y0 = c.real("catastrophe.y0");
        const auto F = FractionLaw::constant(theta);
        const auto env = CatastropheEnv::constant_rate(tau, F);
        std::vector<double> times;
        const double T = c.real("run.horizon"), dt = c.real("run.step");
        for (std::size_t k = 1; static_cast<double>(k) * dt <= T + 1e-9; ++k) times.push_back(static_cast<double>(k) * dt);
        const std::size_t n = c.count("run.replicates");

        const std::vector<std::pair<std::string, double>> presets = {
            {"strong", c.real("catastrophe.r_strong")},   {"weak", c.real("catastrophe.r_weak")},
            {"listed", c.real("catastrophe.r_listed")},   {"critical", c.real("catastrophe.r_critical")},
            {"super", c.real("catastrophe.r_super")}};
        Table reg{"regimes", {"preset", "r", "regime", "expected", "exponent", "poly_order", "chi"}, {}};
        Table surv{"survival", {"preset", "t", "p_hat", "stderr"}, {}};
        for (const auto& [name, r] : presets) {
            const RegimeReport got = regime_classify(r, tau, F);
            const Regime want = expected_regime_constant_fraction(r, tau, theta);
            rep.check("classify_" + name, static_cast<double>(want), static_cast<double>(got.regime), 0.0,
                      got.regime == want);
            reg.add({name, fmt(r), to_string(got.regime), to_string(want), fmt(got.exponent), fmt(got.poly_order),
                     fmt(got.chi)});
            const auto curve = survival_curve(r, g, env, y0, times, n, sub_seed(c, "survival-" + name), threads);
            for (const auto& p : curve) surv.add({name, fmt(p.t), fmt(p.p_hat), fmt(p.stderr_)});
            if (name == "strong") {
                const auto fit = survival_rate_fit(curve, got, kernel::defaults().tail_window_fraction,
                                                   c.real("catastrophe.rate_tol"));
                rep.check("strong_decay_exponent", fit.predicted_exponent, fit.fitted_exponent, nan, fit.pass);
            } else if (name == "critical") {
                const double f = critical_drift_factor(curve);
                rep.check("critical_drift_factor", c.real("catastrophe.drift_max"), f, nan,
                          f < c.real("catastrophe.drift_max"));
            } else if (name == "super") {
                const auto o = survival_from_environment(r, g, env, y0, {times.back()},
                                                         c.count("catastrophe.oracle_replicates"),
                                                         sub_seed(c, "oracle"));
                const double se = std::hypot(o.back().stderr_, curve.back().stderr_);
                rep.check("super_plateau_vs_environment_oracle", o.back().p_hat, curve.back().p_hat, se,
                          within(curve.back().p_hat, o.back().p_hat, se, 3.0));
            }
        }
        rep.tables.push_back(std::move(reg));
        rep.tables.push_back(std::move(surv));
    };
    return e;
}

inline Experiment splitting_identities() {
    Experiment e;
    e.id = "splitting-identities";
    e.criterion = 8;
    e.description = "cell division with parasites: mean mass, extinction, auxiliary process and recovery verdicts";
    e.run_defaults = {10000, 3.0, 0.05};
    e.params = {
        cli::real_param("splitting.r", 1.0, -1e2, 1e2, "parasite growth rate"),
        cli::real_param("splitting.gamma", 1.0, 1e-6, 1e2, "parasite diffusion coefficient"),
        cli::real_param("splitting.tau", 1.0, 1e-6, 1e2, "division rate"),
        cli::real_param("splitting.theta", 0.5, 1e-6, 1.0 - 1e-6, "fraction to the first daughter"),
        cli::real_param("splitting.x0", 1.0, 1e-9, 1e3, "initial load"),
        cli::real_param("splitting.t_identity", 2.0, 1e-3, 50, "time of the auxiliary-process identity"),
        cli::real_param("splitting.extinction_horizon", 50.0, 1e-3, 1e4, "horizon of the extinction run"),
        cli::real_param("splitting.mass_cap", 40.0, 1.0, 1e6, "total load beyond which a replicate counts as surviving"),
        cli::real_param("splitting.falsify_z", 5.0, 0.0, 1e3, "minimum z of the rate-tau falsification"),
        cli::real_param("splitting.r_proliferate", 2.0, -1e2, 1e2, "growth rate of the proliferation preset"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        using namespace splitting;
        const double r = c.real("splitting.r"), g = c.real("splitting.gamma"), tau = c.real("splitting.tau");
        const double x0 = c.real("splitting.x0");
        const auto F = catastrophe::FractionLaw::constant(c.real("splitting.theta"));
        const auto P = SplitParams::constant(r, g, tau, F);
        const std::size_t n = c.count("run.replicates");

        // (a) mean total load
        SplitOptions o;
        o.step = c.real("run.step");
        o.aggregate_uninfected = true;
        const double T = c.real("run.horizon");
        std::vector<double> ts;
        for (double t = 1.0; t <= T + 1e-9; t += 1.0) ts.push_back(t);
        const std::uint64_t sa = sub_seed(c, "mass");
        const auto masses = kernel::run_replicates(n, threads, [&](std::size_t i) {
            RngStream rng(sa, i);
            const auto tree = simulate_splitting(P, x0, T, rng, o);
            std::vector<double> v;
            for (double t : ts) v.push_back(tree.mass[tree.grid_index(t)]);
            return v;
        });
        Table mt{"mean_mass", {"t", "target", "mc", "stderr"}, {}};
        for (std::size_t k = 0; k < ts.size(); ++k) {
            kernel::Accumulator a;
            for (const auto& v : masses) a.add(v[k]);
            const double target = x0 * std::exp(r * ts[k]);
            rep.check(tag("mean_mass_t", ts[k]), target, a.mean(), a.stderr_mean(),
                      within(a.mean(), target, a.stderr_mean(), 3.0));
            mt.add({fmt(ts[k]), fmt(target), fmt(a.mean()), fmt(a.stderr_mean())});
        }
        rep.tables.push_back(std::move(mt));

        // (b) total-parasite extinction
        const auto ext = total_mass_extinction(P, x0, c.real("splitting.extinction_horizon"), 2 * n,
                                               sub_seed(c, "extinction"), c.real("splitting.mass_cap"),
                                               c.real("run.step"), threads);
        const double se_b = kernel::binomial_stderr(ext.target, 2 * n);
        rep.check("extinction_frequency", ext.target, ext.frequency, se_b,
                  ext.unresolved == 0 && within(ext.frequency, ext.target, se_b, 3.0));

        // (c) auxiliary process with rate 2 tau, and the rate tau falsification
        const double ti = c.real("splitting.t_identity");
        const std::vector<std::pair<std::string, std::function<double(double)>>> fs = {
            {"infected", [](double x) { return x > 0.0 ? 1.0 : 0.0; }},
            {"exp_neg_load", [](double x) { return std::exp(-x); }}};
        Table it{"auxiliary_identity", {"function", "rate_factor", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "z"}, {}};
        double min_false_z = inf;
        for (const auto& [name, f] : fs) {
            const auto ok = auxiliary_identity_check(P, f, x0, ti, n, sub_seed(c, "identity-" + name), 2.0, 3.0, threads);
            rep.check("many_to_one_rate_2tau_" + name, ok.rhs, ok.lhs, std::hypot(ok.lhs_stderr, ok.rhs_stderr), ok.pass);
            const auto bad = auxiliary_identity_check(P, f, x0, ti, n, sub_seed(c, "identity-" + name), 1.0, 3.0, threads);
            min_false_z = std::min(min_false_z, bad.z);
            it.add({name, "2", fmt(ok.lhs), fmt(ok.lhs_stderr), fmt(ok.rhs), fmt(ok.rhs_stderr), fmt(ok.z)});
            it.add({name, "1", fmt(bad.lhs), fmt(bad.lhs_stderr), fmt(bad.rhs), fmt(bad.rhs_stderr), fmt(bad.z)});
        }
        rep.check("falsification_rate_tau_min_z", c.real("splitting.falsify_z"), min_false_z, nan,
                  min_false_z > c.real("splitting.falsify_z"));
        rep.tables.push_back(std::move(it));

        // (d) recovery verdicts
        const auto rec = recovery_classify(P, x0);
        const auto pro = recovery_classify(SplitParams::constant(c.real("splitting.r_proliferate"), g, tau, F), x0);
        rep.check("recovery_r_base", rec.threshold, r, nan, rec.verdict == Recovery::recovers);
        rep.check("recovery_r_proliferate", pro.threshold, c.real("splitting.r_proliferate"), nan,
                  pro.verdict == Recovery::proliferation_possible);
        Table rt{"recovery", {"r", "threshold", "verdict"}, {}};
        rt.add({fmt(r), fmt(rec.threshold), to_string(rec.verdict)});
        rt.add({fmt(c.real("splitting.r_proliferate")), fmt(pro.threshold), to_string(pro.verdict)});
        rep.tables.push_back(std::move(rt));
    };
    return e;
}

inline Experiment gwtree_many_to_one() {
    Experiment e;
    e.id = "gwtree-many-to-one";
    e.criterion = 9;
    e.description = "Galton-Watson tree: mean population, path-functional many-to-one and its falsification";
    e.run_defaults = {10000, 2.0, 0.01};
    e.params = {
        cli::real_param("gwtree.p0", 0.2, 0.0, 1.0, "probability of no offspring"),
        cli::real_param("gwtree.p1", 0.0, 0.0, 1.0, "probability of one offspring"),
        cli::real_param("gwtree.p2", 0.8, 0.0, 1.0, "probability of two offspring"),
        cli::real_param("gwtree.tau", 1.0, 1e-6, 1e2, "branching rate"),
        cli::real_param("gwtree.r", 1.0, -1e2, 1e2, "trait growth rate between branchings"),
        cli::real_param("gwtree.gamma", 1.0, 1e-6, 1e2, "trait diffusion coefficient"),
        cli::real_param("gwtree.theta", 0.5, 1e-6, 1.0 - 1e-6, "fraction to the first child"),
        cli::real_param("gwtree.x0", 1.0, 1e-9, 1e3, "initial trait"),
        cli::count_param("gwtree.count_replicates", 20000, 1, 1e9, "trees for the mean population check"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        using namespace gwtree;
        const OffspringLaw p({c.real("gwtree.p0"), c.real("gwtree.p1"), c.real("gwtree.p2")});
        const double tau = c.real("gwtree.tau");
        const double growth = tau * (p.mean() - 1.0);
        const std::vector<double> ts = {1.0, 2.0, 3.0};
        const std::uint64_t s0 = sub_seed(c, "counts");
        const auto counts = kernel::run_replicates(c.count("gwtree.count_replicates"), threads, [&](std::size_t i) {
            const auto tr = simulate_gw_genealogy(tau, p, ts.back(), 1000000, RngStream(s0, i));
            if (tr.truncated) throw std::runtime_error("gwtree-many-to-one: tree truncated");
            std::vector<double> v;
            for (double t : ts) v.push_back(static_cast<double>(tr.alive_count(t)));
            return v;
        });
        Table nt{"mean_population", {"t", "target", "mc", "stderr"}, {}};
        for (std::size_t k = 0; k < ts.size(); ++k) {
            kernel::Accumulator a;
            for (const auto& v : counts) a.add(v[k]);
            const double target = std::exp(growth * ts[k]);
            rep.check(tag("mean_population_t", ts[k]), target, a.mean(), a.stderr_mean(),
                      within(a.mean(), target, a.stderr_mean(), 3.0));
            nt.add({fmt(ts[k]), fmt(target), fmt(a.mean()), fmt(a.stderr_mean())});
        }
        rep.tables.push_back(std::move(nt));

        const double theta = c.real("gwtree.theta");
        const auto spec = splitting_feller(c.real("gwtree.r"), c.real("gwtree.gamma"), tau, p,
                                           [theta](RngStream&) { return theta; });
        const double x0 = c.real("gwtree.x0");
        const std::vector<PathFunctional> fs = {
            constant_one(), time_average("time_avg_min_x_2", [x0](double x) { return std::min(x, 2.0 * x0) / 2.0; }),
            stayed_below("stayed_below_3x0", 3.0 * x0), stayed_positive()};
        const double t = c.real("run.horizon");
        ManyToOneOptions mo;
        mo.dt = c.real("run.step");
        mo.threads = threads;
        const std::size_t n = c.count("run.replicates");
        const auto rows = many_to_one_check(spec, fs, x0, t, n, sub_seed(c, "many-to-one"), mo);
        mo.jump_rate = tau;
        const auto bad = many_to_one_check(spec, fs, x0, t, n, sub_seed(c, "many-to-one"), mo);
        Table mt{"many_to_one", {"functional", "jump_rate", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "z"}, {}};
        double max_bad = 0.0;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto& r = rows[j];
            rep.check("many_to_one_" + r.functional_id, r.rhs, r.lhs, std::hypot(r.lhs_stderr, r.rhs_stderr), r.pass);
            mt.add({r.functional_id, fmt(tau * p.mean()), fmt(r.lhs), fmt(r.lhs_stderr), fmt(r.rhs),
                    fmt(r.rhs_stderr), fmt(r.z)});
            const auto& b = bad[j];
            mt.add({b.functional_id, fmt(tau), fmt(b.lhs), fmt(b.lhs_stderr), fmt(b.rhs), fmt(b.rhs_stderr), fmt(b.z)});
            max_bad = std::max(max_bad, b.z);
        }
        rep.check("size_bias_falsification_max_z", 3.0, max_bad, nan, max_bad > 3.0);
        rep.tables.push_back(std::move(mt));
    };
    return e;
}

inline Experiment structpop_ibm_soundness() {
    Experiment e;
    e.id = "structpop-ibm-soundness";
    e.criterion = 10;
    e.description = "individual-based model: rate-constant invariance, martingale residual and monomorphic equilibrium";
    e.run_defaults = {400, 1.0, nan};
    e.params = {
        cli::real_param("structpop.K", 100.0, 1.0, 1e6, "system size of the soundness runs"),
        cli::real_param("structpop.p", 0.03, 0.0, 1.0, "mutation probability"),
        cli::real_param("structpop.sigma", 0.1, 1e-6, 10.0, "mutation standard deviation"),
        cli::real_param("structpop.x0", 1.2, 0.0, 4.0, "initial trait"),
        cli::real_param("structpop.level", 0.01, 1e-6, 0.5, "level of the two-sample test"),
        cli::count_param("structpop.generator_replicates", 1000, 2, 1e9, "replicates of the martingale check"),
        cli::real_param("structpop.bracket_tol", 0.15, 0.0, 10.0, "relative tolerance on Var M against the bracket"),
        cli::real_param("structpop.K_mono", 1000.0, 1.0, 1e7, "system size of the monomorphic run"),
        cli::real_param("structpop.mono_horizon", 10.0, 1e-3, 1e4, "horizon of the monomorphic run"),
        cli::real_param("structpop.mono_burn", 5.0, 0.0, 1e4, "start of the time average"),
        cli::real_param("structpop.mono_tol", 0.05, 0.0, 1.0, "relative tolerance on the equilibrium"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        using namespace structpop;
        const double K = c.real("structpop.K"), x0 = c.real("structpop.x0");
        const auto P = IbmParams::kisdi(K, c.real("structpop.p"), c.real("structpop.sigma"));
        const auto init = monomorphic(static_cast<std::size_t>(std::llround(K)), x0);
        const double T = c.real("run.horizon");
        const std::size_t n = c.count("run.replicates");

        auto arm = [&](double factor, const char* name) {
            IbmOptions o;
            o.mode = Mode::verbatim;
            o.C_hat_factor = factor;
            o.grid_dt = T;
            const std::uint64_t s = sub_seed(c, name);
            return kernel::run_replicates(n, threads, [&](std::size_t i) {
                RngStream rng(s, i);
                return static_cast<double>(simulate_ibm(P, init, T, rng, o).N.back());
            });
        };
        const auto a = arm(1.0, "chat-x1"), b = arm(2.0, "chat-x2");
        const auto ks = kernel::ks_two_sample(a, b);
        const double level = c.real("structpop.level");
        rep.check("chat_doubling_ks_p_value", level, ks.p_value, nan, ks.p_value > level);
        Table dt{"chat_doubling", {"C_hat_factor", "mean_N_T", "stderr"}, {}};
        const auto sa = kernel::summarize(a), sb = kernel::summarize(b);
        dt.add({"1", fmt(sa.mean()), fmt(sa.stderr_mean())});
        dt.add({"2", fmt(sb.mean()), fmt(sb.stderr_mean())});
        rep.tables.push_back(std::move(dt));

        const auto g = generator_moment_check(P, init, [](double) { return 1.0; }, T,
                                              c.count("structpop.generator_replicates"), sub_seed(c, "generator"),
                                              Mode::grouped, threads);
        rep.check("martingale_residual_f1", 0.0, g.residual, g.residual_stderr,
                  within(g.residual, 0.0, g.residual_stderr, 3.0));
        rep.check("martingale_bracket_f1", g.mean_qv, g.var_m, nan, g.qv_rel_error <= c.real("structpop.bracket_tol"));

        // Equilibrium of n' = n (b(x) - C(0) n) for the Kisdi rates b = 4 - x, d = zeta.
        const double Km = c.real("structpop.K_mono");
        const auto P0 = IbmParams::kisdi(Km, 0.0, c.real("structpop.sigma"));
        const double nbar = (4.0 - x0) / (2.0 * (1.0 - 1.0 / 2.2));
        IbmOptions o;
        o.grid_dt = 0.1;
        RngStream rng(sub_seed(c, "monomorphic"), 0);
        const auto run = simulate_ibm(P0, monomorphic(static_cast<std::size_t>(std::llround(Km)), x0),
                                      c.real("structpop.mono_horizon"), rng, o);
        kernel::Accumulator m;
        Table mt{"monomorphic", {"t", "N_over_K"}, {}};
        for (std::size_t k = 0; k < run.t.size(); ++k) {
            const double v = static_cast<double>(run.N[k]) / Km;
            if (run.t[k] >= c.real("structpop.mono_burn")) m.add(v);
            mt.add({fmt(run.t[k]), fmt(v)});
        }
        rep.tables.push_back(std::move(mt));
        rep.check("monomorphic_equilibrium", nbar, m.mean(), nan,
                  std::fabs(m.mean() - nbar) <= c.real("structpop.mono_tol") * nbar);
    };
    return e;
}

inline Experiment property_suites() {
    Experiment e;
    e.id = "property-suites";
    e.criterion = 11;
    e.description = "determinism, Poisson counts, compensated integrals, branching property and exact identities";
    e.run_defaults = {10000, 5.0, nan};
    e.params = {
        cli::real_param("properties.ppm_mass", 2.0, 1e-6, 1e3, "mass nu(window) of the point measure"),
        cli::real_param("properties.level", 0.01, 1e-6, 0.5, "level of the distributional tests"),
        cli::real_param("properties.z", 0.6, 1e-6, 1e3, "first initial mass of the branching-property test"),
        cli::real_param("properties.z_tilde", 0.4, 1e-6, 1e3, "second initial mass"),
        cli::real_param("properties.t_branching", 1.0, 1e-6, 1e3, "time of the branching-property test"),
    };
    e.body = [](const Config& c, unsigned threads, RunReport& rep) {
        const std::size_t n = c.count("run.replicates");
        const double T = c.real("run.horizon"), level = c.real("properties.level");

        // Determinism: identical reruns, and identical results for 1 and 2 workers.
        {
            const std::uint64_t s = sub_seed(c, "determinism");
            auto sample = [&](unsigned th) {
                return kernel::run_replicates(64, th, [&](std::size_t i) {
                    RngStream rng(s, i);
                    std::vector<double> v;
                    const auto tr = bd::simulate_bd(bd::logistic(2.0, 1.0, 0.05), 5, 5.0, rng);
                    v.insert(v.end(), tr.times.begin(), tr.times.end());
                    const auto p = csbp::simulate_csbp_sde(csbp::BranchingMechanism::stable(0.1, 0.5, 1.0, 1.5), 1.0,
                                                           1.0, 0.05, 0.05, rng);
                    v.insert(v.end(), p.x.begin(), p.x.end());
                    const auto ibm = structpop::simulate_ibm(structpop::IbmParams::kisdi(20), structpop::monomorphic(20, 1.2),
                                                             0.5, rng, {});
                    v.insert(v.end(), ibm.final_traits.begin(), ibm.final_traits.end());
                    return v;
                });
            };
            const auto a = sample(1), b = sample(1), d = sample(2);
            double mismatches = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a[i] != b[i]) mismatches += 1.0;
                if (a[i] != d[i]) mismatches += 1.0;
            }
            rep.check("kernel_determinism_mismatches", 0.0, mismatches, nan, mismatches == 0.0);
        }

        // Poisson counts of the point measure.
        {
            const double mass = c.real("properties.ppm_mass");
            const std::uint64_t s = sub_seed(c, "ppm");
            const auto counts = kernel::run_replicates(n, threads, [&](std::size_t i) {
                RngStream rng(s, i);
                return static_cast<double>(kernel::sample_ppm(mass, [](RngStream& r) { return r.uniform(); }, T, rng).size());
            });
            const double mean = mass * T;
            std::size_t top = static_cast<std::size_t>(mean + 8.0 * std::sqrt(mean) + 10.0);
            std::vector<double> obs(top + 1, 0.0), expct(top + 1, 0.0);
            for (double k : counts) obs[std::min(static_cast<std::size_t>(k), top)] += 1.0;
            double logp = -mean, cum = 0.0;
            for (std::size_t k = 0; k < top; ++k) {
                const double pk = std::exp(logp);
                expct[k] = pk * static_cast<double>(n);
                cum += pk;
                logp += std::log(mean) - std::log(static_cast<double>(k + 1));
            }
            expct[top] = std::max(0.0, 1.0 - cum) * static_cast<double>(n);
            const auto chi = kernel::chi_square_gof(obs, expct);
            rep.check("ppm_poisson_chi_square_p_value", level, chi.p_value, nan, chi.p_value > level);
        }

        // Compensated integral of G(s, m) = cos(s) m against nu = mass x Uniform(0, 1).
        {
            const double mass = c.real("properties.ppm_mass");
            const std::uint64_t s = sub_seed(c, "compensated");
            const auto v = kernel::run_replicates(n, threads, [&](std::size_t i) {
                RngStream rng(s, i);
                const auto pts = kernel::sample_ppm(mass, [](RngStream& r) { return r.uniform(); }, T, rng);
                return kernel::compensated_integral(pts, [](double t, double m) { return std::cos(t) * m; },
                                                    mass * 0.5 * std::sin(T));
            });
            const auto a = kernel::summarize(v);
            rep.check("compensated_integral_mean_zero", 0.0, a.mean(), a.stderr_mean(),
                      within(a.mean(), 0.0, a.stderr_mean(), 3.0));
        }

        // Branching property of the Feller CSBP.
        {
            const auto m = csbp::BranchingMechanism::feller(0.5, 1.0);
            const double z = c.real("properties.z"), zt = c.real("properties.z_tilde");
            const double t = c.real("properties.t_branching");
            const std::uint64_t s = sub_seed(c, "branching");
            const auto joint = kernel::run_replicates(n, threads, [&](std::size_t i) {
                RngStream rng(s, i);
                RngStream r1 = rng.substream("sum"), r2 = rng.substream("first"), r3 = rng.substream("second");
                const double whole = csbp::simulate_csbp_sde(m, z + zt, t, t, 0.01, r1).final_value();
                const double parts = csbp::simulate_csbp_sde(m, z, t, t, 0.01, r2).final_value() +
                                     csbp::simulate_csbp_sde(m, zt, t, t, 0.01, r3).final_value();
                return std::pair<double, double>{whole, parts};
            });
            std::vector<double> a, b;
            for (const auto& [x, y] : joint) {
                a.push_back(x);
                b.push_back(y);
            }
            const auto ks = kernel::ks_two_sample(a, b);
            rep.check("branching_property_ks_p_value", level, ks.p_value, nan, ks.p_value > level);
        }

        // Quenched Laplace transform is multiplicative in the initial mass.
        {
            const auto env = catastrophe::CatastropheEnv::constant_rate(1.0, catastrophe::FractionLaw::constant(0.5));
            double worst = 0.0;
            const std::uint64_t s = sub_seed(c, "quenched");
            for (std::size_t i = 0; i < 1000; ++i) {
                RngStream rng(s, i);
                const auto path = catastrophe::sample_environment(0.3, env, T, rng);
                for (double lam : {0.1, 1.0, 10.0}) {
                    const double lhs = catastrophe::quenched_laplace(1.0, path, 0.7 + 1.9, lam, T);
                    const double rhs = catastrophe::quenched_laplace(1.0, path, 0.7, lam, T) *
                                       catastrophe::quenched_laplace(1.0, path, 1.9, lam, T);
                    worst = std::max(worst, std::fabs(lhs - rhs) / std::max(lhs, 1e-300));
                }
            }
            rep.check("quenched_laplace_multiplicativity_rel_error", 0.0, worst, nan, worst <= 1e-12);
        }

        // Load is conserved at every division: parent load = sum of daughter loads.
        {
            const auto P = splitting::SplitParams::constant(1.0, 1.0, 1.0, catastrophe::FractionLaw::beta_law(2.0, 2.0));
            splitting::SplitOptions o;
            o.step = 0.05;
            double worst = 0.0;
            std::size_t divisions = 0;
            const std::uint64_t s = sub_seed(c, "division");
            for (std::size_t i = 0; i < 50; ++i) {
                RngStream rng(s, i);
                const auto tree = splitting::simulate_splitting(P, 1.0, 3.0, rng, o);
                std::vector<double> kids(tree.cells.size(), 0.0);
                for (const auto& cell : tree.cells)
                    if (cell.parent >= 0) kids[static_cast<std::size_t>(cell.parent)] += cell.load_birth;
                for (std::size_t k = 0; k < tree.cells.size(); ++k) {
                    if (!tree.cells[k].divided) continue;
                    ++divisions;
                    const double x = tree.cells[k].load_end;
                    worst = std::max(worst, std::fabs(kids[k] - x) / std::max(std::fabs(x), 1e-300));
                }
            }
            // One rounding of x - theta x and one of the sum: at most one ulp.
            rep.check("division_mass_conservation_rel_error", 0.0, worst, nan,
                      divisions > 0 && worst <= std::numeric_limits<double>::epsilon());
        }
    };
    return e;
}

}  // namespace detail

/// Every registered experiment, ordered by acceptance criterion.
inline const std::vector<Experiment>& registry() {
    static const std::vector<Experiment> all = {
        detail::bd_extinction_linear(),      detail::bd_extinction_time_logistic(),
        detail::scaling_deterministic_limit(), detail::scaling_random_env_stationary(),
        detail::csbp_laplace_cross(),        detail::csbp_lamperti_equivalence(),
        detail::catastrophe_regimes(),       detail::splitting_identities(),
        detail::gwtree_many_to_one(),        detail::structpop_ibm_soundness(),
        detail::property_suites()};
    return all;
}

inline const Experiment* find(const std::string& id) {
    for (const auto& e : registry())
        if (e.id == id) return &e;
    return nullptr;
}

/**
 * Resolves defaults, then the layers in order. A run.experiment entry that names
 * a different experiment is an error.
 */
inline Config resolve_config(const Experiment& e, const std::vector<std::vector<cli::Entry>>& layers) {
    Config cfg = cli::resolve(e.schema(), layers);
    if (cfg.text("run.experiment") != e.id)
        throw cli::ConfigError("run.experiment is '" + cfg.text("run.experiment") + "' but the selected experiment is '" +
                               e.id + "'");
    return cfg;
}

/// Hash of everything that determines the results (the output directory is excluded).
inline std::uint64_t result_hash(const Config& cfg) { return cli::config_hash(cfg.canonical({"run.out"})); }

inline RunReport run(const Experiment& e, const Config& cfg, unsigned threads = 1) {
    RunReport rep;
    rep.experiment = e.id;
    rep.seed = cfg.count("run.seed");
    rep.config_hash = result_hash(cfg);
    rep.code_version = version();
    e.body(cfg, threads, rep);
    return rep;
}

}  // namespace popdyn::experiments
