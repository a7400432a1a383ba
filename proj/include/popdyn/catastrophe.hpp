#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/roots.hpp>

#include "kernel/constants.hpp"
#include "kernel/parallel.hpp"
#include "kernel/rng.hpp"
#include "kernel/sde.hpp"
#include "kernel/stats.hpp"

namespace popdyn::catastrophe {

using kernel::RngStream;

/// Law of the surviving fraction F on (0,1]: finite atoms or Beta(a, b).
struct FractionLaw {
    enum class Kind { atoms, beta } kind = Kind::atoms;
    std::vector<double> theta;
    std::vector<double> prob;
    double a = 1.0, b = 1.0;

    static FractionLaw atoms_law(std::vector<double> theta, std::vector<double> prob) {
        FractionLaw f;
        f.theta = std::move(theta);
        f.prob = std::move(prob);
        f.validate();
        return f;
    }
    static FractionLaw constant(double theta) { return atoms_law({theta}, {1.0}); }
    static FractionLaw beta_law(double a, double b) {
        FractionLaw f;
        f.kind = Kind::beta;
        f.a = a;
        f.b = b;
        f.validate();
        return f;
    }

    void validate() const {
        if (kind == Kind::beta) {
            if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("FractionLaw: Beta parameters must be positive");
            return;
        }
        if (theta.empty() || theta.size() != prob.size())
            throw std::invalid_argument("FractionLaw: atoms and probabilities must have equal nonzero length");
        double total = 0.0, interior = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            if (!(theta[j] > 0.0 && theta[j] <= 1.0))
                throw std::invalid_argument("FractionLaw: atoms must lie in (0,1] (P(F > 0) = 1)");
            if (!(prob[j] >= 0.0)) throw std::invalid_argument("FractionLaw: negative probability");
            total += prob[j];
            if (theta[j] < 1.0) interior += prob[j];
        }
        if (std::fabs(total - 1.0) > 1e-12) throw std::invalid_argument("FractionLaw: probabilities must sum to 1");
        if (!(interior > 0.0)) throw std::invalid_argument("FractionLaw: requires P(F in (0,1)) > 0");
    }

    double sample(RngStream& rng) const {
        if (kind == Kind::beta) return std::max(rng.beta(a, b), std::numeric_limits<double>::min());
        return theta[rng.discrete(prob)];
    }

    /// E F^s.
    double moment(double s) const {
        if (kind == Kind::beta) return boost::math::beta(a + s, b) / boost::math::beta(a, b);
        double m = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) m += prob[j] * std::pow(theta[j], s);
        return m;
    }
    /// E F^s log F.
    double moment_log(double s) const {
        using boost::math::digamma;
        if (kind == Kind::beta) return moment(s) * (digamma(a + s) - digamma(a + b + s));
        double m = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) m += prob[j] * std::pow(theta[j], s) * std::log(theta[j]);
        return m;
    }
    double mean() const { return moment(1.0); }
    double mean_log() const { return moment_log(0.0); }
    /// E (log F)^2.
    double mean_log_sq() const {
        using boost::math::digamma;
        using boost::math::trigamma;
        if (kind == Kind::beta) {
            const double m = digamma(a) - digamma(a + b);
            return trigamma(a) - trigamma(a + b) + m * m;
        }
        double m = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) m += prob[j] * std::log(theta[j]) * std::log(theta[j]);
        return m;
    }
};

enum class Monotonicity { constant, nondecreasing, nonincreasing, undeclared };

/**
 * Catastrophe rate tau(y) and fraction law F. `sup_tau(x)` must bound tau on
 * [0, x]; it is derived from the monotonicity class unless supplied.
 */
struct CatastropheEnv {
    std::function<double(double)> tau;
    std::function<double(double)> sup_tau;
    Monotonicity monotonicity = Monotonicity::constant;
    double tau_const = 0.0;
    FractionLaw F = FractionLaw::constant(0.5);

    static CatastropheEnv constant_rate(double tau, FractionLaw F) {
        if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("CatastropheEnv: tau must be finite");
        CatastropheEnv e;
        e.tau = [tau](double) { return tau; };
        e.sup_tau = e.tau;
        e.tau_const = tau;
        e.F = std::move(F);
        return e;
    }
    static CatastropheEnv monotone(std::function<double(double)> tau, Monotonicity mono, FractionLaw F,
                                   std::function<double(double)> sup_tau = nullptr) {
        CatastropheEnv e;
        e.tau = std::move(tau);
        e.monotonicity = mono;
        e.F = std::move(F);
        if (sup_tau) {
            e.sup_tau = std::move(sup_tau);
        } else if (mono == Monotonicity::nondecreasing) {
            e.sup_tau = e.tau;
        } else if (mono == Monotonicity::nonincreasing) {
            const double t0 = e.tau(0.0);
            e.sup_tau = [t0](double) { return t0; };
        } else if (mono == Monotonicity::constant) {
            const double t0 = e.tau(0.0);
            e.tau_const = t0;
            e.sup_tau = [t0](double) { return t0; };
        } else {
            throw std::invalid_argument("CatastropheEnv: a rate without declared monotonicity needs an explicit bound");
        }
        return e;
    }

    bool is_constant() const { return monotonicity == Monotonicity::constant; }
};

/// Catastrophe times T_k and fractions F_k; K_t = r t + sum_{T_k <= t} log F_k.
struct EnvPath {
    double r = 0.0;
    double horizon = 0.0;
    std::vector<double> times;
    std::vector<double> fractions;

    double K(double t) const {
        double k = r * t;
        for (std::size_t i = 0; i < times.size() && times[i] <= t; ++i) k += std::log(fractions[i]);
        return k;
    }

    /// int_0^t e^{-K_s} ds, exact on each inter-catastrophe piece.
    double integral_exp_neg_K(double t) const {
        double acc = 0.0, s = 0.0, L = 0.0;
        auto piece = [&](double a, double b) {
            if (b <= a) return;
            const double len = b - a;
            const double base = std::exp(-(L + r * a));
            acc += r != 0.0 ? base * -std::expm1(-r * len) / r : base * len;
        };
        for (std::size_t i = 0; i < times.size() && times[i] <= t; ++i) {
            piece(s, times[i]);
            s = times[i];
            L += std::log(fractions[i]);
        }
        piece(s, t);
        return acc;
    }
};

/// Environment of a constant-rate catastrophe process on [0, horizon].
inline EnvPath sample_environment(double r, const CatastropheEnv& env, double horizon, RngStream& rng) {
    if (!env.is_constant()) throw std::invalid_argument("sample_environment: requires a constant rate");
    EnvPath e;
    e.r = r;
    e.horizon = horizon;
    if (env.tau_const <= 0.0) return e;
    double t = rng.exponential(env.tau_const);
    while (t <= horizon) {
        e.times.push_back(t);
        e.fractions.push_back(env.F.sample(rng));
        t += rng.exponential(env.tau_const);
    }
    return e;
}

struct CatastropheRun {
    kernel::Path path;  // grid records, plus the pre- and post-catastrophe values at each catastrophe time
    EnvPath env;
};

/**
 * Feller diffusion driven through a fixed environment path by exact
 * transitions; the state is recorded on the grid and at both sides of each
 * catastrophe.
 */
inline kernel::Path simulate_in_environment(double r, double gamma, const EnvPath& e, double y0, double horizon,
                                            double step, RngStream& rng) {
    if (!(step > 0.0)) throw std::invalid_argument("simulate_in_environment: step must be positive");
    kernel::Path p;
    p.t.push_back(0.0);
    p.x.push_back(y0);
    double y = y0, t = 0.0;
    std::size_t next_cat = 0;
    const auto n = static_cast<std::size_t>(std::ceil(horizon / step - 1e-9));
    for (std::size_t k = 1; k <= n; ++k) {
        const double tg = k == n ? horizon : static_cast<double>(k) * step;
        while (next_cat < e.times.size() && e.times[next_cat] <= tg) {
            const double tc = e.times[next_cat];
            y = kernel::feller_exact_step(y, r, gamma, tc - t, rng);
            t = tc;
            p.t.push_back(t);
            p.x.push_back(y);
            y *= e.fractions[next_cat];
            p.t.push_back(t);
            p.x.push_back(y);
            ++next_cat;
        }
        y = kernel::feller_exact_step(y, r, gamma, tg - t, rng);
        t = tg;
        p.t.push_back(t);
        p.x.push_back(y);
        if (y <= 0.0 && !p.absorbed) {
            p.absorbed = true;
            p.absorption_time = t;
        }
    }
    return p;
}

/**
 * Feller diffusion with catastrophes Y <- theta Y at rate tau(Y). Constant
 * rates sample the environment first from its own substream; state-dependent
 * rates are thinned against sup_tau over a running state bound.
 */
inline CatastropheRun simulate_catastrophe_diffusion(double r, double gamma, const CatastropheEnv& env, double y0,
                                                     double horizon, double step, RngStream& rng,
                                                     std::uint64_t* bound_violations = nullptr) {
    if (!(y0 > 0.0)) throw std::invalid_argument("simulate_catastrophe_diffusion: y0 must be positive");
    if (!(gamma >= 0.0)) throw std::invalid_argument("simulate_catastrophe_diffusion: gamma must be nonnegative");
    RngStream env_rng = rng.substream("environment");
    RngStream dif_rng = rng.substream("diffusion");
    CatastropheRun run;
    if (env.is_constant()) {
        run.env = sample_environment(r, env, horizon, env_rng);
        run.path = simulate_in_environment(r, gamma, run.env, y0, horizon, step, dif_rng);
        return run;
    }
    if (!env.sup_tau) throw std::invalid_argument("simulate_catastrophe_diffusion: rate bound missing");
    run.env.r = r;
    run.env.horizon = horizon;
    kernel::FellerClock clk;
    clk.r = r;
    clk.gamma = gamma;
    clk.rate = env.tau;
    clk.sup_rate = env.sup_tau;
    clk.window = step;
    auto& p = run.path;
    p.t.push_back(0.0);
    p.x.push_back(y0);
    double y = y0, t = 0.0;
    const auto n = static_cast<std::size_t>(std::ceil(horizon / step - 1e-9));
    for (std::size_t k = 1; k <= n; ++k) {
        const double tg = k == n ? horizon : static_cast<double>(k) * step;
        while (t < tg) {
            const auto adv = kernel::advance_feller(clk, y, t, tg, dif_rng, bound_violations);
            t = adv.t;
            y = adv.x;
            if (adv.event) {
                const double theta = env.F.sample(env_rng);
                p.t.push_back(t);
                p.x.push_back(y);
                y *= theta;
                p.t.push_back(t);
                p.x.push_back(y);
                run.env.times.push_back(t);
                run.env.fractions.push_back(theta);
            }
        }
        p.t.push_back(tg);
        p.x.push_back(y);
        if (y <= 0.0 && !p.absorbed) {
            p.absorbed = true;
            p.absorption_time = tg;
        }
    }
    return run;
}

/// E(exp(-lambda e^{-K_t} Y_t) | environment) = exp(-lambda y0 / (gamma lambda int_0^t e^{-K_s} ds + 1)).
inline double quenched_laplace(double gamma, const EnvPath& e, double y0, double lambda, double t) {
    const double I = e.integral_exp_neg_K(t);
    return std::exp(-lambda * y0 / (gamma * lambda * I + 1.0));
}

/// P(Y_t = 0 | environment) = exp(-y0 / (gamma int_0^t e^{-K_s} ds)).
inline double quenched_extinction(double gamma, const EnvPath& e, double y0, double t) {
    const double I = e.integral_exp_neg_K(t);
    if (I <= 0.0) return 0.0;
    return std::exp(-y0 / (gamma * I));
}

enum class Extinction { almost_sure_absorption, survival_possible, undetermined };

inline const char* to_string(Extinction x) {
    switch (x) {
        case Extinction::almost_sure_absorption: return "a.s.-absorption";
        case Extinction::survival_possible: return "survival-possible";
        case Extinction::undetermined: return "undetermined";
    }
    return "?";
}

/**
 * Absorption criterion against E log(1/F) times the rate: the constant value,
 * any value on `grid` (non-decreasing rates, with sup over the grid for
 * survival), or the infimum (non-increasing rates, taken as the limit at the
 * grid's end).
 */
inline Extinction extinction_criterion(double r, const CatastropheEnv& env, const std::vector<double>& grid = {}) {
    const double L = -env.F.mean_log();
    switch (env.monotonicity) {
        case Monotonicity::constant: return r <= L * env.tau_const ? Extinction::almost_sure_absorption
                                                                    : Extinction::survival_possible;
        case Monotonicity::nondecreasing: {
            std::vector<double> g = grid;
            if (g.empty())
                for (int k = -6; k <= 64; ++k) g.push_back(std::pow(2.0, k));
            g.push_back(0.0);
            double sup = 0.0;
            for (double y : g) {
                const double tv = env.tau(y);
                if (r <= L * tv) return Extinction::almost_sure_absorption;
                sup = std::max(sup, tv);
            }
            // The supremum is approached at infinity for non-decreasing rates. A rate that
            // overflows there is treated as unbounded.
            const double far = env.tau(1e300);
            sup = std::isfinite(far) ? std::max(sup, far) : std::numeric_limits<double>::infinity();
            return r > L * sup ? Extinction::survival_possible : Extinction::undetermined;
        }
        case Monotonicity::nonincreasing: {
            const double tau_star = env.tau(1e300);
            return r <= L * tau_star ? Extinction::almost_sure_absorption : Extinction::survival_possible;
        }
        case Monotonicity::undeclared: break;
    }
    throw std::invalid_argument("extinction_criterion: monotonicity class must be declared");
}

enum class Regime { strongly_subcritical, intermediate_subcritical, weakly_subcritical, critical, supercritical };

inline const char* to_string(Regime r) {
    switch (r) {
        case Regime::strongly_subcritical: return "strongly-subcritical";
        case Regime::intermediate_subcritical: return "intermediate-subcritical";
        case Regime::weakly_subcritical: return "weakly-subcritical";
        case Regime::critical: return "critical";
        case Regime::supercritical: return "supercritical";
    }
    return "?";
}

/// P(Y_t > 0) ~ c t^{poly_order} e^{exponent t}; supercritical runs have e^{-K_t} Y_t -> W.
struct RegimeReport {
    Regime regime;
    double exponent = 0.0;
    double poly_order = 0.0;
    double chi = std::numeric_limits<double>::quiet_NaN();
    std::string descriptor;
};

/**
 * Regimes by the signs of r - tau E log(1/F) and r + tau E(F log F). In the
 * weakly subcritical case chi in (0,1) solves r + tau E(F^chi log F) = 0 and
 * the exponent is chi r + tau (E F^chi - 1), the minimum over s in [0,1] of
 * the log-moment function s r + tau (E F^s - 1) of K_1.
 */
inline RegimeReport regime_classify(double r, double tau, const FractionLaw& F, double rel_tol = 1e-12) {
    if (!(tau > 0.0)) throw std::invalid_argument("regime_classify: tau must be positive");
    if (!std::isfinite(F.mean_log_sq())) throw std::invalid_argument("regime_classify: requires E (log F)^2 finite");
    const double drift = r + tau * F.mean_log();  // E K_1
    const double slope1 = r + tau * F.moment_log(1.0);
    const double scale = std::max({std::fabs(r), std::fabs(tau * F.mean_log()), 1e-300});
    RegimeReport rep;
    if (std::fabs(drift) <= rel_tol * scale) {
        rep.regime = Regime::critical;
        rep.exponent = 0.0;
        rep.poly_order = -0.5;
        rep.descriptor = "P(Y_t > 0) ~ c t^{-1/2}";
        return rep;
    }
    if (drift > 0.0) {
        rep.regime = Regime::supercritical;
        rep.exponent = 0.0;
        rep.poly_order = 0.0;
        rep.descriptor = "exp(-K_t) Y_t -> W a.s., survival probability converges to P(W > 0) > 0";
        return rep;
    }
    const double strong_exp = r + tau * (F.mean() - 1.0);
    if (std::fabs(slope1) <= rel_tol * std::max(std::fabs(r), std::fabs(tau * F.moment_log(1.0)))) {
        rep.regime = Regime::intermediate_subcritical;
        rep.exponent = strong_exp;
        rep.poly_order = -0.5;
        rep.descriptor = "P(Y_t > 0) ~ c t^{-1/2} exp(t (r + tau (E F - 1)))";
        return rep;
    }
    if (slope1 < 0.0) {
        rep.regime = Regime::strongly_subcritical;
        rep.exponent = strong_exp;
        rep.poly_order = 0.0;
        rep.descriptor = "P(Y_t > 0) ~ c y0 exp(t (r + tau (E F - 1)))";
        return rep;
    }
    const auto& d = kernel::defaults();
    auto g = [&](double s) { return r + tau * F.moment_log(s); };
    double lo = d.chi_root_lo, hi = d.chi_root_hi;
    if (!(g(lo) < 0.0 && g(hi) > 0.0))
        throw std::runtime_error("regime_classify: chi is not bracketed in (0,1) although the weakly subcritical "
                                 "sign conditions hold (g(lo) = " + std::to_string(g(lo)) +
                                 ", g(hi) = " + std::to_string(g(hi)) + ")");
    const auto root = boost::math::tools::bisect(g, lo, hi, boost::math::tools::eps_tolerance<double>(50));
    rep.chi = 0.5 * (root.first + root.second);
    rep.regime = Regime::weakly_subcritical;
    rep.exponent = rep.chi * r + tau * (F.moment(rep.chi) - 1.0);
    rep.poly_order = -1.5;
    rep.descriptor = "P(Y_t > 0) ~ c t^{-3/2} exp(t (chi r + tau (E F^chi - 1)))";
    return rep;
}

struct SurvivalPoint {
    double t;
    double p_hat;
    double stderr_;
};

/// Monte-Carlo P(Y_t > 0) on `times` (increasing) for a constant-rate environment.
inline std::vector<SurvivalPoint> survival_curve(double r, double gamma, const CatastropheEnv& env, double y0,
                                                 const std::vector<double>& times, std::size_t replicates,
                                                 std::uint64_t seed, unsigned threads = 1) {
    if (!env.is_constant()) throw std::invalid_argument("survival_curve: requires a constant rate");
    if (times.empty()) return {};
    const double horizon = times.back();
    const double absorb = kernel::defaults().absorb_threshold;
    // Each replicate reports how many leading grid times it survived.
    const auto alive = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
        RngStream rng(seed, i);
        RngStream env_rng = rng.substream("environment");
        RngStream dif_rng = rng.substream("diffusion");
        const EnvPath e = sample_environment(r, env, horizon, env_rng);
        double y = y0, t = 0.0;
        std::size_t c = 0, nc = 0;
        for (std::size_t k = 0; k < times.size(); ++k) {
            while (nc < e.times.size() && e.times[nc] <= times[k]) {
                y = kernel::feller_exact_step(y, r, gamma, e.times[nc] - t, dif_rng) * e.fractions[nc];
                t = e.times[nc];
                ++nc;
            }
            y = kernel::feller_exact_step(y, r, gamma, times[k] - t, dif_rng);
            t = times[k];
            if (y <= absorb) break;
            ++c;
        }
        return static_cast<double>(c);
    });
    std::vector<SurvivalPoint> out;
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::size_t n = 0;
        for (double a : alive)
            if (a > static_cast<double>(k)) ++n;
        const double p = static_cast<double>(n) / static_cast<double>(replicates);
        out.push_back({times[k], p, kernel::binomial_stderr(p, replicates)});
    }
    return out;
}

/// Survival from the environment alone: 1 - E exp(-y0 / (gamma int_0^t e^{-K_s} ds)).
inline std::vector<SurvivalPoint> survival_from_environment(double r, double gamma, const CatastropheEnv& env,
                                                            double y0, const std::vector<double>& times,
                                                            std::size_t replicates, std::uint64_t seed) {
    std::vector<kernel::Accumulator> acc(times.size());
    for (std::size_t i = 0; i < replicates; ++i) {
        RngStream rng(seed, i);
        RngStream env_rng = rng.substream("environment");
        const EnvPath e = sample_environment(r, env, times.back(), env_rng);
        for (std::size_t k = 0; k < times.size(); ++k) acc[k].add(1.0 - quenched_extinction(gamma, e, y0, times[k]));
    }
    std::vector<SurvivalPoint> out;
    for (std::size_t k = 0; k < times.size(); ++k) out.push_back({times[k], acc[k].mean(), acc[k].stderr_mean()});
    return out;
}

struct RateFit {
    double fitted_exponent;
    double predicted_exponent;
    double r_squared;
    bool pass;
};

/**
 * Regresses log p_hat(t) - poly_order log t on t over the last `tail_fraction`
 * of the curve; pass when the slope is within rel_tol of the prediction.
 */
inline RateFit survival_rate_fit(const std::vector<SurvivalPoint>& curve, const RegimeReport& pred,
                                 double tail_fraction = kernel::defaults().tail_window_fraction,
                                 double rel_tol = 0.1) {
    if (curve.empty()) throw std::invalid_argument("survival_rate_fit: empty curve");
    const double t_end = curve.back().t;
    std::vector<double> xs, ys;
    for (const auto& pt : curve) {
        if (pt.t < (1.0 - tail_fraction) * t_end || pt.p_hat <= 0.0 || pt.t <= 0.0) continue;
        xs.push_back(pt.t);
        ys.push_back(std::log(pt.p_hat) - pred.poly_order * std::log(pt.t));
    }
    if (xs.size() < 3) throw std::runtime_error("survival_rate_fit: fewer than 3 usable points in the tail window");
    const auto fit = kernel::linear_fit(xs, ys);
    const double tol = rel_tol * std::max(std::fabs(pred.exponent), 1e-12);
    return {fit.slope, pred.exponent, fit.r_squared, std::fabs(fit.slope - pred.exponent) <= tol};
}

/// max/min of t p_hat(t)^2 over the tail window; near 1 for t^{-1/2} decay.
inline double critical_drift_factor(const std::vector<SurvivalPoint>& curve,
                                    double tail_fraction = kernel::defaults().tail_window_fraction) {
    const double t_end = curve.back().t;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& pt : curve) {
        if (pt.t < (1.0 - tail_fraction) * t_end || pt.t <= 0.0) continue;
        const double v = pt.t * pt.p_hat * pt.p_hat;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

}  // namespace popdyn::catastrophe
