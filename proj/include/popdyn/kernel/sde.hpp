#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "constants.hpp"
#include "ppm.hpp"
#include "rng.hpp"

namespace popdyn::kernel {

enum class Domain {
    real_line,
    nonnegative_absorbing,  // 0 is absorbing; diffusion evaluated at max(x, 0)
};

/// One Poisson-driven jump term: points with intensity ds x nu(dh), nu(window) = mass.
struct JumpTerm {
    double mass = 0.0;
    std::function<double(RngStream&)> sample_mark;
    std::function<double(double, double)> kernel;  // (x_{s-}, h) -> jump size
};

/**
 * X_t = X_0 + int b ds + int sigma dB + int G dN + int K dN~.
 * `compensator(x)` must return int K(x, h) nu(dh) for the compensated term.
 */
struct JumpSdeSpec {
    std::function<double(double)> drift = [](double) { return 0.0; };
    std::function<double(double)> diffusion = [](double) { return 0.0; };
    JumpTerm jumps;
    JumpTerm compensated;
    std::function<double(double)> compensator = [](double) { return 0.0; };
    Domain domain = Domain::real_line;
};

struct Path {
    std::vector<double> t;
    std::vector<double> x;
    bool absorbed = false;
    double absorption_time = std::numeric_limits<double>::infinity();
    bool exploded = false;
    double explosion_time = std::numeric_limits<double>::infinity();

    double final_value() const { return x.empty() ? 0.0 : x.back(); }

    /// Value at time s under the cadlag convention (last record at or before s).
    /// Grid times within a relative 1e-12 of s count as "at" s.
    double at(double s) const {
        auto it = std::upper_bound(t.begin(), t.end(), s + 1e-12 * std::max(1.0, std::fabs(s)));
        if (it == t.begin()) return x.front();
        return x[static_cast<std::size_t>(it - t.begin()) - 1];
    }
};

namespace detail {

inline bool settle(Path& p, double& x, double t, Domain dom, double explode_at) {
    if (!std::isfinite(x) || std::fabs(x) > explode_at) {
        p.exploded = true;
        p.explosion_time = t;
        p.t.push_back(t);
        p.x.push_back(x);
        return true;
    }
    if (dom == Domain::nonnegative_absorbing && x <= 0.0) {
        x = 0.0;
        p.absorbed = true;
        p.absorption_time = t;
        p.t.push_back(t);
        p.x.push_back(0.0);
        return true;
    }
    return false;
}

}  // namespace detail

/**
 * Euler-Maruyama between jumps, jumps applied atomically at their sampled
 * times. Records every Euler step and every jump. Absorption sets the state
 * to exactly 0 and freezes it; a non-finite or too large state sets the
 * explosion flag and halts.
 */
inline Path integrate_jump_sde(const JumpSdeSpec& spec, double x0, double horizon, double step, RngStream& rng,
                               double explode_at = defaults().explode_threshold) {
    if (!(step > 0.0)) throw std::invalid_argument("integrate_jump_sde: step must be positive");
    if (!(horizon >= 0.0)) throw std::invalid_argument("integrate_jump_sde: horizon must be nonnegative");
    RngStream jump_rng = rng.substream("jumps");
    RngStream comp_rng = rng.substream("compensated");
    const auto uncomp = sample_ppm(spec.jumps.mass, [&](RngStream& r) { return spec.jumps.sample_mark(r); },
                                   horizon, jump_rng);
    const auto comp = sample_ppm(spec.compensated.mass,
                                 [&](RngStream& r) { return spec.compensated.sample_mark(r); }, horizon, comp_rng);

    Path p;
    double x = x0;
    double t = 0.0;
    p.t.push_back(0.0);
    p.x.push_back(x);
    if (detail::settle(p, x, 0.0, spec.domain, explode_at)) return p;

    std::size_t iu = 0, ic = 0;
    const auto sigma_at = [&](double y) {
        return spec.diffusion(spec.domain == Domain::nonnegative_absorbing ? std::max(y, 0.0) : y);
    };
    auto euler = [&](double dt) {
        const double drift = spec.drift(x) - spec.compensator(x);
        x += drift * dt + sigma_at(x) * std::sqrt(dt) * rng.normal();
    };

    long long k = 0;
    while (t < horizon) {
        ++k;
        const double t_grid = std::min(horizon, static_cast<double>(k) * step);
        // Process every jump inside (t, t_grid] before finishing the step.
        while (true) {
            const double tu = iu < uncomp.size() ? uncomp.times[iu] : std::numeric_limits<double>::infinity();
            const double tc = ic < comp.size() ? comp.times[ic] : std::numeric_limits<double>::infinity();
            const double tj = std::min(tu, tc);
            if (tj > t_grid) break;
            if (tj > t) euler(tj - t);
            t = tj;
            if (detail::settle(p, x, t, spec.domain, explode_at)) return p;
            if (tu <= tc) {
                x += spec.jumps.kernel(x, uncomp.marks[iu]);
                ++iu;
            } else {
                x += spec.compensated.kernel(x, comp.marks[ic]);
                ++ic;
            }
            p.t.push_back(t);
            p.x.push_back(x);
            if (detail::settle(p, x, t, spec.domain, explode_at)) return p;
        }
        if (t_grid > t) euler(t_grid - t);
        t = t_grid;
        if (detail::settle(p, x, t, spec.domain, explode_at)) return p;
        p.t.push_back(t);
        p.x.push_back(x);
    }
    return p;
}

/**
 * Exact transition of the Feller diffusion dX = rX dt + sqrt(2 gamma X) dB over
 * a time h. The Laplace transform exp(-x u_h(l)) with
 * u_h(l) = l m / (1 + l c), m = e^{rh}, c = gamma (e^{rh} - 1) / r,
 * is that of a Poisson(x m / c) number of Exponential(mean c) summands, so
 * X_h = Gamma(N, c) with X_h = 0 exactly when N = 0.
 */
inline double feller_exact_step(double x, double r, double gamma, double h, RngStream& rng) {
    if (x <= 0.0) return 0.0;
    if (h <= 0.0) return x;
    const double m = std::exp(r * h);
    if (gamma <= 0.0) return x * m;
    const double c = r != 0.0 ? gamma * std::expm1(r * h) / r : gamma * h;
    const std::uint64_t n = rng.poisson(x * m / c);
    if (n == 0) return 0.0;
    return rng.gamma(static_cast<double>(n), c);
}

/// u_h(infinity) for the Feller diffusion: P_x(X_h = 0) = exp(-x u_h(infinity)).
inline double feller_absorption_rate(double r, double gamma, double h) {
    if (h <= 0.0) return std::numeric_limits<double>::infinity();
    return r != 0.0 ? r * std::exp(r * h) / (gamma * std::expm1(r * h)) : 1.0 / (gamma * h);
}

/**
 * Feller diffusion dX = rX dt + sqrt(2 gamma X) dB interrupted by events of a
 * state-dependent intensity rate(x). Event times are found by thinning against
 * sup_rate(xbar), where xbar is a running upper bound for the state refreshed
 * every `window` time units and after every event; between candidate times
 * the state moves by exact transitions.
 */
struct FellerClock {
    double r = 0.0;
    double gamma = 0.0;
    std::function<double(double)> rate = [](double) { return 0.0; };
    /// Upper bound of rate(y) for every y in [0, x].
    std::function<double(double)> sup_rate = [](double) { return 0.0; };
    double window = 1e-3;
};

struct Advance {
    double t;
    double x;  // state just before the event, or at t_end
    bool event;
};

/// Running state bound used for thinning; exceeded only by rare large excursions.
inline double feller_state_bound(double x, double gamma, double r, double window) {
    if (!std::isfinite(window)) return std::numeric_limits<double>::infinity();
    return 2.0 * x * std::exp(std::fabs(r) * window) + 20.0 * gamma * window;
}

/**
 * Advances from (t, x) to the first event of the clock or to t_end.
 * `bound_violations` counts candidate times where rate(x) exceeded the bound.
 */
inline Advance advance_feller(const FellerClock& clk, double x, double t, double t_end, RngStream& rng,
                              std::uint64_t* bound_violations = nullptr) {
    while (t < t_end) {
        if (x <= 0.0) {
            x = 0.0;
            if (clk.rate(0.0) <= 0.0) return {t_end, 0.0, false};
        }
        const double w_end = std::min(t_end, t + clk.window);
        const double xbar = feller_state_bound(x, clk.gamma, clk.r, clk.window);
        const double bound = clk.sup_rate(xbar);
        while (true) {
            const double s = bound > 0.0 ? t + rng.exponential(bound) : std::numeric_limits<double>::infinity();
            if (s >= w_end) {
                x = feller_exact_step(x, clk.r, clk.gamma, w_end - t, rng);
                t = w_end;
                break;
            }
            x = feller_exact_step(x, clk.r, clk.gamma, s - t, rng);
            t = s;
            const double rt = clk.rate(x);
            if (rt > bound && bound_violations) ++*bound_violations;
            if (rng.uniform() * bound < rt) return {t, x, true};
        }
    }
    return {t_end, x, false};
}

}  // namespace popdyn::kernel
