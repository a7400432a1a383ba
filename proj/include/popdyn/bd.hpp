#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "kernel/constants.hpp"
#include "kernel/rng.hpp"

namespace popdyn::bd {

using kernel::RngStream;

/// Birth and death rates on the integers with declared growth bounds
/// lambda(n) <= lambda_bar n and mu(n) <= mu_bar (1 + n^2).
struct RateSpec {
    std::function<double(std::uint64_t)> birth;
    std::function<double(std::uint64_t)> death;
    double birth_bound = 0.0;
    double death_bound = 0.0;
    /// False only for immigration-type specs where lambda(0) > 0 is intended.
    bool zero_absorbing = true;

    double lambda(std::uint64_t n) const { return birth(n); }
    double mu(std::uint64_t n) const { return death(n); }

    /// Spot-checks the invariants on states 0..grid_max; throws on violation.
    void validate(std::uint64_t grid_max = 2000) const {
        if (!birth || !death) throw std::invalid_argument("RateSpec: rate functions missing");
        if (death(0) != 0.0) throw std::invalid_argument("RateSpec: mu(0) must be 0");
        if (zero_absorbing && birth(0) != 0.0) throw std::invalid_argument("RateSpec: lambda(0) must be 0");
        for (std::uint64_t n = 0; n <= grid_max; n = n < 64 ? n + 1 : n + n / 8) {
            const double l = birth(n), m = death(n);
            const double dn = static_cast<double>(n);
            if (!(l >= 0.0) || !(m >= 0.0)) throw std::invalid_argument("RateSpec: negative rate at n=" + std::to_string(n));
            if (zero_absorbing && l > birth_bound * dn * (1.0 + 1e-12))
                throw std::invalid_argument("RateSpec: birth bound lambda_bar*n violated at n=" + std::to_string(n));
            if (m > death_bound * (1.0 + dn * dn) * (1.0 + 1e-12))
                throw std::invalid_argument("RateSpec: death bound mu_bar*(1+n^2) violated at n=" + std::to_string(n));
        }
    }
};

inline RateSpec linear(double lam, double mu) {
    return {[lam](std::uint64_t n) { return lam * static_cast<double>(n); },
            [mu](std::uint64_t n) { return mu * static_cast<double>(n); }, lam, mu};
}

inline RateSpec yule(double lam) { return linear(lam, 0.0); }

/// lambda_i = i lambda, mu_i = i mu + c i (i - 1).
inline RateSpec logistic(double lam, double mu, double c) {
    return {[lam](std::uint64_t n) { return lam * static_cast<double>(n); },
            [mu, c](std::uint64_t n) {
                const double x = static_cast<double>(n);
                return mu * x + c * x * (x - (n > 0 ? 1.0 : 0.0));
            },
            lam, mu + c};
}

/// lambda_i = rho for every i, mu_i = i mu.
inline RateSpec immigration(double rho, double mu) {
    RateSpec s{[rho](std::uint64_t) { return rho; }, [mu](std::uint64_t n) { return mu * static_cast<double>(n); },
               rho, mu};
    s.zero_absorbing = false;
    return s;
}

struct BdTrajectory {
    std::vector<double> times;  // event times, times[0] = 0
    std::vector<std::uint64_t> states;
    bool absorbed = false;
    bool exploded = false;
    double absorption_time = std::numeric_limits<double>::infinity();
    double end_time = 0.0;
    bool stopped_above = false;

    std::uint64_t final_state() const { return states.back(); }
};

struct SimOptions {
    std::uint64_t event_cap = kernel::defaults().bd_event_cap;
    /// Stop once the state reaches this level (0 disables). Used when the
    /// residual extinction probability from that level is negligible.
    std::uint64_t stop_above = 0;
    bool record = true;
};

/**
 * Event-driven simulation. `on_segment(t0, t1, z)` is called for every holding
 * interval [t0, t1) spent in state z, including the final truncated one.
 */
template <class OnSegment>
BdTrajectory simulate_bd(const RateSpec& spec, std::uint64_t z0, double horizon, RngStream& rng, const SimOptions& opt,
                         OnSegment&& on_segment) {
    BdTrajectory tr;
    tr.times.push_back(0.0);
    tr.states.push_back(z0);
    double t = 0.0;
    std::uint64_t z = z0;
    std::uint64_t events = 0;
    while (true) {
        if (opt.stop_above > 0 && z >= opt.stop_above) {
            tr.stopped_above = true;
            break;
        }
        const double l = spec.lambda(z), m = spec.mu(z);
        const double total = l + m;
        if (total <= 0.0) {
            if (z == 0) {
                tr.absorbed = true;
                tr.absorption_time = t;
            }
            on_segment(t, horizon, z);
            t = horizon;
            break;
        }
        const double dt = rng.exponential(total);
        if (t + dt > horizon) {
            on_segment(t, horizon, z);
            t = horizon;
            break;
        }
        on_segment(t, t + dt, z);
        t += dt;
        if (rng.uniform() * total < l)
            ++z;
        else
            --z;
        if (opt.record) {
            tr.times.push_back(t);
            tr.states.push_back(z);
        }
        if (++events >= opt.event_cap) {
            tr.exploded = true;
            break;
        }
    }
    if (!opt.record && (tr.states.back() != z || tr.times.back() != t)) {
        tr.times.push_back(t);
        tr.states.push_back(z);
    }
    tr.end_time = t;
    if (z == 0 && !tr.absorbed && spec.lambda(0) == 0.0) {
        tr.absorbed = true;
        tr.absorption_time = tr.times.back();
    }
    return tr;
}

inline BdTrajectory simulate_bd(const RateSpec& spec, std::uint64_t z0, double horizon, RngStream& rng,
                                const SimOptions& opt = {}) {
    return simulate_bd(spec, z0, horizon, rng, opt, [](double, double, std::uint64_t) {});
}

// ---------------------------------------------------------------------------
// Analytic calculators

enum class SeriesVerdict { diverges, converges, undecided };

inline const char* to_string(SeriesVerdict v) {
    switch (v) {
        case SeriesVerdict::diverges: return "diverges";
        case SeriesVerdict::converges: return "converges";
        default: return "undecided";
    }
}

struct SeriesReport {
    SeriesVerdict verdict = SeriesVerdict::undecided;
    std::vector<double> partial_sums;
    double tail_estimate = std::numeric_limits<double>::quiet_NaN();
};

struct SeriesOptions {
    double divergence_threshold = kernel::defaults().series_divergence_threshold;
    double geometric_delta = kernel::defaults().series_geometric_delta;
    /// Local power-law exponent p of the terms (a_k ~ k^{-p}) below which the
    /// series is declared divergent, and above which it is declared convergent.
    double power_diverge_max = 1.05;
    double power_converge_min = 1.5;
};

namespace detail {

/// Verdict on a positive series from its terms.
inline SeriesReport judge(const std::vector<double>& terms, const SeriesOptions& opt) {
    SeriesReport rep;
    rep.partial_sums.reserve(terms.size());
    double s = 0.0;
    for (double a : terms) {
        s += a;
        rep.partial_sums.push_back(s);
        if (!std::isfinite(s) || s > opt.divergence_threshold) {
            rep.verdict = SeriesVerdict::diverges;
            return rep;
        }
    }
    const std::size_t n = terms.size();
    if (n < 8) return rep;
    const double a_n = terms[n - 1], a_prev = terms[n - 2], a_half = terms[n / 2 - 1];
    if (a_n == 0.0) {
        rep.verdict = SeriesVerdict::converges;
        rep.tail_estimate = 0.0;
        return rep;
    }
    const double ratio = a_n / a_prev;
    // Geometric decay over the whole second half of the terms.
    bool geometric = ratio < 1.0 - opt.geometric_delta;
    for (std::size_t k = n / 2; geometric && k + 1 < n; ++k)
        if (terms[k] > 0.0 && terms[k + 1] / terms[k] >= 1.0 - opt.geometric_delta) geometric = false;
    if (geometric) {
        rep.verdict = SeriesVerdict::converges;
        rep.tail_estimate = a_n * ratio / (1.0 - ratio);
        return rep;
    }
    const double p = std::log(a_half / a_n) / std::log(static_cast<double>(n) / static_cast<double>(n / 2));
    if (p <= opt.power_diverge_max) {
        rep.verdict = SeriesVerdict::diverges;
    } else if (p >= opt.power_converge_min) {
        rep.verdict = SeriesVerdict::converges;
        rep.tail_estimate = a_n * static_cast<double>(n) / (p - 1.0);
    }
    return rep;
}

inline void require_positive_births(const RateSpec& spec, std::uint64_t n_terms, const char* who) {
    for (std::uint64_t i = 1; i <= n_terms; ++i)
        if (!(spec.lambda(i) > 0.0))
            throw std::invalid_argument(std::string(who) + ": birth rate vanishes at i=" + std::to_string(i));
}

}  // namespace detail

/**
 * Non-explosion series sum_i (1/l_i + m_i/(l_i l_{i-1}) + ... + m_i...m_2/(l_i...l_1)).
 * Its i-th term obeys term_i = (1 + mu_i term_{i-1}) / lambda_i.
 * "diverges" means the process does not explode.
 */
inline SeriesReport check_explosion(const RateSpec& spec, std::uint64_t n_terms, const SeriesOptions& opt = {}) {
    detail::require_positive_births(spec, n_terms, "check_explosion");
    std::vector<double> terms;
    terms.reserve(n_terms);
    double term = 0.0;
    for (std::uint64_t i = 1; i <= n_terms; ++i) {
        term = (1.0 + (i > 1 ? spec.mu(i) * term : 0.0)) / spec.lambda(i);
        terms.push_back(term);
    }
    return detail::judge(terms, opt);
}

/// Terms mu_1...mu_k / (lambda_1...lambda_k), k = 1..n_terms, computed in log space.
inline std::vector<double> extinction_terms(const RateSpec& spec, std::uint64_t n_terms) {
    std::vector<double> a;
    a.reserve(n_terms);
    double log_a = 0.0;
    for (std::uint64_t k = 1; k <= n_terms; ++k) {
        log_a += std::log(spec.mu(k)) - std::log(spec.lambda(k));
        a.push_back(std::exp(log_a));
    }
    return a;
}

inline SeriesReport extinction_series(const RateSpec& spec, std::uint64_t n_terms, const SeriesOptions& opt = {}) {
    detail::require_positive_births(spec, n_terms, "extinction_series");
    return detail::judge(extinction_terms(spec, n_terms), opt);
}

struct Estimate {
    double value = 0.0;
    double truncation_error = 0.0;
};

/**
 * u_i = (1 + U_inf)^{-1} sum_{k >= i} mu_1...mu_k / (lambda_1...lambda_k),
 * and u_i = 1 whenever U diverges.
 */
inline Estimate extinction_prob(const RateSpec& spec, std::uint64_t i, std::uint64_t n_terms,
                                const SeriesOptions& opt = {}) {
    if (i == 0) return {1.0, 0.0};
    const SeriesReport rep = extinction_series(spec, n_terms, opt);
    if (rep.verdict == SeriesVerdict::diverges) return {1.0, 0.0};
    if (rep.verdict == SeriesVerdict::undecided)
        throw std::runtime_error("extinction_prob: extinction series verdict undecided; raise n_terms");
    const std::vector<double> a = extinction_terms(spec, n_terms);
    const double tail = rep.tail_estimate;
    const double total = rep.partial_sums.back() + tail;
    double from_i = tail;
    for (std::uint64_t k = n_terms; k >= i && k >= 1; --k) from_i += a[k - 1];
    if (i > n_terms) from_i = tail;
    const double u = from_i / (1.0 + total);
    const double u_trunc = (from_i - tail) / (1.0 + total - tail);
    return {u, std::fabs(u - u_trunc)};
}

/**
 * m_k = E_{k+1}(T_k) for k = 0..n_terms-1 by the backward recursion
 * m_k = 1/mu_{k+1} + (lambda_{k+1}/mu_{k+1}) m_{k+1}, started at m_N = 1/mu_{N+1}.
 */
inline std::vector<double> passage_means(const RateSpec& spec, std::uint64_t n_terms) {
    std::vector<double> m(n_terms + 1);
    m[n_terms] = 1.0 / spec.mu(n_terms + 1);
    for (std::uint64_t k = n_terms; k-- > 0;) {
        const double l = spec.lambda(k + 1), mu = spec.mu(k + 1);
        m[k] = 1.0 / mu + (l / mu) * m[k + 1];
    }
    return m;
}

namespace detail {

inline void require_extinction(const RateSpec& spec, std::uint64_t n_terms, const char* who) {
    if (extinction_series(spec, n_terms).verdict != SeriesVerdict::diverges)
        throw std::domain_error(std::string(who) + ": extinction series does not diverge, T_0 may be infinite");
}

inline double mean_extinction_time_raw(const RateSpec& spec, std::uint64_t n, std::uint64_t n_terms) {
    const std::vector<double> m = passage_means(spec, std::max<std::uint64_t>(n_terms, n + 1));
    double s = 0.0;
    for (std::uint64_t k = 0; k < n; ++k) s += m[k];
    return s;
}

}  // namespace detail

/**
 * E_n(T_0) = sum_{k=0}^{n-1} sum_{i >= k+1} lambda_{k+1}...lambda_{i-1} / (mu_{k+1}...mu_i).
 * The truncation error is estimated by comparing n_terms with n_terms / 2.
 */
inline Estimate mean_extinction_time(const RateSpec& spec, std::uint64_t n, std::uint64_t n_terms) {
    if (n == 0) return {0.0, 0.0};
    detail::require_positive_births(spec, n_terms, "mean_extinction_time");
    detail::require_extinction(spec, n_terms, "mean_extinction_time");
    const double full = detail::mean_extinction_time_raw(spec, n, n_terms);
    const double half = detail::mean_extinction_time_raw(spec, n, std::max<std::uint64_t>(n_terms / 2, n + 1));
    return {full, std::fabs(full - half)};
}

struct HigherMoments {
    Estimate second;  // E_{n+1}(T_n^2)
    Estimate third;   // E_{n+1}(T_n^3)
};

namespace detail {

inline std::pair<double, double> higher_moments_raw(const RateSpec& spec, std::uint64_t n, std::uint64_t n_terms) {
    const std::vector<double> m = passage_means(spec, n_terms);
    // s_i = 2 m_i^2 + (lambda_{i+1}/mu_{i+1}) s_{i+1}, i.e. the ratio form of
    // (2/(lambda_n pi_n)) sum_{i >= n} lambda_i pi_i m_i^2.
    std::vector<double> s(n_terms + 1), c(n_terms + 1);
    s[n_terms] = 2.0 * m[n_terms] * m[n_terms];
    for (std::uint64_t k = n_terms; k-- > 0;) {
        const double r = spec.lambda(k + 1) / spec.mu(k + 1);
        s[k] = 2.0 * m[k] * m[k] + r * s[k + 1];
    }
    // Third moment: (6/(lambda_n pi_n)) sum_{i >= n} lambda_i pi_i m_i Var_i.
    c[n_terms] = 6.0 * m[n_terms] * (s[n_terms] - m[n_terms] * m[n_terms]);
    for (std::uint64_t k = n_terms; k-- > 0;) {
        const double r = spec.lambda(k + 1) / spec.mu(k + 1);
        c[k] = 6.0 * m[k] * (s[k] - m[k] * m[k]) + r * c[k + 1];
    }
    return {s[n], c[n]};
}

}  // namespace detail

inline HigherMoments extinction_time_higher_moments(const RateSpec& spec, std::uint64_t n, std::uint64_t n_terms) {
    detail::require_positive_births(spec, n_terms, "extinction_time_higher_moments");
    detail::require_extinction(spec, n_terms, "extinction_time_higher_moments");
    if (n + 2 > n_terms) throw std::invalid_argument("extinction_time_higher_moments: n_terms too small for n");
    const auto full = detail::higher_moments_raw(spec, n, n_terms);
    const auto half = detail::higher_moments_raw(spec, n, std::max<std::uint64_t>(n_terms / 2, n + 2));
    return {{full.first, std::fabs(full.first - half.first)}, {full.second, std::fabs(full.second - half.second)}};
}

enum class InvariantStatus { normalized, not_normalizable, degenerate };

inline const char* to_string(InvariantStatus s) {
    switch (s) {
        case InvariantStatus::normalized: return "normalized";
        case InvariantStatus::not_normalizable: return "not-normalizable";
        default: return "degenerate";
    }
}

struct InvariantMeasure {
    InvariantStatus status = InvariantStatus::degenerate;
    std::vector<double> weights;  // normalized on {0..n_max} when status == normalized
};

/**
 * Solves lambda_{j-1} q_{j-1} + mu_{j+1} q_{j+1} - (lambda_j + mu_j) q_j = 0 on
 * {0..n_max} from q_0, which reduces to mu_{j+1} q_{j+1} = lambda_j q_j.
 * A zero birth rate at 0 leaves all mass at 0 (degenerate). The measure is
 * declared normalizable when the last weight carries less than tol of the mass
 * and the weights are decreasing at the cut.
 */
inline InvariantMeasure invariant_measure(const RateSpec& spec, std::uint64_t n_max, double tol) {
    if (n_max < 2) throw std::invalid_argument("invariant_measure: n_max must be at least 2");
    InvariantMeasure out;
    if (spec.lambda(0) == 0.0) {
        out.status = InvariantStatus::degenerate;
        out.weights.assign(n_max + 1, 0.0);
        out.weights[0] = 1.0;
        return out;
    }
    std::vector<double> logw(n_max + 1, 0.0);
    for (std::uint64_t j = 0; j < n_max; ++j) {
        const double l = spec.lambda(j), mu = spec.mu(j + 1);
        if (l == 0.0) {
            for (std::uint64_t k = j + 1; k <= n_max; ++k) logw[k] = -std::numeric_limits<double>::infinity();
            break;
        }
        if (mu == 0.0) {  // pure birth above j: mass escapes to infinity
            out.status = InvariantStatus::not_normalizable;
            out.weights.clear();
            return out;
        }
        logw[j + 1] = logw[j] + std::log(l) - std::log(mu);
    }
    const double mx = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    out.weights.resize(n_max + 1);
    for (std::uint64_t j = 0; j <= n_max; ++j) {
        out.weights[j] = std::exp(logw[j] - mx);
        total += out.weights[j];
    }
    for (double& w : out.weights) w /= total;
    const double last = out.weights[n_max], prev = out.weights[n_max - 1];
    out.status = (last < tol && last <= prev) ? InvariantStatus::normalized : InvariantStatus::not_normalizable;
    return out;
}

}  // namespace popdyn::bd
