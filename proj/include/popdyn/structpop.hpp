#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "kernel/parallel.hpp"
#include "kernel/rng.hpp"
#include "kernel/stats.hpp"

namespace popdyn::structpop {

using kernel::RngStream;

/**
 * Individual-based model on a one-dimensional trait box [lo, hi].
 * Birth b(x), death d(x, zeta) with zeta = sum_j C_K(x - x_j), C_K = C / K,
 * mutation probability p(x). A mutant trait follows a Gaussian N(x, sigma^2)
 * conditioned on the box; the dominating density m_bar is the unconditioned
 * N(0, sigma^2) density, so m(x, z) <= alpha m_bar(z - x) with
 * alpha = 1 / min_x P(x + sigma N in box).
 */
struct IbmParams {
    double lo = 0.0, hi = 4.0;
    double K = 100.0;
    std::function<double(double)> b;
    std::function<double(double, double)> d;
    std::function<double(double)> C;  // unscaled kernel; the model uses C / K
    std::function<double(double)> p;
    double sigma = 0.1;
    double b_bar = 0.0, d_bar = 0.0, C_bar = 0.0, p_bar = 0.0;  // C_bar bounds C, not C / K
    std::string name = "custom";

    double C_K(double z) const { return C(z) / K; }

    double mass_in_box(double x) const {
        if (!std::isfinite(lo) && !std::isfinite(hi)) return 1.0;
        const boost::math::normal_distribution<double> n(x, sigma);
        const double a = std::isfinite(lo) ? boost::math::cdf(n, lo) : 0.0;
        const double c = std::isfinite(hi) ? boost::math::cdf(n, hi) : 1.0;
        return c - a;
    }
    /// Worst case of mass_in_box over the box, reached at an end point.
    double alpha() const {
        if (!std::isfinite(lo) || !std::isfinite(hi)) return std::isfinite(lo) || std::isfinite(hi) ? 2.0 : 1.0;
        return 1.0 / std::min(mass_in_box(lo), mass_in_box(hi));
    }
    double m_bar(double z) const {
        return std::exp(-0.5 * z * z / (sigma * sigma)) / (sigma * std::sqrt(2.0 * M_PI));
    }
    double m(double x, double z) const {
        if (z < lo || z > hi) return 0.0;
        return m_bar(z - x) / mass_in_box(x);
    }
    double sample_mutant(double x, RngStream& rng) const {
        while (true) {
            const double z = x + sigma * rng.normal();
            if (z >= lo && z <= hi) return z;
        }
    }
    /// int f(z) m(x, z) dz.
    double mutation_expectation(const std::function<double(double)>& f, double x) const {
        const double a = std::max(lo, x - 12.0 * sigma), c = std::min(hi, x + 12.0 * sigma);
        if (!(c > a)) return f(x);
        using boost::math::quadrature::gauss_kronrod;
        return gauss_kronrod<double, 31>::integrate([&](double z) { return f(z) * m(x, z); }, a, c, 12, 1e-12);
    }

    /**
     * Global rate constant: the total event rate of one individual is at most
     * d_bar (1 + C_bar N / K) + b_bar (1 + (alpha - 1) p_bar) <= C_hat (N + 1).
     */
    double C_hat() const {
        return std::max(d_bar + b_bar * (1.0 + (alpha() - 1.0) * p_bar), d_bar * C_bar / K);
    }

    /// Checks the declared dominating constants on a grid of traits and competition values.
    void validate() const {
        if (!(hi > lo)) throw std::invalid_argument("IbmParams: empty trait box");
        if (!(K > 0.0)) throw std::invalid_argument("IbmParams: K must be positive");
        if (!(sigma > 0.0)) throw std::invalid_argument("IbmParams: sigma must be positive");
        if (!b || !d || !C || !p) throw std::invalid_argument("IbmParams: rate functions must be set");
        const double a = std::isfinite(lo) ? lo : -10.0, c = std::isfinite(hi) ? hi : 10.0;
        for (int i = 0; i <= 200; ++i) {
            const double x = a + (c - a) * i / 200.0;
            if (b(x) < 0.0 || b(x) > b_bar * (1.0 + 1e-12)) throw std::invalid_argument("IbmParams: b exceeds b_bar");
            if (p(x) < 0.0 || p(x) > 1.0 || p(x) > p_bar + 1e-12)
                throw std::invalid_argument("IbmParams: p outside [0, p_bar]");
            const double dx = x - a;
            if (C(dx) < 0.0 || C(dx) > C_bar * (1.0 + 1e-12) || C(-dx) < 0.0 || C(-dx) > C_bar * (1.0 + 1e-12))
                throw std::invalid_argument("IbmParams: C exceeds C_bar");
            for (double zeta : {0.0, 0.5, 1.0, 10.0, 100.0})
                if (d(x, zeta) < 0.0 || d(x, zeta) > d_bar * (1.0 + zeta) * (1.0 + 1e-12))
                    throw std::invalid_argument("IbmParams: d exceeds d_bar (1 + zeta)");
        }
    }

    /// Asymmetric competition model on [0, 4]: b = 4 - x, d = zeta, C sigmoid.
    static IbmParams kisdi(double K, double p = 0.03, double sigma = 0.1) {
        IbmParams q;
        q.name = "kisdi";
        q.K = K;
        q.b = [](double x) { return 4.0 - x; };
        q.d = [](double, double zeta) { return zeta; };
        q.C = [](double z) { return 2.0 * (1.0 - 1.0 / (1.0 + 1.2 * std::exp(-4.0 * z))); };
        q.p = [p](double) { return p; };
        q.sigma = sigma;
        q.b_bar = 4.0;
        q.d_bar = 1.0;
        q.C_bar = 2.0;
        q.p_bar = p;
        q.validate();
        return q;
    }

    /// Uniform competition C = 1 with constant b, d + alpha zeta.
    static IbmParams mean_field(double K, double b, double d, double a, double p = 0.0, double sigma = 0.1,
                                double lo = 0.0, double hi = 4.0) {
        IbmParams q;
        q.name = "mean_field";
        q.lo = lo;
        q.hi = hi;
        q.K = K;
        q.b = [b](double) { return b; };
        q.d = [d, a](double, double zeta) { return d + a * zeta; };
        q.C = [](double) { return 1.0; };
        q.p = [p](double) { return p; };
        q.sigma = sigma;
        q.b_bar = b;
        q.d_bar = std::max(d, a);
        q.C_bar = 1.0;
        q.p_bar = p;
        q.validate();
        return q;
    }

    /**
     * Accelerated births and deaths: b_K = K^eta gamma + b, d_K = K^eta gamma + d,
     * mutation standard deviation sigma / K^{eta/2}.
     */
    IbmParams accelerated(double eta, const std::function<double(double)>& gamma, double gamma_bar) const {
        if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("IbmParams::accelerated: eta must lie in [0, 1]");
        IbmParams q = *this;
        const double s = std::pow(K, eta);
        const auto b0 = b;
        const auto d0 = d;
        q.b = [b0, gamma, s](double x) { return s * gamma(x) + b0(x); };
        q.d = [d0, gamma, s](double x, double zeta) { return s * gamma(x) + d0(x, zeta); };
        q.sigma = sigma / std::pow(K, 0.5 * eta);
        q.b_bar = b_bar + s * gamma_bar;
        q.d_bar = d_bar + s * gamma_bar;
        q.name = name + "_accelerated";
        q.validate();
        return q;
    }
};

enum class Mode {
    verbatim,   // global clock C_hat N (N + 1), every candidate drawn
    skip_null,  // same thinning, candidates that cannot be accepted are skipped in law
    grouped     // exact event simulation over groups of identical traits
};

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::verbatim: return "verbatim";
        case Mode::skip_null: return "skip_null";
        case Mode::grouped: return "grouped";
    }
    return "?";
}

struct IbmOptions {
    Mode mode = Mode::grouped;
    double C_hat_factor = 1.0;  // multiplies the global rate constant
    double grid_dt = 0.1;
    double bin_width = 0.02;
    bool histograms = false;
    /// Test function for martingale tracking; empty disables tracking.
    std::function<double(double)> f;
    /// Weight w in the tracked integral int <Y_s, w f^2> ds (1 when empty).
    std::function<double(double)> weight;
    /// Traits whose exact counts are recorded at each grid time.
    std::vector<double> count_traits;
    std::uint64_t max_events = 2'000'000'000ull;
};

struct IbmRun {
    std::vector<double> t;
    std::vector<std::uint64_t> N;
    std::vector<std::vector<std::uint64_t>> hist;  // per grid time when enabled
    std::vector<std::vector<std::uint64_t>> trait_counts;  // per grid time, one per IbmOptions::count_traits
    std::vector<double> final_traits;
    std::uint64_t births = 0, mutants = 0, deaths = 0, nulls = 0;
    // Martingale bookkeeping for <Y, f>, all unscaled.
    double f_start = 0.0, f_end = 0.0;
    double drift_integral = 0.0;  // int of the compensator density
    double qv_integral = 0.0;     // int of the bracket density
    double realized_qv = 0.0;     // sum of squared jumps of <Y, f>
    double mass_f2_integral = 0.0;   // int <Y_s, f^2> ds
    double mass_wf2_integral = 0.0;  // int <Y_s, w f^2> ds
};

namespace detail {

struct Ind {
    double x;
    double fx = 0.0, mf = 0.0, mf2 = 0.0;  // f(x), int f m(x,.), int f^2 m(x,.)
    double w = 1.0;
    double zeta = 0.0;                   // tracked only with martingale bookkeeping
    std::uint64_t n = 1;                 // group size (grouped mode)
};

inline std::size_t bin_index(const IbmParams& P, double x, double w, std::size_t nb) {
    const auto k = static_cast<std::int64_t>(std::floor((x - P.lo) / w));
    return static_cast<std::size_t>(std::clamp<std::int64_t>(k, 0, static_cast<std::int64_t>(nb) - 1));
}

inline std::size_t num_bins(const IbmParams& P, double w) {
    return static_cast<std::size_t>(std::max(1.0, std::ceil((P.hi - P.lo) / w - 1e-9)));
}

class Recorder {
public:
    Recorder(const IbmParams& P, const IbmOptions& o, double horizon, IbmRun& run) : P_(P), o_(o), run_(run) {
        const auto n = static_cast<std::size_t>(std::ceil(horizon / o.grid_dt - 1e-9));
        for (std::size_t k = 0; k <= n; ++k) grid_.push_back(k == n ? horizon : static_cast<double>(k) * o.grid_dt);
    }
    /// Records every grid time strictly before t_next with the current state.
    void until(double t_next, const std::vector<Ind>& pop, std::uint64_t N) {
        while (next_ < grid_.size() && grid_[next_] < t_next) {
            run_.t.push_back(grid_[next_]);
            run_.N.push_back(N);
            if (o_.histograms) {
                const std::size_t nb = num_bins(P_, o_.bin_width);
                std::vector<std::uint64_t> h(nb, 0);
                for (const auto& v : pop) h[bin_index(P_, v.x, o_.bin_width, nb)] += v.n;
                run_.hist.push_back(std::move(h));
            }
            if (!o_.count_traits.empty()) {
                std::vector<std::uint64_t> c(o_.count_traits.size(), 0);
                for (const auto& v : pop)
                    for (std::size_t a = 0; a < c.size(); ++a)
                        if (v.x == o_.count_traits[a]) c[a] += v.n;
                run_.trait_counts.push_back(std::move(c));
            }
            ++next_;
        }
    }
    void finish(const std::vector<Ind>& pop, std::uint64_t N) { until(std::numeric_limits<double>::infinity(), pop, N); }

private:
    const IbmParams& P_;
    const IbmOptions& o_;
    IbmRun& run_;
    std::vector<double> grid_;
    std::size_t next_ = 0;
};

inline Ind make_ind(const IbmParams& P, const IbmOptions& o, double x) {
    Ind v{x};
    if (o.f) {
        v.fx = o.f(x);
        if (o.weight) v.w = o.weight(x);
        if (P.p(x) > 0.0) {
            v.mf = P.mutation_expectation(o.f, x);
            v.mf2 = P.mutation_expectation([&](double z) { const double y = o.f(z); return y * y; }, x);
        }
    }
    return v;
}

/// Compensator and bracket densities of <Y, f> for the current population.
struct Densities {
    double drift = 0.0, qv = 0.0, f2 = 0.0, wf2 = 0.0;

    void integrate(IbmRun& run, double dt) const {
        run.drift_integral += drift * dt;
        run.qv_integral += qv * dt;
        run.mass_f2_integral += f2 * dt;
        run.mass_wf2_integral += wf2 * dt;
    }
};

inline Densities densities(const IbmParams& P, const std::vector<Ind>& pop) {
    Densities out;
    for (const auto& v : pop) {
        const double b = P.b(v.x), p = P.p(v.x), d = P.d(v.x, v.zeta), n = static_cast<double>(v.n);
        out.drift += n * (((1.0 - p) * b - d) * v.fx + p * b * v.mf);
        out.qv += n * (((1.0 - p) * b + d) * v.fx * v.fx + p * b * v.mf2);
        out.f2 += n * v.fx * v.fx;
        out.wf2 += n * v.w * v.fx * v.fx;
    }
    return out;
}

[[noreturn]] inline void bound_error(const char* which) {
    throw std::runtime_error(std::string("simulate_ibm: declared bound violated: ") + which);
}

}  // namespace detail

/**
 * Acceptance-rejection construction. Candidate times T_k = T_{k-1} + tau_k / (N (N + 1)),
 * tau_k ~ Exponential(C_hat); a uniform individual i; W_k uniform. With
 * D = C_hat (N + 1): death if W <= d(x, zeta_i) / D, clonal birth up to
 * (1 - p) b / D more, mutant birth with trait x + Z up to
 * p b m(x, x + Z) / (m_bar(Z) D) more, otherwise nothing.
 */
inline IbmRun simulate_ibm_thinning(const IbmParams& P, std::vector<double> initial, double horizon, RngStream& rng,
                                    const IbmOptions& o) {
    const bool skip = o.mode == Mode::skip_null;
    const bool track = static_cast<bool>(o.f);
    const double C_hat = P.C_hat() * o.C_hat_factor;
    const double alpha = P.alpha();
    IbmRun run;
    std::vector<detail::Ind> pop;
    pop.reserve(initial.size() * 4 + 16);
    for (double x : initial) pop.push_back(detail::make_ind(P, o, x));
    auto scan_zeta = [&](double x) {
        double z = 0.0;
        for (const auto& v : pop) z += P.C_K(x - v.x);
        return z;
    };
    detail::Densities dens;
    // Competition sums kept per individual only for the bookkeeping; W1 always uses a fresh scan.
    auto shift_zeta = [&](double y, double sgn) {
        for (auto& v : pop) v.zeta += sgn * P.C_K(v.x - y);
    };
    if (track) {
        for (auto& v : pop) {
            v.zeta = scan_zeta(v.x);
            run.f_start += v.fx;
        }
        dens = detail::densities(P, pop);
    }
    detail::Recorder rec(P, o, horizon, run);
    double t = 0.0;
    std::uint64_t events = 0;
    while (true) {
        const auto N = static_cast<double>(pop.size());
        if (pop.empty()) break;
        const double D = C_hat * (N + 1.0);
        // Largest W that can lead to a non-null event.
        const double q = std::min(1.0, (P.d_bar * (1.0 + P.C_bar / P.K * N) + P.b_bar * (1.0 + (alpha - 1.0) * P.p_bar)) / D);
        const double clock = skip ? q * C_hat : C_hat;
        const double t_next = t + rng.exponential(clock) / (N * (N + 1.0));
        if (t_next > horizon) break;
        rec.until(t_next, pop, pop.size());
        if (track) dens.integrate(run, t_next - t);
        t = t_next;
        if (++events > o.max_events) throw std::runtime_error("simulate_ibm: event budget exhausted");
        const std::size_t i = rng.below(pop.size());
        const double W = skip ? q * rng.uniform() : rng.uniform();
        if (W > q) {
            ++run.nulls;
            continue;
        }
        const double x = pop[i].x;
        const double zeta = scan_zeta(x);
        const double b = P.b(x), p = P.p(x), d = P.d(x, zeta);
        if (b > P.b_bar * (1.0 + 1e-12)) detail::bound_error("b_bar");
        if (d > P.d_bar * (1.0 + std::fabs(zeta)) * (1.0 + 1e-12)) detail::bound_error("d_bar");
        const double W1 = d / D;
        const double W2 = W1 + (1.0 - p) * b / D;
        // Z is only read by the mutant branch, so it is drawn once W passes the null bound.
        const double Z = P.sigma * rng.normal();
        double ratio = 0.0;
        if (p > 0.0) {
            ratio = P.m(x, x + Z) / P.m_bar(Z);
            if (ratio > alpha * (1.0 + 1e-9)) detail::bound_error("alpha (mutation density)");
        }
        const double W3 = W2 + p * b * ratio / D;
        if (W3 > 1.0 + 1e-12) detail::bound_error("C_hat");
        double fj = 0.0;
        if (W <= W1) {
            fj = pop[i].fx;
            pop[i] = pop.back();
            pop.pop_back();
            if (track) shift_zeta(x, -1.0);
            ++run.deaths;
        } else if (W <= W2) {
            if (track) shift_zeta(x, 1.0);
            pop.push_back(pop[i]);
            fj = pop.back().fx;
            ++run.births;
        } else if (W <= W3) {
            if (track) shift_zeta(x + Z, 1.0);
            pop.push_back(detail::make_ind(P, o, x + Z));
            if (track) pop.back().zeta = scan_zeta(x + Z);
            fj = pop.back().fx;
            ++run.mutants;
        } else {
            ++run.nulls;
            continue;
        }
        if (track) {
            run.realized_qv += fj * fj;
            dens = detail::densities(P, pop);
        }
    }
    rec.finish(pop, pop.size());
    if (track) {
        dens.integrate(run, horizon - t);
        for (const auto& v : pop) run.f_end += v.fx;
    }
    for (const auto& v : pop) run.final_traits.push_back(v.x);
    return run;
}

/**
 * Exact event simulation on groups of identical traits. Competition sums are
 * updated incrementally per event and rebuilt by a direct scan every 4096
 * events to stop rounding drift.
 */
inline IbmRun simulate_ibm_grouped(const IbmParams& P, const std::vector<double>& initial, double horizon,
                                   RngStream& rng, const IbmOptions& o) {
    const bool track = static_cast<bool>(o.f);
    IbmRun run;
    std::vector<detail::Ind> g;
    for (double x : initial) {
        auto it = std::find_if(g.begin(), g.end(), [x](const detail::Ind& v) { return v.x == x; });
        if (it != g.end())
            ++it->n;
        else
            g.push_back(detail::make_ind(P, o, x));
    }
    std::uint64_t N = initial.size();
    auto rebuild = [&] {
        for (auto& v : g) {
            v.zeta = 0.0;
            for (const auto& w : g) v.zeta += static_cast<double>(w.n) * P.C_K(v.x - w.x);
        }
    };
    rebuild();
    if (track)
        for (const auto& v : g) run.f_start += static_cast<double>(v.n) * v.fx;
    std::vector<double> rb, rm, rd;
    detail::Recorder rec(P, o, horizon, run);
    double t = 0.0;
    std::uint64_t events = 0;
    while (N > 0) {
        rb.resize(g.size());
        rm.resize(g.size());
        rd.resize(g.size());
        double total = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
            const double n = static_cast<double>(g[k].n), b = P.b(g[k].x), p = P.p(g[k].x);
            rb[k] = n * (1.0 - p) * b;
            rm[k] = n * p * b;
            rd[k] = n * P.d(g[k].x, g[k].zeta);
            total += rb[k] + rm[k] + rd[k];
        }
        if (!(total > 0.0)) break;
        const double t_next = t + rng.exponential(total);
        const double until = std::min(t_next, horizon);
        rec.until(until, g, N);
        if (track) detail::densities(P, g).integrate(run, until - t);
        t = until;
        if (t_next > horizon) break;
        if (++events > o.max_events) throw std::runtime_error("simulate_ibm: event budget exhausted");
        double u = rng.uniform() * total;
        std::size_t k = 0;
        int kind = 0;  // 0 clonal, 1 mutant, 2 death
        for (k = 0; k < g.size(); ++k) {
            if (u < rb[k]) { kind = 0; break; }
            u -= rb[k];
            if (u < rm[k]) { kind = 1; break; }
            u -= rm[k];
            if (u < rd[k]) { kind = 2; break; }
            u -= rd[k];
        }
        if (k == g.size()) {  // rounding at the top end
            k = g.size() - 1;
            kind = rd[k] > 0.0 ? 2 : (rm[k] > 0.0 ? 1 : 0);
        }
        double y = g[k].x, fj = g[k].fx;
        if (kind == 0) {
            ++g[k].n;
            ++N;
            ++run.births;
        } else if (kind == 1) {
            y = P.sample_mutant(g[k].x, rng);
            auto it = std::find_if(g.begin(), g.end(), [y](const detail::Ind& v) { return v.x == y; });
            if (it != g.end()) {
                ++it->n;
            } else {
                g.push_back(detail::make_ind(P, o, y));
                double z = 0.0;
                for (const auto& w : g) z += static_cast<double>(w.n) * P.C_K(y - w.x);
                g.back().zeta = z - P.C_K(0.0);  // the loop below adds the newcomer
            }
            fj = o.f ? o.f(y) : 0.0;
            ++N;
            ++run.mutants;
        } else {
            --g[k].n;
            --N;
            ++run.deaths;
        }
        const double sgn = kind == 2 ? -1.0 : 1.0;
        for (auto& v : g) v.zeta += sgn * P.C_K(v.x - y);
        if (kind == 2 && g[k].n == 0) {
            g[k] = g.back();
            g.pop_back();
        }
        if (track) run.realized_qv += fj * fj;
        if (events % 4096 == 0) rebuild();
    }
    rec.finish(g, N);
    if (track) {
        if (t < horizon) detail::densities(P, g).integrate(run, horizon - t);
        for (const auto& v : g) run.f_end += static_cast<double>(v.n) * v.fx;
    }
    for (const auto& v : g) run.final_traits.insert(run.final_traits.end(), v.n, v.x);
    return run;
}

/// Dispatches on the mode. An empty initial population stays empty.
inline IbmRun simulate_ibm(const IbmParams& P, const std::vector<double>& initial, double horizon, RngStream& rng,
                           const IbmOptions& o = {}) {
    if (!(horizon >= 0.0)) throw std::invalid_argument("simulate_ibm: horizon must be nonnegative");
    if (!(o.C_hat_factor >= 1.0)) throw std::invalid_argument("simulate_ibm: C_hat_factor must be at least 1");
    for (double x : initial)
        if (x < P.lo || x > P.hi) throw std::invalid_argument("simulate_ibm: initial trait outside the trait box");
    if (o.mode == Mode::grouped) return simulate_ibm_grouped(P, initial, horizon, rng, o);
    return simulate_ibm_thinning(P, initial, horizon, rng, o);
}

inline std::vector<double> monomorphic(std::size_t n, double x) { return std::vector<double>(n, x); }

struct GeneratorCheck {
    double residual, residual_stderr;  // mean of M^f_t
    double var_m;                      // empirical variance of M^f_t
    double mean_qv;                    // mean of the bracket integral
    double qv_rel_error;               // |var_m - mean_qv| / mean_qv
    double mean_realized_qv;
};

/**
 * Monte-Carlo check of the martingale M^f_t = <Y_t,f> - <Y_0,f> - int (compensator) ds:
 * its mean must vanish and its variance must match E of the bracket integral.
 */
inline GeneratorCheck generator_moment_check(const IbmParams& P, const std::vector<double>& initial,
                                             const std::function<double(double)>& f, double t,
                                             std::size_t replicates, std::uint64_t seed, Mode mode = Mode::grouped,
                                             unsigned threads = 1) {
    IbmOptions o;
    o.mode = mode;
    o.f = f;
    o.grid_dt = t;
    struct R {
        double m, qv, rqv;
    };
    const auto rs = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
        RngStream rng(seed, i);
        const auto run = simulate_ibm(P, initial, t, rng, o);
        return R{run.f_end - run.f_start - run.drift_integral, run.qv_integral, run.realized_qv};
    });
    kernel::Accumulator m, q, r;
    for (const auto& x : rs) {
        m.add(x.m);
        q.add(x.qv);
        r.add(x.rqv);
    }
    const double var = m.variance();
    return {m.mean(), m.stderr_mean(), var, q.mean(), std::fabs(var - q.mean()) / q.mean(), r.mean()};
}

struct AcceleratedRun {
    IbmRun run;
    double K, eta;
    /// Brackets of <X^K, f> with X^K = Y / K on [0, horizon].
    double realized;     // sum of squared jumps
    double predictable;  // integral of the exact bracket density
    double superprocess; // 2 int <X^K_s, gamma f^2> ds
    double mass_f2;      // int <X^K_s, f^2> ds
};

/**
 * IBM with accelerated rates (K^eta gamma added to b and d, mutation sd
 * sigma / K^{eta/2}) and the bracket of <X^K, f> measured three ways.
 */
inline AcceleratedRun accelerated_run(const IbmParams& base, double eta, const std::function<double(double)>& gamma,
                                      double gamma_bar, const std::vector<double>& initial, double horizon,
                                      RngStream& rng, const std::function<double(double)>& f,
                                      IbmOptions o = {}) {
    const IbmParams P = base.accelerated(eta, gamma, gamma_bar);
    const double K = P.K;
    o.f = f;
    o.weight = gamma;
    AcceleratedRun a{simulate_ibm(P, initial, horizon, rng, o), K, eta, 0, 0, 0, 0};
    a.realized = a.run.realized_qv / (K * K);
    a.predictable = a.run.qv_integral / (K * K);
    a.superprocess = 2.0 * a.run.mass_wf2_integral / K;
    a.mass_f2 = a.run.mass_f2_integral / K;
    return a;
}

enum class LimitRegime { monomorphic, dimorphic, mean_field };

inline const char* to_string(LimitRegime r) {
    switch (r) {
        case LimitRegime::monomorphic: return "monomorphic";
        case LimitRegime::dimorphic: return "dimorphic";
        case LimitRegime::mean_field: return "mean_field";
    }
    return "?";
}

/**
 * RK4 solution of n_g' = n_g (b(x_g) - d(x_g, sum_h C(x_g - x_h) n_h)) for fixed traits.
 * Masses are per unit K.
 */
inline std::vector<std::vector<double>> trait_ode(const IbmParams& P, const std::vector<double>& traits,
                                                  std::vector<double> n0, double horizon, double dt) {
    const std::size_t G = traits.size();
    auto rhs = [&](const std::vector<double>& n) {
        std::vector<double> out(G);
        for (std::size_t a = 0; a < G; ++a) {
            double zeta = 0.0;
            for (std::size_t c = 0; c < G; ++c) zeta += P.C(traits[a] - traits[c]) * n[c];
            out[a] = n[a] * (P.b(traits[a]) - P.d(traits[a], zeta));
        }
        return out;
    };
    const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
    std::vector<std::vector<double>> path{n0};
    const int sub = 20;
    const double h = dt / sub;
    for (std::size_t s = 0; s < steps; ++s) {
        for (int j = 0; j < sub; ++j) {
            auto k1 = rhs(n0);
            std::vector<double> y(G);
            for (std::size_t a = 0; a < G; ++a) y[a] = n0[a] + 0.5 * h * k1[a];
            auto k2 = rhs(y);
            for (std::size_t a = 0; a < G; ++a) y[a] = n0[a] + 0.5 * h * k2[a];
            auto k3 = rhs(y);
            for (std::size_t a = 0; a < G; ++a) y[a] = n0[a] + h * k3[a];
            auto k4 = rhs(y);
            for (std::size_t a = 0; a < G; ++a) n0[a] += h / 6.0 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a]);
        }
        path.push_back(n0);
    }
    return path;
}

struct LimitRow {
    double K;
    double distance;  // E sup_t max_g |mass_g - ODE_g|
    double stderr_;
};

/**
 * Compares X^K = Y^K / K with the limit ODE on a grid. Monomorphic and dimorphic
 * regimes need p = 0 and track each trait's mass; the mean-field regime needs a
 * constant kernel and constant b, and tracks the total mass against the logistic
 * equation n' = (b - d) n - alpha C n^2.
 */
inline std::vector<LimitRow> limit_ode_compare(IbmParams P, LimitRegime regime, const std::vector<double>& traits,
                                               const std::vector<double>& mass0, const std::vector<double>& Ks,
                                               double horizon, double grid_dt, std::size_t replicates,
                                               std::uint64_t seed, unsigned threads = 1) {
    if (traits.size() != mass0.size() || traits.empty())
        throw std::invalid_argument("limit_ode_compare: traits and masses must match");
    if (regime == LimitRegime::monomorphic && traits.size() != 1)
        throw std::invalid_argument("limit_ode_compare: monomorphic regime needs one trait");
    if (regime == LimitRegime::dimorphic && traits.size() != 2)
        throw std::invalid_argument("limit_ode_compare: dimorphic regime needs two traits");
    if (regime != LimitRegime::mean_field && P.p_bar != 0.0)
        throw std::invalid_argument("limit_ode_compare: fixed-trait regimes need p = 0");
    std::vector<std::vector<double>> ode;
    if (regime == LimitRegime::mean_field) {
        const double b = P.b(P.lo), c = P.C(0.0);
        for (double x : {P.lo, 0.5 * (P.lo + P.hi), P.hi})
            if (P.b(x) != b || P.C(x - P.lo) != c) throw std::invalid_argument("limit_ode_compare: mean-field needs constant b and C");
        double n0 = 0.0;
        for (double m : mass0) n0 += m;
        ode = trait_ode(P, {P.lo}, {n0}, horizon, grid_dt);
    } else {
        ode = trait_ode(P, traits, mass0, horizon, grid_dt);
    }
    std::vector<LimitRow> rows;
    for (std::size_t j = 0; j < Ks.size(); ++j) {
        IbmParams Q = P;
        Q.K = Ks[j];
        std::vector<double> init;
        for (std::size_t a = 0; a < traits.size(); ++a) {
            const auto n = static_cast<std::size_t>(std::llround(mass0[a] * Ks[j]));
            init.insert(init.end(), n, traits[a]);
        }
        const auto d = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
            RngStream rng(seed, (static_cast<std::uint64_t>(j) << 40) | i);
            IbmOptions o;
            o.grid_dt = grid_dt;
            if (regime != LimitRegime::mean_field) o.count_traits = traits;
            const auto run = simulate_ibm(Q, init, horizon, rng, o);
            double sup = 0.0;
            for (std::size_t k = 0; k < ode.size() && k < run.N.size(); ++k) {
                if (regime == LimitRegime::mean_field) {
                    sup = std::max(sup, std::fabs(static_cast<double>(run.N[k]) / Q.K - ode[k][0]));
                    continue;
                }
                for (std::size_t a = 0; a < traits.size(); ++a)
                    sup = std::max(sup, std::fabs(static_cast<double>(run.trait_counts[k][a]) / Q.K - ode[k][a]));
            }
            return sup;
        });
        const auto acc = kernel::summarize(d);
        rows.push_back({Ks[j], acc.mean(), acc.stderr_mean()});
    }
    return rows;
}

}  // namespace popdyn::structpop
