#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "catastrophe.hpp"
#include "kernel/parallel.hpp"
#include "kernel/rng.hpp"
#include "kernel/sde.hpp"
#include "kernel/stats.hpp"

namespace popdyn::splitting {

using catastrophe::FractionLaw;
using kernel::RngStream;

/// Symmetrizes a fraction law so that F and 1 - F have the same distribution.
inline FractionLaw symmetrize(const FractionLaw& F) {
    if (F.kind == FractionLaw::Kind::beta) {
        if (F.a != F.b) throw std::invalid_argument("symmetrize: a Beta fraction law must have a == b");
        return F;
    }
    std::map<double, double> w;
    for (std::size_t j = 0; j < F.theta.size(); ++j) {
        w[F.theta[j]] += 0.5 * F.prob[j];
        w[1.0 - F.theta[j]] += 0.5 * F.prob[j];
    }
    std::vector<double> th, pr;
    for (const auto& [t, p] : w) {
        if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("symmetrize: fractions must lie in (0,1)");
        th.push_back(t);
        pr.push_back(p);
    }
    return FractionLaw::atoms_law(th, pr);
}

enum class RateKind {
    constant,
    state_dependent,  // tau(x) <= tau_bar (1 + x^p)
    threshold         // tau = 0 below the threshold, division at the first grid time at or above it
};

struct SplitParams {
    double r = 1.0;
    double gamma = 1.0;
    RateKind rate_kind = RateKind::constant;
    double tau_const = 1.0;
    std::function<double(double)> tau;
    double tau_bar = 0.0;
    double p = 1.0;
    double threshold = 2.0;
    FractionLaw F = FractionLaw::constant(0.5);

    static SplitParams constant(double r, double gamma, double tau, FractionLaw F) {
        SplitParams s;
        s.r = r;
        s.gamma = gamma;
        s.tau_const = tau;
        s.F = symmetrize(F);
        s.validate();
        return s;
    }
    static SplitParams state_dependent(double r, double gamma, std::function<double(double)> tau, double tau_bar,
                                       double p, FractionLaw F) {
        SplitParams s;
        s.r = r;
        s.gamma = gamma;
        s.rate_kind = RateKind::state_dependent;
        s.tau = std::move(tau);
        s.tau_bar = tau_bar;
        s.p = p;
        s.F = symmetrize(F);
        s.validate();
        return s;
    }
    /// F = 1/2, no division below load `threshold`, immediate division at it.
    static SplitParams moderate_infection(double r, double gamma, double threshold = 2.0) {
        SplitParams s;
        s.r = r;
        s.gamma = gamma;
        s.rate_kind = RateKind::threshold;
        s.threshold = threshold;
        s.F = FractionLaw::constant(0.5);
        s.validate();
        return s;
    }

    void validate() const {
        if (!(gamma > 0.0)) throw std::invalid_argument("SplitParams: gamma must be positive");
        if (!std::isfinite(r)) throw std::invalid_argument("SplitParams: r must be finite");
        switch (rate_kind) {
            case RateKind::constant:
                if (!(tau_const >= 0.0) || !std::isfinite(tau_const))
                    throw std::invalid_argument("SplitParams: tau must be finite and nonnegative");
                break;
            case RateKind::state_dependent:
                if (!tau) throw std::invalid_argument("SplitParams: missing rate function");
                if (!(tau_bar > 0.0) || !(p >= 1.0))
                    throw std::invalid_argument("SplitParams: bound needs tau_bar > 0 and p >= 1");
                for (int k = -4; k <= 8; ++k) {
                    const double x = std::pow(2.0, k);
                    if (tau(x) > tau_bar * (1.0 + std::pow(x, p)) * (1.0 + 1e-12) || tau(x) < 0.0)
                        throw std::invalid_argument("SplitParams: declared rate bound violated at x = " +
                                                    std::to_string(x));
                }
                break;
            case RateKind::threshold:
                if (!(threshold > 0.0)) throw std::invalid_argument("SplitParams: threshold must be positive");
                break;
        }
    }

    double tau_at(double x) const {
        switch (rate_kind) {
            case RateKind::constant: return tau_const;
            case RateKind::state_dependent: return tau(x);
            case RateKind::threshold: return x >= threshold ? std::numeric_limits<double>::infinity() : 0.0;
        }
        return 0.0;
    }
};

struct Cell {
    std::string label;  // word over {1,2}; the ancestor is the empty word
    std::int64_t parent = -1;
    double birth = 0.0;
    double end = std::numeric_limits<double>::infinity();  // division time, or infinity
    double load_birth = 0.0;
    double load_end = 0.0;
    bool divided = false;
    bool pooled = false;  // merged into the uninfected pool at time `end`
    std::size_t first_grid = 0;
    std::vector<double> loads;  // load at grid[first_grid + j]
};

struct CellTree {
    std::vector<Cell> cells;
    std::vector<double> grid;
    std::vector<std::uint64_t> n_alive;
    std::vector<std::uint64_t> n_infected;
    std::vector<double> mass;
    /// Uninfected cells tracked only by their count (aggregated mode).
    std::vector<std::uint64_t> pool;
    bool truncated = false;
    bool stopped_early = false;
    double valid_until = 0.0;
    std::uint64_t bound_violations = 0;

    std::size_t grid_index(double t) const {
        auto it = std::lower_bound(grid.begin(), grid.end(), t - 1e-9 * std::max(1.0, t));
        if (it == grid.end() || std::fabs(*it - t) > 1e-9 * std::max(1.0, t))
            throw std::out_of_range("CellTree: time is not a recorded grid time");
        return static_cast<std::size_t>(it - grid.begin());
    }
    std::size_t recorded() const { return n_alive.size(); }

    /// Loads of explicitly tracked cells alive at grid index k.
    std::vector<double> loads_at(std::size_t k) const {
        std::vector<double> out;
        for (const auto& c : cells)
            if (k >= c.first_grid && k - c.first_grid < c.loads.size()) out.push_back(c.loads[k - c.first_grid]);
        return out;
    }
};

struct SplitOptions {
    double step = 0.01;
    std::size_t max_cells = 200000;
    bool aggregate_uninfected = false;
    /// Checked at each grid time; returning true stops the simulation there.
    std::function<bool(double t, double mass, std::uint64_t alive)> stop_when;
};

namespace detail {

/// Yule process from n over a time h: n plus NegativeBinomial(n, e^{-rate h}) failures.
inline std::uint64_t yule_step(std::uint64_t n, double rate, double h, RngStream& rng) {
    if (n == 0 || rate <= 0.0 || h <= 0.0) return n;
    const double lam = rng.gamma(static_cast<double>(n), std::expm1(rate * h));
    return n + rng.poisson(lam);
}

struct Live {
    std::size_t idx;
    double t;
    double x;
    RngStream rng;
    double next_div;
    bool done;
};

}  // namespace detail

/**
 * Cell population with Feller parasite loads. Cells advance window by window
 * on the output grid; each cell owns the substream of `rng` keyed by its
 * label, so results do not depend on processing order. At division the load
 * is split into theta x and x - theta x with theta ~ F.
 */
inline CellTree simulate_splitting(const SplitParams& P, double x0, double horizon, RngStream& rng,
                                   const SplitOptions& opt = {}) {
    if (!(x0 >= 0.0)) throw std::invalid_argument("simulate_splitting: x0 must be nonnegative");
    if (!(opt.step > 0.0)) throw std::invalid_argument("simulate_splitting: step must be positive");
    const auto n = static_cast<std::size_t>(std::ceil(horizon / opt.step - 1e-9));
    CellTree tree;
    tree.grid.resize(n + 1);
    for (std::size_t k = 0; k <= n; ++k) tree.grid[k] = k == n ? horizon : static_cast<double>(k) * opt.step;

    const double tau0 = P.rate_kind == RateKind::threshold ? 0.0 : P.tau_at(0.0);
    RngStream pool_rng = rng.substream("uninfected-pool");
    std::uint64_t pool = 0;
    std::vector<detail::Live> live;

    kernel::FellerClock clk;
    if (P.rate_kind == RateKind::state_dependent) {
        clk.r = P.r;
        clk.gamma = P.gamma;
        clk.rate = P.tau;
        const double tb = P.tau_bar, pp = P.p;
        clk.sup_rate = [tb, pp](double x) { return tb * (1.0 + std::pow(x, pp)); };
        clk.window = opt.step;
    }
    auto clock_for = [&](double t, RngStream& crng) {
        return P.rate_kind == RateKind::constant && P.tau_const > 0.0 ? t + crng.exponential(P.tau_const)
                                                                        : std::numeric_limits<double>::infinity();
    };
    auto add_cell = [&](std::string label, std::int64_t parent, double birth, double load, std::size_t first_grid) {
        Cell c;
        c.label = std::move(label);
        c.parent = parent;
        c.birth = birth;
        c.load_birth = load;
        c.first_grid = first_grid;
        tree.cells.push_back(std::move(c));
        const std::size_t idx = tree.cells.size() - 1;
        RngStream crng = rng.substream("cell:" + tree.cells[idx].label);
        const double nd = clock_for(birth, crng);
        return detail::Live{idx, birth, load, crng, nd, false};
    };

    auto record = [&](std::size_t k) {
        std::uint64_t infected = 0;
        double m = 0.0;
        for (const auto& l : live) {
            tree.cells[l.idx].loads.push_back(l.x);
            if (l.x > 0.0) ++infected;
            m += l.x;
        }
        tree.n_alive.push_back(live.size() + pool);
        tree.n_infected.push_back(infected);
        tree.mass.push_back(m);
        tree.pool.push_back(pool);
        tree.valid_until = tree.grid[k];
    };

    if (opt.aggregate_uninfected && x0 == 0.0) {
        pool = 1;
        Cell c;
        c.pooled = true;
        c.end = 0.0;
        tree.cells.push_back(c);
    } else {
        live.push_back(add_cell("", -1, 0.0, x0, 0));
    }
    record(0);

    for (std::size_t k = 1; k <= n; ++k) {
        const double t0 = tree.grid[k - 1], t1 = tree.grid[k];
        pool = detail::yule_step(pool, tau0, t1 - t0, pool_rng);
        std::uint64_t pool_births = 0;

        auto divide = [&](std::size_t li, double td) {
            auto& L = live[li];
            const double theta = P.F.sample(L.rng);
            const double a = theta * L.x;
            const double b = L.x - a;
            Cell& c = tree.cells[L.idx];
            c.end = td;
            c.load_end = L.x;
            c.divided = true;
            L.done = true;
            const std::string lab = c.label;
            const auto parent = static_cast<std::int64_t>(L.idx);
            for (int j = 0; j < 2; ++j) {
                const double load = j == 0 ? a : b;
                if (opt.aggregate_uninfected && load == 0.0) {
                    RngStream br = rng.substream("pool-birth:" + lab + (j == 0 ? "1" : "2"));
                    pool_births += detail::yule_step(1, tau0, t1 - td, br);
                    continue;
                }
                live.push_back(add_cell(lab + (j == 0 ? "1" : "2"), parent, td, load, k));
            }
        };

        for (std::size_t i = 0; i < live.size(); ++i) {
            while (!live[i].done && live[i].t < t1) {
                auto& L = live[i];
                switch (P.rate_kind) {
                    case RateKind::constant:
                        if (L.next_div <= t1) {
                            L.x = kernel::feller_exact_step(L.x, P.r, P.gamma, L.next_div - L.t, L.rng);
                            L.t = L.next_div;
                            divide(i, L.t);
                        } else {
                            L.x = kernel::feller_exact_step(L.x, P.r, P.gamma, t1 - L.t, L.rng);
                            L.t = t1;
                        }
                        break;
                    case RateKind::state_dependent: {
                        const auto adv = kernel::advance_feller(clk, L.x, L.t, t1, L.rng, &tree.bound_violations);
                        L.x = adv.x;
                        L.t = adv.t;
                        if (adv.event) divide(i, L.t);
                        break;
                    }
                    case RateKind::threshold:
                        L.x = kernel::feller_exact_step(L.x, P.r, P.gamma, t1 - L.t, L.rng);
                        L.t = t1;
                        if (L.x >= P.threshold) divide(i, t1);
                        break;
                }
            }
        }
        // Drop divided cells; in aggregated mode cells that reached load 0 join the pool.
        std::vector<detail::Live> next;
        next.reserve(live.size());
        for (auto& L : live) {
            if (L.done) continue;
            if (opt.aggregate_uninfected && L.x == 0.0) {
                tree.cells[L.idx].pooled = true;
                tree.cells[L.idx].end = t1;
                ++pool;
                continue;
            }
            next.push_back(std::move(L));
        }
        live = std::move(next);
        pool += pool_births;
        record(k);

        if (tree.cells.size() > opt.max_cells) {
            tree.truncated = true;
            break;
        }
        if (opt.stop_when && opt.stop_when(t1, tree.mass.back(), tree.n_alive.back())) {
            tree.stopped_early = true;
            break;
        }
    }
    return tree;
}

struct ExtinctionReport {
    double frequency;
    double stderr_;
    double target;  // exp(-r x0 / gamma)
    std::size_t unresolved;  // replicates neither extinct nor above the mass cap at the horizon
};

/**
 * Frequency of total-parasite extinction. A replicate stops once the total
 * load exceeds mass_cap, where the remaining extinction probability
 * exp(-r mass_cap / gamma) is negligible.
 */
inline ExtinctionReport total_mass_extinction(const SplitParams& P, double x0, double horizon, std::size_t replicates,
                                              std::uint64_t seed, double mass_cap = 40.0, double step = 0.05,
                                              unsigned threads = 1) {
    SplitOptions opt;
    opt.step = step;
    opt.aggregate_uninfected = true;
    opt.stop_when = [mass_cap](double, double m, std::uint64_t) { return m == 0.0 || m > mass_cap; };
    const auto outcome = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
        RngStream rng(seed, i);
        const CellTree t = simulate_splitting(P, x0, horizon, rng, opt);
        const double m = t.mass.back();
        return m == 0.0 ? 1.0 : (m > mass_cap ? 0.0 : -1.0);
    });
    std::size_t ext = 0, unresolved = 0;
    for (double o : outcome) {
        if (o == 1.0) ++ext;
        if (o < 0.0) ++unresolved;
    }
    const double f = static_cast<double>(ext) / static_cast<double>(replicates);
    return {f, kernel::binomial_stderr(f, replicates), std::exp(-P.r * x0 / P.gamma), unresolved};
}

struct IdentityCheck {
    double lhs, lhs_stderr;
    double rhs, rhs_stderr;
    double z;  // |lhs - rhs| / combined stderr
    bool pass;
};

/**
 * e^{-tau t} E sum_{i in V_t} f(X^i_t) against E f(Y_t), where Y is the
 * Feller diffusion with catastrophes at rate rate_factor * tau and fraction
 * law F. The identity holds for rate_factor = 2.
 */
inline IdentityCheck auxiliary_identity_check(const SplitParams& P, const std::function<double(double)>& f, double x0,
                                              double t, std::size_t replicates, std::uint64_t seed,
                                              double rate_factor = 2.0, double z_pass = 3.0, unsigned threads = 1) {
    if (P.rate_kind != RateKind::constant) throw std::invalid_argument("auxiliary_identity_check: needs constant tau");
    SplitOptions opt;
    opt.step = t;
    opt.aggregate_uninfected = true;
    const double f0 = f(0.0);
    const double norm = std::exp(-P.tau_const * t);
    const auto lhs = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
        RngStream rng(seed, i);
        const CellTree tree = simulate_splitting(P, x0, t, rng, opt);
        const std::size_t k = tree.recorded() - 1;
        double s = static_cast<double>(tree.pool[k]) * f0;
        for (double x : tree.loads_at(k)) s += f(x);
        return norm * s;
    });
    const auto env = catastrophe::CatastropheEnv::constant_rate(rate_factor * P.tau_const, P.F);
    const auto rhs = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
        RngStream rng(seed ^ 0x9E3779B97F4A7C15ull, i);
        if (x0 == 0.0) return f0;
        const auto run = catastrophe::simulate_catastrophe_diffusion(P.r, P.gamma, env, x0, t, t, rng);
        return f(run.path.final_value());
    });
    const auto a = kernel::summarize(lhs), b = kernel::summarize(rhs);
    const double se = std::hypot(a.stderr_mean(), b.stderr_mean());
    const double z = se > 0.0 ? std::fabs(a.mean() - b.mean()) / se : (a.mean() == b.mean() ? 0.0 : INFINITY);
    return {a.mean(), a.stderr_mean(), b.mean(), b.stderr_mean(), z, z <= z_pass};
}

enum class Recovery { recovers, proliferation_possible, inconclusive };

inline const char* to_string(Recovery r) {
    switch (r) {
        case Recovery::recovers: return "recovers-a.s.";
        case Recovery::proliferation_possible: return "proliferation-possible";
        case Recovery::inconclusive: return "inconclusive";
    }
    return "?";
}

struct RecoveryReport {
    Recovery verdict;
    double threshold;         // 2 tau E log(1/F)
    double kappa_bound;       // growth exponents kappa < r - threshold (proliferation case)
    double survival_prob;     // 1 - exp(-r x0 / gamma)
};

inline RecoveryReport recovery_classify(const SplitParams& P, double x0) {
    if (P.rate_kind != RateKind::constant) throw std::invalid_argument("recovery_classify: needs constant tau");
    const double thr = -2.0 * P.tau_const * P.F.mean_log();
    RecoveryReport rep{};
    rep.threshold = thr;
    if (P.r <= thr) {
        rep.verdict = Recovery::recovers;
        rep.kappa_bound = 0.0;
        rep.survival_prob = 0.0;
    } else {
        rep.verdict = Recovery::proliferation_possible;
        rep.kappa_bound = P.r - thr;
        rep.survival_prob = 1.0 - std::exp(-P.r * x0 / P.gamma);
    }
    return rep;
}

/// Fraction of infected cells N*_t / N_t per replicate.
inline std::vector<double> infected_fraction(const SplitParams& P, double x0, double t, std::size_t replicates,
                                             std::uint64_t seed, double step = 0.05, unsigned threads = 1) {
    SplitOptions opt;
    opt.step = step;
    opt.aggregate_uninfected = true;
    return kernel::run_replicates(replicates, threads, [&](std::size_t i) {
        RngStream rng(seed, i);
        const CellTree tree = simulate_splitting(P, x0, t, rng, opt);
        const std::size_t k = tree.recorded() - 1;
        return static_cast<double>(tree.n_infected[k]) / static_cast<double>(tree.n_alive[k]);
    });
}

/**
 * Sufficient recovery condition for monotone rates:
 * r <= tau_* E log(1 / min(F, 1 - F)) with tau_* the infimum of tau (over
 * `grid` and the limit at infinity).
 */
inline Recovery monotone_rate_recovery(const SplitParams& P, const std::vector<double>& grid = {}) {
    double tau_star = std::numeric_limits<double>::infinity();
    if (P.rate_kind == RateKind::constant) {
        tau_star = P.tau_const;
    } else if (P.rate_kind == RateKind::threshold) {
        tau_star = 0.0;
    } else {
        std::vector<double> g = grid;
        if (g.empty())
            for (int k = -8; k <= 12; ++k) g.push_back(std::pow(2.0, k));
        g.push_back(0.0);
        for (double x : g) tau_star = std::min(tau_star, P.tau(x));
    }
    double e_log_min;
    if (P.F.kind == FractionLaw::Kind::beta) {
        // E log(1/min(F, 1-F)) by midpoint quadrature of the symmetric Beta density.
        const int m = 20000;
        double s = 0.0;
        for (int i = 0; i < m; ++i) {
            const double u = (i + 0.5) / m;
            const double dens = std::pow(u, P.F.a - 1.0) * std::pow(1.0 - u, P.F.b - 1.0) /
                                boost::math::beta(P.F.a, P.F.b);
            s += -std::log(std::min(u, 1.0 - u)) * dens / m;
        }
        e_log_min = s;
    } else {
        e_log_min = 0.0;
        for (std::size_t j = 0; j < P.F.theta.size(); ++j)
            e_log_min += -P.F.prob[j] * std::log(std::min(P.F.theta[j], 1.0 - P.F.theta[j]));
    }
    return P.r <= tau_star * e_log_min ? Recovery::recovers : Recovery::inconclusive;
}

}  // namespace popdyn::splitting
