#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "kernel/parallel.hpp"
#include "kernel/rng.hpp"
#include "kernel/sde.hpp"
#include "kernel/stats.hpp"

namespace popdyn::gwtree {

using kernel::RngStream;

/// Offspring law (p_0, p_1, ...) with finite support.
struct OffspringLaw {
    std::vector<double> p;

    explicit OffspringLaw(std::vector<double> probs = {0.0, 0.0, 1.0}) : p(std::move(probs)) { validate(); }

    void validate() const {
        if (p.empty()) throw std::invalid_argument("OffspringLaw: empty probability vector");
        double s = 0.0;
        for (double q : p) {
            if (!(q >= 0.0)) throw std::invalid_argument("OffspringLaw: negative probability");
            s += q;
        }
        if (std::fabs(s - 1.0) > 1e-12) throw std::invalid_argument("OffspringLaw: probabilities must sum to 1");
    }
    double mean() const {
        double m = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) m += static_cast<double>(k) * p[k];
        return m;
    }
    double second_moment() const {
        double m = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) m += static_cast<double>(k * k) * p[k];
        return m;
    }
    std::size_t sample(RngStream& rng) const { return rng.discrete(p); }

    /// Size-biased weights k p_k / m.
    std::vector<double> size_biased() const {
        const double m = mean();
        if (!(m > 0.0)) throw std::domain_error("OffspringLaw: size-biasing needs a positive mean");
        std::vector<double> w(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) w[k] = static_cast<double>(k) * p[k] / m;
        return w;
    }
    std::size_t sample_size_biased(RngStream& rng) const { return rng.discrete(size_biased()); }
};

struct Node {
    std::int64_t parent = -1;
    std::uint32_t rank = 0;  // i_q in the label (i_1, ..., i_q); 0 for the root
    std::uint32_t depth = 0;
    std::uint64_t key = 0;  // replay key derived from the label
    double birth = 0.0;     // alpha(i)
    double death = 0.0;     // beta(i) = alpha(i) + l_i
    /// A(i), or -1 when the node was not expanded (alive at the horizon or cut by max_nodes).
    std::int32_t offspring = -1;
    std::size_t first_child = 0;
};

struct GWTree {
    double tau = 1.0;
    double horizon = 0.0;
    std::vector<Node> nodes;  // parents precede children; siblings are contiguous
    bool truncated = false;
    /// Time up to which the tree is complete (horizon unless truncated).
    double valid_until = 0.0;

    std::size_t alive_count(double t) const {
        std::size_t n = 0;
        for (const auto& v : nodes)
            if (v.birth <= t && t < v.death) ++n;
        return n;
    }
    std::vector<std::uint32_t> label(std::size_t i) const {
        std::vector<std::uint32_t> out;
        for (std::int64_t j = static_cast<std::int64_t>(i); nodes[static_cast<std::size_t>(j)].parent >= 0;
             j = nodes[static_cast<std::size_t>(j)].parent)
            out.push_back(nodes[static_cast<std::size_t>(j)].rank);
        std::reverse(out.begin(), out.end());
        return out;
    }
    /// "0" for the root, otherwise ranks joined by '.'.
    std::string label_string(std::size_t i) const {
        const auto l = label(i);
        if (l.empty()) return "0";
        std::string s;
        for (std::size_t k = 0; k < l.size(); ++k) s += (k ? "." : "") + std::to_string(l[k]);
        return s;
    }
};

namespace detail {

inline std::uint64_t child_key(std::uint64_t parent, std::uint32_t rank) {
    return kernel::splitmix64(parent ^ kernel::splitmix64(0xC2B2AE3D27D4EB4Full + rank));
}

}  // namespace detail

/**
 * Continuous-time Galton-Watson genealogy from one ancestor. Nodes are expanded
 * in order of death time, so a tree cut by max_nodes is still exact up to
 * valid_until. Each node draws its lifetime and offspring count from the
 * substream keyed by its label, which makes the tree independent of max_nodes
 * on [0, valid_until].
 */
inline GWTree simulate_gw_genealogy(double tau, const OffspringLaw& p, double horizon, std::size_t max_nodes,
                                    const RngStream& rng, bool require_supercritical = true) {
    if (!(tau > 0.0)) throw std::invalid_argument("simulate_gw_genealogy: tau must be positive");
    if (!(horizon >= 0.0)) throw std::invalid_argument("simulate_gw_genealogy: horizon must be nonnegative");
    if (max_nodes < 1) throw std::invalid_argument("simulate_gw_genealogy: max_nodes must be at least 1");
    if (require_supercritical && !(p.mean() > 1.0))
        throw std::domain_error("simulate_gw_genealogy: offspring mean must exceed 1");
    GWTree tree;
    tree.tau = tau;
    tree.horizon = horizon;
    tree.valid_until = horizon;
    auto lifetime = [&](std::uint64_t key) {
        RngStream r = rng.substream(key);
        return r.exponential(tau);
    };
    Node root;
    root.key = kernel::splitmix64(0x243F6A8885A308D3ull);
    root.death = lifetime(root.key);
    tree.nodes.push_back(root);

    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    heap.push({root.death, 0});
    while (!heap.empty()) {
        const auto [death, idx] = heap.top();
        if (death > horizon) break;
        heap.pop();
        RngStream r = rng.substream(tree.nodes[idx].key ^ 0x5bd1e995ull);
        const std::size_t a = p.sample(r);
        if (tree.nodes.size() + a > max_nodes) {
            tree.truncated = true;
            tree.valid_until = death;
            break;
        }
        tree.nodes[idx].offspring = static_cast<std::int32_t>(a);
        tree.nodes[idx].first_child = tree.nodes.size();
        for (std::size_t k = 1; k <= a; ++k) {
            Node c;
            c.parent = static_cast<std::int64_t>(idx);
            c.rank = static_cast<std::uint32_t>(k);
            c.depth = tree.nodes[idx].depth + 1;
            c.key = detail::child_key(tree.nodes[idx].key, c.rank);
            c.birth = death;
            c.death = death + lifetime(c.key);
            tree.nodes.push_back(c);
            heap.push({c.death, tree.nodes.size() - 1});
        }
    }
    return tree;
}

/**
 * Scalar trait dynamics along a GW tree. `step(x, h, rng)` samples the trait
 * after a time h; P^(k) is `branch(x, k, rng)`, whose output is uniformly
 * permuted before use so every coordinate has the same marginal.
 */
struct BranchingMarkovSpec {
    double tau = 1.0;
    OffspringLaw p;
    std::function<double(double, double, RngStream&)> step = [](double x, double, RngStream&) { return x; };
    std::function<std::vector<double>(double, std::size_t, RngStream&)> branch =
        [](double x, std::size_t k, RngStream&) { return std::vector<double>(k, x); };
    /// Largest time the stepper may cover in one call (infinity for exact transitions).
    double max_step = std::numeric_limits<double>::infinity();
    std::function<bool(double)> in_domain = [](double x) { return std::isfinite(x); };
    std::string generator = "L f = 0";
};

/**
 * Path functional evaluated through a small accumulator that children inherit
 * from their parent. `segment` sees each continuous piece of the path on the
 * evaluation grid and each jump as a zero-length piece.
 */
struct PathFunctional {
    std::string id;
    std::size_t dim = 0;
    std::function<void(std::vector<double>&, double x0)> init = [](std::vector<double>&, double) {};
    std::function<void(std::vector<double>&, double t0, double x0, double t1, double x1)> segment =
        [](std::vector<double>&, double, double, double, double) {};
    std::function<double(const std::vector<double>&, double t, double x)> value;
};

inline PathFunctional constant_one() {
    PathFunctional f;
    f.id = "one";
    f.value = [](const std::vector<double>&, double, double) { return 1.0; };
    return f;
}

inline PathFunctional endpoint(std::string id, std::function<double(double)> g) {
    PathFunctional f;
    f.id = std::move(id);
    f.value = [g = std::move(g)](const std::vector<double>&, double, double x) { return g(x); };
    return f;
}

/// (1/t) int_0^t g(X_s) ds by the trapezoid rule on the evaluation grid.
inline PathFunctional time_average(std::string id, std::function<double(double)> g) {
    PathFunctional f;
    f.id = std::move(id);
    f.dim = 1;
    f.segment = [g](std::vector<double>& a, double t0, double x0, double t1, double x1) {
        a[0] += 0.5 * (t1 - t0) * (g(x0) + g(x1));
    };
    f.value = [](const std::vector<double>& a, double t, double) { return t > 0.0 ? a[0] / t : 0.0; };
    return f;
}

/// 1{sup_{s<=t} X_s <= level}, the sup taken over grid points and jump endpoints.
inline PathFunctional stayed_below(std::string id, double level) {
    PathFunctional f;
    f.id = std::move(id);
    f.dim = 1;
    f.init = [](std::vector<double>& a, double x0) { a[0] = x0; };
    f.segment = [](std::vector<double>& a, double, double, double, double x1) { a[0] = std::max(a[0], x1); };
    f.value = [level](const std::vector<double>& a, double, double) { return a[0] <= level ? 1.0 : 0.0; };
    return f;
}

/// 1{X_s > 0 for every recorded s <= t}.
inline PathFunctional stayed_positive(std::string id = "stayed_positive") {
    PathFunctional f;
    f.id = std::move(id);
    f.dim = 1;
    f.init = [](std::vector<double>& a, double x0) { a[0] = x0; };
    f.segment = [](std::vector<double>& a, double, double, double, double x1) { a[0] = std::min(a[0], x1); };
    f.value = [](const std::vector<double>& a, double, double) { return a[0] > 0.0 ? 1.0 : 0.0; };
    return f;
}

namespace detail {

/// Moves (t, x) to t_end on the grid k * dt, feeding every piece to the accumulators.
inline void evolve(const BranchingMarkovSpec& spec, double& x, double t, double t_end, double dt,
                   const std::vector<PathFunctional>& fs, std::vector<std::vector<double>>& acc, RngStream& rng,
                   bool& error) {
    const bool need_grid = !fs.empty();
    while (t < t_end && !error) {
        double next = t_end;
        if (need_grid) next = std::min(next, (std::floor(t / dt + 1e-9) + 1.0) * dt);
        if (next - t > spec.max_step) next = t + spec.max_step;
        const double x1 = spec.step(x, next - t, rng);
        if (!spec.in_domain(x1)) {
            error = true;
            return;
        }
        for (std::size_t j = 0; j < fs.size(); ++j) fs[j].segment(acc[j], t, x, next, x1);
        x = x1;
        t = next;
    }
}

inline std::vector<double> permuted_branch(const BranchingMarkovSpec& spec, double x, std::size_t k, RngStream& rng) {
    auto v = spec.branch(x, k, rng);
    if (v.size() != k) throw std::logic_error("BranchingMarkovSpec: branch returned the wrong number of traits");
    for (std::size_t i = k; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    return v;
}

}  // namespace detail

struct BranchingRun {
    GWTree tree;
    std::vector<double> x_birth;
    std::vector<double> x_end;  // trait at min(death, horizon)
    std::vector<char> error;    // stepper left the domain on this node or an ancestor
    std::vector<double> observe_times;
    /// Traits of the individuals alive at each observation time (error-free nodes only).
    std::vector<std::vector<double>> observed;
    /// Functional values summed over individuals alive at the horizon.
    std::vector<double> functional_sums;
    std::size_t errors = 0;
};

struct BranchingOptions {
    std::size_t max_nodes = 500000;
    double dt = 0.01;  // evaluation grid for path functionals
    std::vector<double> observe_times;
    std::vector<PathFunctional> functionals;
};

/**
 * Branching Markov process along a GW tree. Nodes are processed parent first;
 * each node moves its trait with its own label-keyed substream, and at its death
 * the offspring traits are drawn from the permuted P^(A).
 */
inline BranchingRun simulate_branching_markov(const BranchingMarkovSpec& spec,
                                              const std::function<double(RngStream&)>& mu, double horizon,
                                              const RngStream& rng, const BranchingOptions& opt = {}) {
    BranchingRun run;
    run.tree = simulate_gw_genealogy(spec.tau, spec.p, horizon, opt.max_nodes, rng.substream("genealogy"), false);
    if (run.tree.truncated) throw std::runtime_error("simulate_branching_markov: tree exceeded max_nodes");
    const auto& nodes = run.tree.nodes;
    const std::size_t n = nodes.size();
    run.x_birth.assign(n, 0.0);
    run.x_end.assign(n, 0.0);
    run.error.assign(n, 0);
    run.observe_times = opt.observe_times;
    run.observed.assign(opt.observe_times.size(), {});
    run.functional_sums.assign(opt.functionals.size(), 0.0);
    const RngStream traits = rng.substream("traits");
    {
        RngStream r0 = traits.substream("initial");
        run.x_birth[0] = mu(r0);
    }
    const auto& fs = opt.functionals;
    std::vector<std::vector<std::vector<double>>> acc(n);
    if (!fs.empty()) {
        acc[0].resize(fs.size());
        for (std::size_t j = 0; j < fs.size(); ++j) {
            acc[0][j].assign(fs[j].dim, 0.0);
            fs[j].init(acc[0][j], run.x_birth[0]);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Node& v = nodes[i];
        RngStream r = traits.substream(v.key);
        bool err = run.error[i] != 0;
        double x = run.x_birth[i];
        double t = v.birth;
        const double t_end = std::min(v.death, horizon);
        for (std::size_t k = 0; k < opt.observe_times.size(); ++k) {
            const double s = opt.observe_times[k];
            if (s < v.birth || s >= v.death || s > horizon) continue;
            if (!err && s > t) {
                detail::evolve(spec, x, t, s, opt.dt, fs, acc[i], r, err);
                t = s;
            }
            if (!err) run.observed[k].push_back(x);
        }
        if (!err) detail::evolve(spec, x, t, t_end, opt.dt, fs, acc[i], r, err);
        run.x_end[i] = x;
        run.error[i] = err;
        if (err) ++run.errors;
        if (v.death > horizon) {
            if (!err)
                for (std::size_t j = 0; j < fs.size(); ++j) run.functional_sums[j] += fs[j].value(acc[i][j], horizon, x);
        } else if (v.offspring > 0) {
            const auto k = static_cast<std::size_t>(v.offspring);
            const auto kids = err ? std::vector<double>(k, x) : detail::permuted_branch(spec, x, k, r);
            for (std::size_t c = 0; c < k; ++c) {
                const std::size_t ci = v.first_child + c;
                run.x_birth[ci] = kids[c];
                run.error[ci] = err;
                if (!fs.empty()) {
                    acc[ci] = acc[i];
                    for (std::size_t j = 0; j < fs.size(); ++j) fs[j].segment(acc[ci][j], v.death, x, v.death, kids[c]);
                }
            }
        }
        std::vector<std::vector<double>>().swap(acc[i]);
    }
    return run;
}

struct AuxOptions {
    /// Jump rate of Y; NaN means the correct tau * m.
    double jump_rate = std::numeric_limits<double>::quiet_NaN();
    double dt = 0.01;
};

struct AuxRun {
    double x;  // Y_t
    std::vector<double> values;  // one per functional
    std::size_t jumps = 0;
    bool error = false;
};

/**
 * Auxiliary process Y: the trait dynamics plus jumps at rate tau m whose law is
 * Q(x, .) = sum_k (k p_k / m) P^(k)(x, . x X^{k-1}), sampled as a size-biased k
 * followed by one coordinate of the permuted P^(k).
 */
inline AuxRun auxiliary_y(const BranchingMarkovSpec& spec, double x0, double t, RngStream& rng,
                          const std::vector<PathFunctional>& fs = {}, const AuxOptions& opt = {}) {
    const double m = spec.p.mean();
    const double rate = std::isnan(opt.jump_rate) ? spec.tau * m : opt.jump_rate;
    const std::vector<double> w = m > 0.0 ? spec.p.size_biased() : std::vector<double>{};
    std::vector<std::vector<double>> acc(fs.size());
    for (std::size_t j = 0; j < fs.size(); ++j) {
        acc[j].assign(fs[j].dim, 0.0);
        fs[j].init(acc[j], x0);
    }
    AuxRun out{x0, {}, 0, false};
    double s = 0.0, x = x0;
    while (s < t && !out.error) {
        const double next = rate > 0.0 && !w.empty() ? s + rng.exponential(rate) : std::numeric_limits<double>::infinity();
        const double stop = std::min(next, t);
        detail::evolve(spec, x, s, stop, opt.dt, fs, acc, rng, out.error);
        s = stop;
        if (out.error || next > t) break;
        const std::size_t k = rng.discrete(w);
        const double y = detail::permuted_branch(spec, x, k, rng)[0];
        for (std::size_t j = 0; j < fs.size(); ++j) fs[j].segment(acc[j], s, x, s, y);
        x = y;
        ++out.jumps;
    }
    out.x = x;
    out.values.resize(fs.size());
    for (std::size_t j = 0; j < fs.size(); ++j) out.values[j] = fs[j].value(acc[j], t, x);
    return out;
}

struct ManyToOneRow {
    std::string functional_id;
    double lhs, lhs_stderr;
    double rhs, rhs_stderr;
    double z;
    bool pass;
};

struct ManyToOneOptions {
    double dt = 0.01;
    double z_pass = 3.0;
    /// Forwarded to auxiliary_y; set to tau to build the falsification run.
    double jump_rate = std::numeric_limits<double>::quiet_NaN();
    std::size_t max_nodes = 500000;
    unsigned threads = 1;
};

/**
 * E sum_{i in V_t} f(ancestral path of i) against e^{tau (m-1) t} E f(Y on [0, t]),
 * one row per functional. Replicates start from the fixed trait x0.
 */
inline std::vector<ManyToOneRow> many_to_one_check(const BranchingMarkovSpec& spec,
                                                   const std::vector<PathFunctional>& fs, double x0, double t,
                                                   std::size_t replicates, std::uint64_t seed,
                                                   const ManyToOneOptions& opt = {}) {
    BranchingOptions bo;
    bo.max_nodes = opt.max_nodes;
    bo.dt = opt.dt;
    bo.functionals = fs;
    const auto lhs = kernel::run_replicates(replicates, opt.threads, [&](std::size_t i) {
        const RngStream rng(seed, i);
        auto run = simulate_branching_markov(spec, [x0](RngStream&) { return x0; }, t, rng, bo);
        if (run.errors) throw std::runtime_error("many_to_one_check: stepper left its domain");
        return run.functional_sums;
    });
    const double growth = std::exp(spec.tau * (spec.p.mean() - 1.0) * t);
    AuxOptions ao;
    ao.dt = opt.dt;
    ao.jump_rate = opt.jump_rate;
    const auto rhs = kernel::run_replicates(replicates, opt.threads, [&](std::size_t i) {
        RngStream rng(seed ^ 0xA5A5A5A5DEADBEEFull, i);
        auto y = auxiliary_y(spec, x0, t, rng, fs, ao);
        if (y.error) throw std::runtime_error("many_to_one_check: stepper left its domain");
        for (double& v : y.values) v *= growth;
        return y.values;
    });
    std::vector<ManyToOneRow> rows;
    for (std::size_t j = 0; j < fs.size(); ++j) {
        kernel::Accumulator a, b;
        for (const auto& v : lhs) a.add(v[j]);
        for (const auto& v : rhs) b.add(v[j]);
        const double se = std::hypot(a.stderr_mean(), b.stderr_mean());
        const double d = std::fabs(a.mean() - b.mean());
        const double z = se > 0.0 ? d / se : (d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        rows.push_back({fs[j].id, a.mean(), a.stderr_mean(), b.mean(), b.stderr_mean(), z, z <= opt.z_pass});
    }
    return rows;
}

/**
 * Splitting Feller dynamics on a GW tree: dX = rX dt + sqrt(2 gamma X) dB between
 * branchings, P^(1)(x) = x, P^(2)(x) = (theta x, (1 - theta) x) with theta from
 * `theta`, and a flat Dirichlet split for k >= 3.
 */
inline BranchingMarkovSpec splitting_feller(double r, double gamma, double tau, OffspringLaw p,
                                            std::function<double(RngStream&)> theta) {
    BranchingMarkovSpec s;
    s.tau = tau;
    s.p = std::move(p);
    s.step = [r, gamma](double x, double h, RngStream& rng) { return kernel::feller_exact_step(x, r, gamma, h, rng); };
    s.branch = [theta = std::move(theta)](double x, std::size_t k, RngStream& rng) {
        if (k == 1) return std::vector<double>{x};
        if (k == 2) {
            const double th = theta(rng);
            return std::vector<double>{th * x, x - th * x};
        }
        std::vector<double> g(k);
        double sum = 0.0;
        for (double& v : g) sum += (v = rng.exponential(1.0));
        for (double& v : g) v = x * v / sum;
        return g;
    };
    s.in_domain = [](double x) { return std::isfinite(x) && x >= 0.0; };
    s.generator = "L f = r x f' + gamma x f''";
    return s;
}

/**
 * Ergodic splitting diffusion on the real line with binary division at rate tau:
 * dX = drift dt + sigma dB (exact Gaussian transition) and P^(2)(x) = (theta x, (1 - theta) x),
 * theta uniform on {1/2 - spread, 1/2 + spread}. The constant drift satisfies
 * drift < tau' |x| for large |x|, so Y is geometrically ergodic.
 */
inline BranchingMarkovSpec ergodic_splitting(double drift = 1.0, double sigma = 0.5, double tau = 1.0,
                                             double spread = 0.2) {
    if (!(spread >= 0.0 && spread < 0.5)) throw std::invalid_argument("ergodic_splitting: spread must lie in [0, 1/2)");
    BranchingMarkovSpec s;
    s.tau = tau;
    s.p = OffspringLaw({0.0, 0.0, 1.0});
    s.step = [drift, sigma](double x, double h, RngStream& rng) {
        return x + drift * h + sigma * std::sqrt(h) * rng.normal();
    };
    s.branch = [spread](double x, std::size_t k, RngStream& rng) {
        if (k != 2) throw std::logic_error("ergodic_splitting: binary division only");
        const double th = 0.5 + (rng.uniform() < 0.5 ? -spread : spread);
        return std::vector<double>{th * x, x - th * x};
    };
    s.generator = "L f = drift f' + sigma^2/2 f''";
    return s;
}

struct LlnPoint {
    double t;
    double mean;      // average over surviving replicates of (1/N_t) sum f(X^i_t)
    double spread;    // cross-replicate standard deviation
    double extinct_fraction;
    std::size_t survivors;
};

struct LlnReport {
    std::vector<LlnPoint> points;
    double pi_f;  // long-run time average of f along Y
    /// Per surviving replicate, population histogram at the final time (bin proportions).
    std::vector<std::vector<double>> final_histograms;
};

/// Long single run of Y from x0 of length `length`, time-averaged after a burn-in fraction.
inline double ergodic_average(const BranchingMarkovSpec& spec, const std::function<double(double)>& f, double x0,
                              double length, double burn_in_fraction, double dt, RngStream& rng) {
    auto fs = std::vector<PathFunctional>{};
    const double burn = burn_in_fraction * length;
    auto y = auxiliary_y(spec, x0, burn, rng, fs, {std::numeric_limits<double>::quiet_NaN(), dt});
    fs.push_back(time_average("pi", f));
    const auto z = auxiliary_y(spec, y.x, length - burn, rng, fs, {std::numeric_limits<double>::quiet_NaN(), dt});
    return z.values[0];
}

/// Index of the bin of x for edges e_0 < ... < e_B (values outside fall into the end bins).
inline std::size_t bin_of(double x, const std::vector<double>& edges) {
    const auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, x);
    return static_cast<std::size_t>(it - edges.begin()) - 1;
}

/**
 * Empirical law of large numbers: for each time in `times`, the population
 * average of f conditioned on survival (extinct replicates are discarded and
 * counted). pi(f) comes from one Y run of length 100 / tau with 20% burn-in.
 */
inline LlnReport lln_empirical(const BranchingMarkovSpec& spec, const std::function<double(double)>& f, double x0,
                               const std::vector<double>& times, std::size_t replicates, std::uint64_t seed,
                               const std::vector<double>& hist_edges = {}, unsigned threads = 1) {
    if (times.empty()) throw std::invalid_argument("lln_empirical: empty time grid");
    const double horizon = *std::max_element(times.begin(), times.end());
    BranchingOptions bo;
    bo.observe_times = times;
    struct Rep {
        std::vector<double> avg;  // NaN when extinct
        std::vector<double> hist;
    };
    const auto reps = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
        const RngStream rng(seed, i);
        const auto run = simulate_branching_markov(spec, [x0](RngStream&) { return x0; }, horizon, rng, bo);
        Rep r;
        for (const auto& xs : run.observed) {
            if (xs.empty()) {
                r.avg.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            double s = 0.0;
            for (double x : xs) s += f(x);
            r.avg.push_back(s / static_cast<double>(xs.size()));
        }
        const auto last = static_cast<std::size_t>(std::max_element(times.begin(), times.end()) - times.begin());
        if (hist_edges.size() >= 2 && !run.observed[last].empty()) {
            r.hist.assign(hist_edges.size() - 1, 0.0);
            for (double x : run.observed[last]) r.hist[bin_of(x, hist_edges)] += 1.0;
            for (double& h : r.hist) h /= static_cast<double>(run.observed[last].size());
        }
        return r;
    });
    LlnReport out;
    for (std::size_t k = 0; k < times.size(); ++k) {
        kernel::Accumulator a;
        for (const auto& r : reps)
            if (!std::isnan(r.avg[k])) a.add(r.avg[k]);
        const double ext = 1.0 - static_cast<double>(a.count()) / static_cast<double>(replicates);
        out.points.push_back({times[k], a.mean(), a.count() > 1 ? std::sqrt(a.variance()) : 0.0, ext, a.count()});
    }
    for (const auto& r : reps)
        if (!r.hist.empty()) out.final_histograms.push_back(r.hist);
    RngStream yr(seed ^ 0x3C6EF372FE94F82Bull, 0);
    out.pi_f = ergodic_average(spec, f, x0, 100.0 / spec.tau, 0.2, 0.01, yr);
    return out;
}

}  // namespace popdyn::gwtree
