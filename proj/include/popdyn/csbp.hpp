#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/zeta.hpp>
#include <boost/math/tools/toms748_solve.hpp>
#include <boost/numeric/odeint.hpp>

#include "kernel/constants.hpp"
#include "kernel/parallel.hpp"
#include "kernel/rng.hpp"
#include "kernel/sde.hpp"
#include "kernel/stats.hpp"

namespace popdyn::csbp {

using kernel::RngStream;

enum class JumpKind {
    none,
    atoms,
    stable,                 // c h^{-1-alpha} dh, alpha in (1,2)
    stable_nonconservative  // c h^{-1-alpha} dh, alpha in (0,1); blow-up predicate only
};

struct Atom {
    double h;
    double weight;
};

namespace detail {

/// e^{-x} - 1 + x without cancellation for small x.
inline double expm1_plus(double x) {
    if (std::fabs(x) < 1e-2) {
        double term = x * x / 2.0, sum = term;
        for (int k = 3; k < 12; ++k) {
            term *= -x / k;
            sum += term;
        }
        return sum;
    }
    return std::expm1(-x) + x;
}

}  // namespace detail

/**
 * Characteristic triplet (r, gamma, mu) of a CSBP,
 * psi(l) = -r l + gamma l^2 + int (e^{-l h} - 1 + l h) mu(dh).
 * The non-conservative stable class uses the compensator l h 1{h <= 1}.
 */
struct BranchingMechanism {
    double r = 0.0;
    double gamma = 0.0;
    JumpKind kind = JumpKind::none;
    std::vector<Atom> atoms;
    double c = 0.0;
    double alpha = 1.5;

    static BranchingMechanism feller(double r, double gamma) {
        BranchingMechanism m;
        m.r = r;
        m.gamma = gamma;
        m.validate();
        return m;
    }
    static BranchingMechanism with_atoms(double r, double gamma, std::vector<Atom> atoms) {
        BranchingMechanism m;
        m.r = r;
        m.gamma = gamma;
        m.kind = JumpKind::atoms;
        m.atoms = std::move(atoms);
        m.validate();
        return m;
    }
    static BranchingMechanism stable(double r, double gamma, double c, double alpha) {
        BranchingMechanism m;
        m.r = r;
        m.gamma = gamma;
        m.kind = JumpKind::stable;
        m.c = c;
        m.alpha = alpha;
        m.validate();
        return m;
    }
    static BranchingMechanism nonconservative_stable(double r, double gamma, double c, double alpha) {
        BranchingMechanism m;
        m.r = r;
        m.gamma = gamma;
        m.kind = JumpKind::stable_nonconservative;
        m.c = c;
        m.alpha = alpha;
        m.validate();
        return m;
    }

    bool conservative() const { return kind != JumpKind::stable_nonconservative; }

    bool trivial() const {
        if (r != 0.0 || gamma != 0.0) return false;
        if (kind == JumpKind::none) return true;
        if (kind == JumpKind::atoms)
            return std::all_of(atoms.begin(), atoms.end(), [](const Atom& a) { return a.weight == 0.0; });
        return c == 0.0;
    }

    /// int (h ^ h^2) mu(dh); infinite for the non-conservative class.
    double moment_h_h2() const {
        switch (kind) {
            case JumpKind::none: return 0.0;
            case JumpKind::atoms: {
                double s = 0.0;
                for (const auto& a : atoms) s += a.weight * std::min(a.h, a.h * a.h);
                return s;
            }
            case JumpKind::stable: return c / (2.0 - alpha) + c / (alpha - 1.0);
            case JumpKind::stable_nonconservative: return std::numeric_limits<double>::infinity();
        }
        return 0.0;
    }

    double psi(double lambda) const;
    double psi_closed(double lambda) const;
    double psi_prime(double lambda) const;
    /// psi'(0+); -infinity for the non-conservative stable class.
    double psi_prime_zero() const {
        if (kind == JumpKind::stable_nonconservative && c > 0.0) return -std::numeric_limits<double>::infinity();
        return -r;
    }

    void validate() const {
        if (!std::isfinite(r)) throw std::invalid_argument("BranchingMechanism: r must be finite");
        if (!(gamma >= 0.0) || !std::isfinite(gamma))
            throw std::invalid_argument("BranchingMechanism: gamma must be finite and nonnegative");
        if (kind == JumpKind::atoms) {
            for (const auto& a : atoms)
                if (!(a.h > 0.0) || !(a.weight >= 0.0) || !std::isfinite(a.h) || !std::isfinite(a.weight))
                    throw std::invalid_argument("BranchingMechanism: atoms need h > 0 and weight >= 0");
        }
        if (kind == JumpKind::stable && !(alpha > 1.0 && alpha < 2.0))
            throw std::invalid_argument("BranchingMechanism: stable alpha must lie in (1,2)");
        if (kind == JumpKind::stable_nonconservative && !(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("BranchingMechanism: non-conservative stable alpha must lie in (0,1)");
        if ((kind == JumpKind::stable || kind == JumpKind::stable_nonconservative) && !(c >= 0.0))
            throw std::invalid_argument("BranchingMechanism: stable c must be nonnegative");
        // Convexity spot check on a geometric grid.
        double prev_l = 0.0, prev_v = 0.0, prev_slope = -std::numeric_limits<double>::infinity();
        for (int k = -6; k <= 6; ++k) {
            const double l = std::pow(4.0, k);
            const double v = psi_closed(l);
            const double slope = (v - prev_v) / (l - prev_l);
            if (slope < prev_slope - 1e-9 * (1.0 + std::fabs(prev_slope)))
                throw std::invalid_argument("BranchingMechanism: psi is not convex on the check grid");
            prev_l = l;
            prev_v = v;
            prev_slope = slope;
        }
    }
};

namespace detail {

/**
 * int_0^inf (e^{-l h} - 1 + l h) h^{-1-alpha} dh for alpha in (1,2), by
 * adaptive Gauss-Kronrod. The range is split at H = 1/l: on [0, H] the
 * substitution h = v^{1/(2-alpha)} removes the endpoint singularity, and on
 * [H, inf) the polynomial part is integrated in closed form.
 */
inline double stable_integral_quadrature(double lambda, double alpha, double rel_tol) {
    using boost::math::quadrature::gauss_kronrod;
    if (lambda == 0.0) return 0.0;
    const double H = 1.0 / lambda;
    const double q = 1.0 / (2.0 - alpha);
    const double vmax = std::pow(H, 2.0 - alpha);
    double err1 = 0.0, err2 = 0.0;
    const double near = gauss_kronrod<double, 61>::integrate(
        [&](double v) {
            if (v <= 0.0) return lambda * lambda / 2.0 * q;  // limit of the integrand at v -> 0
            const double h = std::pow(v, q);
            return expm1_plus(lambda * h) * std::pow(h, -1.0 - alpha) * q * std::pow(v, q - 1.0);
        },
        0.0, vmax, 15, rel_tol * 1e-2, &err1);
    const double far_exp = gauss_kronrod<double, 61>::integrate(
        [&](double h) { return std::exp(-lambda * h) * std::pow(h, -1.0 - alpha); }, H,
        std::numeric_limits<double>::infinity(), 15, rel_tol * 1e-2, &err2);
    const double far_poly = lambda * std::pow(H, 1.0 - alpha) / (alpha - 1.0) - std::pow(H, -alpha) / alpha;
    const double total = near + far_exp + far_poly;
    const double err = err1 + err2;
    if (!std::isfinite(total) || err > 10.0 * rel_tol * std::fabs(total))
        throw std::runtime_error("psi: stable quadrature did not reach the requested tolerance (lambda = " +
                                 std::to_string(lambda) + ", estimated error " + std::to_string(err) + ")");
    return total;
}

}  // namespace detail

inline double BranchingMechanism::psi_closed(double lambda) const {
    if (lambda < 0.0) throw std::domain_error("psi: lambda must be nonnegative");
    double v = -r * lambda + gamma * lambda * lambda;
    switch (kind) {
        case JumpKind::none: break;
        case JumpKind::atoms:
            for (const auto& a : atoms) v += a.weight * detail::expm1_plus(lambda * a.h);
            break;
        case JumpKind::stable: v += c * boost::math::tgamma(-alpha) * std::pow(lambda, alpha); break;
        case JumpKind::stable_nonconservative:
            v += c * (boost::math::tgamma(-alpha) * std::pow(lambda, alpha) + lambda / (1.0 - alpha));
            break;
    }
    return v;
}

inline double BranchingMechanism::psi(double lambda) const {
    if (lambda < 0.0) throw std::domain_error("psi: lambda must be nonnegative");
    if (kind != JumpKind::stable) return psi_closed(lambda);
    return -r * lambda + gamma * lambda * lambda +
           c * detail::stable_integral_quadrature(lambda, alpha, kernel::defaults().quad_rel_tol);
}

inline double BranchingMechanism::psi_prime(double lambda) const {
    double v = -r + 2.0 * gamma * lambda;
    switch (kind) {
        case JumpKind::none: break;
        case JumpKind::atoms:
            for (const auto& a : atoms) v += a.weight * a.h * -std::expm1(-lambda * a.h);
            break;
        case JumpKind::stable:
            v += c * alpha * boost::math::tgamma(-alpha) * std::pow(lambda, alpha - 1.0);
            break;
        case JumpKind::stable_nonconservative:
            v += c * (alpha * boost::math::tgamma(-alpha) * std::pow(lambda, alpha - 1.0) + 1.0 / (1.0 - alpha));
            break;
    }
    return v;
}

/// Riccati solution of du/dt = r u - gamma u^2, u_0 = lambda.
inline double feller_u(double r, double gamma, double t, double lambda) {
    if (r == 0.0) return lambda / (1.0 + lambda * gamma * t);
    return lambda * std::exp(r * t) / (1.0 + lambda * gamma * std::expm1(r * t) / r);
}

struct LaplaceExponent {
    double t = 0.0;
    double lambda = 0.0;
    double value = 0.0;
    std::size_t steps = 0;
    bool converged_to_root = false;
    /// |int_{u}^{lambda} dv / psi(v) - t| / max(t, 1); NaN when not checked.
    double identity_residual = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline double root_nearby(const BranchingMechanism& m, double u) {
    // Cheap test whether u sits on a zero of psi relative to its slope.
    const double p = m.psi_closed(std::max(u, 0.0));
    return std::fabs(p) <= 1e-10 * std::max(1.0, std::fabs(m.psi_prime(std::max(u, 1e-300))) * std::max(u, 1.0));
}

}  // namespace detail

/**
 * Integrates du/dt = -psi(u), u_0 = lambda with adaptive Dormand-Prince and
 * checks the identity int_{u_t}^{lambda} dv / psi(v) = t when psi has no zero
 * between u_t and lambda.
 */
inline LaplaceExponent laplace_exponent(const BranchingMechanism& m, double t, double lambda,
                                        double tol = kernel::defaults().ode_rel_tol) {
    if (!(t >= 0.0)) throw std::invalid_argument("laplace_exponent: t must be nonnegative");
    if (!(lambda > 0.0)) throw std::invalid_argument("laplace_exponent: lambda must be positive");
    LaplaceExponent out;
    out.t = t;
    out.lambda = lambda;
    out.value = lambda;
    if (t == 0.0) {
        out.identity_residual = 0.0;
        return out;
    }
    // Integrated in w = log u so that the tolerance is relative at every scale.
    namespace odeint = boost::numeric::odeint;
    using State = std::array<double, 1>;
    State w{std::log(lambda)};
    auto rhs = [&](const State& x, State& dx, double) {
        const double u = std::exp(x[0]);
        dx[0] = -m.psi_closed(u) / u;
    };
    auto stepper = odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(tol, tol);
    const double dt0 = std::min(t, 1e-3 / (1.0 + std::fabs(m.psi_prime(lambda))));
    out.steps = odeint::integrate_adaptive(stepper, rhs, w, 0.0, t, dt0);
    out.value = std::exp(w[0]);

    if (detail::root_nearby(m, out.value) && out.value > 0.0) {
        out.converged_to_root = true;
        return out;
    }
    const double lo = std::min(out.value, lambda), hi = std::max(out.value, lambda);
    if (lo <= 0.0 || hi == lo) return out;
    // psi must keep one sign on [lo, hi]; convexity means checking the ends and the minimum suffices.
    const double plo = m.psi_closed(lo), phi = m.psi_closed(hi);
    if (plo == 0.0 || phi == 0.0 || (plo > 0.0) != (phi > 0.0)) return out;
    double err = 0.0;
    const double I = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double v) { return 1.0 / m.psi_closed(v); }, lo, hi, 15, 1e-12, &err);
    const double signed_I = out.value <= lambda ? I : -I;
    out.identity_residual = std::fabs(signed_I - t) / std::max(t, 1.0);
    return out;
}

struct AbsorptionRate {
    double value;  // u_t(infinity)
    bool bounded;
    double lambda_used;
};

/// u_t(infinity) = lim u_t(lambda), escalating lambda by factors of 100 until the change is below tol.
inline AbsorptionRate absorption_rate(const BranchingMechanism& m, double t, double tol = 1e-8,
                                      double lambda_max = 1e16) {
    double lam = 1e2;
    double prev = laplace_exponent(m, t, lam).value;
    while (lam < lambda_max) {
        lam *= 100.0;
        const double cur = laplace_exponent(m, t, lam).value;
        if (std::fabs(cur - prev) <= tol * std::max(std::fabs(cur), 1e-300)) return {cur, true, lam};
        prev = cur;
    }
    return {std::numeric_limits<double>::infinity(), false, lam};
}

struct Classification {
    double eta = 0.0;
    bool eta_found = true;
    std::string diagnostics;
    bool absorption_possible = false;
    bool blowup_possible = false;

    double extinction_prob(double z) const { return std::exp(-z * eta); }
};

namespace detail {

enum class Tail { finite, infinite, undecided };

/// Decides finiteness of sum_k I_k for positive increments I_k by their ratios.
inline Tail judge_increments(const std::vector<double>& inc) {
    if (inc.size() < 6) return Tail::undecided;
    double worst = 0.0;
    for (std::size_t k = inc.size() / 2; k + 1 < inc.size(); ++k) worst = std::max(worst, inc[k + 1] / inc[k]);
    if (worst < 0.9) return Tail::finite;
    if (worst > 0.97) return Tail::infinite;
    return Tail::undecided;
}

}  // namespace detail

/**
 * Largest root eta of psi, absorption (finiteness of int^inf 1/psi) and
 * blow-up (psi'(0+) = -inf and int_0 1/psi finite).
 */
inline Classification classify(const BranchingMechanism& m, double lambda_max = 1e12) {
    if (m.trivial()) throw std::invalid_argument("classify: mechanism is trivial");
    Classification out;
    using boost::math::quadrature::gauss_kronrod;

    if (m.psi_prime_zero() >= 0.0) {
        out.eta = 0.0;
    } else {
        double hi = 1.0;
        while (m.psi_closed(hi) <= 0.0 && hi < lambda_max) hi *= 2.0;
        if (m.psi_closed(hi) <= 0.0) {
            out.eta = std::numeric_limits<double>::infinity();
            out.eta_found = false;
            out.diagnostics = "no positive value of psi below lambda_max = " + std::to_string(lambda_max) +
                              "; psi(lambda_max) = " + std::to_string(m.psi_closed(hi));
        } else {
            double lo = hi / 2.0;
            while (m.psi_closed(lo) >= 0.0 && lo > 1e-300) lo /= 2.0;
            std::uintmax_t iters = 200;
            auto res = boost::math::tools::toms748_solve([&](double l) { return m.psi_closed(l); }, lo, hi,
                                                         boost::math::tools::eps_tolerance<double>(50), iters);
            out.eta = 0.5 * (res.first + res.second);
        }
    }

    // Grey: decade increments of int 1/psi beyond the last root.
    {
        const double v0 = std::isfinite(out.eta) ? std::max(2.0 * out.eta, 1.0) : lambda_max;
        if (m.psi_closed(v0) > 0.0) {
            std::vector<double> inc;
            double a = v0;
            for (int k = 0; k < 24; ++k) {
                const double b = a * 10.0;
                inc.push_back(gauss_kronrod<double, 31>::integrate([&](double v) { return 1.0 / m.psi_closed(v); },
                                                                   a, b, 10, 1e-9));
                a = b;
            }
            out.absorption_possible = detail::judge_increments(inc) == detail::Tail::finite;
        }
    }

    if (std::isinf(m.psi_prime_zero()) && m.psi_prime_zero() < 0.0) {
        const double s0 = std::isfinite(out.eta) && out.eta > 0.0 ? out.eta / 2.0 : 1.0;
        std::vector<double> inc;
        double b = s0;
        for (int k = 0; k < 24; ++k) {
            const double a = b / 10.0;
            inc.push_back(std::fabs(gauss_kronrod<double, 31>::integrate(
                [&](double v) { return 1.0 / m.psi_closed(v); }, a, b, 10, 1e-9)));
            b = a;
        }
        out.blowup_possible = m.psi_closed(s0) < 0.0 && detail::judge_increments(inc) == detail::Tail::finite;
    }
    return out;
}

/**
 * Finite-activity description used by the simulators: jumps of rate `rate`
 * per unit mass with law `sample_jump`, drift r_eff after compensation and
 * diffusion coefficient gamma_eff.
 */
struct Truncation {
    double r_eff = 0.0;
    double gamma_eff = 0.0;
    double rate = 0.0;
    std::function<double(RngStream&)> sample_jump = [](RngStream&) { return 0.0; };
};

/**
 * Stable jumps below eps are removed; their compensated mean
 * c eps^{1-alpha} / (alpha - 1) enters the drift and, with
 * gaussian_small_jumps, their variance c eps^{2-alpha} / (2 - alpha) is
 * carried by the square-root diffusion. Atoms need no truncation.
 */
inline Truncation truncate(const BranchingMechanism& m, double eps, bool gaussian_small_jumps = true) {
    if (!m.conservative()) throw std::invalid_argument("truncate: simulation requires a conservative mechanism");
    Truncation tr;
    tr.r_eff = m.r;
    tr.gamma_eff = m.gamma;
    if (m.kind == JumpKind::atoms) {
        std::vector<double> w;
        double mean = 0.0;
        for (const auto& a : m.atoms) {
            w.push_back(a.weight);
            tr.rate += a.weight;
            mean += a.weight * a.h;
        }
        tr.r_eff -= mean;
        auto atoms = m.atoms;
        tr.sample_jump = [atoms, w](RngStream& rng) { return atoms[rng.discrete(w)].h; };
    } else if (m.kind == JumpKind::stable && m.c > 0.0) {
        if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("truncate: eps must lie in (0,1)");
        const double a = m.alpha;
        tr.rate = m.c * std::pow(eps, -a) / a;
        tr.r_eff -= m.c * std::pow(eps, 1.0 - a) / (a - 1.0);
        if (gaussian_small_jumps) tr.gamma_eff += 0.5 * m.c * std::pow(eps, 2.0 - a) / (2.0 - a);
        tr.sample_jump = [eps, a](RngStream& rng) { return eps * std::pow(rng.uniform_open(), -1.0 / a); };
    }
    return tr;
}

struct SimDiagnostics {
    std::uint64_t bound_violations = 0;
    std::uint64_t jumps = 0;
};

/**
 * dZ = r Z dt + sqrt(2 gamma Z) dB + int int h 1{u <= Z_{s-}} N~(ds, dh, du).
 * Between jumps Z moves by exact Feller transitions; jumps arrive at rate
 * rate * Z_{s-}, found by thinning. Records Z on the grid k * step.
 */
inline kernel::Path simulate_csbp_sde(const BranchingMechanism& m, double z0, double horizon, double step, double eps,
                                      RngStream& rng, SimDiagnostics* diag = nullptr,
                                      bool gaussian_small_jumps = true) {
    if (!(z0 >= 0.0)) throw std::invalid_argument("simulate_csbp_sde: z0 must be nonnegative");
    if (!(step > 0.0)) throw std::invalid_argument("simulate_csbp_sde: step must be positive");
    const Truncation tr = truncate(m, eps, gaussian_small_jumps);
    kernel::FellerClock clk;
    clk.r = tr.r_eff;
    clk.gamma = tr.gamma_eff;
    const double rate = tr.rate;
    clk.rate = [rate](double x) { return rate * x; };
    clk.sup_rate = clk.rate;
    clk.window = step;
    const double explode_at = kernel::defaults().explode_threshold;

    kernel::Path p;
    p.t.push_back(0.0);
    p.x.push_back(z0);
    if (z0 == 0.0) {
        p.absorbed = true;
        p.absorption_time = 0.0;
        return p;
    }
    const auto n = static_cast<std::size_t>(std::ceil(horizon / step - 1e-9));
    double x = z0, t = 0.0;
    std::uint64_t viol = 0, jumps = 0;
    for (std::size_t k = 1; k <= n; ++k) {
        const double t_end = k == n ? horizon : static_cast<double>(k) * step;
        while (t < t_end) {
            const auto adv = kernel::advance_feller(clk, x, t, t_end, rng, &viol);
            t = adv.t;
            x = adv.x;
            if (adv.event) {
                x += tr.sample_jump(rng);
                ++jumps;
            }
        }
        p.t.push_back(t_end);
        p.x.push_back(x);
        if (x <= 0.0) {
            p.x.back() = 0.0;
            p.absorbed = true;
            p.absorption_time = t_end;
            break;
        }
        if (!std::isfinite(x) || x > explode_at) {
            p.exploded = true;
            p.explosion_time = t_end;
            break;
        }
    }
    if (diag) {
        diag->bound_violations += viol;
        diag->jumps += jumps;
    }
    return p;
}

/**
 * Lamperti representation Z_t = Y_{A_t}: Y is the Levy process with drift
 * r_eff, Brownian part sqrt(2 gamma_eff) B and jumps of rate `rate`, killed at
 * 0, and A inverts t(s) = int_0^s du / Y_u. The Levy step is
 * min(step * y, 0.01 y^2 / (2 gamma_eff), time to next jump); real time
 * advances by the trapezoid rule, bisecting with Brownian-bridge midpoints
 * while Y changes by more than 10% across a piece. Without a Brownian part
 * the time change is integrated exactly.
 */
inline kernel::Path simulate_csbp_lamperti(const BranchingMechanism& m, double z0, double horizon, double step,
                                           double eps, RngStream& rng, bool gaussian_small_jumps = true) {
    if (!(z0 >= 0.0)) throw std::invalid_argument("simulate_csbp_lamperti: z0 must be nonnegative");
    if (!(step > 0.0 && step < 1.0)) throw std::invalid_argument("simulate_csbp_lamperti: step must lie in (0,1)");
    const Truncation tr = truncate(m, eps, gaussian_small_jumps);
    const auto& tol = kernel::defaults();
    const double floor_y = 1e-9;
    const double max_change = tol.lamperti_max_rel_change;
    const int max_depth = tol.lamperti_max_bisect;

    const auto n = static_cast<std::size_t>(std::ceil(horizon / step - 1e-9));
    std::vector<double> grid(n + 1);
    for (std::size_t k = 0; k <= n; ++k) grid[k] = k == n ? horizon : static_cast<double>(k) * step;

    kernel::Path p;
    p.t.push_back(0.0);
    p.x.push_back(z0);
    if (z0 == 0.0) {
        p.absorbed = true;
        p.absorption_time = 0.0;
        return p;
    }
    RngStream jump_rng = rng.substream("levy-jumps");
    std::size_t next = 1;
    double t = 0.0, y = z0;
    bool dead = false;
    const double inf = std::numeric_limits<double>::infinity();
    double to_jump = tr.rate > 0.0 ? jump_rng.exponential(tr.rate) : inf;
    const double r = tr.r_eff, g = tr.gamma_eff;

    auto absorb = [&](double when) {
        dead = true;
        p.absorbed = true;
        p.absorption_time = when;
        p.t.push_back(when);
        p.x.push_back(0.0);
    };
    // Emits grid values in (t, t + dt] by linear interpolation of Y in real time.
    auto emit_linear = [&](double ya, double yb, double dt) {
        while (next <= n && grid[next] <= t + dt) {
            const double w = dt > 0.0 ? (grid[next] - t) / dt : 1.0;
            p.t.push_back(grid[next]);
            p.x.push_back(ya + w * (yb - ya));
            ++next;
        }
    };
    std::function<void(double, double, double, int)> piece = [&](double ya, double yb, double d, int depth) {
        if (dead) return;
        const bool rough = yb <= 0.0 || std::fabs(yb - ya) > max_change * std::min(ya, yb);
        if (rough && depth < max_depth) {
            const double ym = 0.5 * (ya + yb) + std::sqrt(2.0 * g * d / 4.0) * rng.normal();
            if (ym <= 0.0) {
                piece(ya, ym, 0.5 * d, depth + 1);
                if (!dead) absorb(t);
                return;
            }
            piece(ya, ym, 0.5 * d, depth + 1);
            piece(ym, yb, 0.5 * d, depth + 1);
            return;
        }
        if (yb <= floor_y) {
            const double dt = 0.5 * d / ya;
            emit_linear(ya, 0.0, dt);
            absorb(t + dt);
            return;
        }
        const double dt = 0.5 * d * (1.0 / ya + 1.0 / yb);
        emit_linear(ya, yb, dt);
        t += dt;
        y = yb;
    };

    while (next <= n && !dead) {
        if (g == 0.0) {
            double d = step * y;
            if (r < 0.0) d = std::min(d, 0.5 * y / -r);
            const bool jump_now = to_jump <= d;
            if (jump_now) d = to_jump;
            const double dt = r != 0.0 ? std::log1p(r * d / y) / r : d / y;
            while (next <= n && grid[next] <= t + dt) {
                p.t.push_back(grid[next]);
                p.x.push_back(y * std::exp(r * (grid[next] - t)));
                ++next;
            }
            t += dt;
            y += r * d;
            to_jump -= d;
            if (jump_now) {
                y += tr.sample_jump(jump_rng);
                to_jump = jump_rng.exponential(tr.rate);
            }
            if (y <= floor_y) absorb(t);
        } else {
            double d = std::min(step * y, 0.01 * y * y / (2.0 * g));
            const bool jump_now = to_jump <= d;
            if (jump_now) d = to_jump;
            const double yb = y + r * d + std::sqrt(2.0 * g * d) * rng.normal();
            piece(y, yb, d, 0);
            if (dead) break;
            to_jump -= d;
            if (jump_now) {
                y += tr.sample_jump(jump_rng);
                to_jump = jump_rng.exponential(tr.rate);
            }
        }
        if (!dead && (!std::isfinite(y) || y > tol.explode_threshold)) {
            p.exploded = true;
            p.explosion_time = t;
            p.t.push_back(t);
            p.x.push_back(y);
            break;
        }
    }
    return p;
}

/// Offspring law through its generation map X_n -> X_{n+1} = sum of X_n iid draws.
struct OffspringLaw {
    std::string name;
    std::function<std::uint64_t(std::uint64_t, RngStream&)> next_generation;
};

inline OffspringLaw poisson_offspring(double mean) {
    return {"poisson", [mean](std::uint64_t n, RngStream& rng) {
                return n == 0 ? std::uint64_t{0} : rng.poisson(mean * static_cast<double>(n));
            }};
}

inline OffspringLaw dirac_offspring(std::uint64_t k) {
    return {"dirac", [k](std::uint64_t n, RngStream&) { return n * k; }};
}

/**
 * Mean-one law in the domain of attraction of an alpha-stable law:
 * nu = 0 with probability 1 - a, otherwise floor(U^{-1/alpha}), with
 * a = 1 / zeta(alpha). P(nu >= k) = a k^{-alpha}, so the scaled limit with
 * v_K = K^{alpha - 1} has Levy measure a alpha h^{-1-alpha} dh.
 */
inline OffspringLaw stable_domain_offspring(double alpha) {
    if (!(alpha > 1.0 && alpha < 2.0)) throw std::invalid_argument("stable_domain_offspring: alpha in (1,2)");
    const double a = 1.0 / boost::math::zeta(alpha);
    return {"stable-domain", [alpha, a](std::uint64_t n, RngStream& rng) {
                std::uint64_t total = 0;
                for (std::uint64_t i = 0; i < n; ++i) {
                    if (rng.uniform() >= a) continue;
                    const double v = std::floor(std::pow(rng.uniform_open(), -1.0 / alpha));
                    total += v > 1e15 ? static_cast<std::uint64_t>(1e15) : static_cast<std::uint64_t>(v);
                }
                return total;
            }};
}

struct GwScalingRow {
    double K;
    double distance;  // max over lambda of |MC E e^{-lambda Z^K_t} - e^{-u_t(lambda)}|
    double stderr_;   // Monte-Carlo standard error at the maximizing lambda
};

/**
 * Z^K_t = X_{[v_K t]} / K with X_0 = K, compared with the CSBP started at 1
 * through its marginal Laplace transform at time t.
 */
inline std::vector<GwScalingRow> gw_scaling_demo(const OffspringLaw& law, const BranchingMechanism& limit,
                                                 const std::vector<std::uint64_t>& Ks,
                                                 const std::function<double(double)>& v_K, double t,
                                                 const std::vector<double>& lambdas, std::size_t replicates,
                                                 std::uint64_t seed, unsigned threads = 1) {
    std::vector<double> target;
    for (double l : lambdas) target.push_back(std::exp(-laplace_exponent(limit, t, l).value));
    std::vector<GwScalingRow> rows;
    for (std::size_t j = 0; j < Ks.size(); ++j) {
        const std::uint64_t K = Ks[j];
        const auto gens = static_cast<std::uint64_t>(std::floor(v_K(static_cast<double>(K)) * t));
        const auto z = kernel::run_replicates(replicates, threads, [&](std::size_t i) {
            RngStream rng(seed, (static_cast<std::uint64_t>(j) << 40) | i);
            std::uint64_t x = K;
            for (std::uint64_t g = 0; g < gens && x > 0; ++g) x = law.next_generation(x, rng);
            return static_cast<double>(x) / static_cast<double>(K);
        });
        GwScalingRow row{static_cast<double>(K), 0.0, 0.0};
        for (std::size_t l = 0; l < lambdas.size(); ++l) {
            kernel::Accumulator a;
            for (double v : z) a.add(std::exp(-lambdas[l] * v));
            const double d = std::fabs(a.mean() - target[l]);
            if (d >= row.distance) {
                row.distance = d;
                row.stderr_ = a.stderr_mean();
            }
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace popdyn::csbp
