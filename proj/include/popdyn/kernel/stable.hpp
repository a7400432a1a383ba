#pragma once

#include <cmath>
#include <stdexcept>

#include "ppm.hpp"
#include "rng.hpp"
#include "sde.hpp"

namespace popdyn::kernel {

struct StableOptions {
    /// Replace the dropped jumps |h| < eps by a Brownian term of the same variance.
    bool gaussian_small_jumps = false;
};

/// Variance per unit time of the jumps with |h| < eps under |h|^{-1-alpha} dh.
inline double stable_small_jump_variance(double alpha, double eps) {
    return 2.0 * std::pow(eps, 2.0 - alpha) / (2.0 - alpha);
}

/**
 * Symmetric alpha-stable process with Levy measure |h|^{-1-alpha} dh.
 * Jumps with |h| >= eps are simulated exactly as a compound Poisson process of
 * rate 2 eps^{-alpha} / alpha; the compensator of the band eps <= |h| < 1
 * vanishes by symmetry. Jumps below eps are dropped, which removes
 * stable_small_jump_variance(alpha, eps) = O(eps^{2-alpha}) of variance per
 * unit time unless gaussian_small_jumps is set.
 */
inline Path simulate_stable_symmetric(double alpha, double eps, double horizon, double step, RngStream& rng,
                                      StableOptions opt = {}) {
    if (!(alpha > 0.0 && alpha < 2.0)) throw std::invalid_argument("simulate_stable_symmetric: alpha outside (0,2)");
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("simulate_stable_symmetric: eps outside (0,1)");
    if (!(step > 0.0)) throw std::invalid_argument("simulate_stable_symmetric: step must be positive");
    const double rate = 2.0 * std::pow(eps, -alpha) / alpha;
    RngStream jr = rng.substream("stable-jumps");
    const auto jumps = sample_ppm(
        rate,
        [&](RngStream& r) {
            const double mag = eps * std::pow(r.uniform_open(), -1.0 / alpha);
            return r.uniform() < 0.5 ? -mag : mag;
        },
        horizon, jr);
    const double sd_unit = opt.gaussian_small_jumps ? std::sqrt(stable_small_jump_variance(alpha, eps)) : 0.0;

    Path p;
    p.t.push_back(0.0);
    p.x.push_back(0.0);
    double s = 0.0, t = 0.0;
    std::size_t j = 0;
    long long k = 0;
    while (t < horizon) {
        ++k;
        const double tg = std::min(horizon, static_cast<double>(k) * step);
        while (j < jumps.size() && jumps.times[j] <= tg) {
            if (sd_unit > 0.0) s += sd_unit * std::sqrt(jumps.times[j] - t) * rng.normal();
            t = jumps.times[j];
            s += jumps.marks[j];
            ++j;
        }
        if (sd_unit > 0.0 && tg > t) s += sd_unit * std::sqrt(tg - t) * rng.normal();
        t = tg;
        p.t.push_back(t);
        p.x.push_back(s);
    }
    return p;
}

}  // namespace popdyn::kernel
