#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rng.hpp"

namespace popdyn::kernel {

/// Points of a homogeneous marked Poisson point measure ds x nu(dm) on [0, horizon].
template <class Mark>
struct MarkedPPMSample {
    std::vector<double> times;
    std::vector<Mark> marks;
    double horizon = 0.0;
    double mark_mass = 0.0;  // nu(window)

    std::size_t size() const { return times.size(); }
};

/**
 * Samples all points of ds x nu(dm) on [0, horizon] x window, where
 * nu(window) = mark_mass and sample_mark draws from nu / mark_mass.
 * Infinite-activity measures must be truncated by the caller.
 */
template <class SampleMark>
auto sample_ppm(double mark_mass, SampleMark&& sample_mark, double horizon, RngStream& rng) {
    using Mark = decltype(sample_mark(rng));
    if (!std::isfinite(mark_mass) || mark_mass < 0.0)
        throw std::invalid_argument("sample_ppm: truncated intensity must be finite and nonnegative");
    if (!(horizon >= 0.0)) throw std::invalid_argument("sample_ppm: horizon must be nonnegative");
    MarkedPPMSample<Mark> out;
    out.horizon = horizon;
    out.mark_mass = mark_mass;
    if (mark_mass == 0.0 || horizon == 0.0) return out;
    double t = rng.exponential(mark_mass);
    while (t <= horizon) {
        out.times.push_back(t);
        out.marks.push_back(sample_mark(rng));
        t += rng.exponential(mark_mass);
    }
    return out;
}

/// Keeps each point independently with probability p.
template <class Mark>
MarkedPPMSample<Mark> thin(const MarkedPPMSample<Mark>& s, double p, RngStream& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("thin: probability outside [0,1]");
    MarkedPPMSample<Mark> out;
    out.horizon = s.horizon;
    out.mark_mass = s.mark_mass * p;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (rng.uniform() < p) {
            out.times.push_back(s.times[i]);
            out.marks.push_back(s.marks[i]);
        }
    }
    return out;
}

/// Count of points in [t0, t1) whose mark satisfies pred.
template <class Mark, class Pred>
std::size_t count_in(const MarkedPPMSample<Mark>& s, double t0, double t1, Pred&& pred) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s.times[i] >= t0 && s.times[i] < t1 && pred(s.marks[i])) ++c;
    return c;
}

/**
 * Compensated integral sum_k G(T_k, m_k) - int_0^horizon int G(s, m) nu(dm) ds.
 * The compensator is supplied by the caller as a closed form.
 */
template <class Mark, class G>
double compensated_integral(const MarkedPPMSample<Mark>& s, G&& g, double compensator) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) acc += g(s.times[i], s.marks[i]);
    return acc - compensator;
}

}  // namespace popdyn::kernel
