#pragma once

#include <cstdint>

namespace popdyn::kernel {

/// Defaults shared by every simulator. Experiments copy and override fields.
struct Tolerances {
    double sde_step = 1e-3;
    double output_step = 0.05;
    double absorb_threshold = 1e-12;
    double explode_threshold = 1e12;
    std::uint64_t bd_event_cap = 10'000'000;
    double series_divergence_threshold = 1e12;
    double series_geometric_delta = 1e-3;
    double quad_rel_tol = 1e-9;
    double ode_rel_tol = 1e-11;
    double lamperti_rel_step = 1e-3;
    double lamperti_max_rel_change = 0.1;
    int lamperti_max_bisect = 12;
    double burn_in_fraction = 0.2;
    double tail_window_fraction = 0.4;
    double chi_root_lo = 1e-6;
    double chi_root_hi = 1.0 - 1e-6;
    int mutation_rejection_cap = 100;
    double kisdi_bin_width = 0.02;
};

inline const Tolerances& defaults() {
    static const Tolerances t{};
    return t;
}

}  // namespace popdyn::kernel
